//! Versioned file formats.
//!
//! Bulk frame data (motions, marker recordings, checkpoints) uses a
//! little-endian binary container: a 4-byte magic, the format version as
//! three `u16` (major, minor, patch) and a payload of `u32` counts,
//! `u32`-length-prefixed UTF-8 strings and `f64` values. Configs, manifests,
//! reports and body definitions are JSON documents of the form
//! `{"magic": .., "version": .., "payload": ..}`. Readers reject other major
//! versions. The byte layouts are specified in `docs/formats.md`.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::body::{BodyMesh, BodyModel, SegmentLayout, ShapeVector, SkeletonTopology, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::motion::{MotionFrame, MotionSequence};
use crate::pipeline::{DataConfig, Split};
use crate::rbm::{RbmFrame, RbmObservation, RbmRecording};
use crate::regressor::{Checkpoint, InputLayout, ModelConfig, ModelParams, Tensor};
use crate::so3::{AxisAngle, RotationMatrix, Se3Transform, UnitQuaternion};

pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
pub const FORMAT_PATCH: u16 = 0;

pub const MOTION_MAGIC: [u8; 4] = *b"RBMS";
pub const RECORDING_MAGIC: [u8; 4] = *b"RBMR";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RBMK";

pub const REPORT_MAGIC: &str = "RBME";
pub const CONFIG_MAGIC: &str = "RBMC";
pub const MANIFEST_MAGIC: &str = "RBMM";
pub const BODY_MAGIC: &str = "RBMB";
pub const ABLATION_MAGIC: &str = "RBMA";
pub const TRAIN_LOG_MAGIC: &str = "RBML";
pub const RBM_CONFIG_MAGIC: &str = "RBMG";

pub fn version_string() -> String {
    format!("{FORMAT_MAJOR}.{FORMAT_MINOR}.{FORMAT_PATCH}")
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    std::fs::read(path.as_ref()).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(magic: [u8; 4]) -> Self {
        let mut w = Self {
            buf: magic.to_vec(),
        };
        for v in [FORMAT_MAJOR, FORMAT_MINOR, FORMAT_PATCH] {
            w.buf.write_u16::<LE>(v).unwrap();
        }
        w
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: usize) {
        self.buf
            .write_u32::<LE>(u32::try_from(v).expect("count fits in u32"))
            .unwrap();
    }

    fn u64(&mut self, v: u64) {
        self.buf.write_u64::<LE>(v).unwrap();
    }

    fn f64(&mut self, v: f64) {
        self.buf.write_f64::<LE>(v).unwrap();
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        let mut r = Self {
            cur: Cursor::new(bytes),
        };
        let mut m = [0u8; 4];
        for b in &mut m {
            *b = r.u8()?;
        }
        if m != magic {
            return Err(Error::Parse {
                offset: 0,
                message: format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(&magic)
                ),
            });
        }
        let (major, minor, patch) = (r.u16()?, r.u16()?, r.u16()?);
        if major != FORMAT_MAJOR {
            return Err(Error::Version {
                found: format!("{major}.{minor}.{patch}"),
                supported: FORMAT_MAJOR,
            });
        }
        Ok(r)
    }

    fn offset(&self) -> usize {
        self.cur.position() as usize
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn eof(&self, what: &str) -> Error {
        Error::Parse {
            offset: self.offset(),
            message: format!("unexpected end of data reading {what}"),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().map_err(|_| self.eof("u8"))
    }

    fn u16(&mut self) -> Result<u16> {
        self.cur.read_u16::<LE>().map_err(|_| self.eof("u16"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(self.cur.read_u32::<LE>().map_err(|_| self.eof("u32"))? as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().map_err(|_| self.eof("u64"))
    }

    fn f64(&mut self) -> Result<f64> {
        self.cur.read_f64::<LE>().map_err(|_| self.eof("f64"))
    }

    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.offset()
    }

    /// A count of items each at least `item_bytes` long, checked against
    /// the remaining input before anything is allocated.
    fn count(&mut self, item_bytes: usize) -> Result<usize> {
        let n = self.u32()?;
        if n.saturating_mul(item_bytes) > self.remaining() {
            return self.fail(format!("count {n} exceeds the remaining data"));
        }
        Ok(n)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn str(&mut self) -> Result<String> {
        let n = self.count(1)?;
        let start = self.offset();
        let bytes = &self.cur.get_ref()[start..start + n];
        let s = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
            offset: start,
            message: format!("invalid UTF-8: {e}"),
        })?;
        self.cur.set_position((start + n) as u64);
        Ok(s.to_string())
    }

    fn vec3(&mut self) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64()?, self.f64()?, self.f64()?))
    }

    fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return self.fail(format!("{} trailing bytes", self.remaining()));
        }
        Ok(())
    }

    fn wrap<T>(&self, at: usize, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            Error::Parse { .. } => e,
            other => Error::Parse {
                offset: at,
                message: other.to_string(),
            },
        })
    }
}

pub fn encode_motion(m: &MotionSequence) -> Result<Vec<u8>> {
    m.validate()?;
    let mut w = Writer::new(MOTION_MAGIC);
    w.str(&m.subject);
    w.str(&m.sequence);
    w.f64(m.frame_rate);
    w.f64s(&m.beta);
    w.u32(m.joint_count().unwrap_or(0));
    w.u32(m.frames.len());
    for f in &m.frames {
        for r in &f.theta {
            w.f64s(&r.to_array());
        }
        w.f64s(f.gamma.as_slice());
    }
    Ok(w.buf)
}

pub fn decode_motion(bytes: &[u8]) -> Result<MotionSequence> {
    let mut r = Reader::new(bytes, MOTION_MAGIC)?;
    let subject = r.str()?;
    let sequence = r.str()?;
    let frame_rate = r.f64()?;
    let mut beta = [0.0; SHAPE_DIM];
    for b in &mut beta {
        *b = r.f64()?;
    }
    let joints = r.u32()?;
    let frame_bytes = (joints * 3 + 3) * 8;
    let n = r.count(frame_bytes.max(1))?;
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = (0..joints)
            .map(|_| Ok(AxisAngle(r.vec3()?)))
            .collect::<Result<Vec<_>>>()?;
        frames.push(MotionFrame {
            theta,
            gamma: r.vec3()?,
        });
    }
    let m = MotionSequence {
        subject,
        sequence,
        frame_rate,
        beta,
        frames,
    };
    r.finish()?;
    m.validate().map_err(|e| Error::Parse {
        offset: 10,
        message: e.to_string(),
    })?;
    Ok(m)
}

fn write_transform(w: &mut Writer, t: &Se3Transform) {
    for row in t.rotation.to_rows() {
        w.f64s(&row);
    }
    w.f64s(t.translation.as_slice());
}

fn read_transform(r: &mut Reader) -> Result<Se3Transform> {
    let at = r.offset();
    let mut rows = [[0.0; 3]; 3];
    for row in &mut rows {
        for v in row.iter_mut() {
            *v = r.f64()?;
        }
    }
    let rot = r.wrap(at, RotationMatrix::from_rows(rows))?;
    Ok(Se3Transform::new(rot, r.vec3()?))
}

pub fn encode_recording(rec: &RbmRecording) -> Result<Vec<u8>> {
    rec.validate()?;
    let n = rec
        .marker_count()
        .or(rec.calibration.as_ref().map(Vec::len))
        .unwrap_or(0);
    let mut w = Writer::new(RECORDING_MAGIC);
    w.str(&rec.config_name);
    w.f64(rec.frame_rate);
    w.u32(n);
    w.u32(rec.frames.len());
    match &rec.calibration {
        None => w.u8(0),
        Some(c) => {
            w.u8(1);
            for t in c {
                write_transform(&mut w, t);
            }
        }
    }
    for f in &rec.frames {
        w.f64(f.timestamp);
        for o in &f.observations {
            w.f64s(o.position.as_slice());
            w.f64s(&o.orientation.to_array());
        }
    }
    Ok(w.buf)
}

pub fn decode_recording(bytes: &[u8]) -> Result<RbmRecording> {
    let mut r = Reader::new(bytes, RECORDING_MAGIC)?;
    let config_name = r.str()?;
    let frame_rate = r.f64()?;
    let markers = r.u32()?;
    let n = r.count(8 + markers * 56)?;
    let calibration = match r.u8()? {
        0 => None,
        1 => Some(
            (0..markers)
                .map(|_| read_transform(&mut r))
                .collect::<Result<Vec<_>>>()?,
        ),
        other => return r.fail(format!("bad calibration flag {other}")),
    };
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        let timestamp = r.f64()?;
        let mut observations = Vec::with_capacity(markers);
        for _ in 0..markers {
            let position = r.vec3()?;
            let at = r.offset();
            let q = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
            let orientation = r.wrap(at, UnitQuaternion::from_wxyz(q[0], q[1], q[2], q[3]))?;
            observations.push(RbmObservation {
                position,
                orientation,
            });
        }
        frames.push(RbmFrame {
            timestamp,
            observations,
        });
    }
    r.finish()?;
    let rec = RbmRecording {
        config_name,
        frame_rate,
        frames,
        calibration,
    };
    if !(rec.frame_rate > 0.0) {
        return Err(Error::Parse {
            offset: 10,
            message: "frame rate must be positive".into(),
        });
    }
    Ok(rec)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    model: ModelConfig,
    layout: InputLayout,
    rbm_config: String,
}

pub fn encode_checkpoint(c: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer::new(CHECKPOINT_MAGIC);
    let meta = CheckpointMeta {
        model: c.config.clone(),
        layout: c.layout.clone(),
        rbm_config: c.rbm_config.clone(),
    };
    w.str(&serde_json::to_string(&meta)?);
    w.u64(c.params.init_seed);
    w.u32(c.params.input_mean.len());
    w.f64s(&c.params.input_mean);
    w.f64s(&c.params.input_scale);
    w.u32(c.params.tensors.len());
    for (name, t) in &c.params.tensors {
        w.str(name);
        w.u32(t.rows);
        w.u32(t.cols);
        w.f64s(&t.data);
    }
    Ok(w.buf)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let text = r.str()?;
    let meta: CheckpointMeta = r.wrap(at, serde_json::from_str(&text).map_err(Error::from))?;
    let init_seed = r.u64()?;
    let d = r.count(16)?;
    let input_mean = r.f64s(d)?;
    let input_scale = r.f64s(d)?;
    let count = r.count(12)?;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.str()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        if rows.saturating_mul(cols).saturating_mul(8) > r.remaining() {
            return r.fail(format!("tensor `{name}` exceeds the remaining data"));
        }
        let data = r.f64s(rows * cols)?;
        tensors.insert(name, Tensor { rows, cols, data });
    }
    let end = r.offset();
    r.finish()?;
    let params = ModelParams {
        tensors,
        input_mean,
        input_scale,
        init_seed,
    };
    Checkpoint::new(meta.model, params, meta.layout, meta.rbm_config).map_err(|e| match e {
        Error::ConfigMismatch(_) => e,
        other => Error::Parse {
            offset: end,
            message: other.to_string(),
        },
    })
}

pub fn write_motion(path: impl AsRef<Path>, m: &MotionSequence) -> Result<()> {
    write_file(path, &encode_motion(m)?)
}

pub fn read_motion(path: impl AsRef<Path>) -> Result<MotionSequence> {
    decode_motion(&read_file(path)?)
}

pub fn write_recording(path: impl AsRef<Path>, r: &RbmRecording) -> Result<()> {
    write_file(path, &encode_recording(r)?)
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<RbmRecording> {
    decode_recording(&read_file(path)?)
}

pub fn write_checkpoint(path: impl AsRef<Path>, c: &Checkpoint) -> Result<()> {
    write_file(path, &encode_checkpoint(c)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    magic: &'a str,
    version: String,
    payload: &'a T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeIn {
    magic: String,
    version: String,
    payload: serde_json::Value,
}

/// Pretty-printed JSON document with a trailing newline.
pub fn to_json_document<T: Serialize>(magic: &str, payload: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&EnvelopeOut {
        magic,
        version: version_string(),
        payload,
    })?;
    s.push('\n');
    Ok(s)
}

fn check_version(version: &str) -> Result<()> {
    let major = version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u16>().ok());
    if major != Some(FORMAT_MAJOR) || version.split('.').count() != 3 {
        return Err(Error::Version {
            found: version.to_string(),
            supported: FORMAT_MAJOR,
        });
    }
    Ok(())
}

pub fn from_json_document<T: DeserializeOwned>(magic: &str, text: &str) -> Result<T> {
    let env: EnvelopeIn = serde_json::from_str(text)?;
    if env.magic != magic {
        return Err(Error::Parse {
            offset: 0,
            message: format!("document magic `{}`, expected `{magic}`", env.magic),
        });
    }
    check_version(&env.version)?;
    Ok(serde_json::from_value(env.payload)?)
}

pub fn write_json_document<T: Serialize>(
    path: impl AsRef<Path>,
    magic: &str,
    payload: &T,
) -> Result<()> {
    write_file(path, to_json_document(magic, payload)?.as_bytes())
}

pub fn read_json_document<T: DeserializeOwned>(path: impl AsRef<Path>, magic: &str) -> Result<T> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "invalid UTF-8".into(),
    })?;
    from_json_document(magic, text)
}

/// Reads a JSON file that is either a document with `magic` or a bare payload.
pub fn read_json_lenient<T: DeserializeOwned>(path: impl AsRef<Path>, magic: &str) -> Result<T> {
    let bytes = read_file(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    if value.get("magic").is_some() {
        from_json_document(magic, std::str::from_utf8(&bytes).unwrap())
    } else {
        Ok(serde_json::from_value(value)?)
    }
}

/// Sequence files of a generated dataset with their split labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seed: u64,
    pub generator: DataConfig,
    /// Manifest of the motions a recording manifest was synthesized from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub split: Split,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen: BTreeMap<&str, Split> = BTreeMap::new();
        for e in &self.entries {
            if let Some(prev) = seen.insert(&e.path, e.split) {
                return Err(Error::Config(if prev == e.split {
                    format!("path `{}` listed twice", e.path)
                } else {
                    format!(
                        "path `{}` appears in both {} and {}",
                        e.path,
                        prev.name(),
                        e.split.name()
                    )
                }));
            }
        }
        Ok(())
    }

    pub fn paths(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_str())
    }
}

pub fn write_manifest(path: impl AsRef<Path>, m: &DatasetManifest) -> Result<()> {
    m.validate()?;
    write_json_document(path, MANIFEST_MAGIC, m)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json_document(path, MANIFEST_MAGIC)?;
    m.validate()?;
    Ok(m)
}

/// Body model as plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyDefinition {
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    pub rest_offsets: Vec<[f64; 3]>,
    pub offset_basis: Vec<Vec<[f64; 3]>>,
    pub vertices: Vec<[f64; 3]>,
    pub facets: Vec<[usize; 3]>,
    pub weights: Vec<Vec<(usize, f64)>>,
    pub shape_basis: Vec<Vec<[f64; 3]>>,
    /// `(joint, first_vertex, rings, around)` per capsule segment.
    pub segments: Vec<(usize, usize, usize, usize)>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn shape_out(b: &ShapeVector) -> Vec<[f64; 3]> {
    b.iter().map(arr).collect()
}

fn shape_in(v: &[[f64; 3]]) -> Result<ShapeVector> {
    if v.len() != SHAPE_DIM {
        return Err(Error::Dimension(format!(
            "shape basis has {} entries, expected {SHAPE_DIM}",
            v.len()
        )));
    }
    Ok(std::array::from_fn(|i| Vector3::from(v[i])))
}

impl BodyDefinition {
    pub fn from_model(b: &BodyModel) -> Self {
        let t = &b.topology;
        let m = &b.mesh;
        Self {
            joint_names: t.names.clone(),
            parents: t.parents.clone(),
            rest_offsets: t.rest_offsets.iter().map(arr).collect(),
            offset_basis: t.offset_basis.iter().map(shape_out).collect(),
            vertices: m.rest_vertices.iter().map(arr).collect(),
            facets: m.facets.clone(),
            weights: m.weights.clone(),
            shape_basis: m.shape_basis.iter().map(shape_out).collect(),
            segments: m
                .segments
                .iter()
                .map(|s| (s.joint, s.first_vertex, s.rings, s.around))
                .collect(),
        }
    }

    pub fn to_model(&self) -> Result<BodyModel> {
        let topology = SkeletonTopology::new(
            self.joint_names.clone(),
            self.parents.clone(),
            self.rest_offsets
                .iter()
                .map(|v| Vector3::from(*v))
                .collect(),
            self.offset_basis
                .iter()
                .map(|b| shape_in(b))
                .collect::<Result<_>>()?,
        )?;
        let mesh = BodyMesh::new(
            self.vertices.iter().map(|v| Vector3::from(*v)).collect(),
            self.facets.clone(),
            self.weights.clone(),
            self.shape_basis
                .iter()
                .map(|b| shape_in(b))
                .collect::<Result<_>>()?,
            self.segments
                .iter()
                .map(|&(joint, first_vertex, rings, around)| SegmentLayout {
                    joint,
                    first_vertex,
                    rings,
                    around,
                })
                .collect(),
        )?;
        Ok(BodyModel { topology, mesh })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::build_default_body;
    use crate::motion::{generate_toy_motions, ToyMotionParams};
    use crate::rbm::{synthesize_sequence, RbmConfiguration};

    fn motion() -> MotionSequence {
        generate_toy_motions(5, 1, 0.5, 60.0, &ToyMotionParams::default())
            .unwrap()
            .remove(0)
    }

    #[test]
    fn motion_round_trip_is_byte_stable() {
        let m = motion();
        let a = encode_motion(&m).unwrap();
        let back = decode_motion(&a).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_motion(&back).unwrap(), a);
    }

    #[test]
    fn recording_round_trip_is_byte_stable() {
        let b = build_default_body(42);
        let c = RbmConfiguration::preset("RBM-D", &b).unwrap();
        let mut rec = synthesize_sequence(&b, &motion(), &c).unwrap();
        rec.calibration = Some(c.specs.iter().map(|s| s.offset).collect());
        let a = encode_recording(&rec).unwrap();
        let back = decode_recording(&a).unwrap();
        assert_eq!(back, rec);
        assert_eq!(encode_recording(&back).unwrap(), a);
    }

    #[test]
    fn truncation_and_versions_are_reported() {
        let a = encode_motion(&motion()).unwrap();
        for cut in [0, 3, 9, 20, a.len() - 1] {
            assert!(
                matches!(decode_motion(&a[..cut]), Err(Error::Parse { .. })),
                "cut {cut}"
            );
        }
        let mut next = a.clone();
        next[4] = 2;
        assert!(matches!(decode_motion(&next), Err(Error::Version { .. })));
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(
            decode_motion(&bad),
            Err(Error::Parse { offset: 0, .. })
        ));
        let mut long = a;
        long.push(0);
        assert!(matches!(decode_motion(&long), Err(Error::Parse { .. })));
    }

    #[test]
    fn json_documents_check_magic_and_version() {
        let text = to_json_document(REPORT_MAGIC, &vec![1.5, 2.0]).unwrap();
        let v: Vec<f64> = from_json_document(REPORT_MAGIC, &text).unwrap();
        assert_eq!(v, vec![1.5, 2.0]);
        assert!(from_json_document::<Vec<f64>>(CONFIG_MAGIC, &text).is_err());
        let next = text.replace("\"1.0.0\"", "\"2.0.0\"");
        assert!(matches!(
            from_json_document::<Vec<f64>>(REPORT_MAGIC, &next),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn manifest_rejects_shared_paths() {
        let mut m = DatasetManifest {
            seed: 1,
            generator: DataConfig::default(),
            source: None,
            entries: vec![
                ManifestEntry {
                    path: "a.rbms".into(),
                    split: Split::Train,
                },
                ManifestEntry {
                    path: "b.rbms".into(),
                    split: Split::Validation,
                },
            ],
        };
        m.validate().unwrap();
        m.entries.push(ManifestEntry {
            path: "a.rbms".into(),
            split: Split::Test,
        });
        assert!(m.validate().is_err());
    }

    #[test]
    fn body_definition_round_trip() {
        let b = build_default_body(42);
        let def = BodyDefinition::from_model(&b);
        let text = to_json_document(BODY_MAGIC, &def).unwrap();
        let back: BodyDefinition = from_json_document(BODY_MAGIC, &text).unwrap();
        assert_eq!(back, def);
        let model = back.to_model().unwrap();
        assert_eq!(model.mesh.rest_vertices, b.mesh.rest_vertices);
        assert_eq!(
            to_json_document(BODY_MAGIC, &BodyDefinition::from_model(&model)).unwrap(),
            text
        );
    }
}
