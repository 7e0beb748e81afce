//! Rigid body markers: mounting specs, the seven standard configurations,
//! virtual observation synthesis and T-pose calibration.
//!
//! A marker is mounted relative to a local frame built at an anchor vertex
//! of the posed mesh. The frame's x axis is the angle-weighted vertex
//! normal, z is `x cross r` where `r` points at the centroid of a reference
//! facet, and y completes the right-handed frame. The marker pose is that
//! frame composed with a fixed offset transform.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::body::{vertex_normal_mwa, BodyMesh, BodyModel, BodyParams};
use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::so3::{RotationMatrix, Se3Transform, UnitQuaternion};

/// Name of the marker that roots the normalization tree.
pub const CHEST: &str = "chest";

/// Offset of a virtual marker above its anchor vertex, along the frame's z axis.
pub const DEFAULT_OFFSET: [f64; 3] = [0.0, 0.0, 0.0095];

const DEGENERATE_TOLERANCE: f64 = 1e-6;

/// Marker name and the joint whose segment carries it, in canonical order.
pub const STANDARD_MARKERS: [(&str, &str); 14] = [
    ("head", "head"),
    (CHEST, "spine3"),
    ("left_arm", "left_shoulder"),
    ("left_forearm", "left_elbow"),
    ("left_hand", "left_wrist"),
    ("right_arm", "right_shoulder"),
    ("right_forearm", "right_elbow"),
    ("right_hand", "right_wrist"),
    ("left_thigh", "left_hip"),
    ("left_shin", "left_knee"),
    ("left_foot", "left_ankle"),
    ("right_thigh", "right_hip"),
    ("right_shin", "right_knee"),
    ("right_foot", "right_ankle"),
];

/// Limb segments equipped by each preset (applied to both sides); head and
/// chest are always equipped.
pub const PRESETS: [(&str, &[&str]); 7] = [
    (
        "RBM-ALL",
        &["arm", "forearm", "hand", "thigh", "shin", "foot"],
    ),
    ("RBM-A", &["forearm", "hand", "shin", "foot"]),
    ("RBM-B", &["arm", "hand", "thigh", "foot"]),
    ("RBM-C", &["arm", "forearm", "thigh", "shin"]),
    ("RBM-D", &["hand", "foot"]),
    ("RBM-E", &["arm", "thigh"]),
    ("RBM-F", &["forearm", "shin"]),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// How one marker is attached to the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbmSpecRepr", into = "RbmSpecRepr")]
pub struct RbmSpec {
    pub name: String,
    /// Anchor vertex.
    pub vertex: usize,
    /// Facet incident to the anchor that fixes the in-plane reference direction.
    pub facet: usize,
    /// Marker frame relative to the anchor frame.
    pub offset: Se3Transform,
    /// Joint whose segment carries the marker.
    pub segment_joint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbmSpecRepr {
    name: String,
    vertex: usize,
    facet: usize,
    offset_rotation: [[f64; 3]; 3],
    offset_translation: [f64; 3],
    segment_joint: String,
}

impl TryFrom<RbmSpecRepr> for RbmSpec {
    type Error = Error;

    fn try_from(r: RbmSpecRepr) -> Result<Self> {
        Ok(Self {
            name: r.name,
            vertex: r.vertex,
            facet: r.facet,
            offset: Se3Transform::new(
                RotationMatrix::from_rows(r.offset_rotation)?,
                Vector3::from(r.offset_translation),
            ),
            segment_joint: r.segment_joint,
        })
    }
}

impl From<RbmSpec> for RbmSpecRepr {
    fn from(s: RbmSpec) -> Self {
        let t = s.offset.translation;
        Self {
            name: s.name,
            vertex: s.vertex,
            facet: s.facet,
            offset_rotation: s.offset.rotation.to_rows(),
            offset_translation: [t.x, t.y, t.z],
            segment_joint: s.segment_joint,
        }
    }
}

/// A named, ordered set of markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbmConfiguration {
    pub name: String,
    pub specs: Vec<RbmSpec>,
}

impl RbmConfiguration {
    /// All fourteen markers at their default mounting.
    pub fn full(body: &BodyModel) -> Result<Self> {
        Ok(Self {
            name: "RBM-ALL".into(),
            specs: default_specs(body)?,
        })
    }

    /// One of the seven standard configurations, by name.
    pub fn preset(name: &str, body: &BodyModel) -> Result<Self> {
        let (_, limbs) = PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Config(format!("unknown RBM configuration `{name}`")))?;
        let specs = default_specs(body)?
            .into_iter()
            .filter(|s| {
                s.name == "head"
                    || s.name == CHEST
                    || limbs.iter().any(|l| {
                        s.name
                            .strip_prefix("left_")
                            .or(s.name.strip_prefix("right_"))
                            == Some(l)
                    })
            })
            .collect();
        let config = Self {
            name: PRESETS
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(name))
                .unwrap()
                .0
                .to_string(),
            specs,
        };
        config.validate(body)?;
        Ok(config)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }

    /// Checks structure against the body and builds every frame at the rest
    /// pose, so that degenerate anchors fail here rather than mid-sequence.
    pub fn validate(&self, body: &BodyModel) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::Config(format!(
                "configuration `{}` has no markers",
                self.name
            )));
        }
        if self.index_of(CHEST).is_none() {
            return Err(Error::Config(format!(
                "configuration `{}` lacks the `{CHEST}` marker",
                self.name
            )));
        }
        for (i, s) in self.specs.iter().enumerate() {
            if self.specs[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Config(format!("duplicate marker `{}`", s.name)));
            }
            if body.topology.index_of(&s.segment_joint).is_none() {
                return Err(Error::Config(format!(
                    "marker `{}`: unknown joint `{}`",
                    s.name, s.segment_joint
                )));
            }
            if s.vertex >= body.mesh.vertex_count() || s.facet >= body.mesh.facets.len() {
                return Err(Error::Config(format!(
                    "marker `{}`: vertex or facet out of range",
                    s.name
                )));
            }
            if !body.mesh.facets[s.facet].contains(&s.vertex) {
                return Err(Error::Config(format!(
                    "marker `{}`: facet {} is not incident to vertex {}",
                    s.name, s.facet, s.vertex
                )));
            }
        }
        let rest = body.skin(&BodyParams::rest(body.joint_count()))?;
        for s in &self.specs {
            local_frame_at_vertex(&body.mesh, &rest, s)?;
        }
        Ok(())
    }

    /// Same markers with replaced mounting offsets, e.g. from calibration.
    pub fn with_offsets(&self, offsets: &[Se3Transform]) -> Result<Self> {
        if offsets.len() != self.specs.len() {
            return Err(Error::Dimension(format!(
                "{} offsets for {} markers",
                offsets.len(),
                self.specs.len()
            )));
        }
        let mut out = self.clone();
        for (s, o) in out.specs.iter_mut().zip(offsets) {
            s.offset = *o;
        }
        Ok(out)
    }
}

/// Default mounting for the fourteen standard markers: the anchor sits on the
/// middle ring of the segment capsule on its front face, and the reference
/// facet is the incident facet reaching furthest along the bone.
pub fn default_specs(body: &BodyModel) -> Result<Vec<RbmSpec>> {
    let verts = &body.mesh.rest_vertices;
    STANDARD_MARKERS
        .iter()
        .map(|(name, joint)| {
            let ji = body
                .topology
                .index_of(joint)
                .ok_or_else(|| Error::Config(format!("body has no joint `{joint}`")))?;
            let seg = body
                .mesh
                .segment(ji)
                .ok_or_else(|| Error::Config(format!("body mesh has no segment for `{joint}`")))?;
            let vertex = seg.ring_vertex(seg.mid_ring(), 0);
            let axis = verts[seg.ring_vertex(seg.rings - 1, 0)] - verts[seg.ring_vertex(0, 0)];
            let facet = body
                .mesh
                .incident_facets(vertex)
                .iter()
                .copied()
                .max_by(|&a, &b| {
                    let pa = body.mesh.facet_centroid(verts, a).dot(&axis);
                    let pb = body.mesh.facet_centroid(verts, b).dot(&axis);
                    pa.total_cmp(&pb).then(b.cmp(&a))
                })
                .ok_or_else(|| Error::Mesh(format!("anchor vertex {vertex} has no facets")))?;
            Ok(RbmSpec {
                name: name.to_string(),
                vertex,
                facet,
                offset: Se3Transform::from_translation(Vector3::from(DEFAULT_OFFSET)),
                segment_joint: joint.to_string(),
            })
        })
        .collect()
}

/// One marker's world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbmObservation {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion,
}

impl RbmObservation {
    pub fn from_transform(t: &Se3Transform) -> Self {
        Self {
            position: t.translation,
            orientation: t.quaternion(),
        }
    }

    pub fn to_transform(&self) -> Se3Transform {
        Se3Transform::from_quaternion(&self.orientation, self.position)
    }
}

/// All markers at one instant, in configuration order.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmFrame {
    pub timestamp: f64,
    pub observations: Vec<RbmObservation>,
}

/// A sequence of marker frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmRecording {
    pub config_name: String,
    pub frame_rate: f64,
    pub frames: Vec<RbmFrame>,
    /// Per-marker mounting transforms, when the recording was calibrated.
    pub calibration: Option<Vec<Se3Transform>>,
}

impl RbmRecording {
    pub fn marker_count(&self) -> Option<usize> {
        self.frames.first().map(|f| f.observations.len())
    }

    /// Checks that every frame carries the same number of markers.
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0) {
            return Err(Error::Config(
                "recording frame rate must be positive".into(),
            ));
        }
        if let Some(n) = self.marker_count() {
            if let Some(i) = self.frames.iter().position(|f| f.observations.len() != n) {
                return Err(Error::Dimension(format!(
                    "frame {i} has a different marker count"
                )));
            }
            if let Some(c) = &self.calibration {
                if c.len() != n {
                    return Err(Error::Dimension(
                        "calibration count differs from marker count".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Anchor frame `T_w^v` on the posed mesh.
pub fn local_frame_at_vertex(
    mesh: &BodyMesh,
    vertices: &[Vector3<f64>],
    spec: &RbmSpec,
) -> Result<Se3Transform> {
    let degenerate = |reason: String| Error::DegenerateFrame {
        rbm: spec.name.clone(),
        reason,
    };
    let x =
        vertex_normal_mwa(mesh, vertices, spec.vertex).map_err(|e| degenerate(e.to_string()))?;
    let p = vertices[spec.vertex];
    let r = mesh.facet_centroid(vertices, spec.facet) - p;
    let rn = r.norm();
    if rn < 1e-12 {
        return Err(degenerate(
            "reference facet centroid coincides with the anchor".into(),
        ));
    }
    let z = x.cross(&(r / rn));
    let zn = z.norm();
    if zn < DEGENERATE_TOLERANCE {
        return Err(degenerate(
            "normal is parallel to the reference direction".into(),
        ));
    }
    let z = z / zn;
    let y = z.cross(&x).normalize();
    let rotation = RotationMatrix::from_columns(x, y, z)?;
    Ok(Se3Transform::new(rotation, p))
}

/// Marker poses for one body state.
pub fn synthesize_rbm_frame(
    body: &BodyModel,
    params: &BodyParams,
    config: &RbmConfiguration,
    timestamp: f64,
) -> Result<RbmFrame> {
    let posed = body.skin(params)?;
    frame_from_posed(&body.mesh, &posed, config, timestamp)
}

fn frame_from_posed(
    mesh: &BodyMesh,
    posed: &[Vector3<f64>],
    config: &RbmConfiguration,
    timestamp: f64,
) -> Result<RbmFrame> {
    let observations = config
        .specs
        .iter()
        .map(|s| {
            let anchor = local_frame_at_vertex(mesh, posed, s)?;
            Ok(RbmObservation::from_transform(&anchor.compose(&s.offset)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RbmFrame {
        timestamp,
        observations,
    })
}

/// Marker recording for a whole motion; frame `i` is stamped `i / rate`.
pub fn synthesize_sequence(
    body: &BodyModel,
    motion: &MotionSequence,
    config: &RbmConfiguration,
) -> Result<RbmRecording> {
    if motion.frames.is_empty() {
        return Err(Error::Config(format!(
            "motion `{}` has no frames",
            motion.sequence
        )));
    }
    let frames = motion
        .frames
        .iter()
        .enumerate()
        .map(|(i, _)| {
            synthesize_rbm_frame(
                body,
                &motion.body_params(i),
                config,
                i as f64 / motion.frame_rate,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RbmRecording {
        config_name: config.name.clone(),
        frame_rate: motion.frame_rate,
        frames,
        calibration: None,
    })
}

/// Mounting offsets `T_v^o = inverse(T_w^v) * T_w^o` at the rest pose.
pub fn tpose_calibrate(
    measured: &RbmFrame,
    body: &BodyModel,
    config: &RbmConfiguration,
) -> Result<Vec<Se3Transform>> {
    tpose_calibrate_at(
        measured,
        body,
        config,
        &BodyParams::rest(body.joint_count()),
    )
}

/// As [`tpose_calibrate`], with an explicit calibration pose (e.g. a subject's
/// shape and position in the T-pose).
pub fn tpose_calibrate_at(
    measured: &RbmFrame,
    body: &BodyModel,
    config: &RbmConfiguration,
    pose: &BodyParams,
) -> Result<Vec<Se3Transform>> {
    if measured.observations.len() != config.len() {
        return Err(Error::Config(format!(
            "calibration frame has {} markers, configuration `{}` expects {}",
            measured.observations.len(),
            config.name,
            config.len()
        )));
    }
    let posed = body.skin(pose)?;
    config
        .specs
        .iter()
        .zip(&measured.observations)
        .map(|(s, obs)| {
            let anchor = local_frame_at_vertex(&body.mesh, &posed, s)?;
            Ok(anchor.inverse().compose(&obs.to_transform()))
        })
        .collect()
}

/// Averages several calibration frames: positions by mean, orientations by
/// the normalized sum of sign-aligned quaternions.
pub fn average_frames(frames: &[RbmFrame]) -> Result<RbmFrame> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("no frames to average".into()))?;
    let n = first.observations.len();
    if frames.iter().any(|f| f.observations.len() != n) {
        return Err(Error::Dimension("frames differ in marker count".into()));
    }
    let observations = (0..n)
        .map(|i| {
            let reference = first.observations[i].orientation;
            let mut pos = Vector3::zeros();
            let mut q = [0.0; 4];
            for f in frames {
                let o = &f.observations[i];
                pos += o.position;
                let sign = if o.orientation.dot(&reference) < 0.0 {
                    -1.0
                } else {
                    1.0
                };
                for (acc, c) in q.iter_mut().zip(o.orientation.to_array()) {
                    *acc += sign * c;
                }
            }
            Ok(RbmObservation {
                position: pos / frames.len() as f64,
                orientation: UnitQuaternion::new_normalize(q[0], q[1], q[2], q[3])?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let timestamp = frames.iter().map(|f| f.timestamp).sum::<f64>() / frames.len() as f64;
    Ok(RbmFrame {
        timestamp,
        observations,
    })
}

/// Optional additive measurement noise.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Standard deviation of each rotation-vector component (radians).
    pub orientation_std: f64,
    /// Standard deviation of each position component (meters).
    pub position_std: f64,
}

impl NoiseModel {
    pub fn is_zero(&self) -> bool {
        self.orientation_std == 0.0 && self.position_std == 0.0
    }

    /// Perturbs every observation; deterministic in `seed`.
    pub fn apply(&self, recording: &mut RbmRecording, seed: u64) -> Result<()> {
        if self.orientation_std < 0.0 || self.position_std < 0.0 {
            return Err(Error::Config(
                "noise standard deviations must be nonnegative".into(),
            ));
        }
        if self.is_zero() {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot =
            Normal::new(0.0, self.orientation_std).map_err(|e| Error::Config(e.to_string()))?;
        let pos = Normal::new(0.0, self.position_std).map_err(|e| Error::Config(e.to_string()))?;
        for frame in &mut recording.frames {
            for o in &mut frame.observations {
                let dr = Vector3::new(
                    rot.sample(&mut rng),
                    rot.sample(&mut rng),
                    rot.sample(&mut rng),
                );
                let dp = Vector3::new(
                    pos.sample(&mut rng),
                    pos.sample(&mut rng),
                    pos.sample(&mut rng),
                );
                o.orientation = UnitQuaternion::exp(&dr) * o.orientation;
                o.position += dp;
            }
        }
        Ok(())
    }
}
