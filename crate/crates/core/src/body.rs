//! Simplified parametric body: a 24-joint kinematic tree with a linear shape
//! space and a procedurally built capsule mesh bound by linear blend skinning.
//!
//! Coordinates are meters with `+y` up, `+x` towards the subject's left and
//! `+z` forward. The rest pose is a T-pose: all joint rotations are identity
//! and the arms are horizontal.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::so3::{AxisAngle, UnitQuaternion};

/// Number of shape coefficients.
pub const SHAPE_DIM: usize = 10;
/// Number of joints in the default skeleton.
pub const JOINT_COUNT: usize = 24;

/// Relative change of every bone length per unit of shape coefficient 0.
const HEIGHT_SCALE: f64 = 0.06;
/// Relative change of limb bone lengths per unit of shape coefficient 1.
const LIMB_SCALE: f64 = 0.05;
/// Bound on the per-joint offsets of shape coefficients 2..10 (meters).
const MINOR_OFFSET: f64 = 0.004;

const AROUND: usize = 10;
const CYLINDER_RINGS: usize = 5;
/// Rings per capsule: one hemisphere ring at each end plus the cylinder.
pub const CAPSULE_RINGS: usize = CYLINDER_RINGS + 2;

pub type ShapeVector = [Vector3<f64>; SHAPE_DIM];

struct JointDef {
    name: &'static str,
    parent: Option<usize>,
    offset: [f64; 3],
    limb: bool,
}

const fn j(name: &'static str, parent: Option<usize>, offset: [f64; 3], limb: bool) -> JointDef {
    JointDef {
        name,
        parent,
        offset,
        limb,
    }
}

const SKELETON: [JointDef; JOINT_COUNT] = [
    j("pelvis", None, [0.0, 0.93, 0.0], false),
    j("left_hip", Some(0), [0.09, -0.07, 0.0], false),
    j("right_hip", Some(0), [-0.09, -0.07, 0.0], false),
    j("spine1", Some(0), [0.0, 0.11, 0.0], false),
    j("left_knee", Some(1), [0.0, -0.40, 0.0], true),
    j("right_knee", Some(2), [0.0, -0.40, 0.0], true),
    j("spine2", Some(3), [0.0, 0.13, 0.0], false),
    j("left_ankle", Some(4), [0.0, -0.41, 0.0], true),
    j("right_ankle", Some(5), [0.0, -0.41, 0.0], true),
    j("spine3", Some(6), [0.0, 0.06, 0.0], false),
    j("left_foot", Some(7), [0.0, -0.06, 0.12], true),
    j("right_foot", Some(8), [0.0, -0.06, 0.12], true),
    j("neck", Some(9), [0.0, 0.21, 0.0], false),
    j("left_collar", Some(9), [0.08, 0.12, 0.0], false),
    j("right_collar", Some(9), [-0.08, 0.12, 0.0], false),
    j("head", Some(12), [0.0, 0.09, 0.03], false),
    j("left_shoulder", Some(13), [0.10, 0.03, 0.0], false),
    j("right_shoulder", Some(14), [-0.10, 0.03, 0.0], false),
    j("left_elbow", Some(16), [0.26, 0.0, 0.0], true),
    j("right_elbow", Some(17), [-0.26, 0.0, 0.0], true),
    j("left_wrist", Some(18), [0.25, 0.0, 0.0], true),
    j("right_wrist", Some(19), [-0.25, 0.0, 0.0], true),
    j("left_hand", Some(20), [0.08, 0.0, 0.0], true),
    j("right_hand", Some(21), [-0.08, 0.0, 0.0], true),
];

/// Capsule for the segment driven by a joint: from `start` joint (+ext) to
/// `end` joint (+ext), all in rest coordinates.
struct SegmentDef {
    start: (usize, [f64; 3]),
    end: (usize, [f64; 3]),
    radius: f64,
}

const fn seg(start: usize, end: usize, end_ext: [f64; 3], radius: f64) -> SegmentDef {
    SegmentDef {
        start: (start, [0.0; 3]),
        end: (end, end_ext),
        radius,
    }
}

const SEGMENTS: [SegmentDef; JOINT_COUNT] = [
    seg(1, 2, [0.0; 3], 0.10),
    seg(1, 4, [0.0; 3], 0.07),
    seg(2, 5, [0.0; 3], 0.07),
    seg(3, 6, [0.0; 3], 0.08),
    seg(4, 7, [0.0; 3], 0.05),
    seg(5, 8, [0.0; 3], 0.05),
    seg(6, 9, [0.0; 3], 0.09),
    seg(7, 10, [0.0; 3], 0.04),
    seg(8, 11, [0.0; 3], 0.04),
    seg(9, 12, [0.0; 3], 0.10),
    seg(10, 10, [0.0, 0.0, 0.06], 0.03),
    seg(11, 11, [0.0, 0.0, 0.06], 0.03),
    seg(12, 15, [0.0; 3], 0.05),
    seg(13, 16, [0.0; 3], 0.045),
    seg(14, 17, [0.0; 3], 0.045),
    seg(15, 15, [0.0, 0.20, 0.0], 0.09),
    seg(16, 18, [0.0; 3], 0.045),
    seg(17, 19, [0.0; 3], 0.045),
    seg(18, 20, [0.0; 3], 0.037),
    seg(19, 21, [0.0; 3], 0.037),
    seg(20, 22, [0.0; 3], 0.03),
    seg(21, 23, [0.0; 3], 0.03),
    seg(22, 22, [0.08, 0.0, 0.0], 0.02),
    seg(23, 23, [-0.08, 0.0, 0.0], 0.02),
];

/// Body shape, pose and root translation.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams {
    pub beta: [f64; SHAPE_DIM],
    /// Per-joint rotation relative to the parent; index 0 is the root.
    pub theta: Vec<AxisAngle>,
    pub gamma: Vector3<f64>,
}

impl BodyParams {
    /// Rest pose (T-pose) at the origin with mean shape.
    pub fn rest(joint_count: usize) -> Self {
        Self {
            beta: [0.0; SHAPE_DIM],
            theta: vec![AxisAngle::zero(); joint_count],
            gamma: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.theta.iter().all(AxisAngle::is_finite)
            && self.gamma.iter().all(|v| v.is_finite())
    }
}

/// Kinematic tree with a linear shape space on bone offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonTopology {
    pub names: Vec<String>,
    /// `None` marks the root. Parents always precede their children.
    pub parents: Vec<Option<usize>>,
    /// Offset from the parent joint (for the root: absolute position) at `beta = 0`.
    pub rest_offsets: Vec<Vector3<f64>>,
    /// Change of each offset per unit shape coefficient.
    pub offset_basis: Vec<ShapeVector>,
}

impl SkeletonTopology {
    pub fn new(
        names: Vec<String>,
        parents: Vec<Option<usize>>,
        rest_offsets: Vec<Vector3<f64>>,
        offset_basis: Vec<ShapeVector>,
    ) -> Result<Self> {
        let n = names.len();
        if n == 0 || parents.len() != n || rest_offsets.len() != n || offset_basis.len() != n {
            return Err(Error::Config(
                "skeleton arrays must be non-empty and of equal length".into(),
            ));
        }
        let roots = parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 || parents[0].is_some() {
            return Err(Error::Config(
                "skeleton must have exactly one root at index 0".into(),
            ));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= i {
                    return Err(Error::Config(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )));
                }
            }
        }
        Ok(Self {
            names,
            parents,
            rest_offsets,
            offset_basis,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// True if `ancestor` lies on the path from `joint` to the root (inclusive).
    pub fn is_ancestor(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.parents[joint] {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    pub fn shaped_offsets(&self, beta: &[f64; SHAPE_DIM]) -> Vec<Vector3<f64>> {
        self.rest_offsets
            .iter()
            .zip(&self.offset_basis)
            .map(|(o, basis)| {
                let mut v = *o;
                for (b, d) in beta.iter().zip(basis) {
                    v += *b * d;
                }
                v
            })
            .collect()
    }

    /// Joint positions in the rest pose for the given shape.
    pub fn rest_joints(&self, beta: &[f64; SHAPE_DIM]) -> Vec<Vector3<f64>> {
        let offsets = self.shaped_offsets(beta);
        let mut out: Vec<Vector3<f64>> = Vec::with_capacity(offsets.len());
        for (i, o) in offsets.iter().enumerate() {
            let p = match self.parents[i] {
                Some(p) => out[p] + o,
                None => *o,
            };
            out.push(p);
        }
        out
    }
}

/// Description of one capsule inside a [`BodyMesh`], used to pick anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentLayout {
    pub joint: usize,
    pub first_vertex: usize,
    pub rings: usize,
    pub around: usize,
}

impl SegmentLayout {
    /// Vertex on ring `ring` (0 = first hemisphere ring) at angular index `k`.
    pub fn ring_vertex(&self, ring: usize, k: usize) -> usize {
        self.first_vertex + 1 + ring * self.around + (k % self.around)
    }

    /// Ring through the middle of the cylinder.
    pub fn mid_ring(&self) -> usize {
        self.rings / 2
    }

    pub fn vertex_count(&self) -> usize {
        self.rings * self.around + 2
    }
}

/// Triangle mesh with skinning weights and a linear shape basis.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyMesh {
    pub rest_vertices: Vec<Vector3<f64>>,
    pub facets: Vec<[usize; 3]>,
    /// Sparse skinning weights `(joint, weight)` per vertex.
    pub weights: Vec<Vec<(usize, f64)>>,
    pub shape_basis: Vec<ShapeVector>,
    pub segments: Vec<SegmentLayout>,
    vertex_facets: Vec<Vec<usize>>,
}

impl BodyMesh {
    pub fn new(
        rest_vertices: Vec<Vector3<f64>>,
        facets: Vec<[usize; 3]>,
        weights: Vec<Vec<(usize, f64)>>,
        shape_basis: Vec<ShapeVector>,
        segments: Vec<SegmentLayout>,
    ) -> Result<Self> {
        let nv = rest_vertices.len();
        if weights.len() != nv || shape_basis.len() != nv {
            return Err(Error::Mesh(
                "weights and shape basis must have one entry per vertex".into(),
            ));
        }
        for (i, f) in facets.iter().enumerate() {
            if f.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh(format!(
                    "facet {i} references a missing vertex"
                )));
            }
        }
        for (i, w) in weights.iter().enumerate() {
            let sum: f64 = w.iter().map(|(_, w)| *w).sum();
            if w.is_empty() || w.iter().any(|(_, w)| *w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Mesh(format!(
                    "vertex {i}: skinning weights must be nonnegative and sum to 1"
                )));
            }
        }
        let mut vertex_facets = vec![Vec::new(); nv];
        for (fi, f) in facets.iter().enumerate() {
            for &v in f {
                vertex_facets[v].push(fi);
            }
        }
        Ok(Self {
            rest_vertices,
            facets,
            weights,
            shape_basis,
            segments,
            vertex_facets,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn incident_facets(&self, vertex: usize) -> &[usize] {
        &self.vertex_facets[vertex]
    }

    pub fn segment(&self, joint: usize) -> Option<&SegmentLayout> {
        self.segments.iter().find(|s| s.joint == joint)
    }

    pub fn facet_centroid(&self, vertices: &[Vector3<f64>], facet: usize) -> Vector3<f64> {
        let [a, b, c] = self.facets[facet];
        (vertices[a] + vertices[b] + vertices[c]) / 3.0
    }

    /// Rest vertices for a given shape.
    pub fn shaped_vertices(&self, beta: &[f64; SHAPE_DIM]) -> Vec<Vector3<f64>> {
        self.rest_vertices
            .iter()
            .zip(&self.shape_basis)
            .map(|(v, basis)| {
                let mut p = *v;
                for (b, d) in beta.iter().zip(basis) {
                    p += *b * d;
                }
                p
            })
            .collect()
    }
}

/// Topology and mesh together.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub topology: SkeletonTopology,
    pub mesh: BodyMesh,
}

impl BodyModel {
    pub fn joint_count(&self) -> usize {
        self.topology.joint_count()
    }

    pub fn forward_kinematics(&self, params: &BodyParams) -> Result<JointSet> {
        forward_kinematics(&self.topology, params)
    }

    pub fn skin(&self, params: &BodyParams) -> Result<Vec<Vector3<f64>>> {
        skin_mesh(&self.topology, &self.mesh, params)
    }
}

/// World-space joint positions and global rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<UnitQuaternion>,
}

fn mirror_partner(name: &str) -> Option<String> {
    if let Some(rest) = name.strip_prefix("left_") {
        Some(format!("right_{rest}"))
    } else {
        name.strip_prefix("right_")
            .map(|rest| format!("left_{rest}"))
    }
}

/// Deterministic 24-joint humanoid.
///
/// Shape coefficient 0 scales every bone (overall height), coefficient 1
/// scales the limb bones, and coefficients 2..10 add small fixed offsets
/// drawn from `seed`, mirrored so that every shape stays left/right
/// symmetric.
pub fn build_default_body(seed: u64) -> BodyModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = SKELETON.iter().map(|d| d.name.to_string()).collect();
    let parents: Vec<Option<usize>> = SKELETON.iter().map(|d| d.parent).collect();
    let rest_offsets: Vec<Vector3<f64>> =
        SKELETON.iter().map(|d| Vector3::from(d.offset)).collect();

    let mut minor: Vec<Option<[Vector3<f64>; SHAPE_DIM - 2]>> = vec![None; JOINT_COUNT];
    for i in 0..JOINT_COUNT {
        if minor[i].is_some() {
            continue;
        }
        let mut d = [Vector3::zeros(); SHAPE_DIM - 2];
        let symmetric_axis = mirror_partner(SKELETON[i].name).is_none();
        for v in d.iter_mut() {
            *v = Vector3::new(
                rng.random_range(-MINOR_OFFSET..MINOR_OFFSET),
                rng.random_range(-MINOR_OFFSET..MINOR_OFFSET),
                rng.random_range(-MINOR_OFFSET..MINOR_OFFSET),
            );
            if symmetric_axis {
                v.x = 0.0;
            }
        }
        minor[i] = Some(d);
        if let Some(partner) = mirror_partner(SKELETON[i].name) {
            let pi = SKELETON
                .iter()
                .position(|d| d.name == partner)
                .expect("mirrored joint");
            let mut m = d;
            for v in m.iter_mut() {
                v.x = -v.x;
            }
            minor[pi] = Some(m);
        }
    }

    let offset_basis: Vec<ShapeVector> = SKELETON
        .iter()
        .zip(&minor)
        .map(|(def, minor)| {
            let o = Vector3::from(def.offset);
            let mut b = [Vector3::zeros(); SHAPE_DIM];
            b[0] = HEIGHT_SCALE * o;
            if def.limb {
                b[1] = LIMB_SCALE * o;
            }
            b[2..].copy_from_slice(minor.as_ref().expect("filled above"));
            b
        })
        .collect();

    let topology = SkeletonTopology::new(names, parents, rest_offsets, offset_basis)
        .expect("built-in skeleton is valid");
    let mesh = build_capsule_mesh(&topology);
    BodyModel { topology, mesh }
}

/// Rest joint positions and their shape derivatives.
fn joints_with_basis(topo: &SkeletonTopology) -> (Vec<Vector3<f64>>, Vec<ShapeVector>) {
    let n = topo.joint_count();
    let mut pos: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut basis: Vec<ShapeVector> = Vec::with_capacity(n);
    for i in 0..n {
        let (p, b) = match topo.parents[i] {
            Some(p) => {
                let mut b = basis[p];
                for (bk, dk) in b.iter_mut().zip(&topo.offset_basis[i]) {
                    *bk += dk;
                }
                (pos[p] + topo.rest_offsets[i], b)
            }
            None => (topo.rest_offsets[i], topo.offset_basis[i]),
        };
        pos.push(p);
        basis.push(b);
    }
    (pos, basis)
}

fn capsule_frame(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let reference = if axis.z.abs() > 0.9 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let u = (reference - reference.dot(axis) * axis).normalize();
    let w = axis.cross(&u);
    (u, w)
}

fn build_capsule_mesh(topo: &SkeletonTopology) -> BodyMesh {
    let (joints, joint_basis) = joints_with_basis(topo);
    let mut vertices = Vec::new();
    let mut facets = Vec::new();
    let mut weights = Vec::new();
    let mut shape = Vec::new();
    let mut segments = Vec::new();

    for (joint, def) in SEGMENTS.iter().enumerate() {
        let limb = SKELETON[joint].limb;
        let ext_basis = |ext: [f64; 3]| -> ShapeVector {
            let e = Vector3::from(ext);
            let mut b = [Vector3::zeros(); SHAPE_DIM];
            b[0] = HEIGHT_SCALE * e;
            if limb {
                b[1] = LIMB_SCALE * e;
            }
            b
        };
        let a = joints[def.start.0] + Vector3::from(def.start.1);
        let b = joints[def.end.0] + Vector3::from(def.end.1);
        let mut a_basis = joint_basis[def.start.0];
        let mut b_basis = joint_basis[def.end.0];
        for (k, e) in ext_basis(def.start.1).iter().enumerate() {
            a_basis[k] += e;
        }
        for (k, e) in ext_basis(def.end.1).iter().enumerate() {
            b_basis[k] += e;
        }
        let axis = (b - a).normalize();
        let (u, w) = capsule_frame(&axis);
        let r = def.radius;
        let first = vertices.len();

        let lerp_basis = |t: f64| -> ShapeVector {
            let mut out = [Vector3::zeros(); SHAPE_DIM];
            for k in 0..SHAPE_DIM {
                out[k] = (1.0 - t) * a_basis[k] + t * b_basis[k];
            }
            out
        };

        // (center, ring radius, parameter along the bone for the shape basis)
        let c45 = std::f64::consts::FRAC_1_SQRT_2;
        let mut rings: Vec<(Vector3<f64>, f64, f64)> = vec![(a - r * c45 * axis, r * c45, 0.0)];
        for i in 0..CYLINDER_RINGS {
            let t = i as f64 / (CYLINDER_RINGS - 1) as f64;
            rings.push((a + t * (b - a), r, t));
        }
        rings.push((b + r * c45 * axis, r * c45, 1.0));

        vertices.push(a - r * axis);
        shape.push(lerp_basis(0.0));
        for &(center, radius, t) in &rings {
            for k in 0..AROUND {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / AROUND as f64;
                vertices.push(center + radius * (phi.cos() * u + phi.sin() * w));
                shape.push(lerp_basis(t));
            }
        }
        vertices.push(b + r * axis);
        shape.push(lerp_basis(1.0));
        let count = CAPSULE_RINGS * AROUND + 2;
        weights.extend(std::iter::repeat_n(vec![(joint, 1.0)], count));

        let layout = SegmentLayout {
            joint,
            first_vertex: first,
            rings: CAPSULE_RINGS,
            around: AROUND,
        };
        let bottom = first;
        let top = first + count - 1;
        for k in 0..AROUND {
            facets.push([
                bottom,
                layout.ring_vertex(0, k + 1),
                layout.ring_vertex(0, k),
            ]);
        }
        for ring in 0..CAPSULE_RINGS - 1 {
            for k in 0..AROUND {
                let v00 = layout.ring_vertex(ring, k);
                let v01 = layout.ring_vertex(ring, k + 1);
                let v10 = layout.ring_vertex(ring + 1, k);
                let v11 = layout.ring_vertex(ring + 1, k + 1);
                facets.push([v00, v01, v11]);
                facets.push([v00, v11, v10]);
            }
        }
        for k in 0..AROUND {
            facets.push([
                top,
                layout.ring_vertex(CAPSULE_RINGS - 1, k),
                layout.ring_vertex(CAPSULE_RINGS - 1, k + 1),
            ]);
        }
        segments.push(layout);
    }

    BodyMesh::new(vertices, facets, weights, shape, segments).expect("built-in mesh is valid")
}

fn check_dims(topo: &SkeletonTopology, params: &BodyParams) -> Result<()> {
    if params.theta.len() != topo.joint_count() {
        return Err(Error::Dimension(format!(
            "pose has {} joints, skeleton has {}",
            params.theta.len(),
            topo.joint_count()
        )));
    }
    if !params.is_finite() {
        return Err(Error::Domain(
            "body parameters contain non-finite values".into(),
        ));
    }
    Ok(())
}

/// Global joint rotations and positions.
pub fn forward_kinematics(topo: &SkeletonTopology, params: &BodyParams) -> Result<JointSet> {
    check_dims(topo, params)?;
    let offsets = topo.shaped_offsets(&params.beta);
    let n = topo.joint_count();
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let mut rotations: Vec<UnitQuaternion> = Vec::with_capacity(n);
    for i in 0..n {
        let local = UnitQuaternion::exp(params.theta[i].vector());
        match topo.parents[i] {
            Some(p) => {
                positions.push(positions[p] + rotations[p].rotate(&offsets[i]));
                rotations.push(rotations[p] * local);
            }
            None => {
                positions.push(offsets[i] + params.gamma);
                rotations.push(local);
            }
        }
    }
    Ok(JointSet {
        positions,
        rotations,
    })
}

/// Posed mesh vertices by linear blend skinning.
pub fn skin_mesh(
    topo: &SkeletonTopology,
    mesh: &BodyMesh,
    params: &BodyParams,
) -> Result<Vec<Vector3<f64>>> {
    let joints = forward_kinematics(topo, params)?;
    let rest = topo.rest_joints(&params.beta);
    let transforms: Vec<(Matrix3<f64>, Vector3<f64>)> = joints
        .rotations
        .iter()
        .zip(&joints.positions)
        .zip(&rest)
        .map(|((q, p), r)| {
            let m = *q.to_rotation_matrix().matrix();
            (m, p - m * r)
        })
        .collect();
    let shaped = mesh.shaped_vertices(&params.beta);
    let mut out = Vec::with_capacity(shaped.len());
    for (v, w) in shaped.iter().zip(&mesh.weights) {
        let mut acc = Vector3::zeros();
        for &(j, wj) in w {
            let (m, t) = &transforms[j];
            acc += wj * (m * v + t);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Vertex normal as the mean of incident facet normals weighted by the facet
/// angle at the vertex. Facet winding defines the outward side.
pub fn vertex_normal_mwa(
    mesh: &BodyMesh,
    vertices: &[Vector3<f64>],
    vertex: usize,
) -> Result<Vector3<f64>> {
    let incident = mesh
        .vertex_facets
        .get(vertex)
        .ok_or_else(|| Error::Mesh(format!("vertex {vertex} out of range")))?;
    let mut sum = Vector3::zeros();
    let mut used = 0usize;
    for &fi in incident {
        let [a, b, c] = mesh.facets[fi];
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let cross = (pb - pa).cross(&(pc - pa));
        let area2 = cross.norm();
        if area2 < 1e-14 {
            continue;
        }
        let (e1, e2) = if vertex == a {
            (pb - pa, pc - pa)
        } else if vertex == b {
            (pc - pb, pa - pb)
        } else {
            (pa - pc, pb - pc)
        };
        let angle = e1.cross(&e2).norm().atan2(e1.dot(&e2));
        sum += (cross / area2) * angle;
        used += 1;
    }
    let n = sum.norm();
    if used == 0 || n < 1e-14 {
        return Err(Error::Mesh(format!(
            "vertex {vertex} has no non-degenerate incident facet"
        )));
    }
    Ok(sum / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn body() -> BodyModel {
        build_default_body(42)
    }

    fn height(model: &BodyModel, beta: &[f64; SHAPE_DIM]) -> f64 {
        let v = model.mesh.shaped_vertices(beta);
        let max = v.iter().map(|p| p.y).fold(f64::MIN, f64::max);
        let min = v.iter().map(|p| p.y).fold(f64::MAX, f64::min);
        max - min
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(build_default_body(42), build_default_body(42));
        assert_ne!(
            build_default_body(42).topology,
            build_default_body(43).topology
        );
    }

    #[test]
    fn mesh_size_and_watertight_segments() {
        let b = body();
        assert_eq!(b.joint_count(), JOINT_COUNT);
        assert!((1000..=2000).contains(&b.mesh.vertex_count()));
        // Every edge of every capsule is shared by exactly two facets.
        let mut edges = std::collections::HashMap::new();
        for f in &b.mesh.facets {
            for (x, y) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *edges.entry((x.min(y), x.max(y))).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 2));
    }

    #[test]
    fn facets_face_outward() {
        let b = body();
        let v = &b.mesh.rest_vertices;
        for seg in &b.mesh.segments {
            let range = seg.first_vertex..seg.first_vertex + seg.vertex_count();
            let center: Vector3<f64> =
                range.clone().map(|i| v[i]).sum::<Vector3<f64>>() / range.len() as f64;
            for f in b.mesh.facets.iter().filter(|f| range.contains(&f[0])) {
                let n = (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]));
                let c = (v[f[0]] + v[f[1]] + v[f[2]]) / 3.0;
                assert!(
                    n.dot(&(c - center)) > 0.0,
                    "inward facet on segment {}",
                    seg.joint
                );
            }
        }
    }

    #[test]
    fn rest_pose_is_mirror_symmetric() {
        let b = body();
        let joints = b
            .forward_kinematics(&BodyParams::rest(JOINT_COUNT))
            .unwrap();
        for (i, name) in b.topology.names.iter().enumerate() {
            let Some(partner) = mirror_partner(name) else {
                assert!(
                    joints.positions[i].x.abs() < 1e-12,
                    "{name} off the midline"
                );
                continue;
            };
            let pi = b.topology.index_of(&partner).unwrap();
            let (l, r) = (joints.positions[i], joints.positions[pi]);
            assert!(
                (l.x + r.x).abs() < 1e-9 && (l.y - r.y).abs() < 1e-9 && (l.z - r.z).abs() < 1e-9
            );
        }
    }

    #[test]
    fn first_shape_coefficient_increases_height() {
        let b = body();
        let mut beta = [0.0; SHAPE_DIM];
        let h0 = height(&b, &beta);
        beta[0] = 1.0;
        assert!(height(&b, &beta) > h0);
    }

    #[test]
    fn fk_rest_pose_and_translation() {
        let b = body();
        let mut p = BodyParams::rest(JOINT_COUNT);
        p.beta[3] = 0.7;
        let rest = b.topology.rest_joints(&p.beta);
        let j0 = b.forward_kinematics(&p).unwrap();
        for (a, r) in j0.positions.iter().zip(&rest) {
            assert_eq!(a, r);
        }
        p.gamma = Vector3::new(1.0, 2.0, 3.0);
        let j1 = b.forward_kinematics(&p).unwrap();
        for (a, r) in j1.positions.iter().zip(&j0.positions) {
            assert!((a - r - p.gamma).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_root_rotation_matches_rotated_rest_pose() {
        let b = body();
        let mut p = BodyParams::rest(JOINT_COUNT);
        p.theta[0] = AxisAngle::new(0.0, FRAC_PI_2, 0.0);
        let rest = b.topology.rest_joints(&p.beta);
        let m = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2);
        let j = b.forward_kinematics(&p).unwrap();
        for (a, r) in j.positions.iter().zip(&rest) {
            let expected = rest[0] + m * (r - rest[0]);
            assert!((a - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_chain_rotation_is_product() {
        let b = body();
        let mut p = BodyParams::rest(JOINT_COUNT);
        // pelvis -> spine1 -> spine2
        let angles = [
            AxisAngle::new(0.1, 0.2, -0.3),
            AxisAngle::new(-0.4, 0.0, 0.5),
            AxisAngle::new(0.3, 0.3, 0.3),
        ];
        p.theta[0] = angles[0];
        p.theta[3] = angles[1];
        p.theta[6] = angles[2];
        let j = b.forward_kinematics(&p).unwrap();
        let q = angles
            .iter()
            .map(|a| UnitQuaternion::exp(a.vector()))
            .reduce(|a, b| a * b)
            .unwrap();
        assert!(j.rotations[6].same_rotation(&q, 1e-12));
    }

    #[test]
    fn fk_rejects_wrong_joint_count() {
        let b = body();
        assert!(matches!(
            b.forward_kinematics(&BodyParams::rest(23)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn skinning_rest_pose_and_rigid_vertices() {
        let b = body();
        let mut p = BodyParams::rest(JOINT_COUNT);
        p.beta[0] = 0.5;
        let shaped = b.mesh.shaped_vertices(&p.beta);
        assert_eq!(b.skin(&p).unwrap(), shaped);

        p.theta[18] = AxisAngle::new(0.0, 0.8, 0.3);
        p.theta[0] = AxisAngle::new(0.2, 0.1, 0.0);
        p.gamma = Vector3::new(0.3, 0.0, -0.2);
        let posed = b.skin(&p).unwrap();
        let joints = b.forward_kinematics(&p).unwrap();
        let rest = b.topology.rest_joints(&p.beta);
        let seg = b.mesh.segment(18).unwrap();
        let vi = seg.ring_vertex(2, 3);
        let expected = joints.positions[18] + joints.rotations[18].rotate(&(shaped[vi] - rest[18]));
        assert!((posed[vi] - expected).norm() < 1e-12);
    }

    #[test]
    fn skinning_is_linear_in_weights() {
        let b = body();
        let mut p = BodyParams::rest(JOINT_COUNT);
        for (i, t) in p.theta.iter_mut().enumerate() {
            *t = AxisAngle::new(0.1 * (i as f64).sin(), 0.2, -0.05 * i as f64 / 10.0);
        }
        let vi = b.mesh.segment(16).unwrap().ring_vertex(3, 0);
        let skin_with = |w: Vec<(usize, f64)>| {
            let mut mesh = b.mesh.clone();
            mesh.weights[vi] = w;
            skin_mesh(&b.topology, &mesh, &p).unwrap()[vi]
        };
        let a = skin_with(vec![(16, 1.0)]);
        let c = skin_with(vec![(13, 1.0)]);
        let mid = skin_with(vec![(16, 0.5), (13, 0.5)]);
        assert!((mid - 0.5 * (a + c)).norm() < 1e-12);
    }

    fn single_joint_mesh(vertices: Vec<Vector3<f64>>, facets: Vec<[usize; 3]>) -> BodyMesh {
        let n = vertices.len();
        BodyMesh::new(
            vertices,
            facets,
            vec![vec![(0, 1.0)]; n],
            vec![[Vector3::zeros(); SHAPE_DIM]; n],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn mwa_cube_corner() {
        let v: Vec<Vector3<f64>> = (0..8)
            .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let facets = vec![
            [0, 2, 3],
            [0, 3, 1], // z = 0
            [4, 5, 7],
            [4, 7, 6], // z = 1
            [0, 1, 5],
            [0, 5, 4], // y = 0
            [2, 6, 7],
            [2, 7, 3], // y = 1
            [0, 4, 6],
            [0, 6, 2], // x = 0
            [1, 3, 7],
            [1, 7, 5], // x = 1
        ];
        let mesh = single_joint_mesh(v.clone(), facets);
        let n = vertex_normal_mwa(&mesh, &v, 7).unwrap();
        let expected = Vector3::new(1.0, 1.0, 1.0).normalize();
        assert!((n - expected).norm() < 1e-12, "{n:?}");
    }

    #[test]
    fn mwa_flat_fan_is_plane_normal() {
        let mut v = vec![Vector3::zeros()];
        let angles = [0.0, 0.7, 1.9, 2.2, 3.5, 4.4, 5.5];
        for a in angles {
            v.push(Vector3::new(f64::cos(a) * (1.0 + a), f64::sin(a), 0.0));
        }
        let k = angles.len();
        let facets: Vec<[usize; 3]> = (0..k).map(|i| [0, 1 + i, 1 + (i + 1) % k]).collect();
        let mesh = single_joint_mesh(v.clone(), facets);
        let n = vertex_normal_mwa(&mesh, &v, 0).unwrap();
        assert!((n - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn mwa_skips_degenerate_and_errors_when_nothing_left() {
        let v = vec![
            Vector3::zeros(),
            Vector3::x(),
            Vector3::x() * 2.0,
            Vector3::y(),
        ];
        let mesh = single_joint_mesh(v.clone(), vec![[0, 1, 2]]);
        assert!(vertex_normal_mwa(&mesh, &v, 0).is_err());
        let mesh = single_joint_mesh(v.clone(), vec![[0, 1, 2], [0, 1, 3]]);
        assert!((vertex_normal_mwa(&mesh, &v, 0).unwrap() - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn mwa_capsule_equator_is_radial() {
        let b = body();
        let v = &b.mesh.rest_vertices;
        for joint in [9, 16, 4] {
            let seg = b.mesh.segment(joint).unwrap();
            let def = &SEGMENTS[joint];
            let joints = b.topology.rest_joints(&[0.0; SHAPE_DIM]);
            let a = joints[def.start.0] + Vector3::from(def.start.1);
            let e = joints[def.end.0] + Vector3::from(def.end.1);
            let axis = (e - a).normalize();
            for k in 0..seg.around {
                let vi = seg.ring_vertex(seg.mid_ring(), k);
                let rel = v[vi] - a;
                let radial = (rel - rel.dot(&axis) * axis).normalize();
                let n = vertex_normal_mwa(&b.mesh, v, vi).unwrap();
                assert!((n - radial).norm() < 1e-3, "joint {joint} k {k}");
            }
        }
    }

    #[test]
    fn mesh_rejects_bad_weights_and_facets() {
        let v = vec![Vector3::zeros(); 3];
        let z = vec![[Vector3::zeros(); SHAPE_DIM]; 3];
        assert!(BodyMesh::new(
            v.clone(),
            vec![[0, 1, 3]],
            vec![vec![(0, 1.0)]; 3],
            z.clone(),
            vec![]
        )
        .is_err());
        assert!(BodyMesh::new(v, vec![[0, 1, 2]], vec![vec![(0, 0.7)]; 3], z, vec![]).is_err());
    }

    #[test]
    fn topology_validation() {
        let z = [Vector3::zeros(); SHAPE_DIM];
        let bad = SkeletonTopology::new(
            vec!["a".into(), "b".into()],
            vec![None, Some(1)],
            vec![Vector3::zeros(); 2],
            vec![z; 2],
        );
        assert!(bad.is_err());
        let two_roots = SkeletonTopology::new(
            vec!["a".into(), "b".into()],
            vec![None, None],
            vec![Vector3::zeros(); 2],
            vec![z; 2],
        );
        assert!(two_roots.is_err());
    }
}
