//! Network inputs from marker frames.
//!
//! Normalized layout, for `N` markers in configuration order:
//! `[c, p_1 - c, .., p_N - c, r_1, .., r_N]` where `c` is the centroid of the
//! marker positions, the root (chest) rotation `r` is the log of its global
//! orientation and every other `r_i` is the log of its orientation relative
//! to its parent marker. The global layout, used to ablate normalization,
//! is `[p_1, .., p_N, log q_1, .., log q_N]`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::body::SkeletonTopology;
use crate::error::{Error, Result};
use crate::rbm::{RbmConfiguration, RbmFrame, RbmRecording, CHEST};

/// Parent of every marker; the chest marker is the single root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationTree {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
}

impl NormalizationTree {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn root(&self) -> usize {
        self.parents
            .iter()
            .position(Option::is_none)
            .expect("validated tree has a root")
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parents[i]
    }

    /// Checks the single-root, acyclic structure.
    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.parents.len() != n {
            return Err(Error::Config(
                "tree names and parents differ in length".into(),
            ));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.parents[i].is_none()).collect();
        if roots.len() != 1 || self.names[roots[0]] != CHEST {
            return Err(Error::Config(format!(
                "tree must have the single root `{CHEST}`"
            )));
        }
        for start in 0..n {
            let mut at = start;
            for _ in 0..=n {
                match self.parents[at] {
                    None => break,
                    Some(p) if p < n => at = p,
                    Some(p) => return Err(Error::Config(format!("parent index {p} out of range"))),
                }
            }
            if self.parents[at].is_some() {
                return Err(Error::Config("tree contains a cycle".into()));
            }
        }
        Ok(())
    }
}

/// Parents follow segment ancestry: a marker's parent is the marker on the
/// nearest ancestor segment that is equipped, falling back to the chest.
pub fn build_tree(
    config: &RbmConfiguration,
    topology: &SkeletonTopology,
) -> Result<NormalizationTree> {
    let root = config.index_of(CHEST).ok_or_else(|| {
        Error::Config(format!(
            "configuration `{}` lacks the `{CHEST}` marker",
            config.name
        ))
    })?;
    let joints = config
        .specs
        .iter()
        .map(|s| {
            topology.index_of(&s.segment_joint).ok_or_else(|| {
                Error::Config(format!(
                    "marker `{}`: unknown joint `{}`",
                    s.name, s.segment_joint
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let parents = (0..config.len())
        .map(|i| {
            if i == root {
                return None;
            }
            let mut j = topology.parents[joints[i]];
            while let Some(a) = j {
                if let Some(k) = joints.iter().position(|&jk| jk == a) {
                    return Some(k);
                }
                j = topology.parents[a];
            }
            Some(root)
        })
        .collect();
    let tree = NormalizationTree {
        names: config.names(),
        parents,
    };
    tree.validate()?;
    Ok(tree)
}

/// Which input encoding the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    #[default]
    Normalized,
    Global,
}

impl InputMode {
    pub fn input_dim(self, markers: usize) -> usize {
        match self {
            InputMode::Normalized => 3 + 6 * markers,
            InputMode::Global => 6 * markers,
        }
    }
}

/// One flattened network input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct InputVector {
    pub values: Vec<f64>,
}

impl InputVector {
    fn block(&self, at: usize) -> Vector3<f64> {
        Vector3::new(self.values[at], self.values[at + 1], self.values[at + 2])
    }

    /// Centroid of a normalized vector.
    pub fn centroid(&self) -> Vector3<f64> {
        self.block(0)
    }

    /// Centered position of marker `i` in a normalized vector with `n` markers.
    pub fn relative_position(&self, i: usize) -> Vector3<f64> {
        self.block(3 + 3 * i)
    }

    /// Rotation vector of marker `i` in a normalized vector with `n` markers.
    pub fn rotation(&self, i: usize, n: usize) -> Vector3<f64> {
        self.block(3 + 3 * n + 3 * i)
    }
}

pub fn normalize_frame(frame: &RbmFrame, tree: &NormalizationTree) -> Result<InputVector> {
    encode_frame(frame, tree, InputMode::Normalized)
}

pub fn encode_frame(
    frame: &RbmFrame,
    tree: &NormalizationTree,
    mode: InputMode,
) -> Result<InputVector> {
    let n = tree.len();
    let obs = &frame.observations;
    if obs.len() != n {
        return Err(Error::Dimension(format!(
            "frame has {} markers, tree has {n}",
            obs.len()
        )));
    }
    let mut values = Vec::with_capacity(mode.input_dim(n));
    match mode {
        InputMode::Normalized => {
            let c = obs.iter().map(|o| o.position).sum::<Vector3<f64>>() / n as f64;
            values.extend_from_slice(c.as_slice());
            for o in obs {
                values.extend_from_slice((o.position - c).as_slice());
            }
            for (i, o) in obs.iter().enumerate() {
                let r = match tree.parents[i] {
                    None => o.orientation.log(),
                    Some(p) => (obs[p].orientation.conjugate() * o.orientation).log(),
                };
                values.extend_from_slice(&r.to_array());
            }
        }
        InputMode::Global => {
            for o in obs {
                values.extend_from_slice(o.position.as_slice());
            }
            for o in obs {
                values.extend_from_slice(&o.orientation.log().to_array());
            }
        }
    }
    Ok(InputVector { values })
}

pub fn normalize_sequence(
    recording: &RbmRecording,
    tree: &NormalizationTree,
) -> Result<Vec<InputVector>> {
    encode_sequence(recording, tree, InputMode::Normalized)
}

pub fn encode_sequence(
    recording: &RbmRecording,
    tree: &NormalizationTree,
    mode: InputMode,
) -> Result<Vec<InputVector>> {
    recording
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            encode_frame(f, tree, mode).map_err(|e| Error::Dimension(format!("frame {i}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::build_default_body;
    use crate::rbm::{preset_names, RbmObservation};
    use crate::so3::UnitQuaternion;

    fn parent_name(tree: &NormalizationTree, name: &str) -> Option<String> {
        let i = tree.names.iter().position(|n| n == name).unwrap();
        tree.parents[i].map(|p| tree.names[p].clone())
    }

    #[test]
    fn tree_follows_segment_ancestry() {
        let b = build_default_body(42);
        let all = build_tree(&RbmConfiguration::full(&b).unwrap(), &b.topology).unwrap();
        assert_eq!(
            parent_name(&all, "left_forearm").as_deref(),
            Some("left_arm")
        );
        assert_eq!(parent_name(&all, "left_arm").as_deref(), Some(CHEST));
        assert_eq!(
            parent_name(&all, "right_hand").as_deref(),
            Some("right_forearm")
        );
        assert_eq!(parent_name(&all, "left_foot").as_deref(), Some("left_shin"));
        assert_eq!(parent_name(&all, "head").as_deref(), Some(CHEST));
        assert_eq!(parent_name(&all, CHEST), None);
        let d = build_tree(&RbmConfiguration::preset("RBM-D", &b).unwrap(), &b.topology).unwrap();
        assert_eq!(parent_name(&d, "left_hand").as_deref(), Some(CHEST));
        let b_cfg =
            build_tree(&RbmConfiguration::preset("RBM-B", &b).unwrap(), &b.topology).unwrap();
        assert_eq!(
            parent_name(&b_cfg, "left_hand").as_deref(),
            Some("left_arm")
        );
        for name in preset_names() {
            build_tree(&RbmConfiguration::preset(name, &b).unwrap(), &b.topology).unwrap();
        }
    }

    #[test]
    fn missing_chest_is_a_config_error() {
        let b = build_default_body(42);
        let mut c = RbmConfiguration::full(&b).unwrap();
        c.specs.retain(|s| s.name != CHEST);
        assert!(matches!(build_tree(&c, &b.topology), Err(Error::Config(_))));
    }

    fn star(n: usize) -> NormalizationTree {
        let mut names = vec![CHEST.to_string()];
        names.extend((1..n).map(|i| format!("m{i}")));
        let mut parents = vec![None];
        parents.extend((1..n).map(|_| Some(0)));
        NormalizationTree { names, parents }
    }

    #[test]
    fn symmetric_identity_frame() {
        let pos = [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, -2.0, 0.0),
        ];
        let frame = RbmFrame {
            timestamp: 0.0,
            observations: pos
                .iter()
                .map(|&p| RbmObservation {
                    position: p,
                    orientation: UnitQuaternion::IDENTITY,
                })
                .collect(),
        };
        let x = normalize_frame(&frame, &star(4)).unwrap();
        assert_eq!(x.values.len(), 3 + 24);
        assert_eq!(x.centroid(), Vector3::zeros());
        for (i, p) in pos.iter().enumerate() {
            assert_eq!(x.relative_position(i), *p);
            assert_eq!(x.rotation(i, 4), Vector3::zeros());
        }
    }

    #[test]
    fn child_quarter_turn_is_parent_invariant() {
        let child_rel = UnitQuaternion::exp(&Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        for parent in [
            Vector3::zeros(),
            Vector3::new(0.3, -2.0, 1.1),
            Vector3::new(0.0, 3.0, 0.0),
        ] {
            let qp = UnitQuaternion::exp(&parent);
            let frame = RbmFrame {
                timestamp: 0.0,
                observations: vec![
                    RbmObservation {
                        position: Vector3::zeros(),
                        orientation: qp,
                    },
                    RbmObservation {
                        position: Vector3::x(),
                        orientation: qp * child_rel,
                    },
                ],
            };
            let x = normalize_frame(&frame, &star(2)).unwrap();
            assert!(
                (x.rotation(1, 2) - Vector3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0)).norm()
                    < 1e-12
            );
            assert!((x.rotation(0, 2) - qp.log().0).norm() < 1e-15);
        }
    }

    #[test]
    fn global_mode_layout() {
        let q = UnitQuaternion::exp(&Vector3::new(0.1, 0.2, 0.3));
        let frame = RbmFrame {
            timestamp: 0.0,
            observations: vec![
                RbmObservation {
                    position: Vector3::new(1.0, 2.0, 3.0),
                    orientation: q,
                },
                RbmObservation {
                    position: Vector3::new(4.0, 5.0, 6.0),
                    orientation: UnitQuaternion::IDENTITY,
                },
            ],
        };
        let x = encode_frame(&frame, &star(2), InputMode::Global).unwrap();
        assert_eq!(x.values.len(), 12);
        assert_eq!(&x.values[..6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!((x.block(6) - q.log().0).norm() < 1e-15);
    }

    #[test]
    fn sequence_lengths() {
        let rec = RbmRecording {
            config_name: "x".into(),
            frame_rate: 60.0,
            frames: vec![],
            calibration: None,
        };
        assert!(normalize_sequence(&rec, &star(3)).unwrap().is_empty());
        let bad = RbmRecording {
            frames: vec![RbmFrame {
                timestamp: 0.0,
                observations: vec![],
            }],
            ..rec
        };
        assert!(normalize_sequence(&bad, &star(3)).is_err());
    }
}
