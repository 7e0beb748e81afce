//! Sparse rigid-body-marker motion capture: a parametric body, virtual
//! 6-DoF marker synthesis, input normalization, a recurrent regressor for
//! body parameters trained under a geodesic rotation loss, pose metrics and
//! versioned file formats.

pub mod body;
pub mod error;
pub mod io;
pub mod metrics;
pub mod motion;
pub mod normalization;
pub mod pipeline;
pub mod rbm;
pub mod regressor;
pub mod so3;

pub use body::{build_default_body, BodyModel, BodyParams, JointSet, SkeletonTopology};
pub use error::{Error, ErrorCategory, Result};
pub use metrics::{evaluate, mpjae, mpjpe, pa_mpjpe, EvalReport};
pub use motion::{MotionFrame, MotionSequence};
pub use normalization::{InputMode, InputVector, NormalizationTree};
pub use pipeline::{stage_seed, AblationCell, AblationTable, ExperimentConfig, Split};
pub use rbm::{RbmConfiguration, RbmFrame, RbmObservation, RbmRecording, RbmSpec};
pub use regressor::{Checkpoint, LossMode, ModelConfig, ModelParams, TrainSettings};
pub use so3::{AxisAngle, RotationMatrix, Se3Transform, UnitQuaternion};
