//! Quaternion-based skeletal pose encoding, geodesic and contrastive training
//! objectives, a small reverse-mode autodiff core and a gloss-to-pose
//! progressive transformer, plus DTW-aligned evaluation metrics.
// Float guards are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// `is_multiple_of` postdates the minimum supported toolchain.
#![allow(clippy::manual_is_multiple_of)]

pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod rotation;
pub mod skeleton;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, OutputMode};
pub use rotation::{decode, encode, geodesic_distance, quat_from_bone_pair, RotationSequence, UnitQuat};
pub use skeleton::{Bone, PoseSequence, Skeleton, Vec3};
pub use trainer::{Contrastive, Dataset, Sample, TrainConfig};
