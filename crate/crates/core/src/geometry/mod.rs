//! Mirror maps, constraint sets, regularizers, and the two inner argmin steps.

pub mod inner;
pub mod mirror;
pub mod regularizer;
pub mod sets;

pub use inner::{dual_averaging_projection, mirror_step, InnerProblem};
pub use mirror::{separate_convexity_check, MapKind, MirrorMap, ENTROPY_FLOOR};
pub use regularizer::{RegKind, Regularizer};
pub use sets::ConstraintSet;
