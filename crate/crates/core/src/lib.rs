#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cobyla;
pub mod dataset;
pub mod driver;
pub mod error;
pub mod features;
pub mod manifest;
pub mod mlp;
pub mod objective;
pub mod registry;
pub mod report;
pub mod surrogate;
pub mod synthetic;
pub mod trace;
pub mod trees;
pub mod trust_constr;

pub use error::*;
pub use features::{Composition, FeatureJacobian, FeatureVector, N_FEATURES};
pub use registry::{ElementRecord, MixingEnthalpyTable, Registry, VecConvention};
pub use surrogate::{Surrogate, SurrogateModel};
