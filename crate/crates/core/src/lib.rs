//! Maximum-likelihood inference for hierarchical Archimedean copulas.
//!
//! The crate covers generator kernels and their derivatives, HAC trees and
//! their cone parameter spaces, the exact two-level log-density with its
//! score and Hessian, nested-frailty sampling, constrained estimation,
//! Fisher-information estimation and boundary-aware likelihood-ratio tests.

pub mod data;
pub mod density;
pub mod error;
pub mod estimate;
pub mod fd;
pub mod fisher;
pub mod generators;
pub mod lrt;
pub mod rng;
pub mod sampler;
pub mod scenario;
pub mod series;
pub mod tree;

pub use data::DataMatrix;
pub use error::{HacError, Result};
pub use generators::Family;
pub use tree::{HacTree, Hypothesis, NodeIndex, ParamVector};
