//! Large-margin classification over empirical kernel maps.
//!
//! Any pairwise similarity measure, including non-symmetric or indefinite
//! ones, is turned into an explicit feature space by evaluating it against a
//! basis of training exemplars. A linear SVM is then trained on the
//! normalized maps. Nyström and kernel SVM baselines, basis selection and
//! spectral diagnostics are provided alongside.

pub mod analysis;
pub mod basis;
pub mod datasets;
pub mod embedding;
pub mod error;
pub mod features;
pub mod par;
pub mod pipeline;
pub mod similarity;
pub mod solver;

pub use error::{Error, ErrorKind, Result};
pub use par::Execution;
