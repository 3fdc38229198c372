//! Classifiers: the linear SVM used on explicit embeddings, the kernel SVM
//! baseline, and model-selection utilities.

pub mod cv;
pub mod kernel;
pub mod linear;

pub use cv::{cross_validate, greedy_measure_augmentation, mkl_line_search, CvReport, FoldModel};
pub use kernel::{train_kernel_svm_dual, train_one_vs_one, KernelModel, KernelSvmParams};
pub use linear::{train_binary, train_one_vs_rest, LinearModel, LinearSvmParams, Loss};
