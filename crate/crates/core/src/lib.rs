//! Deep multi-instance networks for whole-image classification.
//!
//! An image is treated as a bag of patches. A small convolutional backbone
//! maps the image to a feature grid, a logistic layer with weights shared
//! over positions turns every grid cell into a patch probability, and the
//! probabilities are ranked. Three multi-instance losses are defined on the
//! ranked responses:
//!
//! * max pooling, which only looks at the top-ranked patch,
//! * label assignment, where the top `k` patches inherit the bag label and
//!   the rest are treated as negative,
//! * sparse, which adds an L1 penalty on all responses to the max pooling
//!   loss.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! file system lives in the `milnet` companion crate.
#![no_std]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod folds;
pub mod gradcheck;
pub mod heads;
pub mod image;
pub mod kernels;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod preprocess;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
