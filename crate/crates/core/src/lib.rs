//! Fast approximate classification by sampling class borders.
//!
//! A binary decision function `R(x)` (an adaptive Gaussian filter or a
//! LIBSVM model) is sampled along its zero level set. Classification then
//! needs only the nearest border sample and its normal. Pairwise borders are
//! coupled into multiclass probabilities.

pub mod borders;
pub mod data;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod multiclass;
pub mod svm;
pub mod synth;

pub use borders::{train_borders, BordersModel, DecisionOracle, TrainOptions};
pub use data::Dataset;
pub use error::{Error, Result};
pub use kernel::{AgfConfig, AgfOracle, BinaryProblem};
pub use multiclass::MultiBordersModel;
pub use svm::SvmModel;
