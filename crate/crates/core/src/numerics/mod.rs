//! Dense numerical kernel: tensors, MLPs with analytic gradients, Adam,
//! seeded Gaussian sampling, nearest-rank quantiles and a finite-difference
//! checker.

mod adam;
mod gradcheck;
mod mlp;
mod quantile;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use mlp::{Activation, InputGradTape, Layer, MlpGrads, MlpParams, Tape};
pub use quantile::{nearest_rank, quantile_sorted};
pub(crate) use rng::fill_gaussian;
pub use rng::{sample_gaussian, Rng};
pub use tensor::Tensor2;
