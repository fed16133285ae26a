//! Small reverse-mode network toolkit with explicit per-layer backward passes.
//!
//! Layers are plain structs owning their parameters. Backward functions take
//! the cached forward values and return gradients; models collect parameters
//! and gradients in one fixed order so the optimizer and the checkpoint format
//! can address them positionally.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState, DecayMode};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{relu, relu_backward, Conv2d, Dense, MaxPool2d, PoolCache};
pub use loss::{cross_entropy, softmax, softmax_predict};
pub use lstm::{lstm_step, LstmCell, LstmStack, LstmStepCache, LstmStepOutput, LstmTrace};
pub use tensor::Tensor;
pub use train::{accuracy, fit, fit_with, EpochControl, TrainConfig, TrainHistory, Trainable};

use rand::Rng;

/// He-uniform initialisation: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
