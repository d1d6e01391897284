//! From-scratch 1-D convolutional U-Net: layers with explicit backward
//! passes, Adam, the training loop and the checkpoint format.

mod adam;
mod checkpoint;
pub mod layers;
mod real;
mod tensor;
mod train;
mod unet;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{
    denoise, denoise_values, reflect_pad, train, EarlyStopping, EpochRecord, LossHistory, PairSet, Precision,
    TrainConfig, TrainOutcome, TrainingMeta,
};
pub use unet::{Activation, ForwardCache, ModelConfig, Scaling, UNet};

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}
