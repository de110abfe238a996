pub mod augment;
pub mod cascade;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod imageio;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Shape4, Tensor4};
