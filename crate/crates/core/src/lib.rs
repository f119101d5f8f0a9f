//! LCDiff: adverse-weather image restoration by luminance/chrominance
//! decomposition and a luminance-guided diffusion refiner.

pub mod autodiff;
pub mod checkpoint;
pub mod colorlab;
pub mod config;
pub mod error;
pub mod experiments;
pub mod freqlab;
pub mod lcdn;
pub mod lgdm;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod weathersim;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
