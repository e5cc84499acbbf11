//! Nested Fourier-DeepONet surrogate for multi-level CO2 storage simulation.
//!
//! The crate is organised bottom-up: dense tensors and FFTs, a reverse-mode
//! tape, the operator model, the nested level pipeline, metrics, a synthetic
//! data generator and the training loop.

pub mod autodiff;
pub mod error;
pub mod fft;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nested;
pub mod ops;
pub mod par;
pub mod spectral;
pub mod study;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use model::{ArchSpec, FourierDeepONet};
pub use tensor::{ComplexTensor, Tensor};
