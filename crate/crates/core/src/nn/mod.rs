//! Minimal CPU tensor engine: NCHW tensors, the handful of layer kernels the
//! generator and discriminator need, a reverse-mode tape, parameter storage
//! and the two optimizers used by the trainer.

mod gemm;
pub mod ops;
pub mod optim;
pub mod params;
pub mod tape;
mod tensor;

pub use ops::{ConvGeom, Resize};
pub use params::{Gradients, Init, InitRecord, NamedTensor, ParamId, ParameterSet, TensorSpec};
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;
