//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! One [`Tape`] records one forward pass; [`Tape::backward`] replays it in
//! reverse and fills the gradient slot of every `requires_grad` tensor.
//! Ops cover what a small dual-stream detector needs: convolution (plus its
//! transpose), batch norm, pointwise nonlinearities, pooling, upsampling,
//! a real 2-D FFT with exact adjoints, and elementwise arithmetic with
//! numpy-style broadcasting. Element type is generic: f32 for training,
//! f64 for verification against finite differences.

mod error;
pub mod fft;
mod gradcheck;
pub mod io;
mod ops;
mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::grad_check;
pub use ops::{BnMode, BnState, ComplexGrid, UpsampleMode};
pub use optim::{LrSchedule, OptimState, UpdateRule};
pub use scalar::Scalar;
pub use tape::Tape;
pub use tensor::Tensor;
