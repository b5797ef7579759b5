//! A small dense-tensor library: row-major tensors, a recording tape with a
//! reverse sweep, and Adam with decoupled weight decay.
//!
//! ```
//! use tensorcore::{Mode, Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new(Mode::Train);
//! let x = tape.param(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
//! let s = tape.sum(x).unwrap();
//! let grads = tape.backward(s).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
//! ```

mod adam;
mod error;
mod float;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, Param, ParamStore};
pub use error::{Result, TensorError};
pub use float::{DType, Float};
pub use tape::{Gradients, Mode, Tape, Var};
pub use tensor::Tensor;

/// Layer-norm epsilon used throughout.
pub const LAYER_NORM_EPS: f64 = 1e-12;
