//! Reverse-mode automatic differentiation over dense `f64` grids.
//!
//! Operators cover what a small multi-task counting network needs:
//! dilated convolution, 2x2 max pooling, spatial pyramid pooling, fully
//! connected layers, ReLU/PReLU/sigmoid/softmax, element-wise add and
//! channel concatenation. Losses and other one-off operators plug in
//! through [`CustomOp`].
//!
//! ```
//! use segcrowd_autograd::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![1.0, -2.0]).unwrap()).unwrap();
//! let y = tape.relu(x).unwrap();
//! let loss = tape.sum(y).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().values(), &[1.0, 0.0]);
//! ```

mod conv;
mod error;
pub mod gradcheck;
mod pool;
mod tape;
mod tensor;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvSpec};
pub use error::{Result, TensorError};
pub use gradcheck::{rel_error, GradCheck, GradReport};
pub use pool::{max_pool2d_forward, spp_forward, spp_output_len};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::Tensor;
