//! Dense tensors, tape-based reverse-mode autodiff, recurrent cells, Adam
//! and checkpoint files.
//!
//! ```
//! use densecap_nn::{Graph, Tensor};
//!
//! let g = Graph::detached();
//! let x = g.input_grad(Tensor::vector(vec![2.0, -1.0]));
//! let loss = g.dot(x, x);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[4.0, -2.0]);
//! ```

pub mod cells;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod optim;
mod params;
mod tensor;

pub use cells::{BoundGru, BoundLstm, GruCell, LstmCell, LstmState};
pub use error::{NnError, Result};
pub use graph::{log_sum_exp, sigmoid, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig, StepStatus};
pub use params::{Param, ParamStore};
pub use tensor::Tensor;
