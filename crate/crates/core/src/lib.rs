//! Differentiable tensors, styleVAE degradation synthesis and
//! attention-based super-resolution, all in 64-bit arithmetic on the CPU.

pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod gradsuite;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod losses;
pub mod mine;
pub mod models;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod style;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use rng::Rng;
pub use tensor::Tensor;
