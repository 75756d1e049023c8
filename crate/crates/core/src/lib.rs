//! CoordConv laboratory: a small CPU deep-learning engine, the Not-so-Clevr
//! dataset, and the supervised coordinate-transform experiments
//! (classification, regression, rendering) built on top of them.


pub mod runtime;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod models;

pub mod ops;
pub mod real;
pub mod rng;
pub mod serialize;
pub mod tensor;
pub mod train;


pub use error::{Error, Result};
pub use graph::{Gradients, Graph, Var};
pub use real::{DType, Real};
pub use rng::{Rng, Stream};
pub use tensor::{Fill, Tensor};
