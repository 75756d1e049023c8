//! Neural-network operators. Every tensor here is NHWC.
//!
//! Each operator has a pure forward kernel on [`Tensor`](crate::Tensor)s
//! plus a [`Graph`](crate::Graph) method that records it for backprop.

pub mod conv;
pub mod coords;
pub mod dense;
pub mod loss;
pub mod norm;
pub mod pool;

pub use conv::{ConvSpec, Padding};
pub use coords::CoordSpec;
pub use norm::BatchNormState;
