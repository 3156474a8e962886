//! Flow-guided multi-object tracking.

pub mod association;
pub mod error;
pub mod fgfa;
pub mod fgmp;
pub mod flow;
pub mod geometry;
pub mod kalman;
pub mod metrics;
pub mod mot_io;
pub mod pipeline;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
