//! Representation cost, bottleneck certificates and weight-decay experiments for deep
//! fully connected networks with homogeneous nonlinearities.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod net;
pub mod repcost;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use net::NetParams;
