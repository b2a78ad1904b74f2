//! Synthetic data generators and the two weight-decay experiments: the norm-versus-depth
//! sweep on rank-2 data and symmetry learning on inner gradient-descent trajectories.

mod config;
mod data;
mod depth_sweep;
mod symmetry;

pub use config::{parse_list, SweepConfig, SymmetryConfig, SEED_ENV};
pub use data::*;
pub use depth_sweep::*;
pub use symmetry::*;

#[cfg(test)]
mod tests;
