//! Median filter and threshold dynamics schemes for motion by mean
//! curvature of interfaces and multiphase networks on uniform 2D grids.

pub mod bench;
pub mod cli;
pub mod denoise;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod median2p;
pub mod multiphase;
pub mod tdyn;

pub use error::{Error, Result};
