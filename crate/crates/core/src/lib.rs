//! Compatibility, post-processing order and dilations of quantum channels
//! between finite-dimensional C*-algebras.

pub mod algebra;
pub mod channel;
pub mod cli;
pub mod compat;
pub mod dilation;
pub mod error;
pub mod experiments;
pub mod feasibility;
pub mod numerics;
pub mod order;
pub mod povmtools;

pub use error::{Error, Result};
