//! Flash-based face anti-spoofing on synthetic Lambertian captures.

pub mod dataset;
pub mod diffnorm;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod synthgen;
pub mod train;

pub use error::{AtrError, Result};
