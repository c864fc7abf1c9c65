//! Simulation and optimization toolkit for UAV-enabled data harvesting from
//! ground sensor nodes in urban areas with a probabilistic line-of-sight
//! channel.
//!
//! The crate is organized bottom-up:
//!
//! - [`citygen`]: random Manhattan-type cities, sensor placement, ray-traced
//!   LoS queries and empirical LoS-probability sweeps.
//! - [`channel`]: generalized-logistic LoS model, its regression fit, rates
//!   and the successive-convex-approximation surrogate coefficients.
//! - [`convex`]: a dense simplex LP solver and a log-barrier solver for
//!   smooth convex programs.
//! - [`offline`]: pre-flight 3D trajectory and scheduling design by block
//!   coordinate descent.
//! - [`online`]: in-flight speed and scheduling adaptation along the fixed
//!   offline path.

pub mod channel;
pub mod citygen;
pub mod convex;
mod error;
pub mod geom;
pub mod offline;
pub mod online;

pub use error::{Error, Result};
pub use geom::{Point2, Point3};
