//! Hybrid social navigation: a classical Dijkstra + DWA stack, a
//! behavior-cloned planner, a gate that switches between them, and the
//! compliance metrics used to compare all three against demonstrations.

pub mod compliance;
pub mod costmap;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod hybrid;
pub mod learned;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
