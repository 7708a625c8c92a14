//! Depth-to-width allocation toolkit for linearized self-attention networks.
//!
//! - [`model`]: the network forward pass and its expanded product form
//! - [`bounds`]: separation-rank bounds, regimes and width equivalence
//! - [`lab`]: numerical rank experiments on grid tensors
//! - [`fit`]: transition estimation and the weighted log-linear fit
//! - [`planner`]: budget planning, audits and projection tables
//!
//! Fan-out loops go through [`exec`]; the `parallel` feature (on by default)
//! runs them on rayon.

pub mod bounds;
pub mod data;
pub mod exec;
pub mod fit;
pub mod lab;
pub mod model;
pub mod planner;
