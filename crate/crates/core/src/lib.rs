//! Production technologies, cost minimization, panel simulation, GMM
//! estimation and identification diagnostics for revenue production functions.

pub mod costmin;
mod error;
pub mod estimator;
pub mod identlab;
pub mod model;
pub mod par;
pub mod simulator;
pub mod solve;

pub use error::{Error, Result};
pub use model::*;
pub use par::Execution;
pub use simulator::{simulate_panel, verify_panel, CapitalPolicy, Panel, PriceProcess, ProductivityProcess, SimConfig};
