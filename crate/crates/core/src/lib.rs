//! Auto-calibration of receding-horizon controller weights for an automated
//! vehicle, using parallel rollouts on randomized digital twins.

pub mod campaign;
pub mod controller;
pub mod error;
pub mod executor;
pub mod oracle;
pub mod path;
pub mod plant;
pub mod synthetic;
pub mod tuner;
