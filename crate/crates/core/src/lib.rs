//! Cooperative control of multi-lane unsignalized intersections where any lane
//! may carry any turn.
//!
//! The pipeline has three stages:
//!
//! * [`scheduler`] groups vehicles into conflict-free layers and picks a lane
//!   for each of them (the iterative grouping algorithm),
//! * [`rcs`] plans collision-free per-cycle moves on a grid that travels with
//!   the formation, using conflict-based search over space-time A*,
//! * [`vehicle`] turns those moves into reference paths, minimum-energy
//!   longitudinal schedules and steering commands for a kinematic model.
//!
//! [`sim`] ties the stages together in a discrete-time intersection simulator
//! with fixed-lane and signalized baselines.

mod error;

pub mod conflict;
pub mod rcs;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod vehicle;

pub use error::{Error, Result};
pub use rcs::{CbsConfig, Connectivity, CostMode};
pub use scenario::{Arm, IntersectionGeometry, Movement, Turn};
pub use scheduler::{LanePolicy, VehicleRecord};
pub use sim::{simulate, MatrixConfig, Policy, ScenarioConfig};
pub use vehicle::VehicleParams;
