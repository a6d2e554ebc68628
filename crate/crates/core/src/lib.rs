//! Obstacle avoidance for a rear-driven electric vehicle: a maximum
//! steering planner and a receding-horizon planner, blended and tracked
//! through feedback linearization on a single-track model.

pub mod arbitration;
pub mod control;
pub mod config;
pub mod error;
pub mod mpc;
pub mod msf;
pub mod sim;
pub mod solver;
pub mod types;
pub mod vehicle;

pub use config::{load_scenario, parse_scenario, scenario_to_string};
pub use error::{Error, Result};
pub use types::{
    CostWeights, DodgeSide, DynamicState, KinematicInput, KinematicState, Obstacle, Scenario, VehicleParams,
    LOW_SPEED_FLOOR,
};
