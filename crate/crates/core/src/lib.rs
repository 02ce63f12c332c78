//! Neural-guided sampling-based model-predictive control for on-road
//! navigation.
//!
//! The pipeline renders bird's-eye occupancy frames around the ego vehicle,
//! stacks five of them with the rasterized route, predicts a mean control
//! sequence from the stack and samples around that mean once, scoring every
//! rollout for smoothness and collisions. Iterative MPPI and gradient-CEM
//! planners share the same sampling and scoring machinery.

pub mod config;
pub mod costs;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod io;
pub mod kinematics;
pub mod nn;
pub mod occupancy;
pub mod predictor;
pub mod roadseg;
pub mod sampler;
pub mod sim;
pub mod weights;

pub use error::{Error, Result};
pub use config::RunConfig;
pub use dataset::{Dataset, Sample};
pub use eval::Suite;
pub use kinematics::{Control, ControlBounds, ControlSequence, GlobalPath, VehicleState};
pub use occupancy::{GridSpec, GridStack, OccupancyGrid};
pub use predictor::{NetShape, SpatioTemporalNet};
pub use roadseg::{PointCloud, RoadSegNet};
pub use sampler::{PlanResult, SamplerConfig};
pub use sim::{HistoryMode, Planner, PlannerKind, Scene};
