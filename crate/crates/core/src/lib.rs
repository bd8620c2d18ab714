//! Residual risk of automated driving under degraded perception, and its
//! expectation over a Gaussian ego localization belief.

pub mod belief;
pub mod collision;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod parallel;
pub mod planner;
pub mod scenario;
pub mod trajectory;

pub use belief::{
    estimate_belief_residual_risk, exceedance_probability, sample_ego_pose, BeliefMcConfig, ResidualField,
    RiskStats,
};
pub use collision::{
    build_collision_region, collision_probability, collision_probability_mc, fuse_covariances, CollisionRegion,
    RelativeState,
};
pub use engine::{residual_risk, scenario_risk, DegradationParams, EngineParams, RiskEngine, RiskValue};
pub use error::{Error, Result};
pub use geometry::{
    point_in_drivable_area, ConvexPolygon, Covariance2, DrivableArea, Footprint, GaussianBelief2, Pose2, Vec2,
};
pub use scenario::{generate_scenario, load_scenario, serialize_scenario, validate_scenario, Scenario, ScenarioKind};
pub use trajectory::{propagate_particles, ParticleTrain, Trajectory, TrajectoryDistribution};
