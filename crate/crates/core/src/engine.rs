//! Particle-based baseline, degraded and residual risk.

use serde::{Deserialize, Serialize};

use crate::collision::pose_collision_probability;
use crate::error::{Error, Result};
use crate::geometry::{Covariance2, Pose2, Vec2};
use crate::planner::{
    braked_trajectory, braking_onset, ego_path, first_conflict, plan_grid, PerceivedOpponents,
};
use crate::scenario::Scenario;
use crate::trajectory::{
    perturb_opponent, propagate_particles, ParticleTrain, Trajectory, TrajectoryDistribution,
};

/// Risk-engine and planner constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineParams {
    /// Arc-length distance between particles, meters.
    pub particle_spacing: f64,
    /// Prediction horizon, seconds.
    pub horizon: f64,
    /// Relative speed at which the impact factor saturates, m/s.
    pub v_ref: f64,
    /// Weighted collision probability that triggers braking.
    pub p_trig: f64,
    /// Reaction lead before the predicted conflict, seconds.
    pub t_react: f64,
    /// Braking deceleration, m/s² (negative).
    pub a_brake: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self { particle_spacing: 0.5, horizon: 2.0, v_ref: 13.9, p_trig: 0.1, t_react: 0.2, a_brake: -3.0 }
    }
}

impl EngineParams {
    pub fn findings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        check(self.particle_spacing.is_finite() && self.particle_spacing > 0.0, "engine particle spacing must be positive");
        check(self.horizon.is_finite() && self.horizon > 0.0, "engine horizon must be positive");
        check(self.v_ref.is_finite() && self.v_ref > 0.0, "engine v_ref must be positive");
        check(self.p_trig > 0.0 && self.p_trig < 1.0, "engine p_trig must lie in (0, 1)");
        check(self.t_react.is_finite() && self.t_react >= 0.0, "engine t_react must be non-negative");
        check(self.a_brake.is_finite() && self.a_brake < 0.0, "engine a_brake must be negative");
        out
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.findings();
        if f.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(f))
        }
    }
}

/// Perception degradation: latency and opponent position/velocity errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DegradationParams {
    pub latency: f64,
    pub pos_error: f64,
    pub vel_error: f64,
}

impl DegradationParams {
    pub fn new(latency: f64, pos_error: f64, vel_error: f64) -> Result<Self> {
        if !(latency.is_finite() && latency >= 0.0) {
            return Err(Error::InvalidInput(format!("latency must be non-negative, got {latency}")));
        }
        if !pos_error.is_finite() || !vel_error.is_finite() {
            return Err(Error::InvalidInput("perception errors must be finite".into()));
        }
        Ok(Self { latency, pos_error, vel_error })
    }

    pub fn latency_only(latency: f64) -> Result<Self> {
        Self::new(latency, 0.0, 0.0)
    }

    pub fn is_null(&self) -> bool {
        self.latency == 0.0 && self.pos_error == 0.0 && self.vel_error == 0.0
    }
}

/// A risk in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct RiskValue(f64);

impl RiskValue {
    pub const ZERO: RiskValue = RiskValue(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidInput(format!("risk {value} outside [0, 1]")))
        }
    }

    pub fn clamped(value: f64) -> Self {
        Self(if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `min(1, (|Δv| / v_ref)²)` for the relative velocity of two particles.
pub fn impact_factor(a_speed: f64, a_heading: f64, b_speed: f64, b_heading: f64, v_ref: f64) -> f64 {
    let dv = Vec2::from_angle(a_heading).scale(a_speed) - Vec2::from_angle(b_heading).scale(b_speed);
    (dv.norm() / v_ref).powi(2).min(1.0)
}

/// `1 - Π (1 - r_k)` over per-step risks `r_k = P_k · w_k`.
pub fn combine_step_risks(step_risks: impl IntoIterator<Item = f64>) -> RiskValue {
    let survive: f64 = step_risks.into_iter().map(|r| 1.0 - r.clamp(0.0, 1.0)).product();
    RiskValue::clamped(1.0 - survive)
}

/// Index pairs of particles whose time coverage overlaps. Symmetric in the
/// two trains.
pub fn matched_pairs(a: &ParticleTrain, b: &ParticleTrain) -> Vec<(usize, usize)> {
    const EPS: f64 = 1e-12;
    let (ca, cb) = (a.coverage(), b.coverage());
    let mut pairs = Vec::new();
    for (i, &(alo, ahi)) in ca.iter().enumerate() {
        for (j, &(blo, bhi)) in cb.iter().enumerate() {
            if blo > ahi + EPS {
                break;
            }
            let (lo, hi) = (alo.max(blo), ahi.min(bhi));
            let point_like = ahi - alo < EPS || bhi - blo < EPS;
            if hi - lo > EPS || (point_like && hi >= lo - EPS) {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// Per-step risks `P_coll,k · w_k` over the matched pairs of two trains.
pub fn step_risks(
    ego: &ParticleTrain,
    opp: &ParticleTrain,
    rel_cov: &Covariance2,
    v_ref: f64,
) -> Vec<f64> {
    matched_pairs(ego, opp)
        .into_iter()
        .map(|(i, j)| {
            let (e, o) = (&ego.particles[i], &opp.particles[j]);
            let p = pose_collision_probability(&e.pose, &ego.footprint, &o.pose, &opp.footprint, rel_cov);
            if p == 0.0 {
                0.0
            } else {
                p * impact_factor(e.speed, e.pose.heading, o.speed, o.pose.heading, v_ref)
            }
        })
        .collect()
}

/// Severity of one ego/opponent trajectory pair.
pub fn severity(
    ego_train: &ParticleTrain,
    opp_train: &ParticleTrain,
    ego_cov: &Covariance2,
    opp_cov: &Covariance2,
    v_ref: f64,
) -> RiskValue {
    let rel = crate::collision::fuse_covariances(ego_cov, opp_cov);
    combine_step_risks(step_risks(ego_train, opp_train, &rel, v_ref))
}

/// Weighted severity sum of an ego trajectory over an opponent distribution.
pub fn scenario_risk(
    ego_traj: &Trajectory,
    dist: &TrajectoryDistribution,
    ego_cov: &Covariance2,
    opp_cov: &Covariance2,
    params: &EngineParams,
) -> Result<RiskValue> {
    let ego = propagate_particles(ego_traj, params.particle_spacing, params.horizon)?;
    let trains = opponent_trains(dist, params)?;
    Ok(risk_against(&ego, &trains, ego_cov, opp_cov, params).0)
}

fn opponent_trains(dist: &TrajectoryDistribution, params: &EngineParams) -> Result<Vec<(ParticleTrain, f64)>> {
    dist.entries
        .iter()
        .map(|(t, w)| Ok((propagate_particles(t, params.particle_spacing, params.horizon)?, *w)))
        .collect()
}

/// Weighted risk and the number of matched particle pairs.
fn risk_against(
    ego: &ParticleTrain,
    trains: &[(ParticleTrain, f64)],
    ego_cov: &Covariance2,
    opp_cov: &Covariance2,
    params: &EngineParams,
) -> (RiskValue, usize) {
    let rel = crate::collision::fuse_covariances(ego_cov, opp_cov);
    let mut total = 0.0;
    let mut pairs = 0;
    for (train, weight) in trains {
        let steps = step_risks(ego, train, &rel, params.v_ref);
        pairs += steps.len();
        total += weight * combine_step_risks(steps).value();
    }
    (RiskValue::clamped(total), pairs)
}

/// Baseline and degraded risk at one ego pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualBreakdown {
    pub baseline: RiskValue,
    pub degraded: RiskValue,
    pub residual: RiskValue,
    /// Matched ego/opponent particle pairs in the baseline evaluation.
    pub pairs: usize,
}

/// Scenario with precomputed opponent particle trains, reusable across many
/// ego poses.
#[derive(Debug, Clone)]
pub struct RiskEngine<'a> {
    scenario: &'a Scenario,
    params: EngineParams,
    trains: Vec<(ParticleTrain, f64)>,
}

impl<'a> RiskEngine<'a> {
    pub fn new(scenario: &'a Scenario, params: EngineParams) -> Result<Self> {
        params.validate()?;
        let trains = opponent_trains(&scenario.opponents, &params)?;
        Ok(Self { scenario, params, trains })
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn params(&self) -> &EngineParams {
        &self.params
    }

    /// Plans the nominal trajectory against the true opponents and the
    /// degraded one against perturbed, delayed perception, then scores both
    /// against the true opponents.
    pub fn evaluate(
        &self,
        degradation: &DegradationParams,
        ego_pose: &Pose2,
        ego_cov: &Covariance2,
    ) -> Result<ResidualBreakdown> {
        let sc = self.scenario;
        if !sc.drivable_area.contains(ego_pose.position()) {
            return Err(Error::OffDrivableArea { x: ego_pose.x, y: ego_pose.y });
        }
        let p = &self.params;
        let rel_cov = crate::collision::fuse_covariances(ego_cov, &sc.opponent_belief_cov);
        let path = ego_path(&sc.ego, ego_pose)?;
        let grid = plan_grid(p.horizon);

        let truth = PerceivedOpponents::new(&sc.opponents, &grid);
        let nominal_conflict = first_conflict(&sc.ego, &path, &truth, &grid, &rel_cov, p);
        let degraded_conflict = if degradation.pos_error == 0.0 && degradation.vel_error == 0.0 {
            nominal_conflict
        } else {
            let perceived = sc
                .opponents
                .map_trajectories(|t| perturb_opponent(t, degradation.pos_error, degradation.vel_error));
            let seen = PerceivedOpponents::new(&perceived, &grid);
            first_conflict(&sc.ego, &path, &seen, &grid, &rel_cov, p)
        };
        let nominal_onset = nominal_conflict.map(|t| braking_onset(t, p.t_react, 0.0));
        let degraded_onset = degraded_conflict.map(|t| braking_onset(t, p.t_react, degradation.latency));

        let nominal = braked_trajectory(&sc.ego, &path, &grid, nominal_onset, p);
        let ego_nominal = propagate_particles(&nominal, p.particle_spacing, p.horizon)?;
        let (baseline, pairs) = risk_against(&ego_nominal, &self.trains, ego_cov, &sc.opponent_belief_cov, p);

        let degraded = if degraded_onset == nominal_onset {
            baseline
        } else {
            let traj = braked_trajectory(&sc.ego, &path, &grid, degraded_onset, p);
            let ego_degraded = propagate_particles(&traj, p.particle_spacing, p.horizon)?;
            risk_against(&ego_degraded, &self.trains, ego_cov, &sc.opponent_belief_cov, p).0
        };
        Ok(ResidualBreakdown {
            baseline,
            degraded,
            residual: RiskValue::clamped(degraded.value() - baseline.value()),
            pairs,
        })
    }

    pub fn residual(
        &self,
        degradation: &DegradationParams,
        ego_pose: &Pose2,
        ego_cov: &Covariance2,
    ) -> Result<RiskValue> {
        Ok(self.evaluate(degradation, ego_pose, ego_cov)?.residual)
    }
}

/// `max(0, R̂ - R)` at `ego_pose`; see [`RiskEngine::evaluate`].
pub fn residual_risk(
    scenario: &Scenario,
    degradation: &DegradationParams,
    ego_pose: &Pose2,
    ego_belief_cov: &Covariance2,
    params: &EngineParams,
) -> Result<RiskValue> {
    RiskEngine::new(scenario, *params)?.residual(degradation, ego_pose, ego_belief_cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Footprint;
    use crate::trajectory::Particle;

    fn train(points: &[(f64, f64, f64, f64, f64)], rest_until: Option<f64>) -> ParticleTrain {
        ParticleTrain {
            particles: points
                .iter()
                .map(|&(t, x, y, h, v)| Particle { t, pose: Pose2::new(x, y, h).unwrap(), speed: v })
                .collect(),
            footprint: Footprint::new(4.5, 1.8).unwrap(),
            rest_until,
        }
    }

    #[test]
    fn complement_product_examples() {
        assert!((combine_step_risks([0.1, 0.2]).value() - 0.28).abs() < 1e-15);
        assert_eq!(combine_step_risks([]).value(), 0.0);
        assert_eq!(combine_step_risks([1.0, 0.3]).value(), 1.0);
    }

    #[test]
    fn far_apart_trains_have_zero_severity() {
        let a = train(&[(0.0, 0.0, 0.0, 0.0, 5.0), (0.1, 0.5, 0.0, 0.0, 5.0)], None);
        let b = train(&[(0.0, 1000.0, 0.0, 3.0, 5.0), (0.1, 1000.5, 0.0, 3.0, 5.0)], None);
        let cov = Covariance2::isotropic(0.3).unwrap();
        assert!(severity(&a, &b, &cov, &cov, 13.9).value() < 1e-9);
    }

    #[test]
    fn saturated_single_step() {
        // overlapping, certain positions, relative speed exactly v_ref
        let ego = train(&[(0.0, 0.0, 0.0, 0.0, 0.0)], Some(2.0));
        let opp = train(&[(0.0, 1.0, 0.0, 0.0, 13.9)], None);
        let s = severity(&ego, &opp, &Covariance2::ZERO, &Covariance2::ZERO, 13.9);
        assert_eq!(s.value(), 1.0);
    }

    #[test]
    fn impact_factor_saturates() {
        assert_eq!(impact_factor(10.0, 0.0, 10.0, std::f64::consts::PI, 13.9), 1.0);
        assert_eq!(impact_factor(5.0, 0.3, 5.0, 0.3, 13.9), 0.0);
        let w = impact_factor(6.95, 0.0, 0.0, 0.0, 13.9);
        assert!((w - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pairing_respects_time_coverage() {
        let dense = train(&[(0.0, 0.0, 0.0, 0.0, 1.0), (0.5, 0.5, 0.0, 0.0, 1.0), (1.0, 1.0, 0.0, 0.0, 1.0)], None);
        let same = dense.clone();
        assert_eq!(matched_pairs(&dense, &same), vec![(0, 0), (1, 1), (2, 2)]);
        let parked = train(&[(0.0, 5.0, 0.0, 0.0, 0.0)], Some(2.0));
        let pairs = matched_pairs(&dense, &parked);
        assert_eq!(pairs, vec![(0, 0), (1, 0), (2, 0)]);
        let swapped: Vec<(usize, usize)> = matched_pairs(&parked, &dense).into_iter().map(|(a, b)| (b, a)).collect();
        assert_eq!(swapped, pairs);
    }

    #[test]
    fn degradation_validation() {
        assert!(DegradationParams::new(-0.1, 0.0, 0.0).is_err());
        assert!(DegradationParams::new(0.1, f64::NAN, 0.0).is_err());
        assert!(DegradationParams::default().is_null());
    }

    #[test]
    fn risk_value_bounds() {
        assert!(RiskValue::new(1.2).is_err());
        assert!(RiskValue::new(-0.1).is_err());
        assert_eq!(RiskValue::clamped(-0.05).value(), 0.0);
        assert_eq!(RiskValue::clamped(f64::NAN).value(), 0.0);
    }

    #[test]
    fn engine_param_findings() {
        assert!(EngineParams::default().findings().is_empty());
        let bad = EngineParams { p_trig: 1.0, a_brake: 1.0, ..EngineParams::default() };
        assert_eq!(bad.findings().len(), 2);
    }
}
