//! Reactive longitudinal planner used to produce the nominal and the degraded
//! ego trajectory.
//!
//! The ego follows its route at the setpoint speed. Perceived opponents are
//! checked along the constant-speed plan; at the first step `t*` where the
//! weighted collision probability exceeds `p_trig` the ego brakes with
//! constant deceleration from `max(0, t* - t_react) + latency` until it stops.

use crate::collision::pose_collision_probability;
use crate::engine::EngineParams;
use crate::error::Result;
use crate::geometry::{Covariance2, Footprint, Pose2, Vec2};
use crate::scenario::EgoSetup;
use crate::trajectory::{Polyline, Trajectory, TrajectoryDistribution, TrajectorySample};

/// Time step of planned trajectories and of the conflict lookahead, seconds.
pub const PLAN_STEP: f64 = 0.05;

/// Start of braking for a conflict first predicted at `t_star`.
pub fn braking_onset(t_star: f64, t_react: f64, latency: f64) -> f64 {
    (t_star - t_react).max(0.0) + latency
}

/// Arc length and speed at time `t` for initial speed `v0` and braking with
/// `decel < 0` from `onset` (no braking when `onset` is `None`).
pub fn braking_kinematics(t: f64, v0: f64, decel: f64, onset: Option<f64>) -> (f64, f64) {
    match onset {
        Some(b) if t > b => {
            let stop = -v0 / decel;
            let tau = (t - b).min(stop);
            (v0 * b + v0 * tau + 0.5 * decel * tau * tau, (v0 + decel * tau).max(0.0))
        }
        _ => (v0 * t, v0),
    }
}

/// Planning time grid `0, .., horizon` with steps no longer than [`PLAN_STEP`].
pub fn plan_grid(horizon: f64) -> Vec<f64> {
    let steps = (horizon / PLAN_STEP - 1e-9).ceil().max(1.0) as usize;
    (0..=steps).map(|k| horizon * k as f64 / steps as f64).collect()
}

/// Perceived opponents sampled on the planning grid.
pub struct PerceivedOpponents {
    poses: Vec<Vec<Pose2>>,
    weights: Vec<f64>,
    footprints: Vec<Footprint>,
}

impl PerceivedOpponents {
    pub fn new(dist: &TrajectoryDistribution, grid: &[f64]) -> Self {
        let poses = dist
            .entries
            .iter()
            .map(|(traj, _)| grid.iter().map(|&t| traj.predict(t)).collect())
            .collect();
        Self {
            poses,
            weights: dist.entries.iter().map(|(_, w)| *w).collect(),
            footprints: dist.entries.iter().map(|(t, _)| t.footprint).collect(),
        }
    }
}

/// Ego path from `start`: the route with its first waypoint replaced by the
/// start position and the rest shifted by the start's offset from nominal.
pub fn ego_path(ego: &EgoSetup, start: &Pose2) -> Result<Polyline> {
    let shift = start.position() - ego.nominal_pose.position();
    let mut pts: Vec<Vec2> = vec![start.position()];
    pts.extend(ego.route.iter().skip(1).map(|w| *w + shift));
    Polyline::new(pts)
}

/// First grid time at which the constant-speed ego meets the perceived
/// opponents with weighted collision probability above `p_trig`.
pub fn first_conflict(
    ego: &EgoSetup,
    path: &Polyline,
    perceived: &PerceivedOpponents,
    grid: &[f64],
    rel_cov: &Covariance2,
    params: &EngineParams,
) -> Option<f64> {
    grid.iter().enumerate().find_map(|(k, &t)| {
        let (p, heading) = path.point_at(ego.setpoint_speed * t);
        let pose = Pose2 { x: p.x, y: p.y, heading };
        let weighted: f64 = (0..perceived.weights.len())
            .map(|j| {
                perceived.weights[j]
                    * pose_collision_probability(
                        &pose,
                        &ego.footprint,
                        &perceived.poses[j][k],
                        &perceived.footprints[j],
                        rel_cov,
                    )
            })
            .sum();
        (weighted > params.p_trig).then_some(t)
    })
}

/// Samples the ego trajectory along `path` for an optional braking onset.
pub fn braked_trajectory(
    ego: &EgoSetup,
    path: &Polyline,
    grid: &[f64],
    onset: Option<f64>,
    params: &EngineParams,
) -> Trajectory {
    let samples = grid
        .iter()
        .map(|&t| {
            let (s, v) = braking_kinematics(t, ego.setpoint_speed, params.a_brake, onset);
            let (p, heading) = path.point_at(s);
            TrajectorySample { t, pose: Pose2 { x: p.x, y: p.y, heading }, speed: v }
        })
        .collect();
    Trajectory::new(samples, ego.footprint)
}

/// Plans the ego response from `start` against `perceived` opponents.
/// `rel_cov` is the fused covariance used in the conflict check; a zero
/// latency gives the nominal trajectory.
pub fn plan_ego_response(
    ego: &EgoSetup,
    start: &Pose2,
    perceived: &TrajectoryDistribution,
    rel_cov: &Covariance2,
    latency: f64,
    params: &EngineParams,
) -> Result<Trajectory> {
    let path = ego_path(ego, start)?;
    let grid = plan_grid(params.horizon);
    let opponents = PerceivedOpponents::new(perceived, &grid);
    let conflict = first_conflict(ego, &path, &opponents, &grid, rel_cov, params);
    let onset = conflict.map(|t| braking_onset(t, params.t_react, latency));
    Ok(braked_trajectory(ego, &path, &grid, onset, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Footprint;

    fn ego() -> EgoSetup {
        EgoSetup {
            nominal_pose: Pose2::new(0.0, 0.0, 0.0).unwrap(),
            route: vec![Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0)],
            setpoint_speed: 30.0 / 3.6,
            footprint: Footprint::new(4.5, 1.8).unwrap(),
        }
    }

    fn parked_at(x: f64) -> TrajectoryDistribution {
        let fp = Footprint::new(4.5, 1.8).unwrap();
        let samples = (0..=40)
            .map(|k| TrajectorySample { t: k as f64 * 0.1, pose: Pose2::new(x, 0.0, 0.0).unwrap(), speed: 0.0 })
            .collect();
        TrajectoryDistribution::new(vec![(Trajectory::new(samples, fp), 1.0)])
    }

    #[test]
    fn free_road_is_constant_speed() {
        let params = EngineParams::default();
        let far = parked_at(500.0);
        let cov = Covariance2::isotropic(0.3).unwrap();
        let traj = plan_ego_response(&ego(), &ego().nominal_pose, &far, &cov, 0.3, &params).unwrap();
        let v = ego().setpoint_speed;
        for s in &traj.samples {
            assert!((s.pose.x - v * s.t).abs() < 1e-9);
            assert_eq!(s.speed, v);
        }
        assert!((traj.samples.last().unwrap().t - params.horizon).abs() < 1e-12);
    }

    #[test]
    fn zero_latency_plans_are_identical() {
        let params = EngineParams::default();
        let cov = Covariance2::isotropic(0.3).unwrap();
        let a = plan_ego_response(&ego(), &ego().nominal_pose, &parked_at(15.0), &cov, 0.0, &params).unwrap();
        let b = plan_ego_response(&ego(), &ego().nominal_pose, &parked_at(15.0), &cov, 0.0, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn braking_follows_closed_form_after_onset() {
        // conflict first predicted exactly at t* = 1.0 s; no reaction lead
        let params = EngineParams { t_react: 0.0, ..EngineParams::default() };
        let v = 30.0 / 3.6;
        let cov = Covariance2::isotropic(1e-4).unwrap();
        let obstacle = parked_at(v * 1.0 + 4.5 - 0.1);
        let path = ego_path(&ego(), &ego().nominal_pose).unwrap();
        let grid = plan_grid(params.horizon);
        let opp = PerceivedOpponents::new(&obstacle, &grid);
        let t_star = first_conflict(&ego(), &path, &opp, &grid, &cov, &params).unwrap();
        assert!((t_star - 1.0).abs() < 1e-12);

        let traj = plan_ego_response(&ego(), &ego().nominal_pose, &obstacle, &cov, 0.4, &params).unwrap();
        for s in &traj.samples {
            // independent closed form with onset 1.4 s and a = -3 m/s²
            let expected = if s.t <= 1.4 {
                v * s.t
            } else {
                let tau = (s.t - 1.4).min(v / 3.0);
                v * 1.4 + v * tau - 1.5 * tau * tau
            };
            assert!((s.pose.x - expected).abs() < 1e-9, "t={} x={} expected {}", s.t, s.pose.x, expected);
        }
    }

    #[test]
    fn onset_formula() {
        assert!((braking_onset(1.0, 0.2, 0.4) - 1.2).abs() < 1e-12);
        assert!((braking_onset(1.0, 0.0, 0.4) - 1.4).abs() < 1e-12);
        assert_eq!(braking_onset(0.1, 0.2, 0.0), 0.0);
    }

    #[test]
    fn kinematics_stop_and_hold() {
        let (s, v) = braking_kinematics(10.0, 6.0, -3.0, Some(0.0));
        assert!((s - 6.0).abs() < 1e-12 && v == 0.0);
        assert_eq!(braking_kinematics(0.5, 6.0, -3.0, Some(1.0)), (3.0, 6.0));
    }

    #[test]
    fn larger_latency_never_brakes_earlier() {
        let params = EngineParams::default();
        let cov = Covariance2::isotropic(0.3).unwrap();
        let obstacle = parked_at(14.0);
        let onset_of = |traj: &Trajectory| {
            traj.samples.iter().find(|s| s.speed < ego().setpoint_speed).map(|s| s.t).unwrap_or(f64::INFINITY)
        };
        let mut last = 0.0;
        for latency in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let traj = plan_ego_response(&ego(), &ego().nominal_pose, &obstacle, &cov, latency, &params).unwrap();
            let onset = onset_of(&traj);
            assert!(onset >= last);
            last = onset;
        }
    }
}
