//! Timed trajectories, weighted trajectory sets and arc-length particle trains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Footprint, Pose2, Vec2};

const TIME_EPS: f64 = 1e-9;
const LENGTH_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose2,
    pub speed: f64,
}

/// Timed sequence of poses and speeds for one vehicle.
///
/// Fields are public so that malformed trajectories can be represented and
/// reported by scenario validation; the engine assumes validated input.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub footprint: Footprint,
}

impl Trajectory {
    pub fn new(samples: Vec<TrajectorySample>, footprint: Footprint) -> Self {
        Self { samples, footprint }
    }

    /// Constant-speed follower of a polyline starting at time 0, sampled
    /// every `dt` seconds until `duration`.
    pub fn constant_speed(
        path: &[Vec2],
        speed: f64,
        duration: f64,
        dt: f64,
        footprint: Footprint,
    ) -> Result<Self> {
        let polyline = Polyline::new(path.to_vec())?;
        let steps = (duration / dt - TIME_EPS).ceil().max(1.0) as usize;
        let samples = (0..=steps)
            .map(|k| {
                let t = duration * k as f64 / steps as f64;
                let (p, heading) = polyline.point_at(speed * t);
                Ok(TrajectorySample { t, pose: Pose2::new(p.x, p.y, heading)?, speed })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, footprint })
    }

    pub fn start(&self) -> Option<&TrajectorySample> {
        self.samples.first()
    }

    /// Unit direction of travel at sample `i`: towards the next sample, or
    /// from the previous one at the end, or the pose heading when stationary.
    pub fn tangent(&self, i: usize) -> Vec2 {
        let s = &self.samples;
        let pos = |k: usize| s[k].pose.position();
        let forward = (i + 1 < s.len()).then(|| pos(i + 1) - pos(i));
        let backward = (i > 0).then(|| pos(i) - pos(i - 1));
        for d in [forward, backward].into_iter().flatten() {
            let n = d.norm();
            if n > LENGTH_EPS {
                return d.scale(1.0 / n);
            }
        }
        Vec2::from_angle(s[i].pose.heading)
    }

    /// Position along the path after integrating the sample speeds (linear in
    /// time between samples) up to `t`. Used to predict perceived opponents,
    /// so a speed error shifts the prediction even though the path is fixed.
    pub fn predict(&self, t: f64) -> Pose2 {
        let s = &self.samples;
        if s.len() == 1 || t <= s[0].t {
            return s[0].pose;
        }
        let path: Vec<Vec2> = s.iter().map(|x| x.pose.position()).collect();
        let mut travelled = 0.0;
        for w in s.windows(2) {
            let dt = w[1].t - w[0].t;
            if t <= w[1].t {
                let tau = t - w[0].t;
                let a = (w[1].speed - w[0].speed) / dt;
                travelled += w[0].speed * tau + 0.5 * a * tau * tau;
                break;
            }
            travelled += 0.5 * (w[0].speed + w[1].speed) * dt;
        }
        if t > s[s.len() - 1].t {
            travelled += s[s.len() - 1].speed * (t - s[s.len() - 1].t);
        }
        match Polyline::new(path) {
            Ok(line) => {
                let (p, heading) = line.point_at(travelled);
                Pose2 { x: p.x, y: p.y, heading }
            }
            // every sample at the same position
            Err(_) => s[0].pose,
        }
    }
}

/// Shifts every position by `eps_x` along the local direction of travel and
/// every speed by `eps_v`, clamping speeds at zero. Timestamps are unchanged.
pub fn perturb_opponent(traj: &Trajectory, eps_x: f64, eps_v: f64) -> Trajectory {
    if eps_x == 0.0 && eps_v == 0.0 {
        return traj.clone();
    }
    let samples = traj
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = s.pose.position() + traj.tangent(i).scale(eps_x);
            TrajectorySample { t: s.t, pose: s.pose.with_position(p), speed: (s.speed + eps_v).max(0.0) }
        })
        .collect();
    Trajectory { samples, footprint: traj.footprint }
}

/// Weighted set of alternative opponent trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDistribution {
    pub entries: Vec<(Trajectory, f64)>,
}

impl TrajectoryDistribution {
    pub fn new(entries: Vec<(Trajectory, f64)>) -> Self {
        Self { entries }
    }

    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w).sum()
    }

    pub fn map_trajectories(&self, f: impl Fn(&Trajectory) -> Trajectory) -> Self {
        Self { entries: self.entries.iter().map(|(t, w)| (f(t), *w)).collect() }
    }
}

/// Piecewise-linear path with cumulative arc length.
#[derive(Debug, Clone)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    /// Drops repeated points; fails when fewer than two distinct points remain.
    pub fn new(points: Vec<Vec2>) -> Result<Self> {
        let mut pts: Vec<Vec2> = Vec::with_capacity(points.len());
        for p in points {
            if pts.last().is_none_or(|q| (p - *q).norm() > LENGTH_EPS) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::InvalidInput("path needs two distinct points".into()));
        }
        let mut cumulative = vec![0.0];
        for w in pts.windows(2) {
            let last = cumulative[cumulative.len() - 1];
            cumulative.push(last + (w[1] - w[0]).norm());
        }
        Ok(Self { points: pts, cumulative })
    }

    pub fn length(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    /// Point and heading at arc length `s`. Beyond either end the first or
    /// last segment is extended.
    pub fn point_at(&self, s: f64) -> (Vec2, f64) {
        let n = self.points.len();
        let seg = self.cumulative[1..n - 1].partition_point(|&c| c < s);
        let a = self.points[seg];
        let b = self.points[seg + 1];
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let dir = (b - a).scale(1.0 / len);
        let p = a + dir.scale(s - self.cumulative[seg]);
        (p, dir.y.atan2(dir.x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub t: f64,
    pub pose: Pose2,
    pub speed: f64,
}

/// Arc-length sampled discretization of a trajectory up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTrain {
    pub particles: Vec<Particle>,
    pub footprint: Footprint,
    /// Set when the vehicle comes to rest before the horizon; the final
    /// particle then stands for the vehicle until this time.
    pub rest_until: Option<f64>,
}

impl ParticleTrain {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Time interval each particle represents: halfway to its neighbours,
    /// closed at the first and last particle (or at `rest_until`).
    pub fn coverage(&self) -> Vec<(f64, f64)> {
        let p = &self.particles;
        let n = p.len();
        (0..n)
            .map(|k| {
                let lo = if k == 0 { p[0].t } else { 0.5 * (p[k - 1].t + p[k].t) };
                let hi = if k + 1 < n {
                    0.5 * (p[k].t + p[k + 1].t)
                } else {
                    self.rest_until.unwrap_or(p[k].t).max(p[k].t)
                };
                (lo, hi)
            })
            .collect()
    }
}

/// Places particles at multiples of `spacing` along the path reachable within
/// `horizon`. A trajectory that comes to rest earlier gets one more particle
/// at its resting point.
pub fn propagate_particles(traj: &Trajectory, spacing: f64, horizon: f64) -> Result<ParticleTrain> {
    if traj.samples.is_empty() {
        return Err(Error::InvalidInput("cannot propagate an empty trajectory".into()));
    }
    if !(spacing > 0.0 && horizon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "spacing and horizon must be positive, got {spacing} and {horizon}"
        )));
    }
    let samples = &traj.samples;
    let t0 = samples[0].t;
    let end_time = t0 + horizon;

    // (t, arc length, position, speed) knots truncated at the horizon
    let mut knots: Vec<(f64, f64, Vec2, f64)> =
        vec![(t0, 0.0, samples[0].pose.position(), samples[0].speed)];
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.t >= end_time - TIME_EPS {
            break;
        }
        let (pa, pb) = (a.pose.position(), b.pose.position());
        let s_prev = knots[knots.len() - 1].1;
        if b.t > end_time {
            let f = (end_time - a.t) / (b.t - a.t);
            let p = pa.lerp(pb, f);
            let v = a.speed + f * (b.speed - a.speed);
            knots.push((end_time, s_prev + (p - pa).norm(), p, v));
            break;
        }
        knots.push((b.t, s_prev + (pb - pa).norm(), pb, b.speed));
    }

    let reach = knots[knots.len() - 1].1;
    let rest_time = knots
        .iter()
        .find(|k| k.1 >= reach - LENGTH_EPS)
        .map(|k| k.0)
        .unwrap_or(end_time);
    let at_rest = rest_time < end_time - TIME_EPS;

    let heading_at = |j: usize| {
        let d = knots[j + 1].2 - knots[j].2;
        if d.norm() > LENGTH_EPS {
            d.y.atan2(d.x)
        } else {
            samples[0].pose.heading
        }
    };
    let particle_at = |s: f64| -> Particle {
        if s <= 0.0 || knots.len() == 1 {
            let heading = if knots.len() > 1 && reach > LENGTH_EPS {
                let j = knots.iter().position(|k| k.1 > LENGTH_EPS).unwrap_or(1) - 1;
                heading_at(j)
            } else {
                samples[0].pose.heading
            };
            let p = knots[0].2;
            return Particle { t: t0, pose: Pose2 { x: p.x, y: p.y, heading }, speed: knots[0].3 };
        }
        let j = (0..knots.len() - 1)
            .find(|&j| knots[j + 1].1 >= s - LENGTH_EPS && knots[j + 1].1 > knots[j].1)
            .unwrap_or(knots.len() - 2);
        let (ka, kb) = (knots[j], knots[j + 1]);
        let f = ((s - ka.1) / (kb.1 - ka.1)).clamp(0.0, 1.0);
        let t = ka.0 + f * (kb.0 - ka.0);
        let tf = if kb.0 > ka.0 { (t - ka.0) / (kb.0 - ka.0) } else { 0.0 };
        let p = ka.2.lerp(kb.2, f);
        Particle {
            t,
            pose: Pose2 { x: p.x, y: p.y, heading: heading_at(j) },
            speed: ka.3 + tf * (kb.3 - ka.3),
        }
    };

    let count = ((reach + LENGTH_EPS) / spacing).floor() as usize + 1;
    let mut particles: Vec<Particle> = (0..count).map(|k| particle_at(k as f64 * spacing)).collect();
    if at_rest && reach - (count - 1) as f64 * spacing > LENGTH_EPS {
        let mut last = particle_at(reach);
        last.t = rest_time;
        particles.push(last);
    }
    Ok(ParticleTrain {
        particles,
        footprint: traj.footprint,
        rest_until: at_rest.then_some(end_time),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> Footprint {
        Footprint::new(4.5, 1.8).unwrap()
    }

    fn straight(speed: f64, duration: f64) -> Trajectory {
        Trajectory::constant_speed(
            &[Vec2::new(0.0, 0.0), Vec2::new(1000.0, 0.0)],
            speed,
            duration,
            0.1,
            fp(),
        )
        .unwrap()
    }

    #[test]
    fn urban_speed_train_has_34_particles() {
        let v = 30.0 / 3.6;
        let train = propagate_particles(&straight(v, 4.0), 0.5, 2.0).unwrap();
        assert_eq!(train.len(), 34);
        assert!(train.rest_until.is_none());
        for w in train.particles.windows(2) {
            let d = (w[1].pose.position() - w[0].pose.position()).norm();
            assert!((d - 0.5).abs() < 1e-9);
        }
        assert!(train.particles.iter().all(|p| p.t >= 0.0 && p.t <= 2.0 + 1e-9));
    }

    #[test]
    fn unit_speed_particle_times() {
        let train = propagate_particles(&straight(1.0, 3.0), 0.5, 2.0).unwrap();
        let s: Vec<f64> = train.particles.iter().map(|p| p.pose.x).collect();
        let t: Vec<f64> = train.particles.iter().map(|p| p.t).collect();
        let expected = [0.0, 0.5, 1.0, 1.5, 2.0];
        assert_eq!(s.len(), 5);
        for k in 0..5 {
            assert!((s[k] - expected[k]).abs() < 1e-9 && (t[k] - expected[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn stationary_trajectory_is_one_particle() {
        let samples = (0..=20)
            .map(|k| TrajectorySample {
                t: k as f64 * 0.1,
                pose: Pose2::new(3.0, 4.0, 0.5).unwrap(),
                speed: 0.0,
            })
            .collect();
        let train = propagate_particles(&Trajectory::new(samples, fp()), 0.5, 2.0).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(train.particles[0].pose, Pose2::new(3.0, 4.0, 0.5).unwrap());
        assert_eq!(train.rest_until, Some(2.0));
        assert_eq!(train.coverage(), vec![(0.0, 2.0)]);
    }

    #[test]
    fn empty_and_bad_parameters_rejected() {
        assert!(propagate_particles(&Trajectory::new(vec![], fp()), 0.5, 2.0).is_err());
        assert!(propagate_particles(&straight(1.0, 1.0), 0.0, 2.0).is_err());
        assert!(propagate_particles(&straight(1.0, 1.0), 0.5, -1.0).is_err());
    }

    #[test]
    fn braking_train_ends_at_rest_point() {
        // 4 m/s, stops after 1 s with 2 m travelled
        let samples = (0..=30)
            .map(|k| {
                let t = k as f64 * 0.1;
                let tau = t.min(1.0);
                let x = 4.0 * tau - 2.0 * tau * tau;
                TrajectorySample { t, pose: Pose2::new(x, 0.0, 0.0).unwrap(), speed: (4.0 - 4.0 * t).max(0.0) }
            })
            .collect();
        let train = propagate_particles(&Trajectory::new(samples, fp()), 0.3, 2.0).unwrap();
        // 0, 0.3, ..., 1.8 and the rest point at 2.0
        assert_eq!(train.len(), 8);
        let last = train.particles.last().unwrap();
        assert!((last.pose.x - 2.0).abs() < 1e-9);
        assert!((last.t - 1.0).abs() < 1e-9);
        assert_eq!(train.rest_until, Some(2.0));
    }

    #[test]
    fn perturbation_examples() {
        let base = straight(3.0, 2.0);
        assert_eq!(perturb_opponent(&base, 0.0, 0.0), base);
        let shifted = perturb_opponent(&base, 2.0, 0.0);
        for (a, b) in base.samples.iter().zip(&shifted.samples) {
            assert!((b.pose.x - a.pose.x - 2.0).abs() < 1e-12);
            assert_eq!(b.pose.y, a.pose.y);
            assert_eq!(b.t, a.t);
        }
        let stopped = perturb_opponent(&base, 0.0, -5.0);
        assert!(stopped.samples.iter().all(|s| s.speed == 0.0));
    }

    #[test]
    fn prediction_follows_speeds() {
        let base = straight(3.0, 2.0);
        let p = base.predict(1.0);
        assert!((p.x - 3.0).abs() < 1e-12);
        let fast = perturb_opponent(&base, 0.0, 1.0);
        assert!((fast.predict(1.0).x - 4.0).abs() < 1e-12);
        // holds the last speed past the end
        assert!((base.predict(3.0).x - 9.0).abs() < 1e-12);
    }

    #[test]
    fn polyline_lookup() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)]).unwrap();
        assert_eq!(line.length(), 20.0);
        let (p, h) = line.point_at(15.0);
        assert!((p - Vec2::new(10.0, 5.0)).norm() < 1e-12);
        assert!((h - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        let (q, _) = line.point_at(-2.0);
        assert!((q - Vec2::new(-2.0, 0.0)).norm() < 1e-12);
        let (r, _) = line.point_at(25.0);
        assert!((r - Vec2::new(10.0, 15.0)).norm() < 1e-12);
        assert!(Polyline::new(vec![Vec2::ZERO, Vec2::ZERO]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn constant_speed_particle_count(
                speed in 0.5f64..20.0, spacing in 0.2f64..2.0, horizon in 0.5f64..4.0,
                path_len in 5.0f64..80.0,
            ) {
                let traj = Trajectory::constant_speed(
                    &[Vec2::ZERO, Vec2::new(path_len, 0.0)], speed, 10.0, 0.05, fp(),
                ).unwrap();
                // hold position once the path end is reached
                let mut traj = traj;
                for s in &mut traj.samples {
                    if s.pose.x > path_len {
                        s.pose.x = path_len;
                    }
                }
                let reach = (speed * horizon).min(path_len);
                let train = propagate_particles(&traj, spacing, horizon).unwrap();
                let expected = ((reach + 1e-9) / spacing).floor() as usize + 1;
                // a train that stops on the path end may gain its resting point
                prop_assert!(train.len() == expected || train.len() == expected + 1);
                if speed * horizon < path_len - 1e-6 {
                    prop_assert_eq!(train.len(), expected);
                }
            }
        }
    }
}
