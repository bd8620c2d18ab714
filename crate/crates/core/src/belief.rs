//! Monte-Carlo expectation of the residual risk over a Gaussian ego position
//! belief, truncated to the drivable area.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{DegradationParams, EngineParams, RiskEngine, RiskValue};
use crate::error::{Error, Result};
use crate::geometry::{Covariance2, DrivableArea, GaussianBelief2, Pose2, Vec2};
use crate::parallel::map_indexed;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeliefMcConfig {
    pub n_samples: usize,
    pub max_attempts_per_sample: u32,
    pub master_seed: u64,
}

impl Default for BeliefMcConfig {
    fn default() -> Self {
        Self { n_samples: 30, max_attempts_per_sample: 1000, master_seed: 0 }
    }
}

impl BeliefMcConfig {
    pub fn new(n_samples: usize, master_seed: u64) -> Result<Self> {
        let c = Self { n_samples, master_seed, ..Self::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        if self.max_attempts_per_sample == 0 {
            return Err(Error::InvalidInput("max_attempts_per_sample must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskStats {
    pub samples: Vec<(Pose2, RiskValue)>,
    pub mean: RiskValue,
    /// Population standard deviation (divides by n).
    pub std_dev: f64,
    /// Draws redrawn because they fell outside the drivable area.
    pub n_rejected: u64,
    /// Samples dropped after exhausting their attempts.
    pub n_exhausted: usize,
}

impl RiskStats {
    pub fn from_samples(samples: Vec<(Pose2, RiskValue)>, n_rejected: u64, n_exhausted: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EstimationFailed("no valid samples".into()));
        }
        let n = samples.len() as f64;
        // shifted by the first sample, so identical samples give their value exactly
        let first = samples[0].1.value();
        let mean = first + samples.iter().map(|(_, r)| r.value() - first).sum::<f64>() / n;
        let var = samples.iter().map(|(_, r)| (r.value() - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { samples, mean: RiskValue::clamped(mean), std_dev: var.sqrt(), n_rejected, n_exhausted })
    }

    pub fn n_used(&self) -> usize {
        self.samples.len()
    }
}

/// Standard normal pair for `(seed, sample_index, attempt)`.
///
/// Each sample index owns a ChaCha stream and each attempt a fixed block
/// within it, so draws do not depend on evaluation order.
fn normal_pair(master_seed: u64, sample_index: u64, attempt: u32) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample_index);
    rng.set_word_pos(attempt as u128 * 4);
    // 53-bit uniforms; u1 in (0, 1] keeps the log finite
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64;
    let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Draws sample `sample_index` from the belief, redrawing positions outside
/// `area`. Returns the pose and the number of rejected draws.
pub fn sample_ego_pose_counted(
    belief: &GaussianBelief2,
    area: Option<&DrivableArea>,
    sample_index: u64,
    config: &BeliefMcConfig,
) -> Result<(Pose2, u32)> {
    let mean = belief.mean;
    let cov = &belief.position_covariance;
    if cov.is_zero() {
        return match area {
            Some(a) if !a.contains(mean.position()) => {
                Err(Error::SamplingExhausted { sample_index, attempts: config.max_attempts_per_sample })
            }
            _ => Ok((mean, 0)),
        };
    }
    let (l11, l21, l22) = cov.cholesky();
    for attempt in 0..config.max_attempts_per_sample {
        let (z1, z2) = normal_pair(config.master_seed, sample_index, attempt);
        let p = mean.position() + Vec2::new(l11 * z1, l21 * z1 + l22 * z2);
        if area.is_none_or(|a| a.contains(p)) {
            return Ok((mean.with_position(p), attempt));
        }
    }
    Err(Error::SamplingExhausted { sample_index, attempts: config.max_attempts_per_sample })
}

/// One belief sample inside the drivable area; see [`sample_ego_pose_counted`].
pub fn sample_ego_pose(
    belief: &GaussianBelief2,
    area: &DrivableArea,
    sample_index: u64,
    config: &BeliefMcConfig,
) -> Result<Pose2> {
    sample_ego_pose_counted(belief, Some(area), sample_index, config).map(|(p, _)| p)
}

/// Anything that maps an ego pose and its belief covariance to a residual
/// risk. Implemented by the risk engine; tests plug in synthetic fields.
pub trait ResidualField: Sync {
    fn residual_at(&self, pose: &Pose2, ego_cov: &Covariance2) -> Result<RiskValue>;
}

/// A risk engine paired with a fixed degradation.
pub struct DegradedEngine<'a> {
    pub engine: RiskEngine<'a>,
    pub degradation: DegradationParams,
}

impl ResidualField for DegradedEngine<'_> {
    fn residual_at(&self, pose: &Pose2, ego_cov: &Covariance2) -> Result<RiskValue> {
        self.engine.residual(&self.degradation, pose, ego_cov)
    }
}

/// Monte-Carlo mean of `field` over the belief. A zero covariance gives a
/// single evaluation at the mean.
pub fn estimate_field(
    field: &dyn ResidualField,
    area: Option<&DrivableArea>,
    belief: &GaussianBelief2,
    config: &BeliefMcConfig,
) -> Result<RiskStats> {
    config.validate()?;
    let cov = belief.position_covariance;
    if cov.is_zero() {
        let r = field.residual_at(&belief.mean, &cov)?;
        return RiskStats::from_samples(vec![(belief.mean, r)], 0, 0);
    }
    let outcomes = map_indexed(config.n_samples, |i| {
        match sample_ego_pose_counted(belief, area, i as u64, config) {
            Ok((pose, rejected)) => Some(field.residual_at(&pose, &cov).map(|r| (pose, r, rejected))),
            Err(Error::SamplingExhausted { .. }) => None,
            Err(e) => Some(Err(e)),
        }
    });
    let mut samples = Vec::with_capacity(config.n_samples);
    let mut rejected = 0u64;
    let mut exhausted = 0usize;
    for outcome in outcomes {
        match outcome {
            Some(Ok((pose, r, n))) => {
                samples.push((pose, r));
                rejected += n as u64;
            }
            Some(Err(e)) => return Err(e),
            None => {
                exhausted += 1;
                rejected += config.max_attempts_per_sample as u64;
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EstimationFailed(format!(
            "all {} samples exhausted {} attempts",
            config.n_samples, config.max_attempts_per_sample
        )));
    }
    RiskStats::from_samples(samples, rejected, exhausted)
}

/// Expected residual risk over the ego belief for one scenario.
pub fn estimate_belief_residual_risk(
    scenario: &Scenario,
    degradation: &DegradationParams,
    belief: &GaussianBelief2,
    config: &BeliefMcConfig,
    params: &EngineParams,
) -> Result<RiskStats> {
    let field = DegradedEngine { engine: RiskEngine::new(scenario, *params)?, degradation: *degradation };
    estimate_field(&field, Some(&scenario.drivable_area), belief, config)
}

/// Fraction of sample residuals strictly above `threshold`.
pub fn exceedance_probability(stats: &RiskStats, threshold: RiskValue) -> Result<f64> {
    exceedance_of(stats.samples.iter().map(|(_, r)| *r), threshold)
}

pub fn exceedance_of(residuals: impl IntoIterator<Item = RiskValue>, threshold: RiskValue) -> Result<f64> {
    let (mut n, mut above) = (0usize, 0usize);
    for r in residuals {
        n += 1;
        above += (r.value() > threshold.value()) as usize;
    }
    if n == 0 {
        return Err(Error::InvalidInput("exceedance of an empty sample set".into()));
    }
    Ok(above as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConvexPolygon;

    fn rv(x: f64) -> RiskValue {
        RiskValue::new(x).unwrap()
    }

    fn square(half: f64) -> DrivableArea {
        DrivableArea::new(vec![ConvexPolygon::rectangle(-half, -half, half, half).unwrap()]).unwrap()
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let b = GaussianBelief2::isotropic(Pose2::new(1.0, 2.0, 0.3).unwrap(), 0.0).unwrap();
        let p = sample_ego_pose(&b, &square(10.0), 5, &BeliefMcConfig::default()).unwrap();
        assert_eq!(p, b.mean);
    }

    #[test]
    fn unreachable_area_exhausts() {
        let b = GaussianBelief2::isotropic(Pose2::new(20.0, 0.0, 0.0).unwrap(), 0.01).unwrap();
        let cfg = BeliefMcConfig { max_attempts_per_sample: 100, ..BeliefMcConfig::default() };
        assert!(matches!(
            sample_ego_pose(&b, &square(10.0), 0, &cfg),
            Err(Error::SamplingExhausted { sample_index: 0, attempts: 100 })
        ));
    }

    #[test]
    fn draws_are_deterministic_and_keep_heading() {
        let b = GaussianBelief2::isotropic(Pose2::new(0.0, 0.0, 1.0).unwrap(), 2.0).unwrap();
        let cfg = BeliefMcConfig { master_seed: 42, ..BeliefMcConfig::default() };
        let a = sample_ego_pose(&b, &square(3.0), 17, &cfg).unwrap();
        assert_eq!(a, sample_ego_pose(&b, &square(3.0), 17, &cfg).unwrap());
        assert_eq!(a.heading, 1.0);
        assert!(square(3.0).contains(a.position()));
        assert_ne!(a, sample_ego_pose(&b, &square(3.0), 18, &cfg).unwrap());
    }

    #[test]
    fn normal_pairs_have_unit_moments() {
        let n = 20_000u64;
        let (mut s, mut s2, mut sxy) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let (a, b) = normal_pair(3, i, 0);
            s += a + b;
            s2 += a * a + b * b;
            sxy += a * b;
        }
        let m = 2.0 * n as f64;
        assert!((s / m).abs() < 0.03);
        assert!((s2 / m - 1.0).abs() < 0.03);
        assert!((sxy / n as f64).abs() < 0.03);
    }

    #[test]
    fn exceedance_counting() {
        let r = [rv(0.1), rv(0.5), rv(0.9)];
        assert!((exceedance_of(r, rv(0.4)).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(exceedance_of(r, rv(0.0)).unwrap(), 1.0);
        assert_eq!(exceedance_of(r, rv(1.0)).unwrap(), 0.0);
        assert_eq!(exceedance_of(r, rv(0.5)).unwrap(), 1.0 / 3.0);
        assert!(exceedance_of([], rv(0.5)).is_err());
    }

    #[test]
    fn stats_use_population_std() {
        let p = Pose2::new(0.0, 0.0, 0.0).unwrap();
        let s = RiskStats::from_samples(vec![(p, rv(0.2)), (p, rv(0.4))], 0, 0).unwrap();
        assert!((s.mean.value() - 0.3).abs() < 1e-15);
        assert!((s.std_dev - 0.1).abs() < 1e-15);
    }
}
