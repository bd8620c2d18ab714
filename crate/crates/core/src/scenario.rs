//! Synthetic road scenarios, scenario config files and scenario validation.
//!
//! # Config format
//!
//! Scenarios are TOML documents. Unknown keys are rejected.
//!
//! ```toml
//! [meta]
//! name = "t_section"
//!
//! [[drivable_area]]                      # one table per convex polygon (CCW, meters)
//! vertices = [[-60.0, -3.5], [80.0, -3.5], [80.0, 3.5], [-60.0, 3.5]]
//!
//! [ego]
//! pose = { x = 0.0, y = -1.75, heading = 0.0 }
//! route = [[0.0, -1.75], [80.0, -1.75]]
//! speed = "30 km/h"                      # unit suffix `m/s` or `km/h`
//! footprint = { length = 4.5, width = 1.8 }
//!
//! [[opponents]]
//! weight = 1.0
//! footprint = { length = 4.5, width = 1.8 }
//! samples = [[0.0, 30.0, 1.75, 3.141592653589793, 8.3], [0.1, 29.17, 1.75, 3.141592653589793, 8.3]]
//!                                        # rows of [t, x, y, heading, speed]
//!
//! [perception]                           # optional
//! opponent_covariance = [[0.09, 0.0], [0.0, 0.09]]
//!
//! [engine]                               # optional, defaults shown
//! spacing = 0.5
//! horizon = 2.0
//! v_ref = 13.9
//! p_trig = 0.1
//! t_react = 0.2
//! a_brake = -3.0
//! ```

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::EngineParams;
use crate::error::{Error, Result};
use crate::geometry::{ConvexPolygon, Covariance2, DrivableArea, Footprint, Pose2, Vec2};
use crate::trajectory::{Polyline, Trajectory, TrajectoryDistribution, TrajectorySample};

/// Passenger-car footprint used for every generated vehicle.
pub const DEFAULT_FOOTPRINT: Footprint = Footprint { length: 4.5, width: 1.8 };
/// Opponent position standard deviation of generated scenarios, meters.
pub const DEFAULT_OPPONENT_SIGMA: f64 = 0.3;
/// 30 km/h.
pub const URBAN_SPEED: f64 = 30.0 / 3.6;

const LANE: f64 = 3.5;
const OPPONENT_DURATION: f64 = 6.0;
const OPPONENT_DT: f64 = 0.1;
const MAX_START_OFFSET: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EgoSetup {
    pub nominal_pose: Pose2,
    pub route: Vec<Vec2>,
    /// m/s
    pub setpoint_speed: f64,
    pub footprint: Footprint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub drivable_area: DrivableArea,
    pub ego: EgoSetup,
    pub opponents: TrajectoryDistribution,
    pub opponent_belief_cov: Covariance2,
    pub engine: EngineParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioKind {
    StraightRoadA,
    StraightRoadB,
    TSection,
    ComplexIntersection,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::StraightRoadA,
        ScenarioKind::StraightRoadB,
        ScenarioKind::TSection,
        ScenarioKind::ComplexIntersection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::StraightRoadA => "straight_road_a",
            ScenarioKind::StraightRoadB => "straight_road_b",
            ScenarioKind::TSection => "t_section",
            ScenarioKind::ComplexIntersection => "complex_intersection",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario kind `{s}`")))
    }
}

/// Constant-speed opponent following `path`, starting `offset` meters along it.
fn follower(path: &[Vec2], speed: f64, offset: f64) -> Result<Trajectory> {
    let line = Polyline::new(path.to_vec())?;
    let steps = (OPPONENT_DURATION / OPPONENT_DT).round() as usize;
    let samples = (0..=steps)
        .map(|k| {
            let t = OPPONENT_DURATION * k as f64 / steps as f64;
            let (p, heading) = line.point_at(offset + speed * t);
            Ok(TrajectorySample { t, pose: Pose2::new(p.x, p.y, heading)?, speed })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::new(samples, DEFAULT_FOOTPRINT))
}

/// Circular arc of `segments` chords around `center`, from `start_angle` sweeping `sweep` radians.
fn arc(center: Vec2, radius: f64, start_angle: f64, sweep: f64, segments: usize) -> Vec<Vec2> {
    (0..=segments)
        .map(|k| center + Vec2::from_angle(start_angle + sweep * k as f64 / segments as f64).scale(radius))
        .collect()
}

fn chain(parts: &[&[Vec2]]) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::new();
    for part in parts {
        for p in part.iter() {
            if out.last().is_none_or(|q| (*p - *q).norm() > 1e-9) {
                out.push(*p);
            }
        }
    }
    out
}

struct OpponentSpec {
    path: Vec<Vec2>,
    speed: f64,
    offset: f64,
    weight: f64,
}

fn assemble(
    kind: ScenarioKind,
    seed: u64,
    polygons: Vec<ConvexPolygon>,
    ego_start: Vec2,
    ego_route_end: Vec2,
    specs: Vec<OpponentSpec>,
) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = specs
        .into_iter()
        .map(|s| {
            let jitter = if seed == 0 { 0.0 } else { rng.random_range(-MAX_START_OFFSET..=MAX_START_OFFSET) };
            Ok((follower(&s.path, s.speed, s.offset + jitter)?, s.weight))
        })
        .collect::<Result<Vec<_>>>()?;
    let heading = (ego_route_end - ego_start).y.atan2((ego_route_end - ego_start).x);
    Ok(Scenario {
        name: kind.name().to_string(),
        drivable_area: DrivableArea::new(polygons)?,
        ego: EgoSetup {
            nominal_pose: Pose2::new(ego_start.x, ego_start.y, heading)?,
            route: vec![ego_start, ego_route_end],
            setpoint_speed: URBAN_SPEED,
            footprint: DEFAULT_FOOTPRINT,
        },
        opponents: TrajectoryDistribution::new(entries),
        opponent_belief_cov: Covariance2::isotropic(DEFAULT_OPPONENT_SIGMA)?,
        engine: EngineParams::default(),
    })
}

/// Builds one of the built-in synthetic scenarios.
///
/// Geometry is fixed per kind. A non-zero `seed` shifts each opponent's start
/// along its path by up to 2 m; seed 0 is the reference layout.
///
/// All layouts use right-hand traffic on 3.5 m lanes with the ego driving
/// east (+x) at 30 km/h in the lane centered on `y = -1.75`. Opponent start
/// offsets and the ego start were tuned so that a 0.3 s latency leaves a
/// non-zero residual risk at the nominal pose.
pub fn generate_scenario(kind: ScenarioKind, seed: u64) -> Result<Scenario> {
    let h = LANE;
    let c = LANE / 2.0;
    let v = URBAN_SPEED;
    match kind {
        // two-lane corridor, oncoming traffic with one vehicle cutting over
        // the center line around a parked car
        ScenarioKind::StraightRoadA => assemble(
            kind,
            seed,
            vec![ConvexPolygon::rectangle(-60.0, -h, 100.0, h)?],
            Vec2::new(3.0, -c),
            Vec2::new(100.0, -c),
            vec![
                OpponentSpec {
                    path: vec![Vec2::new(90.0, c), Vec2::new(-60.0, c)],
                    speed: v,
                    offset: 60.0,
                    weight: 0.7,
                },
                OpponentSpec {
                    path: vec![
                        Vec2::new(90.0, c),
                        Vec2::new(40.0, c),
                        Vec2::new(30.0, -0.2),
                        Vec2::new(18.0, -0.2),
                        Vec2::new(8.0, c),
                        Vec2::new(-60.0, c),
                    ],
                    speed: v,
                    offset: 52.0,
                    weight: 0.3,
                },
            ],
        ),
        // two-lane corridor with a driveway on the right; a car pulls out
        // across the ego lane
        ScenarioKind::StraightRoadB => assemble(
            kind,
            seed,
            vec![
                ConvexPolygon::rectangle(-60.0, -h, 100.0, h)?,
                ConvexPolygon::rectangle(26.0, -20.0, 32.0, -h + 1e-3)?,
            ],
            Vec2::new(11.0, -c),
            Vec2::new(100.0, -c),
            vec![
                OpponentSpec {
                    path: vec![Vec2::new(90.0, c), Vec2::new(-60.0, c)],
                    speed: v,
                    offset: 50.0,
                    weight: 0.8,
                },
                OpponentSpec {
                    path: chain(&[
                        &[Vec2::new(29.0, -18.0), Vec2::new(29.0, -h)],
                        &arc(Vec2::new(29.0 - 5.25, -h), 5.25, 0.0, FRAC_PI_2, 6),
                        &[Vec2::new(-60.0, c)],
                    ]),
                    speed: 4.0,
                    offset: 6.0,
                    weight: 0.2,
                },
            ],
        ),
        // main road along x with a stem road to the south centered at
        // x = 22; one stem vehicle turning left or right, or oncoming
        // traffic going straight
        ScenarioKind::TSection => {
            let jx = 22.0;
            assemble(
                kind,
                seed,
                vec![
                    ConvexPolygon::rectangle(-60.0, -h, 100.0, h)?,
                    ConvexPolygon::rectangle(jx - h, -60.0, jx + h, -h + 1e-3)?,
                ],
                Vec2::new(12.0, -c),
                Vec2::new(100.0, -c),
                vec![
                    // stem vehicle turning left: crosses the ego lane heading west
                    OpponentSpec {
                        path: chain(&[
                            &[Vec2::new(jx + c, -50.0), Vec2::new(jx + c, -h)],
                            &arc(Vec2::new(jx - h, -h), h + c, 0.0, FRAC_PI_2, 8),
                            &[Vec2::new(-60.0, c)],
                        ]),
                        speed: v,
                        offset: 44.0,
                        weight: 0.45,
                    },
                    // stem vehicle turning right: merges into the ego lane ahead
                    OpponentSpec {
                        path: chain(&[
                            &[Vec2::new(jx + c, -50.0), Vec2::new(jx + c, -h)],
                            &arc(Vec2::new(jx + h, -h), c, PI, -FRAC_PI_2, 6),
                            &[Vec2::new(100.0, -c)],
                        ]),
                        speed: 0.6 * v,
                        offset: 43.0,
                        weight: 0.35,
                    },
                    // oncoming straight through the junction
                    OpponentSpec {
                        path: vec![Vec2::new(90.0, c), Vec2::new(-60.0, c)],
                        speed: v,
                        offset: 45.0,
                        weight: 0.2,
                    },
                ],
            )
        }
        // four-arm junction centered at x = 20 with crossing, turning and
        // oncoming traffic
        ScenarioKind::ComplexIntersection => {
            let jx = 20.0;
            assemble(
                kind,
                seed,
                vec![
                    ConvexPolygon::rectangle(-60.0, -h, 100.0, h)?,
                    ConvexPolygon::rectangle(jx - h, -60.0, jx + h, 60.0)?,
                ],
                Vec2::new(5.0, -c),
                Vec2::new(100.0, -c),
                vec![
                    // northbound straight across
                    OpponentSpec {
                        path: vec![Vec2::new(jx + c, -55.0), Vec2::new(jx + c, 55.0)],
                        speed: v,
                        offset: 34.0,
                        weight: 0.3,
                    },
                    // southbound straight across
                    OpponentSpec {
                        path: vec![Vec2::new(jx - c, 55.0), Vec2::new(jx - c, -55.0)],
                        speed: v,
                        offset: 43.0,
                        weight: 0.25,
                    },
                    // oncoming turning left across the ego lane to the south
                    OpponentSpec {
                        path: chain(&[
                            &[Vec2::new(90.0, c), Vec2::new(jx + h, c)],
                            &arc(Vec2::new(jx + h, -h), h + c, FRAC_PI_2, FRAC_PI_2, 8),
                            &[Vec2::new(jx - c, -55.0)],
                        ]),
                        speed: 0.7 * v,
                        offset: 58.0,
                        weight: 0.25,
                    },
                    // southbound turning right, swinging into the oncoming lane
                    OpponentSpec {
                        path: chain(&[
                            &[Vec2::new(jx - c, 55.0), Vec2::new(jx - c, h)],
                            &arc(Vec2::new(jx - h, h), c, 0.0, -FRAC_PI_2, 6),
                            &[Vec2::new(-60.0, c)],
                        ]),
                        speed: 0.6 * v,
                        offset: 45.0,
                        weight: 0.2,
                    },
                ],
            )
        }
    }
}

// ---------------------------------------------------------------------------
// config file schema

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    meta: RawMeta,
    drivable_area: Vec<RawPolygon>,
    ego: RawEgo,
    opponents: Vec<RawOpponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    perception: Option<RawPerception>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    engine: Option<RawEngine>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeta {
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolygon {
    vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPose {
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEgo {
    pose: RawPose,
    route: Vec<[f64; 2]>,
    speed: String,
    footprint: Footprint,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOpponent {
    weight: f64,
    footprint: Footprint,
    samples: Vec<[f64; 5]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerception {
    opponent_covariance: [[f64; 2]; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEngine {
    spacing: f64,
    horizon: f64,
    v_ref: f64,
    p_trig: f64,
    t_react: f64,
    a_brake: f64,
}

/// Parses `"30 km/h"`, `"8.3 m/s"` or a bare number of m/s.
pub fn parse_speed(text: &str) -> Result<f64> {
    let t = text.trim();
    let (number, factor) = if let Some(n) = t.strip_suffix("km/h") {
        (n, 1.0 / 3.6)
    } else if let Some(n) = t.strip_suffix("m/s") {
        (n, 1.0)
    } else {
        (t, 1.0)
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("cannot parse speed `{text}`")))?;
    if !value.is_finite() {
        return Err(Error::InvalidInput(format!("speed `{text}` is not finite")));
    }
    Ok(if factor == 1.0 { value } else { value / 3.6 })
}

fn parse_error(text: &str, err: toml::de::Error) -> Error {
    let line = err
        .span()
        .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1)
        .unwrap_or(0);
    let message = err.message().to_string();
    let field = message
        .split('`')
        .nth(1)
        .filter(|_| message.contains("field"))
        .map(str::to_string);
    Error::Parse { line, field, message }
}

/// Parses and validates a scenario config.
pub fn load_scenario(config_text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(config_text).map_err(|e| parse_error(config_text, e))?;
    let mut findings = Vec::new();

    let mut polygons = Vec::new();
    for (i, p) in raw.drivable_area.iter().enumerate() {
        match ConvexPolygon::new(p.vertices.iter().map(|v| Vec2::new(v[0], v[1])).collect()) {
            Ok(poly) => polygons.push(poly),
            Err(e) => findings.push(format!("drivable area polygon {i}: {e}")),
        }
    }
    let area = if polygons.is_empty() {
        findings.push("drivable area has no valid polygon".to_string());
        None
    } else {
        DrivableArea::new(polygons).ok()
    };

    let pose = Pose2::new(raw.ego.pose.x, raw.ego.pose.y, raw.ego.pose.heading)
        .map_err(|e| findings.push(format!("ego pose: {e}")))
        .ok();
    let speed = parse_speed(&raw.ego.speed).map_err(|e| findings.push(format!("ego speed: {e}"))).ok();
    if let Err(e) = raw.ego.footprint.check() {
        findings.push(format!("ego footprint: {e}"));
    }

    let mut entries = Vec::new();
    for (j, o) in raw.opponents.iter().enumerate() {
        if let Err(e) = o.footprint.check() {
            findings.push(format!("opponent {j} footprint: {e}"));
        }
        let mut samples = Vec::with_capacity(o.samples.len());
        for (k, s) in o.samples.iter().enumerate() {
            match Pose2::new(s[1], s[2], s[3]) {
                Ok(pose) if s[0].is_finite() && s[4].is_finite() => {
                    samples.push(TrajectorySample { t: s[0], pose, speed: s[4] })
                }
                _ => findings.push(format!("opponent {j} sample {k}: non-finite values")),
            }
        }
        entries.push((Trajectory::new(samples, o.footprint), o.weight));
    }

    let opponent_belief_cov = match &raw.perception {
        Some(p) => Covariance2::from_matrix(p.opponent_covariance)
            .map_err(|e| findings.push(format!("opponent covariance: {e}")))
            .ok(),
        None => Covariance2::isotropic(DEFAULT_OPPONENT_SIGMA).ok(),
    };
    let engine = raw
        .engine
        .as_ref()
        .map(|e| EngineParams {
            particle_spacing: e.spacing,
            horizon: e.horizon,
            v_ref: e.v_ref,
            p_trig: e.p_trig,
            t_react: e.t_react,
            a_brake: e.a_brake,
        })
        .unwrap_or_default();

    match (area, pose, speed, opponent_belief_cov) {
        (Some(drivable_area), Some(nominal_pose), Some(setpoint_speed), Some(opponent_belief_cov))
            if findings.is_empty() =>
        {
            let scenario = Scenario {
                name: raw.meta.name,
                drivable_area,
                ego: EgoSetup {
                    nominal_pose,
                    route: raw.ego.route.iter().map(|v| Vec2::new(v[0], v[1])).collect(),
                    setpoint_speed,
                    footprint: raw.ego.footprint,
                },
                opponents: TrajectoryDistribution::new(entries),
                opponent_belief_cov,
                engine,
            };
            let semantic = validate_scenario(&scenario);
            if semantic.is_empty() {
                Ok(scenario)
            } else {
                Err(Error::Validation(semantic))
            }
        }
        _ => Err(Error::Validation(findings)),
    }
}

/// Writes a scenario in the config format; [`load_scenario`] reads it back
/// unchanged.
pub fn serialize_scenario(s: &Scenario) -> Result<String> {
    let raw = RawScenario {
        meta: RawMeta { name: s.name.clone() },
        drivable_area: s
            .drivable_area
            .polygons()
            .iter()
            .map(|p| RawPolygon { vertices: p.vertices().iter().map(|v| [v.x, v.y]).collect() })
            .collect(),
        ego: RawEgo {
            pose: RawPose { x: s.ego.nominal_pose.x, y: s.ego.nominal_pose.y, heading: s.ego.nominal_pose.heading },
            route: s.ego.route.iter().map(|v| [v.x, v.y]).collect(),
            speed: format!("{:?} m/s", s.ego.setpoint_speed),
            footprint: s.ego.footprint,
        },
        opponents: s
            .opponents
            .entries
            .iter()
            .map(|(t, w)| RawOpponent {
                weight: *w,
                footprint: t.footprint,
                samples: t.samples.iter().map(|x| [x.t, x.pose.x, x.pose.y, x.pose.heading, x.speed]).collect(),
            })
            .collect(),
        perception: Some(RawPerception { opponent_covariance: s.opponent_belief_cov.to_matrix() }),
        engine: Some(RawEngine {
            spacing: s.engine.particle_spacing,
            horizon: s.engine.horizon,
            v_ref: s.engine.v_ref,
            p_trig: s.engine.p_trig,
            t_react: s.engine.t_react,
            a_brake: s.engine.a_brake,
        }),
    };
    toml::to_string(&raw).map_err(|e| Error::InvalidInput(format!("cannot serialize scenario: {e}")))
}

fn distance_to_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let f = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    (p - a.lerp(b, f)).norm()
}

/// Every violated scenario invariant, one finding each. Empty means valid.
pub fn validate_scenario(s: &Scenario) -> Vec<String> {
    let mut out = Vec::new();
    let area = &s.drivable_area;
    let ego = &s.ego;

    if !area.contains(ego.nominal_pose.position()) {
        out.push("ego pose outside drivable area".to_string());
    }
    if ego.route.len() < 2 {
        out.push(format!("ego route needs at least 2 waypoints, got {}", ego.route.len()));
    } else {
        let d = distance_to_segment(ego.nominal_pose.position(), ego.route[0], ego.route[1]);
        if d > 1.0 {
            out.push(format!("ego pose is {d:.3} m from the first route segment"));
        }
    }
    if ego.route.iter().any(|w| !w.is_finite()) {
        out.push("ego route has non-finite waypoints".to_string());
    }
    if !(ego.setpoint_speed.is_finite() && ego.setpoint_speed > 0.0) {
        out.push(format!("ego setpoint speed must be positive, got {}", ego.setpoint_speed));
    }
    if ego.footprint.check().is_err() {
        out.push("ego footprint must have positive size".to_string());
    }

    if s.opponents.entries.is_empty() {
        out.push("opponent distribution is empty".to_string());
    }
    for (j, (traj, weight)) in s.opponents.entries.iter().enumerate() {
        if !(weight.is_finite() && *weight > 0.0) {
            out.push(format!("opponent {j}: weight must be positive, got {weight}"));
        }
        if traj.footprint.check().is_err() {
            out.push(format!("opponent {j}: footprint must have positive size"));
        }
        let samples = &traj.samples;
        let Some(first) = samples.first() else {
            out.push(format!("opponent {j}: trajectory has no samples"));
            continue;
        };
        if first.t != 0.0 {
            out.push(format!("opponent {j}: time must start at 0, starts at {}", first.t));
        }
        if !area.contains(first.pose.position()) {
            out.push(format!("opponent {j}: starts outside drivable area"));
        }
        if let Some(k) = samples.windows(2).position(|w| w[1].t <= w[0].t) {
            out.push(format!("opponent {j}: non-increasing time at sample {}", k + 1));
        }
        if samples.iter().any(|x| x.speed < 0.0) {
            out.push(format!("opponent {j}: negative speed"));
        }
        let inconsistent = samples.windows(2).position(|w| {
            let dt = w[1].t - w[0].t;
            let mean = 0.5 * (w[0].speed + w[1].speed);
            if dt <= 0.0 || w[0].speed == 0.0 || w[1].speed == 0.0 {
                return false;
            }
            let ratio = (w[1].pose.position() - w[0].pose.position()).norm() / dt / mean;
            !(0.9..=1.1).contains(&ratio)
        });
        if let Some(k) = inconsistent {
            out.push(format!("opponent {j}: displacement inconsistent with speed at sample {}", k + 1));
        }
    }
    let total = s.opponents.total_weight();
    if !s.opponents.entries.is_empty() && (total - 1.0).abs() > 1e-9 {
        out.push(format!("weights sum to {total}"));
    }
    let (lo, _) = s.opponent_belief_cov.eigenvalues();
    if lo < -crate::geometry::PSD_TOLERANCE {
        out.push("opponent covariance is not positive semi-definite".to_string());
    }
    out.extend(s.engine.findings());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[meta]
name = "minimal"

[[drivable_area]]
vertices = [[-10.0, -4.0], [60.0, -4.0], [60.0, 4.0], [-10.0, 4.0]]

[ego]
pose = { x = 0.0, y = -1.75, heading = 0.0 }
route = [[0.0, -1.75], [60.0, -1.75]]
speed = "30 km/h"
footprint = { length = 4.5, width = 1.8 }

[[opponents]]
weight = 1.0
footprint = { length = 4.5, width = 1.8 }
samples = [[0.0, 40.0, 1.75, 3.141592653589793, 5.0], [1.0, 35.0, 1.75, 3.141592653589793, 5.0]]
"#;

    #[test]
    fn minimal_config_loads() {
        let s = load_scenario(MINIMAL).unwrap();
        assert_eq!(s.opponents.entries.len(), 1);
        assert_eq!(s.name, "minimal");
        assert_eq!(s.ego.setpoint_speed, 30.0 / 3.6);
        assert_eq!(s.engine, EngineParams::default());
        assert_eq!(s.opponent_belief_cov, Covariance2::isotropic(0.3).unwrap());
    }

    #[test]
    fn speed_units() {
        assert_eq!(parse_speed("30 km/h").unwrap(), 30.0 / 3.6);
        assert!((parse_speed("30 km/h").unwrap() - 8.333333333333334).abs() < 1e-15);
        assert_eq!(parse_speed("8.5 m/s").unwrap(), 8.5);
        assert_eq!(parse_speed("7").unwrap(), 7.0);
        assert!(parse_speed("fast").is_err());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let text = MINIMAL.replace("weight = 1.0", "weight = 0.5")
            + r#"
[[opponents]]
weight = 0.4
footprint = { length = 4.5, width = 1.8 }
samples = [[0.0, 40.0, 1.75, 3.141592653589793, 5.0], [1.0, 35.0, 1.75, 3.141592653589793, 5.0]]
"#;
        match load_scenario(&text) {
            Err(Error::Validation(f)) => assert!(f.iter().any(|m| m.contains("weights sum to 0.9")), "{f:?}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected_with_line() {
        let text = MINIMAL.replace("name = \"minimal\"", "name = \"minimal\"\ncolour = \"red\"");
        match load_scenario(&text) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 4);
                assert_eq!(field.as_deref(), Some("colour"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(load_scenario("not toml ["), Err(Error::Parse { .. })));
    }

    #[test]
    fn bad_polygon_is_a_finding() {
        let text = MINIMAL.replace(
            "[[-10.0, -4.0], [60.0, -4.0], [60.0, 4.0], [-10.0, 4.0]]",
            "[[-10.0, -4.0], [-10.0, 4.0], [60.0, 4.0], [60.0, -4.0]]",
        );
        match load_scenario(&text) {
            Err(Error::Validation(f)) => assert!(f[0].contains("polygon 0")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn generated_scenarios_are_valid_and_deterministic() {
        for kind in ScenarioKind::ALL {
            for seed in [0, 7] {
                let a = generate_scenario(kind, seed).unwrap();
                assert_eq!(validate_scenario(&a), Vec::<String>::new(), "{kind} seed {seed}");
                assert_eq!(a, generate_scenario(kind, seed).unwrap());
            }
        }
        let t = generate_scenario(ScenarioKind::TSection, 3).unwrap();
        assert_eq!(t.opponents.entries.len(), 3);
        assert!((t.opponents.total_weight() - 1.0).abs() < 1e-12);
        let c = generate_scenario(ScenarioKind::ComplexIntersection, 0).unwrap();
        assert!(c.opponents.entries.len() >= 4);
    }

    #[test]
    fn seeds_only_shift_opponents_a_little() {
        let base = generate_scenario(ScenarioKind::ComplexIntersection, 0).unwrap();
        let moved = generate_scenario(ScenarioKind::ComplexIntersection, 11).unwrap();
        assert_eq!(base.drivable_area, moved.drivable_area);
        assert_eq!(base.ego, moved.ego);
        for ((a, _), (b, _)) in base.opponents.entries.iter().zip(&moved.opponents.entries) {
            let d = (a.samples[0].pose.position() - b.samples[0].pose.position()).norm();
            assert!(d <= MAX_START_OFFSET + 1e-9);
        }
        assert_ne!(base.opponents, moved.opponents);
    }

    #[test]
    fn violations_are_reported() {
        let mut s = generate_scenario(ScenarioKind::TSection, 0).unwrap();
        s.ego.nominal_pose = Pose2::new(1e3, 1e3, 0.0).unwrap();
        assert!(validate_scenario(&s).iter().any(|f| f == "ego pose outside drivable area"));

        let mut s = generate_scenario(ScenarioKind::TSection, 0).unwrap();
        let samples = &mut s.opponents.entries[0].0.samples;
        samples[3].t = samples[2].t;
        assert!(validate_scenario(&s).iter().any(|f| f.contains("non-increasing time")));
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ScenarioKind::ALL {
            assert_eq!(kind.name().parse::<ScenarioKind>().unwrap(), kind);
        }
        assert!("roundabout".parse::<ScenarioKind>().is_err());
    }
}
