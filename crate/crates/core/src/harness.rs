//! Experiment drivers: σ sweeps, latency sweeps and spatial residual-risk
//! fields, plus CSV and SVG writers for their results.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::belief::{estimate_field, exceedance_probability, BeliefMcConfig, DegradedEngine};
use crate::engine::{DegradationParams, EngineParams, RiskEngine, RiskValue};
use crate::error::{Error, Result};
use crate::geometry::{Covariance2, GaussianBelief2, Vec2};
use crate::parallel::map_indexed;
use crate::scenario::Scenario;

pub const DEFAULT_SIGMA_LEVELS: [f64; 7] = [0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0];
pub const DEFAULT_FIXED_LATENCY: f64 = 0.3;
pub const DEFAULT_R_THR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub sigma_levels: Vec<f64>,
    pub latency_levels: Vec<f64>,
    pub fixed_latency: f64,
    pub r_thr: RiskValue,
    pub n_samples: usize,
    pub master_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            sigma_levels: DEFAULT_SIGMA_LEVELS.to_vec(),
            latency_levels: (0..=10).map(|k| k as f64 / 10.0).collect(),
            fixed_latency: DEFAULT_FIXED_LATENCY,
            r_thr: RiskValue::clamped(DEFAULT_R_THR),
            n_samples: 30,
            master_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sigma_levels;
        if s.is_empty() {
            return Err(Error::InvalidInput("sigma levels must not be empty".into()));
        }
        if s.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidInput("sigma levels must be finite and non-negative".into()));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("sigma levels must be strictly increasing".into()));
        }
        check_latencies(&self.latency_levels)?;
        if !(self.fixed_latency.is_finite() && self.fixed_latency >= 0.0) {
            return Err(Error::InvalidInput("fixed latency must be non-negative".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidInput("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

fn check_latencies(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidInput("latency levels must not be empty".into()));
    }
    if levels.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("latency levels must be finite and non-negative".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub cell_size: f64,
    pub fixed_latency: f64,
}

impl FieldSpec {
    /// Grid of `(2 * half_cells + 1)` cells per axis whose middle cell is
    /// centered on `center`.
    pub fn centered(center: Vec2, half_cells: (usize, usize), cell_size: f64, fixed_latency: f64) -> Self {
        let hx = (half_cells.0 as f64 + 0.5) * cell_size;
        let hy = (half_cells.1 as f64 + 0.5) * cell_size;
        Self {
            x_range: (center.x - hx, center.x + hx),
            y_range: (center.y - hy, center.y + hy),
            cell_size,
            fixed_latency,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok(self.x_range) || !ok(self.y_range) {
            return Err(Error::InvalidInput("field ranges must be finite with max > min".into()));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::InvalidInput("cell size must be positive".into()));
        }
        if !(self.fixed_latency.is_finite() && self.fixed_latency >= 0.0) {
            return Err(Error::InvalidInput("fixed latency must be non-negative".into()));
        }
        Ok(())
    }

    fn counts(&self) -> (usize, usize) {
        let n = |r: (f64, f64)| (((r.1 - r.0) / self.cell_size) - 1e-9).ceil().max(1.0) as usize;
        (n(self.x_range), n(self.y_range))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRow {
    pub sigma: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub exceedance: f64,
    pub n_used: usize,
    pub n_rejected: u64,
    /// Set when estimation failed at this level; the numbers are then NaN.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyRow {
    pub theta: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldCell {
    pub x: f64,
    pub y: f64,
    /// `None` when the cell center is off the drivable area.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    /// Row-major, `y` outer and `x` inner, both ascending.
    pub cells: Vec<FieldCell>,
}

/// Mean, spread and exceedance of the residual risk per σ level at the
/// nominal pose, with latency-only degradation.
pub fn run_sigma_sweep(scenario: &Scenario, spec: &SweepSpec, params: &EngineParams) -> Result<Vec<SigmaRow>> {
    spec.validate()?;
    let field = DegradedEngine {
        engine: RiskEngine::new(scenario, *params)?,
        degradation: DegradationParams::latency_only(spec.fixed_latency)?,
    };
    let config = BeliefMcConfig::new(spec.n_samples, spec.master_seed)?;
    spec.sigma_levels
        .iter()
        .map(|&sigma| {
            let belief = GaussianBelief2::isotropic(scenario.ego.nominal_pose, sigma)?;
            match estimate_field(&field, Some(&scenario.drivable_area), &belief, &config) {
                Ok(stats) => Ok(SigmaRow {
                    sigma,
                    mean: stats.mean.value(),
                    std_dev: stats.std_dev,
                    exceedance: exceedance_probability(&stats, spec.r_thr)?,
                    n_used: stats.n_used(),
                    n_rejected: stats.n_rejected,
                    failure: None,
                }),
                Err(Error::EstimationFailed(msg)) => Ok(SigmaRow {
                    sigma,
                    mean: f64::NAN,
                    std_dev: f64::NAN,
                    exceedance: f64::NAN,
                    n_used: 0,
                    n_rejected: config.n_samples as u64 * config.max_attempts_per_sample as u64,
                    failure: Some(msg),
                }),
                Err(e) => Err(e),
            }
        })
        .collect()
}

/// Deterministic residual risk at the nominal pose for each latency.
pub fn run_latency_sweep(scenario: &Scenario, latency_levels: &[f64], params: &EngineParams) -> Result<Vec<LatencyRow>> {
    check_latencies(latency_levels)?;
    let engine = RiskEngine::new(scenario, *params)?;
    let zero = Covariance2::ZERO;
    latency_levels
        .iter()
        .map(|&theta| {
            let d = DegradationParams::latency_only(theta)?;
            let r = engine.residual(&d, &scenario.ego.nominal_pose, &zero)?;
            Ok(LatencyRow { theta, residual: r.value() })
        })
        .collect()
}

/// Deterministic residual risk with the ego relocated to every grid cell
/// center on the drivable area.
pub fn run_spatial_field(scenario: &Scenario, spec: &FieldSpec, params: &EngineParams) -> Result<FieldGrid> {
    spec.validate()?;
    let engine = RiskEngine::new(scenario, *params)?;
    let d = DegradationParams::latency_only(spec.fixed_latency)?;
    let zero = Covariance2::ZERO;
    let nominal = scenario.ego.nominal_pose;
    let (nx, ny) = spec.counts();
    let snap = |c: f64, n: f64| if (c - n).abs() < 1e-9 { n } else { c };
    let cells = map_indexed(nx * ny, |k| {
        let (i, j) = (k % nx, k / nx);
        let x = snap(spec.x_range.0 + (i as f64 + 0.5) * spec.cell_size, nominal.x);
        let y = snap(spec.y_range.0 + (j as f64 + 0.5) * spec.cell_size, nominal.y);
        let p = Vec2::new(x, y);
        if !scenario.drivable_area.contains(p) {
            return Ok(FieldCell { x, y, residual: None });
        }
        let r = engine.residual(&d, &nominal.with_position(p), &zero)?;
        Ok(FieldCell { x, y, residual: Some(r.value()) })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(FieldGrid { nx, ny, cell_size: spec.cell_size, cells })
}

// ---------------------------------------------------------------------------
// output

/// Formats like C's `%.9g`: 9 significant digits, no trailing zeros.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

pub enum Table<'a> {
    Sigma(&'a [SigmaRow]),
    Latency(&'a [LatencyRow]),
    Field(&'a FieldGrid),
}

impl Table<'_> {
    pub fn header(&self) -> &'static str {
        match self {
            Table::Sigma(_) => "sigma_m,mean_rr,std_rr,exceedance,n_used,n_rejected",
            Table::Latency(_) => "theta_s,residual",
            Table::Field(_) => "x_m,y_m,residual,off_map",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Table::Sigma(r) => r.len(),
            Table::Latency(r) => r.len(),
            Table::Field(g) => g.cells.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_csv(&self) -> String {
        let f = format_sig9;
        let mut out = String::new();
        out.push_str(self.header());
        out.push('\n');
        match self {
            Table::Sigma(rows) => {
                for r in rows.iter() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        f(r.sigma),
                        f(r.mean),
                        f(r.std_dev),
                        f(r.exceedance),
                        r.n_used,
                        r.n_rejected
                    );
                }
            }
            Table::Latency(rows) => {
                for r in rows.iter() {
                    let _ = writeln!(out, "{},{}", f(r.theta), f(r.residual));
                }
            }
            Table::Field(grid) => {
                for c in &grid.cells {
                    match c.residual {
                        Some(v) => writeln!(out, "{},{},{},0", f(c.x), f(c.y), f(v)),
                        None => writeln!(out, "{},{},,1", f(c.x), f(c.y)),
                    }
                    .ok();
                }
            }
        }
        out
    }
}

fn refuse_empty(table_len: usize) -> Result<()> {
    if table_len == 0 {
        return Err(Error::Io(io::Error::new(io::ErrorKind::InvalidInput, "refusing to write an empty table")));
    }
    Ok(())
}

pub fn write_csv(table: &Table<'_>, path: &Path) -> Result<()> {
    refuse_empty(table.len())?;
    std::fs::write(path, table.to_csv())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvgKind {
    Heatmap,
    Curve,
}

// Viridis-like stops, dark (0) to bright (1).
const RAMP: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

/// Color for `v` in [0, 1] on a monotone ramp.
pub fn ramp_color(v: f64) -> [u8; 3] {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let k = RAMP.windows(2).position(|w| v <= w[1].0).unwrap_or(RAMP.len() - 2);
    let ((a, ca), (b, cb)) = (RAMP[k], RAMP[k + 1]);
    let f = (v - a) / (b - a);
    let mix = |i: usize| (ca[i] as f64 + f * (cb[i] as f64 - ca[i] as f64)).round() as u8;
    [mix(0), mix(1), mix(2)]
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const M_LEFT: f64 = 70.0;
const M_RIGHT: f64 = 110.0;
const M_TOP: f64 = 30.0;
const M_BOTTOM: f64 = 60.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        M_LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - M_LEFT - M_RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - M_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - M_TOP - M_BOTTOM)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str, xticks: &[f64], yticks: &[f64]) {
        let (l, r, t, b) = (self.px(self.x0), self.px(self.x1), self.py(self.y1), self.py(self.y0));
        let _ = writeln!(out, "<rect x=\"{l:.2}\" y=\"{t:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>", r - l, b - t);
        for &x in xticks {
            let p = self.px(x);
            let _ = writeln!(
                out,
                "<line x1=\"{p:.2}\" y1=\"{b:.2}\" x2=\"{p:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\
                 <text x=\"{p:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
                b + 5.0,
                b + 18.0,
                format_sig9((x * 1e6).round() / 1e6)
            );
        }
        for &y in yticks {
            let p = self.py(y);
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{p:.2}\" x2=\"{l:.2}\" y2=\"{p:.2}\" stroke=\"black\"/>\
                 <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
                l - 5.0,
                l - 8.0,
                p + 4.0,
                format_sig9((y * 1e6).round() / 1e6)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            (l + r) / 2.0,
            H - 18.0,
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            "<text transform=\"translate(18 {:.2}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
            (t + b) / 2.0,
            escape(ylabel)
        );
    }
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= count as f64).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn heatmap_svg(grid: &FieldGrid, title: &str) -> String {
    let half = grid.cell_size / 2.0;
    let xs = grid.cells.iter().map(|c| c.x);
    let ys = grid.cells.iter().map(|c| c.y);
    let frame = Frame {
        x0: xs.clone().fold(f64::INFINITY, f64::min) - half,
        x1: xs.fold(f64::NEG_INFINITY, f64::max) + half,
        y0: ys.clone().fold(f64::INFINITY, f64::min) - half,
        y1: ys.fold(f64::NEG_INFINITY, f64::max) + half,
    };
    let mut out = svg_open(title);
    for c in &grid.cells {
        let Some(v) = c.residual else { continue };
        let [r, g, b] = ramp_color(v);
        let (x0, y0) = (frame.px(c.x - half), frame.py(c.y + half));
        let (x1, y1) = (frame.px(c.x + half), frame.py(c.y - half));
        let _ = writeln!(
            out,
            "<rect x=\"{x0:.3}\" y=\"{y0:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"rgb({r},{g},{b})\"/>",
            x1 - x0 + 0.05,
            y1 - y0 + 0.05
        );
    }
    frame.axes(
        &mut out,
        "x [m]",
        "y [m]",
        &nice_ticks(frame.x0, frame.x1, 8),
        &nice_ticks(frame.y0, frame.y1, 6),
    );
    // color bar
    let (bx, top, bottom) = (W - M_RIGHT + 25.0, M_TOP, H - M_BOTTOM);
    for k in 0..50 {
        let v0 = k as f64 / 50.0;
        let [r, g, b] = ramp_color(v0 + 0.01);
        let y = bottom - (k + 1) as f64 / 50.0 * (bottom - top);
        let _ = writeln!(
            out,
            "<rect x=\"{bx}\" y=\"{y:.2}\" width=\"16\" height=\"{:.2}\" fill=\"rgb({r},{g},{b})\"/>",
            (bottom - top) / 50.0 + 0.3
        );
    }
    for v in [0.0, 0.5, 1.0] {
        let y = bottom - v * (bottom - top);
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{v}</text>", bx + 22.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        "<text transform=\"translate({:.2} {:.2}) rotate(-90)\" text-anchor=\"middle\">residual risk</text>",
        bx + 60.0,
        (top + bottom) / 2.0
    );
    out.push_str("</svg>\n");
    out
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    dashed: bool,
    points: Vec<(f64, f64)>,
    band: Option<Vec<f64>>,
}

fn curve_svg(xlabel: &str, ylabel: &str, title: &str, series: &[Series<'_>]) -> String {
    let xs: Vec<f64> = series[0].points.iter().map(|p| p.0).collect();
    let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let (x0, x1) = if x1 > x0 { (x0, x1) } else { (x0 - 0.5, x0 + 0.5) };
    let frame = Frame { x0, x1, y0: 0.0, y1: 1.0 };
    let mut out = svg_open(title);
    frame.axes(&mut out, xlabel, ylabel, &xs, &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    for (k, s) in series.iter().enumerate() {
        let finite: Vec<(usize, (f64, f64))> =
            s.points.iter().cloned().enumerate().filter(|(_, p)| p.1.is_finite()).collect();
        if let Some(band) = &s.band {
            for &(i, (x, y)) in &finite {
                let (lo, hi) = ((y - band[i]).max(0.0), (y + band[i]).min(1.0));
                let _ = writeln!(
                    out,
                    "<line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"{3}\" stroke-opacity=\"0.5\"/>",
                    frame.px(x),
                    frame.py(lo),
                    frame.py(hi),
                    s.color
                );
            }
        }
        let pts: Vec<String> =
            finite.iter().map(|(_, (x, y))| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y))).collect();
        let dash = if s.dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{dash}/>",
            pts.join(" "),
            s.color
        );
        for (_, (x, y)) in &finite {
            let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>", frame.px(*x), frame.py(*y), s.color);
        }
        let ly = M_TOP + 16.0 + 18.0 * k as f64;
        let lx = W - M_RIGHT + 10.0;
        let _ = writeln!(
            out,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"{dash}/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            lx + 20.0,
            s.color,
            lx + 25.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// SVG rendering of a table: heatmaps for fields, curves for sweeps.
pub fn svg_string(table: &Table<'_>, kind: SvgKind, title: &str) -> Result<String> {
    refuse_empty(table.len())?;
    match (table, kind) {
        (Table::Field(grid), SvgKind::Heatmap) => Ok(heatmap_svg(grid, title)),
        (Table::Sigma(rows), SvgKind::Curve) => Ok(curve_svg(
            "localization uncertainty σ_ego [m]",
            "residual risk / probability",
            title,
            &[
                Series {
                    label: "mean",
                    color: "#1f4e9c",
                    dashed: false,
                    points: rows.iter().map(|r| (r.sigma, r.mean)).collect(),
                    band: Some(rows.iter().map(|r| r.std_dev).collect()),
                },
                Series {
                    label: "exceedance",
                    color: "#c0392b",
                    dashed: true,
                    points: rows.iter().map(|r| (r.sigma, r.exceedance)).collect(),
                    band: None,
                },
            ],
        )),
        (Table::Latency(rows), SvgKind::Curve) => Ok(curve_svg(
            "latency θ [s]",
            "residual risk",
            title,
            &[Series {
                label: "residual",
                color: "#1f4e9c",
                dashed: false,
                points: rows.iter().map(|r| (r.theta, r.residual)).collect(),
                band: None,
            }],
        )),
        _ => Err(Error::InvalidInput("heatmaps need a field grid and curves need a sweep table".into())),
    }
}

pub fn render_svg(table: &Table<'_>, path: &Path, kind: SvgKind, title: &str) -> Result<()> {
    let svg = svg_string(table, kind, title)?;
    std::fs::write(path, svg)?;
    Ok(())
}
