//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and strings and returns JSON text, so the
//! page needs no generated TypeScript types.

use belief_risk::harness::{run_latency_sweep, run_sigma_sweep, run_spatial_field, FieldSpec, SweepSpec};
use belief_risk::{generate_scenario, RiskValue, Scenario, ScenarioKind};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct FieldJson {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
    cell: f64,
    ego: [f64; 2],
    /// Row-major from the bottom-left cell; `null` marks off-map cells.
    values: Vec<Option<f64>>,
    polygons: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize)]
struct SigmaJson {
    sigma: f64,
    mean: f64,
    std: f64,
    exceedance: f64,
}

#[derive(Serialize)]
struct LatencyJson {
    theta: f64,
    residual: f64,
}

fn scenario(kind: &str, seed: u32) -> Result<Scenario, String> {
    let kind: ScenarioKind = kind.parse().map_err(|e: belief_risk::Error| e.to_string())?;
    generate_scenario(kind, seed as u64).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

pub fn field_json(kind: &str, seed: u32, latency: f64, cell: f64, half_x: u32, half_y: u32) -> Result<String, String> {
    let sc = scenario(kind, seed)?;
    let ego = sc.ego.nominal_pose.position();
    let spec = FieldSpec::centered(ego, (half_x as usize, half_y as usize), cell, latency);
    let grid = run_spatial_field(&sc, &spec, &sc.engine).map_err(|e| e.to_string())?;
    to_json(&FieldJson {
        nx: grid.nx,
        ny: grid.ny,
        x0: spec.x_range.0,
        y0: spec.y_range.0,
        cell,
        ego: [ego.x, ego.y],
        values: grid.cells.iter().map(|c| c.residual).collect(),
        polygons: sc
            .drivable_area
            .polygons()
            .iter()
            .map(|p| p.vertices().iter().map(|v| [v.x, v.y]).collect())
            .collect(),
    })
}

pub fn sigma_sweep_json(kind: &str, seed: u32, latency: f64, samples: u32, r_thr: f64) -> Result<String, String> {
    let sc = scenario(kind, seed)?;
    let spec = SweepSpec {
        fixed_latency: latency,
        n_samples: samples as usize,
        r_thr: RiskValue::new(r_thr).map_err(|e| e.to_string())?,
        ..SweepSpec::default()
    };
    let rows = run_sigma_sweep(&sc, &spec, &sc.engine).map_err(|e| e.to_string())?;
    to_json(
        &rows
            .iter()
            .map(|r| SigmaJson { sigma: r.sigma, mean: r.mean, std: r.std_dev, exceedance: r.exceedance })
            .collect::<Vec<_>>(),
    )
}

pub fn latency_sweep_json(kind: &str, seed: u32, max_latency: f64, steps: u32) -> Result<String, String> {
    let sc = scenario(kind, seed)?;
    let steps = steps.max(1);
    let levels: Vec<f64> = (0..=steps).map(|k| max_latency * k as f64 / steps as f64).collect();
    let rows = run_latency_sweep(&sc, &levels, &sc.engine).map_err(|e| e.to_string())?;
    to_json(&rows.iter().map(|r| LatencyJson { theta: r.theta, residual: r.residual }).collect::<Vec<_>>())
}

#[wasm_bindgen(js_name = residualField)]
pub fn residual_field(kind: &str, seed: u32, latency: f64, cell: f64, half_x: u32, half_y: u32) -> Result<String, JsValue> {
    field_json(kind, seed, latency, cell, half_x, half_y).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = sigmaSweep)]
pub fn sigma_sweep(kind: &str, seed: u32, latency: f64, samples: u32, r_thr: f64) -> Result<String, JsValue> {
    sigma_sweep_json(kind, seed, latency, samples, r_thr).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = latencySweep)]
pub fn latency_sweep(kind: &str, seed: u32, max_latency: f64, steps: u32) -> Result<String, JsValue> {
    latency_sweep_json(kind, seed, max_latency, steps).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_has_one_value_per_cell() {
        let json = field_json("t_section", 0, 0.3, 1.0, 4, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["nx"], 9);
        assert_eq!(v["ny"], 5);
        assert_eq!(v["values"].as_array().unwrap().len(), 45);
    }

    #[test]
    fn sweeps_serialize() {
        let s: serde_json::Value = serde_json::from_str(&sigma_sweep_json("straight_road_a", 0, 0.3, 5, 0.5).unwrap()).unwrap();
        assert_eq!(s.as_array().unwrap().len(), 7);
        let l: serde_json::Value = serde_json::from_str(&latency_sweep_json("complex_intersection", 0, 1.0, 4).unwrap()).unwrap();
        assert_eq!(l[0]["residual"], 0.0);
        assert_eq!(l.as_array().unwrap().len(), 5);
    }

    #[test]
    fn unknown_kind_is_an_error() {
        assert!(field_json("roundabout", 0, 0.3, 1.0, 2, 2).is_err());
    }
}
