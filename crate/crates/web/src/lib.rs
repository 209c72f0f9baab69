//! Browser bindings for the demo page in `www/`. Each operation takes the
//! text of a config file and returns JSON; the plain functions are usable
//! (and tested) natively, the `#[wasm_bindgen]` wrappers only convert errors.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use delayflow::analysis::initial_layer_report;
use delayflow::flow::{run_flow_observed, MinimizerOptions};
use delayflow::grid::SpaceGrid;
use delayflow::model::{load_problem, parse_config, validate_hypotheses};

/// Largest number of phase frames sent back to the page.
const MAX_FRAMES: usize = 60;

/// Hypothesis checks for a config, without running anything.
pub fn validate(config: &str) -> Result<Value, String> {
    let setup = parse_config(config).map_err(|e| e.to_string())?;
    let report = validate_hypotheses(&setup.problem, &setup.numerics);
    Ok(json!({
        "passed": report.passed(),
        "checks": report.checks,
        "mu_i": report.mu_i,
        "delta_t": setup.numerics.delta_t(),
        "j_max": setup.numerics.j_max(),
    }))
}

/// Runs the delayed flow. Frames carry the angle of (z_1, z_2) at each node,
/// subsampled to at most [`MAX_FRAMES`]; the energy rows are complete.
pub fn flow(config: &str) -> Result<Value, String> {
    let setup = load_problem(config).map_err(|e| e.to_string())?;
    let p = &setup.problem;
    let n = &setup.numerics;
    let total = delayflow::grid::step_count(p.horizon, n.delta_t());
    let every = total.div_ceil(MAX_FRAMES).max(1);
    let opts = MinimizerOptions::from_numerics(n);
    let mut frames = Vec::new();
    let report = run_flow_observed(p, n, setup.run.init, &opts, |s| {
        if s.n % every == 0 || s.n == total {
            let phase: Vec<f64> = (0..s.z.nx()).map(|k| s.z.node(k)[1].atan2(s.z.node(k)[0])).collect();
            frames.push(json!({ "t": s.t, "phase": phase }));
        }
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let energy: Vec<Value> = report
        .rows
        .iter()
        .map(|r| json!({ "t": r.t, "E": r.energy, "D": r.dissipation, "lambda_l1": r.lambda_l1 }))
        .collect();
    Ok(json!({
        "x": SpaceGrid::new(n.nx).x,
        "frames": frames,
        "energy": energy,
        "max_chain_excess": report.max_chain_excess,
        "tol_energy": report.tol_energy,
        "max_unit_deviation": report.max_unit_deviation,
        "max_lambda": report.max_lambda,
    }))
}

/// Initial-layer mass on the fast time scale with its fitted decay slope.
pub fn layer(config: &str) -> Result<Value, String> {
    let setup = load_problem(config).map_err(|e| e.to_string())?;
    let (report, series) =
        initial_layer_report(&setup.problem, &setup.numerics, setup.run.layer_horizon).map_err(|e| e.to_string())?;
    let points: Vec<[f64; 2]> = series.points.iter().map(|&(t, m)| [t, m]).collect();
    Ok(json!({ "report": report, "points": points }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = validateConfig)]
pub fn validate_config(config: &str) -> Result<String, JsError> {
    to_js(validate(config))
}

#[wasm_bindgen(js_name = runFlow)]
pub fn run_flow(config: &str) -> Result<String, JsError> {
    to_js(flow(config))
}

#[wasm_bindgen(js_name = layerDecay)]
pub fn layer_decay(config: &str) -> Result<String, JsError> {
    to_js(layer(config))
}

/// The config the page starts with: small enough to run in a second.
#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config() -> String {
    DEFAULT_CONFIG.to_string()
}

pub const DEFAULT_CONFIG: &str = "\
[model]
beta = 1
zeta = 1
beta0 = 1
zeta0 = 1
rho_I = 0.25*exp(-a)
zp_1 = cos(0.5*cos(pi*x))
zp_2 = sin(0.5*cos(pi*x))
d = 2
epsilon = 0.1
T = 0.3
beta_min = 1
beta_max = 1
zeta_min = 1
zeta_max = 1
M = 2
mu_I_min = 0.2
mu0_min = 0.1

[numerics]
delta_a = 0.05
Nx = 17

[run]
init = cell_average
layer_horizon = 6
";

