// SPDX-License-Identifier: MIT OR Apache-2.0

//! Browser bindings. Each export takes a JSON parameter object and returns a
//! JSON document for the page to plot; the plain-Rust halves are public so
//! the same code runs under `cargo test`.

#![forbid(unsafe_code)]

use renewcp::emission::{EmissionConfig, NoiseMode, RiskQuery};
use renewcp::filter::{Filter, FilterState, FilterTrace, PruneSettings, DEFAULT_MIN_LOG_WEIGHT};
use renewcp::length_prior::{LengthKind, LengthPrior};
use renewcp::posterior::{last_segment_risk, summarize_segments, BackwardKernels, SegmentSummary};
use renewcp::simulate::{simulate, Simulation, SimulationSettings};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Inputs shared by the demo operations.
#[derive(Clone, Debug, Deserialize)]
pub struct DemoParams {
    pub n: usize,
    pub d: usize,
    #[serde(flatten)]
    pub prior: LengthKind,
    #[serde(flatten)]
    pub noise: NoiseMode,
    pub delta2: f64,
    #[serde(default = "one")]
    pub activation_prob: f64,
    #[serde(default)]
    pub min_jump: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// `None` runs the exact filter.
    #[serde(default)]
    pub max_particles: Option<usize>,
}

fn one() -> f64 {
    1.0
}

type DemoResult<T> = Result<T, String>;

impl DemoParams {
    fn emission(&self) -> DemoResult<EmissionConfig> {
        EmissionConfig::white_noise(vec![self.delta2; self.d], self.noise).map_err(|e| e.to_string())
    }

    fn length_prior(&self) -> DemoResult<LengthPrior> {
        LengthPrior::new(self.prior).map_err(|e| e.to_string())
    }

    fn prune(&self) -> DemoResult<PruneSettings> {
        match self.max_particles {
            None => Ok(PruneSettings::exact()),
            Some(k) => PruneSettings::new(Some(k), DEFAULT_MIN_LOG_WEIGHT).map_err(|e| e.to_string()),
        }
    }
}

struct Run {
    cfg: EmissionConfig,
    sim: Simulation,
    state: FilterState,
    trace: FilterTrace,
}

fn simulate_and_filter(params: &DemoParams) -> DemoResult<Run> {
    if params.n == 0 || params.n > 5000 || params.d == 0 || params.d > 8 {
        return Err("the demo takes 1 ≤ n ≤ 5000 and 1 ≤ d ≤ 8".into());
    }
    let cfg = params.emission()?;
    let prior = params.length_prior()?;
    let settings = SimulationSettings {
        n: params.n,
        activation_prob: params.activation_prob,
        min_jump: params.min_jump,
    };
    let sim = simulate(&cfg, &prior, settings, params.seed).map_err(|e| e.to_string())?;
    let mut filter = Filter::new(cfg.clone(), prior, params.prune()?);
    for (y, m) in sim.ys.iter().zip(&sim.masks) {
        filter.step(y, m).map_err(|e| e.to_string())?;
    }
    let (state, trace) = filter.into_parts();
    Ok(Run { cfg, sim, state, trace })
}

/// Output of [`detect_demo`].
#[derive(Debug, Serialize)]
pub struct DetectReport {
    /// `ys[t-1][i]`, `null` where unobserved.
    pub ys: Vec<Vec<Option<f64>>>,
    pub truth: Vec<usize>,
    /// `P(t is a changepoint)` for `t = 2..=n`.
    pub marginals: Vec<(usize, f64)>,
    pub last_changepoint: Vec<(usize, f64)>,
    pub map_segments: Vec<SegmentSummary>,
    pub log_evidence: f64,
    /// Live particles after each date.
    pub particles: Vec<usize>,
    pub pruned_mass: f64,
}

/// Simulates a series and runs the detector on it.
pub fn detect_demo(params: &DemoParams) -> DemoResult<DetectReport> {
    let run = simulate_and_filter(params)?;
    let kernels = BackwardKernels::new(&run.trace).map_err(|e| e.to_string())?;
    let marginals = kernels.marginals();
    let map = kernels.map_segmentation().map_err(|e| e.to_string())?;
    let map_segments = summarize_segments(&run.cfg, &run.sim.ys, &run.sim.masks, &map).map_err(|e| e.to_string())?;
    Ok(DetectReport {
        ys: run
            .sim
            .ys
            .iter()
            .map(|row| row.iter().map(|v| v.is_finite().then_some(*v)).collect())
            .collect(),
        truth: run.sim.changepoints.clone(),
        marginals: marginals.probabilities,
        last_changepoint: marginals.last_changepoint.into_iter().collect(),
        map_segments,
        log_evidence: run.state.log_evidence,
        particles: run.trace.snapshots().iter().map(Vec::len).collect(),
        pruned_mass: run.trace.dropped_mass(),
    })
}

/// Output of [`length_prior_table`].
#[derive(Debug, Serialize)]
pub struct PriorTable {
    pub mean_length: f64,
    /// Rows `(t, g(t), g0(t), hazard of a segment aged t)`.
    pub rows: Vec<(usize, f64, f64, f64)>,
}

/// Segment-length and residual-length laws through `horizon`.
pub fn length_prior_table(kind: LengthKind, horizon: usize) -> DemoResult<PriorTable> {
    let prior = LengthPrior::new(kind).map_err(|e| e.to_string())?;
    let rows = (1..=horizon.clamp(1, 10_000))
        .map(|t| {
            let hazard = prior.hazard(t, false).map_err(|e| e.to_string())?;
            Ok((
                t,
                prior.mass(t).map_err(|e| e.to_string())?,
                prior.residual_mass(t).map_err(|e| e.to_string())?,
                hazard.change,
            ))
        })
        .collect::<DemoResult<_>>()?;
    Ok(PriorTable { mean_length: prior.mean_length(), rows })
}

/// `P(μ_component ≤ θ | y)` for the last segment over a grid of `θ`, on the
/// series [`detect_demo`] would draw with the same parameters.
pub fn risk_curve(params: &DemoParams, component: usize, thetas: &[f64]) -> DemoResult<Vec<(f64, f64)>> {
    if component >= params.d {
        return Err(format!("component must be below d = {}", params.d));
    }
    let run = simulate_and_filter(params)?;
    let mut v = vec![0.0; params.d];
    v[component] = 1.0;
    thetas
        .iter()
        .map(|&theta| {
            let query = RiskQuery::parameter(v.clone(), theta);
            last_segment_risk(&run.state, &run.cfg, &query)
                .map(|p| (theta, p))
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn parse<T: for<'de> Deserialize<'de>>(json: &str) -> Result<T, JsValue> {
    serde_json::from_str(json).map_err(|e| JsValue::from_str(&format!("bad parameters: {e}")))
}

fn emit<T: Serialize>(out: DemoResult<T>) -> Result<String, JsValue> {
    let value = out.map_err(|e| JsValue::from_str(&e))?;
    serde_json::to_string(&value).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen]
pub fn detect(params_json: &str) -> Result<String, JsValue> {
    emit(detect_demo(&parse(params_json)?))
}

#[wasm_bindgen]
pub fn prior_table(kind_json: &str, horizon: usize) -> Result<String, JsValue> {
    emit(length_prior_table(parse(kind_json)?, horizon))
}

#[wasm_bindgen]
pub fn risk(params_json: &str, component: usize, thetas: Vec<f64>) -> Result<String, JsValue> {
    emit(risk_curve(&parse(params_json)?, component, &thetas))
}
