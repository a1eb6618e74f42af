// SPDX-License-Identifier: MIT OR Apache-2.0

//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. Values are numbers, bare or
//! quoted strings, or JSON-style bracketed lists; matrices are row-major,
//! either nested (`[[1, 0], [0, 1]]`) or flat. Unknown keys are rejected.
//!
//! ```text
//! prior.kind = negbin
//! prior.r = 3
//! prior.p = 0.06
//! model.d = 2
//! model.delta2 = [16, 16]
//! model.noise = invgamma
//! model.nu = 3
//! model.gamma = 1
//! filter.max_particles = 128
//! ```

use crate::error::{CliError, CliResult};
use nalgebra::DMatrix;
use renewcp::emission::{EmissionConfig, NoiseMode, RiskQuery};
use renewcp::filter::{PruneSettings, DEFAULT_MAX_PARTICLES, DEFAULT_MIN_LOG_WEIGHT};
use renewcp::length_prior::{LengthKind, LengthPrior};
use renewcp::masked_linalg::CovarianceSpec;
use renewcp::simulate::SimulationSettings;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

pub const KNOWN_KEYS: &[&str] = &[
    "prior.kind",
    "prior.p",
    "prior.r",
    "model.d",
    "model.q",
    "model.H0",
    "model.Sigma0",
    "model.delta2",
    "model.noise",
    "model.sigma2",
    "model.nu",
    "model.gamma",
    "filter.max_particles",
    "filter.min_log_weight",
    "risk.v",
    "risk.theta",
    "risk.space",
    "simulate.n",
    "simulate.activation_prob",
    "simulate.min_jump",
    "seed",
];

/// Validated configuration of a run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub prior: LengthKind,
    pub emission: EmissionConfig,
    pub prune: PruneSettings,
    pub risk: Option<RiskQuery>,
    pub seed: u64,
    pub simulate_n: Option<usize>,
    pub activation_prob: f64,
    pub min_jump: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let raw = parse_assignments(text)?;
        Self::from_map(&Keys(raw))
    }

    pub fn length_prior(&self) -> LengthPrior {
        LengthPrior::new(self.prior).expect("validated at load")
    }

    pub fn simulation(&self, n: usize) -> SimulationSettings {
        SimulationSettings {
            n,
            activation_prob: self.activation_prob,
            min_jump: self.min_jump,
        }
    }

    fn from_map(keys: &Keys) -> CliResult<Self> {
        let prior = match keys.string("prior.kind")?.as_deref() {
            Some("geometric") => LengthKind::Geometric { p: keys.required_f64("prior.p")? },
            Some("negbin") => LengthKind::NegativeBinomial {
                r: keys.integer("prior.r")?.unwrap_or(1) as u32,
                p: keys.required_f64("prior.p")?,
            },
            Some(other) => {
                return Err(CliError::config("prior.kind", format!("expected geometric or negbin, got `{other}`")))
            }
            None => return Err(CliError::config("prior.kind", "missing")),
        };
        if let LengthKind::Geometric { .. } = prior {
            if keys.0.contains_key("prior.r") {
                return Err(CliError::config("prior.r", "only meaningful for prior.kind = negbin"));
            }
        }
        LengthPrior::new(prior).map_err(|e| CliError::config("prior.p", e.to_string()))?;

        let d = keys
            .integer("model.d")?
            .ok_or_else(|| CliError::config("model.d", "missing"))? as usize;
        if d == 0 {
            return Err(CliError::config("model.d", "must be at least 1"));
        }
        let q = keys.integer("model.q")?.map_or(d, |v| v as usize);
        if q == 0 || q > d {
            return Err(CliError::config("model.q", format!("must lie in 1..=d = {d}")));
        }
        let h0 = match keys.matrix("model.H0", d, q)? {
            Some(m) => m,
            None if q == d => DMatrix::identity(d, d),
            None => return Err(CliError::config("model.H0", "required when q < d")),
        };
        let sigma0 = keys.matrix("model.Sigma0", d, d)?.unwrap_or_else(|| DMatrix::identity(d, d));
        let cov = CovarianceSpec::new(sigma0).map_err(|e| CliError::config("model.Sigma0", e.to_string()))?;
        let delta2 = keys
            .vector("model.delta2", q)?
            .ok_or_else(|| CliError::config("model.delta2", "missing"))?;
        let noise = match keys.string("model.noise")?.as_deref() {
            Some("fixed") => {
                for k in ["model.nu", "model.gamma"] {
                    if keys.0.contains_key(k) {
                        return Err(CliError::config(k, "not used with model.noise = fixed"));
                    }
                }
                NoiseMode::Fixed { sigma2: keys.required_f64("model.sigma2")? }
            }
            Some("invgamma") => {
                if keys.0.contains_key("model.sigma2") {
                    return Err(CliError::config("model.sigma2", "not used with model.noise = invgamma"));
                }
                NoiseMode::InverseGamma {
                    nu: keys.required_f64("model.nu")?,
                    gamma: keys.required_f64("model.gamma")?,
                }
            }
            Some(other) => {
                return Err(CliError::config("model.noise", format!("expected fixed or invgamma, got `{other}`")))
            }
            None => return Err(CliError::config("model.noise", "missing")),
        };
        let emission = EmissionConfig::new(h0, cov, delta2, noise).map_err(|e| {
            let key = match noise {
                NoiseMode::Fixed { .. } => "model.sigma2",
                NoiseMode::InverseGamma { .. } => "model.nu",
            };
            let msg = e.to_string();
            let key = if msg.contains("prior scale") {
                "model.delta2"
            } else if msg.contains("H0") {
                "model.H0"
            } else {
                key
            };
            CliError::config(key, e.to_string())
        })?;

        let max_particles = match keys.0.get("filter.max_particles") {
            None => Some(DEFAULT_MAX_PARTICLES),
            Some(v) => parse_max_particles(v).map_err(|d| CliError::config("filter.max_particles", d))?,
        };
        let min_log_weight = match keys.0.get("filter.min_log_weight") {
            None => DEFAULT_MIN_LOG_WEIGHT,
            Some(Value::String(s)) if s == "-inf" => f64::NEG_INFINITY,
            Some(_) => keys.required_f64("filter.min_log_weight")?,
        };
        let prune = PruneSettings::new(max_particles, min_log_weight)
            .map_err(|e| CliError::config("filter.min_log_weight", e.to_string()))?;

        let risk = match (keys.0.contains_key("risk.v"), keys.0.contains_key("risk.theta")) {
            (false, false) => {
                if keys.0.contains_key("risk.space") {
                    return Err(CliError::config("risk.space", "requires risk.v and risk.theta"));
                }
                None
            }
            (true, false) => return Err(CliError::config("risk.theta", "missing while risk.v is set")),
            (false, true) => return Err(CliError::config("risk.v", "missing while risk.theta is set")),
            (true, true) => {
                let theta = keys.required_f64("risk.theta")?;
                let query = match keys.string("risk.space")?.as_deref() {
                    None | Some("parameter") => RiskQuery::parameter(keys.vector("risk.v", q)?.expect("present"), theta),
                    Some("prediction") => RiskQuery::prediction(keys.vector("risk.v", d)?.expect("present"), theta),
                    Some(other) => {
                        return Err(CliError::config("risk.space", format!("expected parameter or prediction, got `{other}`")))
                    }
                };
                query
                    .parameter_direction(&emission)
                    .map_err(|e| CliError::config("risk.v", e.to_string()))?;
                Some(query)
            }
        };

        let seed = keys.integer("seed")?.unwrap_or(0);
        let simulate_n = keys.integer("simulate.n")?.map(|v| v as usize);
        let activation_prob = keys.f64("simulate.activation_prob")?.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&activation_prob) {
            return Err(CliError::config("simulate.activation_prob", "must lie in [0, 1]"));
        }
        let min_jump = keys.f64("simulate.min_jump")?;
        if min_jump.is_some_and(|j| j < 0.0) {
            return Err(CliError::config("simulate.min_jump", "must be nonnegative"));
        }
        Ok(Self {
            prior,
            emission,
            prune,
            risk,
            seed,
            simulate_n,
            activation_prob,
            min_jump,
        })
    }
}

/// `"inf"`/`"none"` disable the cap.
pub fn parse_max_particles(v: &Value) -> Result<Option<usize>, String> {
    match v {
        Value::String(s) if s == "inf" || s == "none" => Ok(None),
        Value::Number(n) => match n.as_u64() {
            Some(k) if k >= 2 => Ok(Some(k as usize)),
            _ => Err(format!("expected an integer >= 2 or `inf`, got {n}")),
        },
        other => Err(format!("expected an integer >= 2 or `inf`, got {other}")),
    }
}

fn parse_assignments(text: &str) -> CliResult<BTreeMap<String, Value>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::config(line, format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(CliError::config(key, format!("line {}: unknown key", lineno + 1)));
        }
        let value = parse_value(value.trim());
        if out.insert(key.to_string(), value).is_some() {
            return Err(CliError::config(key, format!("line {}: duplicate key", lineno + 1)));
        }
    }
    Ok(out)
}

pub fn parse_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.trim_matches(['"', '\'']).to_string()))
}

struct Keys(BTreeMap<String, Value>);

impl Keys {
    fn f64(&self, key: &str) -> CliResult<Option<f64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) => Ok(n.as_f64()),
            Some(other) => Err(CliError::config(key, format!("expected a number, got {other}"))),
        }
    }

    fn required_f64(&self, key: &str) -> CliResult<f64> {
        self.f64(key)?.ok_or_else(|| CliError::config(key, "missing"))
    }

    fn integer(&self, key: &str) -> CliResult<Option<u64>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Number(n)) if n.as_u64().is_some() => Ok(n.as_u64()),
            Some(other) => Err(CliError::config(key, format!("expected a nonnegative integer, got {other}"))),
        }
    }

    fn string(&self, key: &str) -> CliResult<Option<String>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(CliError::config(key, format!("expected a word, got {other}"))),
        }
    }

    /// A list of `len` numbers; a single number is broadcast.
    fn vector(&self, key: &str, len: usize) -> CliResult<Option<Vec<f64>>> {
        let Some(v) = self.0.get(key) else { return Ok(None) };
        let values = match v {
            Value::Number(n) => vec![n.as_f64().unwrap_or(f64::NAN); len],
            Value::Array(items) => items
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| CliError::config(key, format!("non-numeric entry {x}"))))
                .collect::<CliResult<_>>()?,
            other => return Err(CliError::config(key, format!("expected a list of numbers, got {other}"))),
        };
        if values.len() != len {
            return Err(CliError::config(key, format!("expected {len} entries, got {}", values.len())));
        }
        Ok(Some(values))
    }

    fn matrix(&self, key: &str, rows: usize, cols: usize) -> CliResult<Option<DMatrix<f64>>> {
        let Some(v) = self.0.get(key) else { return Ok(None) };
        let flat: Vec<f64> = match v {
            Value::Array(items) if items.iter().all(Value::is_array) => {
                if items.len() != rows {
                    return Err(CliError::config(key, format!("expected {rows} rows, got {}", items.len())));
                }
                let mut flat = Vec::with_capacity(rows * cols);
                for row in items {
                    let row = row.as_array().expect("checked");
                    if row.len() != cols {
                        return Err(CliError::config(key, format!("expected rows of {cols} entries")));
                    }
                    for x in row {
                        flat.push(x.as_f64().ok_or_else(|| CliError::config(key, format!("non-numeric entry {x}")))?);
                    }
                }
                flat
            }
            _ => self.vector(key, rows * cols)?.expect("present"),
        };
        Ok(Some(DMatrix::from_row_slice(rows, cols, &flat)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "prior.kind = geometric\nprior.p = 0.1\nmodel.d = 2\nmodel.delta2 = [4, 9]\nmodel.noise = fixed\nmodel.sigma2 = 1\n";

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = RunConfig::parse(BASE).unwrap();
        assert_eq!(cfg.emission.d(), 2);
        assert_eq!(cfg.emission.prior_scale(), &[4.0, 9.0]);
        assert_eq!(cfg.prune, PruneSettings::default());
        assert!(cfg.risk.is_none());
        assert_eq!(cfg.seed, 0);
    }

    #[test]
    fn parses_matrices_risk_and_filter() {
        let text = "# comment\nprior.kind = negbin\nprior.r = 3\nprior.p = 0.2\nmodel.d = 2\nmodel.q = 1\n\
                    model.H0 = [[1], [0.5]]\nmodel.Sigma0 = [2, 0.3, 0.3, 1]\nmodel.delta2 = 16\n\
                    model.noise = invgamma\nmodel.nu = 3\nmodel.gamma = 1\nfilter.max_particles = inf\n\
                    filter.min_log_weight = -inf\nrisk.v = [1, 1]\nrisk.space = prediction\nrisk.theta = -0.5\nseed = 42\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.emission.h0()[(1, 0)], 0.5);
        assert_eq!(cfg.emission.cov().matrix()[(0, 1)], 0.3);
        assert!(cfg.prune.is_exact());
        assert_eq!(cfg.risk, Some(RiskQuery::prediction(vec![1.0, 1.0], -0.5)));
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.prior, LengthKind::NegativeBinomial { r: 3, p: 0.2 });
    }

    fn key_of(text: &str) -> String {
        match RunConfig::parse(text).unwrap_err() {
            CliError::Config { key, .. } => key,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(&format!("{BASE}model.bogus = 1\n")), "model.bogus");
        assert_eq!(key_of(&BASE.replace("[4, 9]", "[4]")), "model.delta2");
        assert_eq!(key_of(&BASE.replace("prior.p = 0.1", "prior.p = 1.5")), "prior.p");
        assert_eq!(key_of(&BASE.replace("model.sigma2 = 1\n", "")), "model.sigma2");
        assert_eq!(key_of(&format!("{BASE}model.Sigma0 = [[1, 2], [2, 1]]\n")), "model.Sigma0");
        assert_eq!(key_of(&format!("{BASE}filter.max_particles = 1\n")), "filter.max_particles");
        assert_eq!(key_of(&format!("{BASE}risk.v = [1, 0]\n")), "risk.theta");
        assert_eq!(key_of(&format!("{BASE}seed = 1\nseed = 2\n")), "seed");
        assert_eq!(key_of(&format!("{BASE}model.nu = 2\n")), "model.nu");
        assert_eq!(RunConfig::parse("prior.kind geometric").unwrap_err().exit_code(), 3);
    }
}
