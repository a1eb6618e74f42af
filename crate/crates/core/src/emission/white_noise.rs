// SPDX-License-Identifier: MIT OR Apache-2.0

//! Step-function model with `Σ0 = I` and `H0 = I`: every quantity reduces to
//! per-component counts `n_i`, sums and sums of squares of the observed
//! values, which handles missing dates for free.

use super::NoiseMode;
use crate::error::{Error, Result};
use crate::masked_linalg::ObservationMask;
use crate::numerics::{ln_gamma_positive, LogProb};
use std::f64::consts::PI;

/// Per-component running sums of one segment.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteNoiseStats {
    pub count: Vec<usize>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

/// Closed-form posterior summaries of a white-noise segment.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteNoiseSummary {
    /// Diagonal of `M_Π`: `δ²/(1 + nδ²)`.
    pub m_diag: Vec<f64>,
    pub log_det_m: f64,
    pub residual: f64,
    pub mu_hat: Vec<f64>,
}

impl WhiteNoiseStats {
    pub fn new(d: usize) -> Self {
        Self {
            count: vec![0; d],
            sum: vec![0.0; d],
            sum_sq: vec![0.0; d],
        }
    }

    pub fn push(&mut self, y: &[f64], mask: &ObservationMask) -> Result<()> {
        if y.len() != self.count.len() || mask.dim() != self.count.len() {
            return Err(Error::contract("white-noise statistics dimension mismatch"));
        }
        for (i, v) in y.iter().enumerate() {
            if mask.is_observed(i) {
                self.count[i] += 1;
                self.sum[i] += v;
                self.sum_sq[i] += v * v;
            }
        }
        Ok(())
    }

    pub fn observed_total(&self) -> usize {
        self.count.iter().sum()
    }

    pub fn summary(&self, prior_scale: &[f64]) -> Result<WhiteNoiseSummary> {
        if prior_scale.len() != self.count.len() {
            return Err(Error::contract("prior scale length differs from the signal dimension"));
        }
        let d = self.count.len();
        let mut m_diag = Vec::with_capacity(d);
        let mut mu_hat = Vec::with_capacity(d);
        let mut residual = 0.0;
        for i in 0..d {
            let delta2 = prior_scale[i];
            let n = self.count[i] as f64;
            let n_delta2 = n * delta2;
            m_diag.push(delta2 / (1.0 + n_delta2));
            if self.count[i] == 0 {
                mu_hat.push(0.0);
                continue;
            }
            let mean = self.sum[i] / n;
            let mean_sq = self.sum_sq[i] / n;
            // Shrinkage written as nδ²/(1+nδ²) to avoid 1 - 1/(1+nδ²) cancellation.
            mu_hat.push(n_delta2 / (1.0 + n_delta2) * mean);
            residual += n * (mean_sq - mean * mean + mean * mean / (1.0 + n_delta2));
        }
        Ok(WhiteNoiseSummary {
            log_det_m: m_diag.iter().map(|v| v.ln()).sum(),
            m_diag,
            residual: residual.max(0.0),
            mu_hat,
        })
    }

    /// Segment marginal likelihood from the closed forms.
    pub fn log_marginal(&self, prior_scale: &[f64], noise: NoiseMode) -> Result<LogProb> {
        let summary = self.summary(prior_scale)?;
        let m = self.observed_total() as f64;
        if m == 0.0 {
            return Ok(LogProb::CERTAIN);
        }
        let log_det_d: f64 = prior_scale.iter().map(|v| v.ln()).sum();
        let common = 0.5 * (summary.log_det_m - log_det_d);
        let value = match noise {
            NoiseMode::Fixed { sigma2 } => {
                common - 0.5 * m * (2.0 * PI * sigma2).ln() - 0.5 * summary.residual / sigma2
            }
            NoiseMode::InverseGamma { nu, gamma } => {
                common - 0.5 * m * PI.ln() + ln_gamma_positive(0.5 * (m + nu))
                    - ln_gamma_positive(0.5 * nu)
                    + 0.5 * nu * gamma.ln()
                    - 0.5 * (m + nu) * (gamma + summary.residual).ln()
            }
        };
        LogProb::new(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::{log_marginal_likelihood, posterior, EmissionConfig};
    use crate::masked_linalg::accumulate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn closed_forms_match_matrix_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..60 {
            let d = rng.random_range(1..=4);
            let scale: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..10.0)).collect();
            let noise = if case % 2 == 0 {
                NoiseMode::Fixed { sigma2: rng.random_range(0.2..2.0) }
            } else {
                NoiseMode::InverseGamma { nu: 2.0, gamma: 1.0 }
            };
            let cfg = EmissionConfig::white_noise(scale.clone(), noise).unwrap();
            let mut fast = WhiteNoiseStats::new(d);
            let mut stats = cfg.empty_stats();
            for _ in 0..rng.random_range(1..20) {
                let mask = ObservationMask::new((0..d).map(|_| rng.random_bool(0.6)).collect());
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
                fast.push(&y, &mask).unwrap();
                stats = accumulate(&stats, &y, &mask, cfg.h0(), cfg.cov()).unwrap();
            }
            let summary = fast.summary(&scale).unwrap();
            let post = posterior(&cfg, &stats).unwrap();
            for i in 0..d {
                assert!((summary.mu_hat[i] - post.mu_hat[i]).abs() < 1e-10);
                assert!((summary.m_diag[i] - post.m[(i, i)]).abs() < 1e-10);
            }
            assert!((summary.residual - post.residual).abs() < 1e-10 * (1.0 + post.residual));
            let a = fast.log_marginal(&scale, noise).unwrap().value();
            let b = log_marginal_likelihood(&cfg, &stats).unwrap().value();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn unobserved_component_keeps_prior() {
        let mut fast = WhiteNoiseStats::new(2);
        fast.push(&[1.0, f64::NAN], &ObservationMask::new(vec![true, false])).unwrap();
        let summary = fast.summary(&[2.0, 3.0]).unwrap();
        assert_eq!(summary.mu_hat[1], 0.0);
        assert_eq!(summary.m_diag[1], 3.0);
        assert!((summary.mu_hat[0] - 2.0 / 3.0).abs() < 1e-15);
    }
}
