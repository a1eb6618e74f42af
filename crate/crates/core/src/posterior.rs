// SPDX-License-Identifier: MIT OR Apache-2.0

//! Backward passes over a [`FilterTrace`].
//!
//! Given a changepoint at `j`, the previous changepoint `i < j` has law
//! `P(i | j, y_1..n) ∝ p_{j-1}(i) · change(j - i)`, where the hazard uses the
//! residual law when `i = 1`. Under a geometric prior the hazard factor is
//! constant (except for the first segment) and the kernel is simply `p_{j-1}`.
//! Every pass below (MAP chain, sampling, marginals) uses this kernel.

use crate::emission::{posterior, risk_log_probability, EmissionConfig, RiskQuery, Sigma2Posterior};
use crate::error::{Error, Result};
use crate::filter::{FilterState, FilterTrace};
use crate::masked_linalg::ObservationMask;
use crate::numerics::log_sum_exp;
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeMap;

/// Normalization slack above which a backward step logs a warning.
pub const NORMALIZATION_WARNING: f64 = 1e-6;

/// Changepoints of a segmentation of `1..=n`; always starts with 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Segmentation {
    pub changepoints: Vec<usize>,
    pub n: usize,
}

impl Segmentation {
    pub fn new(changepoints: Vec<usize>, n: usize) -> Result<Self> {
        if changepoints.first() != Some(&1) {
            return Err(Error::contract("a segmentation starts at date 1"));
        }
        if changepoints.windows(2).any(|w| w[0] >= w[1]) || changepoints.last() > Some(&n) {
            return Err(Error::contract("changepoints must increase and lie in 1..=n"));
        }
        Ok(Self { changepoints, n })
    }

    /// Inclusive `(start, end)` pairs.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.changepoints.len());
        for (k, &start) in self.changepoints.iter().enumerate() {
            let end = self.changepoints.get(k + 1).map_or(self.n, |next| next - 1);
            out.push((start, end));
        }
        out
    }
}

/// Marginal changepoint probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalReport {
    /// `(t, P(t is a changepoint | y))` for `t = 2..=n`.
    pub probabilities: Vec<(usize, f64)>,
    /// `p_n(j)`.
    pub last_changepoint: BTreeMap<usize, f64>,
}

/// Precomputed backward transition kernels, one per possible changepoint.
#[derive(Clone, Debug)]
pub struct BackwardKernels {
    n: usize,
    last: Vec<(usize, f64)>,
    // kernels[j - 2]: (i, P(i | j)) for j = 2..=n, probabilities normalized.
    kernels: Vec<Vec<(usize, f64)>>,
}

impl BackwardKernels {
    pub fn new(trace: &FilterTrace) -> Result<Self> {
        let n = trace.len();
        if n == 0 {
            return Err(Error::contract("backward pass over an empty trace"));
        }
        let last = linear(trace.snapshot(n).expect("n >= 1"), n)?;
        let mut kernels = Vec::with_capacity(n.saturating_sub(1));
        for j in 2..=n {
            let snap = trace.snapshot(j - 1).expect("j - 1 in 1..n");
            let mut logs = Vec::with_capacity(snap.len());
            for &(i, lw) in snap {
                let hazard = trace.prior().hazard(j - i, i == 1)?;
                logs.push((i, lw + hazard.change.ln()));
            }
            let values: Vec<f64> = logs.iter().map(|(_, v)| *v).collect();
            let norm = log_sum_exp(&values);
            let kernel = if norm.is_finite() {
                logs.iter()
                    .map(|&(i, v)| (i, (v - norm).exp()))
                    .filter(|(_, p)| *p > 0.0)
                    .collect()
            } else {
                Vec::new()
            };
            kernels.push(kernel);
        }
        Ok(Self { n, last, kernels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `p_n(j)` as probabilities.
    pub fn last(&self) -> &[(usize, f64)] {
        &self.last
    }

    /// Law of the changepoint preceding one at `j >= 2`.
    pub fn kernel(&self, j: usize) -> &[(usize, f64)] {
        &self.kernels[j - 2]
    }

    fn predecessor_kernel(&self, j: usize) -> Result<&[(usize, f64)]> {
        let k = self.kernel(j);
        if k.is_empty() {
            return Err(Error::numerical(format!(
                "no surviving predecessor for a changepoint at date {j}"
            )));
        }
        Ok(k)
    }

    /// Greedy backward argmax chain; ties go to the earlier changepoint.
    pub fn map_segmentation(&self) -> Result<Segmentation> {
        let mut cps = vec![argmax(&self.last)];
        while let Some(&j) = cps.last().filter(|j| **j > 1) {
            cps.push(argmax(self.predecessor_kernel(j)?));
        }
        cps.reverse();
        Segmentation::new(cps, self.n)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Segmentation> {
        let mut cps = vec![draw(&self.last, rng)];
        while let Some(&j) = cps.last().filter(|j| **j > 1) {
            cps.push(draw(self.predecessor_kernel(j)?, rng));
        }
        cps.reverse();
        Segmentation::new(cps, self.n)
    }

    pub fn marginals(&self) -> MarginalReport {
        let mut marg = vec![0.0; self.n + 1];
        for &(j, p) in &self.last {
            marg[j] += p;
        }
        for j in (2..=self.n).rev() {
            let mass = marg[j];
            if mass == 0.0 {
                continue;
            }
            for &(i, p) in self.kernel(j) {
                marg[i] += p * mass;
            }
        }
        MarginalReport {
            probabilities: (2..=self.n).map(|t| (t, marg[t].clamp(0.0, 1.0))).collect(),
            last_changepoint: self.last.iter().copied().collect(),
        }
    }
}

fn linear(snapshot: &[(usize, f64)], t: usize) -> Result<Vec<(usize, f64)>> {
    let out: Vec<(usize, f64)> = snapshot.iter().map(|&(j, lw)| (j, lw.exp())).collect();
    let total: f64 = out.iter().map(|(_, p)| p).sum();
    if total <= 0.0 {
        return Err(Error::numerical(format!("filter snapshot at date {t} has no mass")));
    }
    if (total - 1.0).abs() > NORMALIZATION_WARNING {
        log::warn!("filter snapshot at date {t} sums to {total}");
    }
    Ok(out)
}

fn argmax(pairs: &[(usize, f64)]) -> usize {
    let mut best = pairs[0];
    for &(j, p) in &pairs[1..] {
        if p > best.1 || (p == best.1 && j < best.0) {
            best = (j, p);
        }
    }
    best.0
}

fn draw<R: Rng + ?Sized>(pairs: &[(usize, f64)], rng: &mut R) -> usize {
    let total: f64 = pairs.iter().map(|(_, p)| p).sum();
    let mut u = rng.random::<f64>() * total;
    for &(j, p) in pairs {
        if u < p {
            return j;
        }
        u -= p;
    }
    pairs.last().expect("nonempty").0
}

/// Greedy MAP segmentation (see [`BackwardKernels::map_segmentation`]).
pub fn map_segmentation(trace: &FilterTrace) -> Result<Segmentation> {
    BackwardKernels::new(trace)?.map_segmentation()
}

/// One exact posterior draw, reproducible from `seed`.
pub fn sample_segmentation(trace: &FilterTrace, seed: u64) -> Result<Segmentation> {
    let mut rng = crate::rng::stream(seed, crate::rng::streams::POSTERIOR_SAMPLING);
    BackwardKernels::new(trace)?.sample(&mut rng)
}

pub fn marginal_changepoint_probabilities(trace: &FilterTrace) -> Result<MarginalReport> {
    Ok(BackwardKernels::new(trace)?.marginals())
}

/// `P(vᵀμ ≤ θ | y_1..n)` for the current segment, mixing over the live particles.
pub fn last_segment_risk(state: &FilterState, cfg: &EmissionConfig, query: &RiskQuery) -> Result<f64> {
    if state.particles.is_empty() {
        return Err(Error::contract("risk requires at least one observation"));
    }
    let mut total = 0.0;
    let mut mass = 0.0;
    for p in &state.particles {
        let w = p.log_weight.prob();
        mass += w;
        if w > 0.0 {
            total += w * risk_log_probability(cfg, &p.stats, query)?.prob();
        }
    }
    Ok((total / mass).clamp(0.0, 1.0))
}

/// Posterior summary of one segment of a segmentation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub start: usize,
    pub end: usize,
    pub mu_hat: Vec<f64>,
    /// `E[σ² | y]`; `None` when the posterior mean does not exist.
    pub sigma2_mean: Option<f64>,
}

/// Per-segment posterior summaries; `ys[t-1]`, `masks[t-1]` hold date `t`.
pub fn summarize_segments(
    cfg: &EmissionConfig,
    ys: &[Vec<f64>],
    masks: &[ObservationMask],
    segmentation: &Segmentation,
) -> Result<Vec<SegmentSummary>> {
    if ys.len() != segmentation.n || masks.len() != segmentation.n {
        return Err(Error::contract("series length differs from the segmentation"));
    }
    segmentation
        .segments()
        .into_iter()
        .map(|(start, end)| {
            let mut stats = cfg.empty_stats();
            for t in start..=end {
                stats.absorb(&cfg.contribution(&ys[t - 1], &masks[t - 1]).map_err(|e| e.at_date(t))?);
            }
            let post = posterior(cfg, &stats)?;
            let sigma2_mean = match post.sigma2 {
                Sigma2Posterior::Fixed { sigma2 } => Some(sigma2),
                Sigma2Posterior::InverseGamma { .. } => post.sigma2_mean().ok(),
            };
            Ok(SegmentSummary {
                start,
                end,
                mu_hat: post.mu_hat.iter().copied().collect(),
                sigma2_mean,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::NoiseMode;
    use crate::filter::Filter;
    use crate::length_prior::LengthPrior;

    fn run(ys: &[f64], prior: LengthPrior) -> Filter {
        let cfg = EmissionConfig::white_noise(vec![4.0], NoiseMode::Fixed { sigma2: 1.0 }).unwrap();
        let mut f = Filter::exact(cfg, prior);
        for y in ys {
            f.step(&[*y], &ObservationMask::all(1)).unwrap();
        }
        f
    }

    #[test]
    fn single_date() {
        let f = run(&[0.3], LengthPrior::geometric(0.5).unwrap());
        assert_eq!(map_segmentation(f.trace()).unwrap().changepoints, vec![1]);
        assert!(marginal_changepoint_probabilities(f.trace()).unwrap().probabilities.is_empty());
    }

    #[test]
    fn clear_jump_is_found() {
        let ys = [0.1, -0.2, 0.0, 0.3, -0.1, 8.0, 8.2, 7.9, 8.1, 7.8];
        let f = run(&ys, LengthPrior::geometric(0.05).unwrap());
        let map = map_segmentation(f.trace()).unwrap();
        assert_eq!(map.changepoints, vec![1, 6]);
        assert_eq!(map.segments(), vec![(1, 5), (6, 10)]);
        let report = marginal_changepoint_probabilities(f.trace()).unwrap();
        assert!(report.probabilities[4].1 > 0.99);
        for &(t, p) in &report.probabilities {
            assert!((0.0..=1.0).contains(&p), "t = {t}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let ys = [0.1, 1.2, -0.4, 0.9, 2.0, -1.0];
        let f = run(&ys, LengthPrior::negative_binomial(2, 0.4).unwrap());
        let a = sample_segmentation(f.trace(), 3).unwrap();
        assert_eq!(a, sample_segmentation(f.trace(), 3).unwrap());
        let k = BackwardKernels::new(f.trace()).unwrap();
        let mut rng = crate::rng::stream(11, 0);
        let draws: std::collections::HashSet<_> = (0..200).map(|_| k.sample(&mut rng).unwrap()).collect();
        assert!(draws.len() > 1);
    }

    #[test]
    fn risk_limits_and_single_particle() {
        let cfg = EmissionConfig::white_noise(vec![4.0], NoiseMode::InverseGamma { nu: 3.0, gamma: 1.0 }).unwrap();
        let mut f = Filter::exact(cfg.clone(), LengthPrior::geometric(0.2).unwrap());
        f.step(&[0.5], &ObservationMask::all(1)).unwrap();
        let q = RiskQuery::parameter(vec![1.0], 0.2);
        let single = last_segment_risk(f.state(), &cfg, &q).unwrap();
        let direct = risk_log_probability(&cfg, &f.state().particles[0].stats, &q).unwrap().prob();
        assert!((single - direct).abs() < 1e-15);
        for y in [0.7, 3.0, 2.8] {
            f.step(&[y], &ObservationMask::all(1)).unwrap();
        }
        let lo = last_segment_risk(f.state(), &cfg, &RiskQuery::parameter(vec![1.0], -1e9)).unwrap();
        let hi = last_segment_risk(f.state(), &cfg, &RiskQuery::parameter(vec![1.0], 1e9)).unwrap();
        assert!(lo < 1e-12 && hi > 1.0 - 1e-12);
        let mut prev = 0.0;
        for k in -40..=40 {
            let r = last_segment_risk(f.state(), &cfg, &RiskQuery::parameter(vec![1.0], k as f64 * 0.1)).unwrap();
            assert!(r >= prev - 1e-15);
            prev = r;
        }
    }

    #[test]
    fn empty_trace_is_rejected() {
        let trace = FilterTrace::new(LengthPrior::geometric(0.5).unwrap());
        assert!(matches!(map_segmentation(&trace), Err(Error::Contract(_))));
    }

    #[test]
    fn segment_summaries() {
        let cfg = EmissionConfig::white_noise(vec![1.0], NoiseMode::Fixed { sigma2: 1.0 }).unwrap();
        let ys = vec![vec![1.0], vec![3.0], vec![f64::NAN]];
        let masks = vec![ObservationMask::all(1), ObservationMask::all(1), ObservationMask::none(1)];
        let seg = Segmentation::new(vec![1, 3], 3).unwrap();
        let s = summarize_segments(&cfg, &ys, &masks, &seg).unwrap();
        assert!((s[0].mu_hat[0] - 2.0 * 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s[1].mu_hat[0], 0.0);
        assert_eq!(s[1].sigma2_mean, Some(1.0));
    }
}
