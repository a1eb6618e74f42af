// SPDX-License-Identifier: MIT OR Apache-2.0

//! Exact posterior over all `2^(n-1)` segmentations, by bitmask enumeration.
//! Segment likelihoods come from the stacked-matrix evaluator, so nothing is
//! shared with the streaming path except the model definition.

use crate::emission::batch::{batch_log_marginal, BatchProblem, BatchResult};
use crate::emission::{EmissionConfig, NoiseMode, RiskQuery};
use crate::error::{Error, Result};
use crate::length_prior::LengthPrior;
use crate::masked_linalg::ObservationMask;
use crate::numerics::{log_sum_exp, normal_cdf, student_t_cdf};
use crate::posterior::Segmentation;
use std::collections::BTreeMap;

/// Largest series the enumeration accepts.
pub const MAX_EXACT_LENGTH: usize = 16;

/// One segmentation with its prior and posterior log-masses.
#[derive(Clone, Debug)]
pub struct WeightedSegmentation {
    pub segmentation: Segmentation,
    pub log_prior: f64,
    pub log_posterior: f64,
}

/// Exact posterior of a short series.
#[derive(Clone, Debug)]
pub struct ExactPosterior {
    n: usize,
    cfg: EmissionConfig,
    /// `segments[i-1][j-i]`: the batch result for dates `i..=j`.
    segments: Vec<Vec<BatchResult>>,
    pub segmentations: Vec<WeightedSegmentation>,
    pub log_evidence: f64,
}

impl ExactPosterior {
    pub fn n(&self) -> usize {
        self.n
    }

    fn segment(&self, i: usize, j: usize) -> &BatchResult {
        &self.segments[i - 1][j - i]
    }

    fn weighted(&self) -> impl Iterator<Item = (&Segmentation, f64)> {
        self.segmentations
            .iter()
            .filter(|w| w.log_posterior > f64::NEG_INFINITY)
            .map(|w| (&w.segmentation, w.log_posterior.exp()))
    }

    /// `(t, P(t is a changepoint))` for `t = 2..=n`.
    pub fn marginals(&self) -> Vec<(usize, f64)> {
        let mut marg = vec![0.0; self.n + 1];
        for (s, p) in self.weighted() {
            for &t in &s.changepoints[1..] {
                marg[t] += p;
            }
        }
        (2..=self.n).map(|t| (t, marg[t])).collect()
    }

    /// Law of the start of the last segment.
    pub fn last_changepoint(&self) -> BTreeMap<usize, f64> {
        let mut law = BTreeMap::new();
        for (s, p) in self.weighted() {
            *law.entry(*s.changepoints.last().expect("nonempty")).or_insert(0.0) += p;
        }
        law
    }

    /// Most probable segmentation; ties go to the one enumerated first.
    pub fn joint_map(&self) -> &WeightedSegmentation {
        let mut best = &self.segmentations[0];
        for w in &self.segmentations[1..] {
            if w.log_posterior > best.log_posterior {
                best = w;
            }
        }
        best
    }

    /// Backward argmax chain built from exact conditionals: the most probable
    /// last changepoint, then the most probable predecessor given each pick.
    pub fn greedy_map(&self) -> Segmentation {
        let pick = |law: &BTreeMap<usize, f64>| {
            let mut best = (0, f64::NEG_INFINITY);
            for (&j, &p) in law {
                if p > best.1 {
                    best = (j, p);
                }
            }
            best.0
        };
        let mut cps = vec![pick(&self.last_changepoint())];
        while let Some(&j) = cps.last().filter(|j| **j > 1) {
            cps.push(pick(&self.predecessor_law(j)));
        }
        cps.reverse();
        Segmentation::new(cps, self.n).expect("chain ends at 1")
    }

    /// `P(previous changepoint = i | j is a changepoint, y)`.
    pub fn predecessor_law(&self, j: usize) -> BTreeMap<usize, f64> {
        let mut law = BTreeMap::new();
        let mut total = 0.0;
        for (s, p) in self.weighted() {
            if let Ok(k) = s.changepoints.binary_search(&j) {
                if k > 0 {
                    *law.entry(s.changepoints[k - 1]).or_insert(0.0) += p;
                    total += p;
                }
            }
        }
        if total > 0.0 {
            law.values_mut().for_each(|v| *v /= total);
        }
        law
    }

    /// Posterior probability of `segmentation`, or 0 if it is not one of `1..=n`.
    pub fn probability(&self, segmentation: &Segmentation) -> f64 {
        self.segmentations
            .iter()
            .find(|w| &w.segmentation == segmentation)
            .map_or(0.0, |w| w.log_posterior.exp())
    }

    /// `P(vᵀμ ≤ θ | y)` for the last segment, averaged over segmentations.
    pub fn risk(&self, query: &RiskQuery) -> Result<f64> {
        let v = query.parameter_direction(&self.cfg)?;
        let mut total = 0.0;
        for (s, p) in self.weighted() {
            let seg = self.segment(*s.changepoints.last().expect("nonempty"), self.n);
            let location = v.dot(&seg.mu_hat);
            let spread = (v.transpose() * &seg.m * &v)[(0, 0)];
            let shift = query.theta - location;
            let m = seg.observed as f64;
            let cdf = match self.cfg.noise() {
                NoiseMode::Fixed { sigma2 } => normal_cdf(shift / (sigma2 * spread).sqrt()),
                NoiseMode::InverseGamma { nu, gamma } => {
                    let dof = nu + m;
                    student_t_cdf(shift / ((gamma + seg.residual) * spread / dof).sqrt(), dof)?
                }
            };
            total += p * cdf;
        }
        Ok(total)
    }
}

/// `ln` prior mass of a segmentation of `1..=n` under the renewal prior.
pub fn log_segmentation_prior(prior: &LengthPrior, segmentation: &Segmentation) -> Result<f64> {
    let cps = &segmentation.changepoints;
    let n = segmentation.n;
    if cps.len() == 1 {
        return Ok(prior.residual_survival(n - 1).ln());
    }
    let mut acc = prior.residual_mass(cps[1] - 1)?.ln();
    for w in cps[1..].windows(2) {
        acc += prior.mass(w[1] - w[0])?.ln();
    }
    acc += prior.survival(n - cps[cps.len() - 1]).ln();
    Ok(acc)
}

/// Enumerates every segmentation of the series. `ys[t-1]` is date `t`.
pub fn enumerate_posterior(
    ys: &[Vec<f64>],
    masks: &[ObservationMask],
    cfg: &EmissionConfig,
    prior: &LengthPrior,
) -> Result<ExactPosterior> {
    let n = ys.len();
    if n == 0 || masks.len() != n {
        return Err(Error::contract("enumeration needs a nonempty series with one mask per date"));
    }
    if n > MAX_EXACT_LENGTH {
        return Err(Error::contract(format!(
            "exact enumeration is limited to {MAX_EXACT_LENGTH} dates; got {n}"
        )));
    }
    let mut segments = Vec::with_capacity(n);
    for i in 1..=n {
        let mut row = Vec::with_capacity(n - i + 1);
        for j in i..=n {
            let problem = BatchProblem::from_dates(cfg, &ys[i - 1..j], &masks[i - 1..j])?;
            row.push(batch_log_marginal(&problem)?);
        }
        segments.push(row);
    }

    let mut segmentations = Vec::with_capacity(1 << (n - 1));
    for bits in 0u32..(1u32 << (n - 1)) {
        // Bit k set: date k + 2 starts a segment.
        let mut cps = vec![1];
        cps.extend((0..n - 1).filter(|k| bits >> k & 1 == 1).map(|k| k + 2));
        let segmentation = Segmentation::new(cps, n)?;
        let log_prior = log_segmentation_prior(prior, &segmentation)?;
        let log_lik: f64 = segmentation
            .segments()
            .iter()
            .map(|&(i, j)| segments[i - 1][j - i].log_marginal.value())
            .sum();
        let joint = if log_prior == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            log_prior + log_lik
        };
        segmentations.push(WeightedSegmentation {
            segmentation,
            log_prior,
            log_posterior: joint,
        });
    }
    let joints: Vec<f64> = segmentations.iter().map(|w| w.log_posterior).collect();
    let log_evidence = log_sum_exp(&joints);
    if !log_evidence.is_finite() {
        return Err(Error::numerical("every segmentation has zero probability"));
    }
    for w in &mut segmentations {
        w.log_posterior -= log_evidence;
    }
    Ok(ExactPosterior {
        n,
        cfg: cfg.clone(),
        segments,
        segmentations,
        log_evidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_date_is_certain() {
        let cfg = EmissionConfig::white_noise(vec![1.0], NoiseMode::Fixed { sigma2: 1.0 }).unwrap();
        let prior = LengthPrior::geometric(0.3).unwrap();
        let exact = enumerate_posterior(&[vec![0.5]], &[ObservationMask::all(1)], &cfg, &prior).unwrap();
        assert_eq!(exact.segmentations.len(), 1);
        assert!(exact.segmentations[0].log_posterior.abs() < 1e-15);
    }

    #[test]
    fn uninformative_data_returns_the_prior() {
        let cfg = EmissionConfig::white_noise(vec![1.0], NoiseMode::InverseGamma { nu: 2.0, gamma: 1.0 }).unwrap();
        let prior = LengthPrior::geometric(0.5).unwrap();
        let ys = vec![vec![f64::NAN]; 3];
        let masks = vec![ObservationMask::none(1); 3];
        let exact = enumerate_posterior(&ys, &masks, &cfg, &prior).unwrap();
        assert!(exact.log_evidence.abs() < 1e-15);
        // Under p = 1/2 all four segmentations of three dates weigh 1/4.
        for w in &exact.segmentations {
            assert!((w.log_prior.exp() - 0.25).abs() < 1e-15, "{:?}", w.segmentation);
            assert!((w.log_posterior - w.log_prior).abs() < 1e-15);
        }
    }

    #[test]
    fn prior_masses_sum_to_one() {
        for prior in [
            LengthPrior::geometric(0.17).unwrap(),
            LengthPrior::negative_binomial(3, 0.45).unwrap(),
            LengthPrior::negative_binomial(1, 0.9).unwrap(),
        ] {
            for n in 1..=12 {
                let mut total = 0.0;
                for bits in 0u32..(1 << (n - 1)) {
                    let mut cps = vec![1];
                    cps.extend((0..n - 1).filter(|k| bits >> k & 1 == 1).map(|k| k + 2));
                    let s = Segmentation::new(cps, n).unwrap();
                    total += log_segmentation_prior(&prior, &s).unwrap().exp();
                }
                assert!((total - 1.0).abs() < 1e-12, "{prior:?} n={n}: {total}");
            }
        }
    }

    #[test]
    fn refuses_long_series() {
        let cfg = EmissionConfig::white_noise(vec![1.0], NoiseMode::Fixed { sigma2: 1.0 }).unwrap();
        let prior = LengthPrior::geometric(0.3).unwrap();
        let ys = vec![vec![0.0]; 17];
        let masks = vec![ObservationMask::all(1); 17];
        assert!(matches!(
            enumerate_posterior(&ys, &masks, &cfg, &prior),
            Err(Error::Contract(_))
        ));
    }
}
