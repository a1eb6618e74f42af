// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic series drawn from the generative model: renewal segmentation,
//! conjugate segment parameters, Gaussian noise, Bernoulli activation masks.

use crate::emission::{EmissionConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::length_prior::LengthPrior;
use crate::masked_linalg::ObservationMask;
use crate::rng::{stream, streams};
use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::Serialize;

const MAX_REJECTIONS: usize = 100_000;

/// Knobs of the generator beyond the model itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SimulationSettings {
    pub n: usize,
    /// Probability that each component is observed at each date.
    pub activation_prob: f64,
    /// Minimum jump between consecutive segments, as the largest component
    /// of `|Δ(H0 μ)| / (σ √Σ0_ii)`; enforced by redrawing the parameters.
    pub min_jump: Option<f64>,
}

impl SimulationSettings {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            activation_prob: 1.0,
            min_jump: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::domain("simulation length must be positive"));
        }
        if !(0.0..=1.0).contains(&self.activation_prob) {
            return Err(Error::domain("activation probability must lie in [0, 1]"));
        }
        if self.min_jump.is_some_and(|j| !(j >= 0.0 && j.is_finite())) {
            return Err(Error::domain("minimum jump must be a nonnegative number"));
        }
        Ok(())
    }
}

/// Ground truth of one simulated segment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulatedSegment {
    pub start: usize,
    pub end: usize,
    pub mu: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Simulation {
    pub seed: u64,
    /// `ys[t-1]` is date `t`; unobserved entries are NaN.
    #[serde(skip)]
    pub ys: Vec<Vec<f64>>,
    #[serde(skip)]
    pub masks: Vec<ObservationMask>,
    pub changepoints: Vec<usize>,
    pub segments: Vec<SimulatedSegment>,
}

/// Draws one series of `settings.n` dates. Each concern reads its own random
/// stream (see [`crate::rng`]).
pub fn simulate(
    cfg: &EmissionConfig,
    prior: &LengthPrior,
    settings: SimulationSettings,
    seed: u64,
) -> Result<Simulation> {
    settings.validate()?;
    let n = settings.n;
    let mut seg_rng = stream(seed, streams::SEGMENTATION);
    let mut par_rng = stream(seed, streams::PARAMETERS);
    let mut noise_rng = stream(seed, streams::NOISE);
    let mut mask_rng = stream(seed, streams::MASKS);

    let mut changepoints = vec![1];
    let mut start = 1 + prior.sample_length(&mut seg_rng, true);
    while start <= n {
        changepoints.push(start);
        start += prior.sample_length(&mut seg_rng, false);
    }

    let chol = cfg
        .cov()
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("noise covariance lost positive definiteness"))?;
    let scale_diag: Vec<f64> = cfg.cov().matrix().diagonal().iter().map(|v| v.sqrt()).collect();
    let (d, q) = (cfg.d(), cfg.q());

    let mut segments: Vec<SimulatedSegment> = Vec::with_capacity(changepoints.len());
    let mut previous_level: Option<DVector<f64>> = None;
    for (k, &first) in changepoints.iter().enumerate() {
        let last = changepoints.get(k + 1).map_or(n, |next| next - 1);
        let mut attempts = 0;
        let (mu, sigma2, level) = loop {
            let sigma2 = draw_sigma2(cfg.noise(), &mut par_rng)?;
            let mu = DVector::from_iterator(
                q,
                cfg.prior_scale().iter().map(|delta2| {
                    let z: f64 = StandardNormal.sample(&mut par_rng);
                    (sigma2 * delta2).sqrt() * z
                }),
            );
            let level = cfg.h0() * &mu;
            let accepted = match (settings.min_jump, &previous_level) {
                (Some(jump), Some(prev)) => {
                    let sigma = sigma2.sqrt();
                    (0..d).any(|i| (level[i] - prev[i]).abs() / (sigma * scale_diag[i]) >= jump)
                }
                _ => true,
            };
            if accepted {
                break (mu, sigma2, level);
            }
            attempts += 1;
            if attempts >= MAX_REJECTIONS {
                return Err(Error::domain(format!(
                    "could not draw a segment jump of at least {} after {MAX_REJECTIONS} attempts",
                    settings.min_jump.unwrap_or_default()
                )));
            }
        };
        segments.push(SimulatedSegment {
            start: first,
            end: last,
            mu: mu.iter().copied().collect(),
            sigma2,
        });
        previous_level = Some(level);
    }

    let mut ys = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for seg in &segments {
        let level = cfg.h0() * DVector::from_column_slice(&seg.mu);
        let sigma = seg.sigma2.sqrt();
        for _ in seg.start..=seg.end {
            let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut noise_rng)));
            let noise = chol.l() * z * sigma;
            let flags: Vec<bool> = (0..d).map(|_| mask_rng.random::<f64>() < settings.activation_prob).collect();
            ys.push(
                (0..d)
                    .map(|i| if flags[i] { level[i] + noise[i] } else { f64::NAN })
                    .collect(),
            );
            masks.push(ObservationMask::new(flags));
        }
    }

    Ok(Simulation {
        seed,
        ys,
        masks,
        changepoints,
        segments,
    })
}

fn draw_sigma2<R: Rng + ?Sized>(noise: NoiseMode, rng: &mut R) -> Result<f64> {
    match noise {
        NoiseMode::Fixed { sigma2 } => Ok(sigma2),
        NoiseMode::InverseGamma { nu, gamma } => {
            // σ² ~ IG(ν/2, γ/2)  ⇔  1/σ² ~ Gamma(shape ν/2, scale 2/γ).
            let precision = Gamma::new(0.5 * nu, 2.0 / gamma)
                .map_err(|e| Error::domain(e.to_string()))?
                .sample(rng);
            Ok(1.0 / precision)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EmissionConfig {
        EmissionConfig::white_noise(vec![9.0, 9.0], NoiseMode::Fixed { sigma2: 1.0 }).unwrap()
    }

    #[test]
    fn reproducible_from_seed() {
        let prior = LengthPrior::geometric(0.05).unwrap();
        let settings = SimulationSettings { n: 200, activation_prob: 0.8, min_jump: Some(3.0) };
        let a = simulate(&cfg(), &prior, settings, 17).unwrap();
        let b = simulate(&cfg(), &prior, settings, 17).unwrap();
        assert_eq!(a.changepoints, b.changepoints);
        assert_eq!(a.masks, b.masks);
        let bits = |s: &Simulation| s.ys.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a.changepoints, simulate(&cfg(), &prior, settings, 18).unwrap().changepoints);
    }

    #[test]
    fn structure_and_jumps() {
        let prior = LengthPrior::negative_binomial(2, 0.1).unwrap();
        let settings = SimulationSettings { n: 300, activation_prob: 1.0, min_jump: Some(4.0) };
        let sim = simulate(&cfg(), &prior, settings, 3).unwrap();
        assert_eq!(sim.ys.len(), 300);
        assert_eq!(sim.changepoints[0], 1);
        assert_eq!(sim.segments.last().unwrap().end, 300);
        for w in sim.segments.windows(2) {
            assert_eq!(w[0].end + 1, w[1].start);
            let jump = (0..2).map(|i| (w[1].mu[i] - w[0].mu[i]).abs()).fold(0.0, f64::max);
            assert!(jump >= 4.0);
        }
    }

    #[test]
    fn degenerate_settings() {
        let sim = simulate(
            &cfg(),
            &LengthPrior::geometric(1.0).unwrap(),
            SimulationSettings { n: 5, activation_prob: 0.0, min_jump: None },
            1,
        )
        .unwrap();
        assert_eq!(sim.changepoints, vec![1, 2, 3, 4, 5]);
        assert!(sim.masks.iter().all(|m| m.is_empty()));
        assert!(sim.ys.iter().flatten().all(|v| v.is_nan()));
    }

    #[test]
    fn inverse_gamma_variance_is_drawn() {
        let cfg = EmissionConfig::white_noise(vec![1.0], NoiseMode::InverseGamma { nu: 6.0, gamma: 4.0 }).unwrap();
        let sim = simulate(&cfg, &LengthPrior::geometric(1.0).unwrap(), SimulationSettings::new(20_000), 9).unwrap();
        // E[σ²] = γ / (ν - 2) = 1.
        let mean = sim.segments.iter().map(|s| s.sigma2).sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }
}
