// SPDX-License-Identifier: MIT OR Apache-2.0

//! Direct evaluation of the segment marginal likelihood from stacked
//! matrices, without block structure. Slow (cubic in `k·d`) and used as a
//! cross-check of the running-sum path and for time-varying `H` or `Σ`.

use super::{EmissionConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::masked_linalg::ObservationMask;
use crate::numerics::{ln_gamma_positive, LogProb};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// A segment flattened to `kd` scalars.
#[derive(Clone, Debug)]
pub struct BatchProblem {
    /// `kd x q` regression matrix.
    pub h: DMatrix<f64>,
    /// `kd x kd` noise covariance.
    pub sigma: DMatrix<f64>,
    /// Flat observations; entries where `observed` is false are ignored.
    pub y: DVector<f64>,
    pub observed: Vec<bool>,
    pub prior_scale: Vec<f64>,
    pub noise: NoiseMode,
}

/// Result of a batch evaluation.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub log_marginal: LogProb,
    pub mu_hat: DVector<f64>,
    pub m: DMatrix<f64>,
    pub residual: f64,
    /// Number of observed scalars.
    pub observed: usize,
}

impl BatchProblem {
    /// Stacks dates with `H = ⊕ H0` and `Σ = ⊕ Σ0`.
    pub fn from_dates(
        cfg: &EmissionConfig,
        ys: &[Vec<f64>],
        masks: &[ObservationMask],
    ) -> Result<Self> {
        if ys.len() != masks.len() {
            return Err(Error::contract("one mask per date is required"));
        }
        let (d, q, k) = (cfg.d(), cfg.q(), ys.len());
        let mut h = DMatrix::zeros(k * d, q);
        let mut sigma = DMatrix::zeros(k * d, k * d);
        let mut y = DVector::zeros(k * d);
        let mut observed = Vec::with_capacity(k * d);
        for (t, (yt, mask)) in ys.iter().zip(masks).enumerate() {
            if yt.len() != d || mask.dim() != d {
                return Err(Error::contract(format!("date {t} does not have {d} components")));
            }
            h.view_mut((t * d, 0), (d, q)).copy_from(cfg.h0());
            sigma.view_mut((t * d, t * d), (d, d)).copy_from(cfg.cov().matrix());
            for i in 0..d {
                y[t * d + i] = yt[i];
                observed.push(mask.is_observed(i));
            }
        }
        Ok(Self {
            h,
            sigma,
            y,
            observed,
            prior_scale: cfg.prior_scale().to_vec(),
            noise: cfg.noise(),
        })
    }
}

/// Evaluates `M`, `P`, `‖y‖²_P` and the marginal likelihood from the stacked
/// matrices, with `Σ_Π⁺ = Π[(I - Π) + ΠΣΠ]⁻¹Π` and `|Σ_Π|_Π = |(I - Π) + ΠΣΠ|`.
pub fn batch_log_marginal(problem: &BatchProblem) -> Result<BatchResult> {
    let n = problem.y.len();
    let q = problem.h.ncols();
    if problem.h.nrows() != n
        || problem.sigma.nrows() != n
        || problem.sigma.ncols() != n
        || problem.observed.len() != n
        || problem.prior_scale.len() != q
    {
        return Err(Error::contract("inconsistent batch dimensions"));
    }
    let proj = DMatrix::from_fn(n, n, |i, j| {
        if i == j && problem.observed[i] {
            1.0
        } else {
            0.0
        }
    });
    let eye = DMatrix::<f64>::identity(n, n);
    let padded = (&eye - &proj) + &proj * &problem.sigma * &proj;
    let lu = padded.lu();
    let log_det_sigma = lu.determinant().ln();
    if !log_det_sigma.is_finite() {
        return Err(Error::Singular {
            date: None,
            detail: "stacked covariance restricted to the observed block is singular".into(),
        });
    }
    let padded_inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Singular {
            date: None,
            detail: "stacked covariance is not invertible".into(),
        })?;
    let sigma_pinv = &proj * padded_inv * &proj;
    let y = DVector::from_iterator(
        n,
        problem
            .y
            .iter()
            .zip(&problem.observed)
            .map(|(v, o)| if *o { *v } else { 0.0 }),
    );

    let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        q,
        problem.prior_scale.iter().map(|v| 1.0 / v),
    ));
    let m_inv = problem.h.transpose() * &sigma_pinv * &problem.h + d_inv;
    let m = m_inv
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::numerical("H'Σ⁺H + D⁻¹ is singular"))?;
    let p = &sigma_pinv - &sigma_pinv * &problem.h * &m * problem.h.transpose() * &sigma_pinv;
    let residual = (y.transpose() * &p * &y)[(0, 0)].max(0.0);
    let mu_hat = &m * problem.h.transpose() * &sigma_pinv * &y;

    let trace = problem.observed.iter().filter(|o| **o).count() as f64;
    let log_det_m = m.determinant().ln();
    let log_det_d: f64 = problem.prior_scale.iter().map(|v| v.ln()).sum();
    let common = -0.5 * log_det_sigma + 0.5 * (log_det_m - log_det_d);
    let value = match problem.noise {
        NoiseMode::Fixed { sigma2 } => {
            common - 0.5 * trace * (2.0 * PI * sigma2).ln() - 0.5 * residual / sigma2
        }
        NoiseMode::InverseGamma { nu, gamma } => {
            common - 0.5 * trace * PI.ln() + ln_gamma_positive(0.5 * (trace + nu))
                - ln_gamma_positive(0.5 * nu)
                + 0.5 * nu * gamma.ln()
                - 0.5 * (trace + nu) * (gamma + residual).ln()
        }
    };
    Ok(BatchResult {
        log_marginal: LogProb::new(value)?,
        mu_hat,
        m,
        residual,
        observed: trace as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::{log_marginal_likelihood, posterior};
    use crate::masked_linalg::{accumulate, CovarianceSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_path_matches_monolithic_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for case in 0..120 {
            let d = rng.random_range(1..=3);
            let q = rng.random_range(1..=d);
            let k = rng.random_range(1..=6);
            let h0 = DMatrix::from_fn(d, q, |_, _| rng.random_range(-1.5..1.5));
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let cov = CovarianceSpec::new(&a * a.transpose() + DMatrix::identity(d, d) * 0.3)
                .unwrap();
            let noise = if case % 2 == 0 {
                NoiseMode::Fixed { sigma2: rng.random_range(0.3..2.0) }
            } else {
                NoiseMode::InverseGamma {
                    nu: rng.random_range(1.0..5.0),
                    gamma: rng.random_range(0.2..2.0),
                }
            };
            let scale: Vec<f64> = (0..q).map(|_| rng.random_range(0.2..4.0)).collect();
            let cfg = EmissionConfig::new(h0, cov, scale, noise).unwrap();
            let masks: Vec<ObservationMask> = (0..k)
                .map(|_| ObservationMask::new((0..d).map(|_| rng.random_bool(0.7)).collect()))
                .collect();
            let ys: Vec<Vec<f64>> = masks
                .iter()
                .map(|m| {
                    (0..d)
                        .map(|i| if m.is_observed(i) { rng.random_range(-2.0..2.0) } else { f64::NAN })
                        .collect()
                })
                .collect();
            let stats = ys.iter().zip(&masks).fold(cfg.empty_stats(), |acc, (y, m)| {
                accumulate(&acc, y, m, cfg.h0(), cfg.cov()).unwrap()
            });
            let problem = BatchProblem::from_dates(&cfg, &ys, &masks).unwrap();
            let batch = batch_log_marginal(&problem).unwrap();
            let running = log_marginal_likelihood(&cfg, &stats).unwrap().value();
            let reference = batch.log_marginal.value();
            assert!(
                (running - reference).abs() < 1e-9 * (1.0 + reference.abs()),
                "case {case}: {running} vs {reference}"
            );
            let post = posterior(&cfg, &stats).unwrap();
            assert!((&post.mu_hat - &batch.mu_hat).norm() < 1e-9 * (1.0 + batch.mu_hat.norm()));
            assert!((&post.m - &batch.m).norm() < 1e-9 * (1.0 + batch.m.norm()));
        }
    }

    #[test]
    fn single_block_reduces_to_per_date_formula() {
        let cfg = EmissionConfig::white_noise(vec![2.0], NoiseMode::Fixed { sigma2: 1.5 }).unwrap();
        let problem =
            BatchProblem::from_dates(&cfg, &[vec![0.8]], &[ObservationMask::all(1)]).unwrap();
        let batch = batch_log_marginal(&problem).unwrap().log_marginal.value();
        let var = 1.5 * (1.0 + 2.0);
        let expected = -0.5 * (2.0 * PI * var).ln() - 0.64 / (2.0 * var);
        assert!((batch - expected).abs() < 1e-13);
    }

    #[test]
    fn diffuse_prior_approaches_generalized_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let sigma = &a * a.transpose() + DMatrix::identity(n, n);
        let sigma_inv = sigma.clone().try_inverse().unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let tall = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        for h in [DMatrix::identity(n, n), tall] {
            let q = h.ncols();
            let problem = BatchProblem {
                h: h.clone(),
                sigma: sigma.clone(),
                y: y.clone(),
                observed: vec![true; n],
                prior_scale: vec![1e8; q],
                noise: NoiseMode::Fixed { sigma2: 1.0 },
            };
            let batch = batch_log_marginal(&problem).unwrap();
            let normal = h.transpose() * &sigma_inv * &h;
            let gls = normal.try_inverse().unwrap() * h.transpose() * &sigma_inv * &y;
            assert!((batch.mu_hat - gls).norm() < 1e-3);
        }
    }

    #[test]
    fn rejects_singular_and_mismatched_inputs() {
        let problem = BatchProblem {
            h: DMatrix::identity(2, 1),
            sigma: DMatrix::zeros(2, 2),
            y: DVector::zeros(2),
            observed: vec![true, true],
            prior_scale: vec![1.0],
            noise: NoiseMode::Fixed { sigma2: 1.0 },
        };
        assert!(matches!(batch_log_marginal(&problem), Err(Error::Singular { .. })));
        let bad = BatchProblem {
            observed: vec![true],
            ..problem
        };
        assert!(matches!(batch_log_marginal(&bad), Err(Error::Contract(_))));
    }
}
