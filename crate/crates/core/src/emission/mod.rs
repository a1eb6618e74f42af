// SPDX-License-Identifier: MIT OR Apache-2.0

//! Conjugate Gaussian segment models.
//!
//! Within a segment, `y_t = H0 μ + ε_t` with `ε_t ~ N(0, σ² Σ0)` restricted
//! to the observed components, and `μ ~ N(0, σ² D)`, `D = diag(δ²)`. The
//! noise scale `σ²` is either fixed or inverse-Gamma(ν/2, γ/2). Everything
//! below is a function of the running sums in [`SegmentStats`]:
//!
//! ```text
//! M  = (D⁻¹ + A_data)⁻¹      μ̂ = M b      ‖y‖²_P = c - bᵀ M b
//! ```
//!
//! The fully observed model is the special case of an all-true mask.

pub mod batch;
pub mod white_noise;

use crate::error::{Error, Result};
use crate::masked_linalg::{CovarianceSpec, DateContribution, ObservationMask};
use crate::numerics::{ln_gamma_positive, normal_cdf, student_t_cdf, LogProb};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub use crate::masked_linalg::SegmentStats;

/// Relative tolerance under which a negative quadratic form is rounding noise.
const QUADRATIC_CLAMP: f64 = 1e-12;

/// Law of the noise scale `σ²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "noise", rename_all = "snake_case")]
pub enum NoiseMode {
    Fixed { sigma2: f64 },
    /// `σ² ~ Inv-Gamma(ν/2, γ/2)`.
    InverseGamma { nu: f64, gamma: f64 },
}

/// Segment emission model.
#[derive(Clone, Debug)]
pub struct EmissionConfig {
    h0: DMatrix<f64>,
    cov: CovarianceSpec,
    prior_scale: Vec<f64>,
    noise: NoiseMode,
    log_det_d: f64,
}

impl EmissionConfig {
    pub fn new(
        h0: DMatrix<f64>,
        cov: CovarianceSpec,
        prior_scale: Vec<f64>,
        noise: NoiseMode,
    ) -> Result<Self> {
        let d = cov.dim();
        let q = h0.ncols();
        if h0.nrows() != d {
            return Err(Error::contract(format!(
                "H0 has {} rows but the noise covariance is {d}x{d}",
                h0.nrows()
            )));
        }
        if q == 0 || q > d {
            return Err(Error::contract(format!("need 1 <= q <= d; got q = {q}, d = {d}")));
        }
        if h0.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("H0 has non-finite entries"));
        }
        if prior_scale.len() != q {
            return Err(Error::contract(format!(
                "prior scale has {} entries, expected q = {q}",
                prior_scale.len()
            )));
        }
        if let Some(bad) = prior_scale.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("prior scales must be positive; got {bad}")));
        }
        match noise {
            NoiseMode::Fixed { sigma2 } if !(sigma2 > 0.0 && sigma2.is_finite()) => {
                return Err(Error::domain(format!("fixed sigma2 must be positive; got {sigma2}")));
            }
            NoiseMode::InverseGamma { nu, gamma }
                if !(nu > 0.0 && gamma > 0.0 && nu.is_finite() && gamma.is_finite()) =>
            {
                return Err(Error::domain(format!(
                    "inverse-gamma parameters must be positive; got nu = {nu}, gamma = {gamma}"
                )));
            }
            _ => {}
        }
        let log_det_d = prior_scale.iter().map(|v| v.ln()).sum();
        Ok(Self {
            h0,
            cov,
            prior_scale,
            noise,
            log_det_d,
        })
    }

    /// Step-function model with `H0 = I`, `Σ0 = I`.
    pub fn white_noise(prior_scale: Vec<f64>, noise: NoiseMode) -> Result<Self> {
        let d = prior_scale.len();
        Self::new(
            DMatrix::identity(d, d),
            CovarianceSpec::identity(d),
            prior_scale,
            noise,
        )
    }

    pub fn d(&self) -> usize {
        self.cov.dim()
    }

    pub fn q(&self) -> usize {
        self.h0.ncols()
    }

    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    pub fn cov(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn prior_scale(&self) -> &[f64] {
        &self.prior_scale
    }

    pub fn noise(&self) -> NoiseMode {
        self.noise
    }

    pub fn empty_stats(&self) -> SegmentStats {
        SegmentStats::empty(self.q())
    }

    /// Per-date increment of the segment statistics.
    pub fn contribution(&self, y: &[f64], mask: &ObservationMask) -> Result<DateContribution> {
        DateContribution::new(y, mask, &self.h0, &self.cov)
    }

    fn check_stats(&self, stats: &SegmentStats) -> Result<()> {
        if stats.q() != self.q() || stats.a_data.nrows() != self.q() {
            return Err(Error::contract(format!(
                "statistics have q = {}, model has q = {}",
                stats.q(),
                self.q()
            )));
        }
        Ok(())
    }
}

/// Quantities shared by the likelihood, posterior and risk evaluations.
struct Conditioned {
    mu_hat: DVector<f64>,
    log_det_m: f64,
    quad: f64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl Conditioned {
    fn new(cfg: &EmissionConfig, stats: &SegmentStats) -> Result<Self> {
        cfg.check_stats(stats)?;
        let q = cfg.q();
        if stats.is_uninformative() {
            return Ok(Self {
                mu_hat: DVector::zeros(q),
                log_det_m: cfg.log_det_d,
                quad: 0.0,
                chol: None,
            });
        }
        let mut precision = stats.a_data.clone();
        for (i, delta2) in cfg.prior_scale.iter().enumerate() {
            precision[(i, i)] += 1.0 / delta2;
        }
        let chol = precision.cholesky().ok_or_else(|| {
            Error::numerical("D⁻¹ + A_data is not positive definite")
        })?;
        let log_det_precision: f64 =
            2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mu_hat = chol.solve(&stats.b);
        let mut quad = stats.c - stats.b.dot(&mu_hat);
        if quad < 0.0 {
            if -quad <= QUADRATIC_CLAMP * stats.c.abs().max(f64::MIN_POSITIVE) {
                quad = 0.0;
            } else {
                return Err(Error::numerical(format!(
                    "residual quadratic form is negative ({quad:e}) beyond rounding"
                )));
            }
        }
        Ok(Self {
            mu_hat,
            log_det_m: -log_det_precision,
            quad,
            chol: Some(chol),
        })
    }

    fn m_matrix(&self, cfg: &EmissionConfig) -> DMatrix<f64> {
        match &self.chol {
            Some(chol) => chol.inverse(),
            None => DMatrix::from_diagonal(&DVector::from_column_slice(&cfg.prior_scale)),
        }
    }
}

/// `ln P(y_segment)` with the segment parameters integrated out.
pub fn log_marginal_likelihood(cfg: &EmissionConfig, stats: &SegmentStats) -> Result<LogProb> {
    let cond = Conditioned::new(cfg, stats)?;
    if stats.is_uninformative() {
        return Ok(LogProb::CERTAIN);
    }
    let m = stats.trace_pi as f64;
    let common = -0.5 * stats.logdet_sum + 0.5 * (cond.log_det_m - cfg.log_det_d);
    let value = match cfg.noise {
        NoiseMode::Fixed { sigma2 } => {
            common - 0.5 * m * (2.0 * PI * sigma2).ln() - 0.5 * cond.quad / sigma2
        }
        NoiseMode::InverseGamma { nu, gamma } => {
            common - 0.5 * m * PI.ln() + ln_gamma_positive(0.5 * (m + nu))
                - ln_gamma_positive(0.5 * nu)
                + 0.5 * nu * gamma.ln()
                - 0.5 * (m + nu) * (gamma + cond.quad).ln()
        }
    };
    LogProb::new(value)
}

/// Predictive weight `P(j, t) / P(j, t-1)` of a new date given the segment so
/// far, with the updated statistics. For a fresh segment this is `P(t, t)`.
pub fn predictive_log_weight(
    cfg: &EmissionConfig,
    stats_before: &SegmentStats,
    y: &[f64],
    mask: &ObservationMask,
) -> Result<(LogProb, SegmentStats)> {
    let contribution = cfg.contribution(y, mask)?;
    let after = stats_before.absorbed(&contribution);
    if contribution.observed == 0 {
        return Ok((LogProb::CERTAIN, after));
    }
    let before = log_marginal_likelihood(cfg, stats_before)?;
    let now = log_marginal_likelihood(cfg, &after)?;
    Ok((now.ratio(before), after))
}

/// Posterior law of `σ²` given the segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum Sigma2Posterior {
    Fixed { sigma2: f64 },
    InverseGamma { shape: f64, scale: f64 },
}

/// Posterior of the segment parameters: `μ | σ², y ~ N(μ̂, σ² M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentPosterior {
    pub mu_hat: DVector<f64>,
    pub m: DMatrix<f64>,
    pub sigma2: Sigma2Posterior,
    /// `‖y‖²_P`, the residual quadratic form.
    pub residual: f64,
    /// Observed scalar count.
    pub trace_pi: usize,
}

impl SegmentPosterior {
    /// `E[σ² | y]`; requires `ν + trace_pi > 2` in inverse-gamma mode.
    pub fn sigma2_mean(&self) -> Result<f64> {
        match self.sigma2 {
            Sigma2Posterior::Fixed { sigma2 } => Ok(sigma2),
            Sigma2Posterior::InverseGamma { shape, scale } => {
                if shape <= 1.0 {
                    return Err(Error::MomentUndefined(format!(
                        "E[sigma2|y] needs nu + trace > 2; got {}",
                        2.0 * shape
                    )));
                }
                Ok(scale / (shape - 1.0))
            }
        }
    }

    /// `V[σ² | y]`; requires `ν + trace_pi > 4` in inverse-gamma mode.
    pub fn sigma2_variance(&self) -> Result<f64> {
        match self.sigma2 {
            Sigma2Posterior::Fixed { .. } => Ok(0.0),
            Sigma2Posterior::InverseGamma { shape, .. } => {
                if shape <= 2.0 {
                    return Err(Error::MomentUndefined(format!(
                        "V[sigma2|y] needs nu + trace > 4; got {}",
                        2.0 * shape
                    )));
                }
                let mean = self.sigma2_mean()?;
                Ok(2.0 / (2.0 * shape - 4.0) * mean * mean)
            }
        }
    }

    /// Law of `Aᵀ μ` for a `q x r` matrix `A`.
    pub fn linear_transform(&self, a: &DMatrix<f64>) -> Result<LinearTransformLaw> {
        if a.nrows() != self.mu_hat.len() {
            return Err(Error::contract(format!(
                "transform has {} rows, expected q = {}",
                a.nrows(),
                self.mu_hat.len()
            )));
        }
        let mean = a.transpose() * &self.mu_hat;
        let core = a.transpose() * &self.m * a;
        Ok(match self.sigma2 {
            Sigma2Posterior::Fixed { sigma2 } => LinearTransformLaw {
                mean,
                scale: core * sigma2,
                dof: f64::INFINITY,
            },
            Sigma2Posterior::InverseGamma { shape, scale } => {
                let dof = 2.0 * shape;
                LinearTransformLaw {
                    mean,
                    scale: core * (2.0 * scale / dof),
                    dof,
                }
            }
        })
    }
}

/// Multivariate t descriptor (location, scale matrix, dof); Gaussian when `dof` is infinite.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearTransformLaw {
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub dof: f64,
}

/// Posterior of the segment parameters.
pub fn posterior(cfg: &EmissionConfig, stats: &SegmentStats) -> Result<SegmentPosterior> {
    let cond = Conditioned::new(cfg, stats)?;
    let m = cond.m_matrix(cfg);
    let sigma2 = match cfg.noise {
        NoiseMode::Fixed { sigma2 } => Sigma2Posterior::Fixed { sigma2 },
        NoiseMode::InverseGamma { nu, gamma } => Sigma2Posterior::InverseGamma {
            shape: (nu + stats.trace_pi as f64) / 2.0,
            scale: (gamma + cond.quad) / 2.0,
        },
    };
    Ok(SegmentPosterior {
        mu_hat: cond.mu_hat,
        m,
        sigma2,
        residual: cond.quad,
        trace_pi: stats.trace_pi,
    })
}

/// Direction of a risk query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", content = "v", rename_all = "snake_case")]
pub enum Direction {
    /// `v ∈ R^q`, applied to `μ`.
    Parameter(Vec<f64>),
    /// `v ∈ R^d`, applied to the predicted level `H0 μ`.
    Prediction(Vec<f64>),
}

/// Event `{vᵀ μ ≤ θ}` on the current segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskQuery {
    pub direction: Direction,
    pub theta: f64,
}

impl RiskQuery {
    pub fn parameter(v: Vec<f64>, theta: f64) -> Self {
        Self {
            direction: Direction::Parameter(v),
            theta,
        }
    }

    pub fn prediction(v: Vec<f64>, theta: f64) -> Self {
        Self {
            direction: Direction::Prediction(v),
            theta,
        }
    }

    /// The direction expressed in parameter space.
    pub fn parameter_direction(&self, cfg: &EmissionConfig) -> Result<DVector<f64>> {
        let v = match &self.direction {
            Direction::Parameter(v) => {
                if v.len() != cfg.q() {
                    return Err(Error::contract(format!(
                        "parameter-space direction has {} entries, expected q = {}",
                        v.len(),
                        cfg.q()
                    )));
                }
                DVector::from_column_slice(v)
            }
            Direction::Prediction(v) => {
                if v.len() != cfg.d() {
                    return Err(Error::contract(format!(
                        "prediction-space direction has {} entries, expected d = {}",
                        v.len(),
                        cfg.d()
                    )));
                }
                cfg.h0.transpose() * DVector::from_column_slice(v)
            }
        };
        if v.iter().all(|x| *x == 0.0) {
            return Err(Error::contract("risk direction is zero in parameter space"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::contract("risk direction has non-finite entries"));
        }
        Ok(v)
    }
}

/// Which degrees of freedom and scale the Student-t risk law uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskVariant {
    /// `ν + trace_pi` dof and scale `(γ + ‖y‖²) vᵀMv / (ν + trace_pi)`.
    #[default]
    Posterior,
    /// Prior `ν` dof and scale `γ vᵀMv / ν`.
    PriorParameters,
}

/// `ln P(vᵀ μ ≤ θ | segment data)`.
pub fn risk_log_probability(
    cfg: &EmissionConfig,
    stats: &SegmentStats,
    query: &RiskQuery,
) -> Result<LogProb> {
    risk_log_probability_with(cfg, stats, query, RiskVariant::Posterior)
}

pub fn risk_log_probability_with(
    cfg: &EmissionConfig,
    stats: &SegmentStats,
    query: &RiskQuery,
    variant: RiskVariant,
) -> Result<LogProb> {
    let v = query.parameter_direction(cfg)?;
    if query.theta.is_nan() {
        return Err(Error::contract("risk threshold is NaN"));
    }
    let post = posterior(cfg, stats)?;
    let location = v.dot(&post.mu_hat);
    let spread = (&v.transpose() * &post.m * &v)[(0, 0)];
    let shift = query.theta - location;
    let cdf = match (cfg.noise, variant) {
        (NoiseMode::Fixed { sigma2 }, _) => normal_cdf(shift / (sigma2 * spread).sqrt()),
        (NoiseMode::InverseGamma { nu, gamma }, RiskVariant::Posterior) => {
            let dof = nu + stats.trace_pi as f64;
            let scale = ((gamma + post.residual) * spread / dof).sqrt();
            student_t_cdf(shift / scale, dof)?
        }
        (NoiseMode::InverseGamma { nu, gamma }, RiskVariant::PriorParameters) => {
            let scale = (gamma * spread / nu).sqrt();
            student_t_cdf(shift / scale, nu)?
        }
    };
    LogProb::from_prob(cdf)
}
