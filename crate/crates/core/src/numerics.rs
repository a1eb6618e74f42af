// SPDX-License-Identifier: MIT OR Apache-2.0

//! Special functions and log-domain accumulation used by the emission,
//! filter and risk computations.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::Add;

const LN_SQRT_PI: f64 = 0.572_364_942_924_700_1;

/// Natural log of a nonnegative quantity. `-inf` encodes zero; NaN is never stored.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogProb(f64);

impl LogProb {
    pub const IMPOSSIBLE: Self = Self(f64::NEG_INFINITY);
    pub const CERTAIN: Self = Self(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::numerical("log-probability evaluated to NaN"));
        }
        Ok(Self(value))
    }

    pub fn from_prob(p: f64) -> Result<Self> {
        if p.is_nan() || p < 0.0 {
            return Err(Error::domain(format!("probability must be nonnegative; got {p}")));
        }
        Ok(Self(p.ln()))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    /// `self / other` in the linear domain; an impossible numerator stays impossible.
    pub fn ratio(self, other: Self) -> Self {
        if self.0 == f64::NEG_INFINITY {
            return Self::IMPOSSIBLE;
        }
        Self(self.0 - other.0)
    }
}

impl Add for LogProb {
    type Output = LogProb;

    fn add(self, rhs: Self) -> Self {
        // -inf + finite stays -inf; +inf never appears for normalized quantities.
        Self(self.0 + rhs.0)
    }
}

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log_gamma requires a finite x > 0; got {x}")));
    }
    Ok(ln_gamma_positive(x))
}

pub(crate) fn ln_gamma_positive(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// `ln Σ exp(v)`, shifted by the maximum. All `-inf` (or empty) gives `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `P(T ≤ x)` for a Student t variable with (possibly fractional) `dof` degrees of freedom.
pub fn student_t_cdf(x: f64, dof: f64) -> Result<f64> {
    if !(dof > 0.0) || dof.is_nan() {
        return Err(Error::domain(format!("student_t_cdf requires dof > 0; got {dof}")));
    }
    if x.is_nan() {
        return Err(Error::domain("student_t_cdf evaluated at NaN"));
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    if x == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if x == 0.0 {
        return Ok(0.5);
    }
    let x2 = x * x;
    let denom = dof + x2;
    // tail = P(T > |x|) = I_{dof/(dof+x²)}(dof/2, 1/2) / 2, taken from the
    // complementary side when dof/(dof+x²) is close to 1.
    let (w, w_bar) = (dof / denom, x2 / denom);
    let tail = if w < 0.5 {
        0.5 * beta_reg(0.5 * dof, 0.5, w)?
    } else {
        0.5 * (1.0 - beta_reg(0.5, 0.5 * dof, w_bar)?)
    };
    Ok(if x > 0.0 { 1.0 - tail } else { tail })
}

fn beta_reg(a: f64, b: f64, x: f64) -> Result<f64> {
    statrs::function::beta::checked_beta_reg(a, b, x).map_err(|e| Error::numerical(format!("incomplete beta: {e}")))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Log-density of a Student t variable, used by the quadrature oracles.
pub fn student_t_log_density(x: f64, dof: f64) -> f64 {
    ln_gamma_positive(0.5 * (dof + 1.0))
        - ln_gamma_positive(0.5 * dof)
        - 0.5 * dof.ln()
        - LN_SQRT_PI
        - 0.5 * (dof + 1.0) * (x * x / dof).ln_1p()
}
