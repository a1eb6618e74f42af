// SPDX-License-Identifier: MIT OR Apache-2.0

//! Covariance algebra for partially observed dates.
//!
//! With `Π_t` the coordinate projector on the components observed at date
//! `t`, the per-date noise precision is the pseudo-inverse `(Π_t Σ0 Π_t)^+`
//! and its determinant is taken on `Im(Π_t)`. Both are computed by
//! extracting the observed submatrix of `Σ0`, factoring it and scattering the
//! inverse back; unobserved rows and columns stay zero.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Observations above this condition number are reported as singular.
pub const MAX_CONDITION: f64 = 1e12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Which signal components are observed at one date.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObservationMask {
    flags: Vec<bool>,
}

impl ObservationMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    pub fn all(d: usize) -> Self {
        Self::new(vec![true; d])
    }

    pub fn none(d: usize) -> Self {
        Self::new(vec![false; d])
    }

    /// Mask of the finite entries of `y`.
    pub fn from_finite(y: &[f64]) -> Self {
        Self::new(y.iter().map(|v| v.is_finite()).collect())
    }

    pub fn dim(&self) -> usize {
        self.flags.len()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.flags[i]
    }

    pub fn observed_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.flags.iter().any(|f| *f)
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.then_some(i))
            .collect()
    }
}

/// Per-date noise covariance `Σ0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceSpec {
    sigma0: DMatrix<f64>,
}

impl CovarianceSpec {
    pub fn new(sigma0: DMatrix<f64>) -> Result<Self> {
        if !sigma0.is_square() || sigma0.nrows() == 0 {
            return Err(Error::contract(format!(
                "noise covariance must be a nonempty square matrix; got {}x{}",
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        let d = sigma0.nrows();
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (sigma0[(i, j)], sigma0[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::contract(format!(
                        "noise covariance is not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        if sigma0.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("noise covariance has non-finite entries"));
        }
        if sigma0.clone().cholesky().is_none() {
            return Err(Error::Singular {
                date: None,
                detail: "noise covariance is not positive definite".into(),
            });
        }
        Ok(Self { sigma0 })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            sigma0: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.sigma0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sigma0
    }
}

/// Precision and log-determinant of the observed block at one date.
#[derive(Clone, Debug)]
pub struct MaskedBlock {
    /// Observed component indices.
    pub observed: Vec<usize>,
    /// Inverse of the observed submatrix (`m x m`).
    pub precision: DMatrix<f64>,
    /// `ln |Σ0[observed, observed]|`, zero when nothing is observed.
    pub log_det: f64,
}

impl MaskedBlock {
    pub fn new(cov: &CovarianceSpec, mask: &ObservationMask) -> Result<Self> {
        if mask.dim() != cov.dim() {
            return Err(Error::contract(format!(
                "mask has {} components, covariance has {}",
                mask.dim(),
                cov.dim()
            )));
        }
        let observed = mask.observed_indices();
        let m = observed.len();
        if m == 0 {
            return Ok(Self {
                observed,
                precision: DMatrix::zeros(0, 0),
                log_det: 0.0,
            });
        }
        let sub = cov.sigma0.select_rows(&observed).select_columns(&observed);
        let eigen = sub.clone().symmetric_eigen();
        let lo = eigen.eigenvalues.min();
        let hi = eigen.eigenvalues.max();
        if !(lo > 0.0) || hi / lo > MAX_CONDITION {
            return Err(Error::Singular {
                date: None,
                detail: format!("observed block has eigenvalues in [{lo:e}, {hi:e}]"),
            });
        }
        let chol = sub.cholesky().ok_or_else(|| Error::Singular {
            date: None,
            detail: "Cholesky factorization of the observed block failed".into(),
        })?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            observed,
            precision: chol.inverse(),
            log_det,
        })
    }

    /// Scatters the observed precision into a `d x d` matrix.
    pub fn scatter(&self, d: usize) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(d, d);
        for (a, &i) in self.observed.iter().enumerate() {
            for (b, &j) in self.observed.iter().enumerate() {
                full[(i, j)] = self.precision[(a, b)];
            }
        }
        full
    }
}

/// `(Π Σ0 Π)^+`: zero outside the observed block, the block inverse inside.
pub fn masked_pseudo_inverse(cov: &CovarianceSpec, mask: &ObservationMask) -> Result<DMatrix<f64>> {
    Ok(MaskedBlock::new(cov, mask)?.scatter(cov.dim()))
}

/// `ln |(I - Π) + Π Σ0 Π|`, i.e. the log-determinant of the observed submatrix.
pub fn restricted_log_det(cov: &CovarianceSpec, mask: &ObservationMask) -> Result<f64> {
    Ok(MaskedBlock::new(cov, mask)?.log_det)
}

/// Running sufficient statistics of one candidate segment.
///
/// `a_data = Σ H0ᵀ P_t H0`, `b = Σ H0ᵀ P_t y_t`, `c = Σ y_tᵀ P_t y_t` with
/// `P_t = (Π_t Σ0 Π_t)^+`; `trace_pi` counts observed scalars and
/// `logdet_sum` adds the restricted log-determinants.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStats {
    pub a_data: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub trace_pi: usize,
    pub logdet_sum: f64,
    /// Number of dates, observed or not.
    pub length: usize,
}

impl SegmentStats {
    pub fn empty(q: usize) -> Self {
        Self {
            a_data: DMatrix::zeros(q, q),
            b: DVector::zeros(q),
            c: 0.0,
            trace_pi: 0,
            logdet_sum: 0.0,
            length: 0,
        }
    }

    pub fn q(&self) -> usize {
        self.b.len()
    }

    /// No observed scalar has been absorbed.
    pub fn is_uninformative(&self) -> bool {
        self.trace_pi == 0
    }

    pub fn absorb(&mut self, contribution: &DateContribution) {
        self.length += 1;
        if contribution.observed == 0 {
            return;
        }
        self.a_data += &contribution.a;
        self.b += &contribution.b;
        self.c += contribution.c;
        self.trace_pi += contribution.observed;
        self.logdet_sum += contribution.log_det;
    }

    pub fn absorbed(&self, contribution: &DateContribution) -> Self {
        let mut next = self.clone();
        next.absorb(contribution);
        next
    }
}

/// Increment of [`SegmentStats`] contributed by one date. It does not depend
/// on the segment, so the filter computes it once per step.
#[derive(Clone, Debug)]
pub struct DateContribution {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub observed: usize,
    pub log_det: f64,
}

impl DateContribution {
    pub fn new(
        y: &[f64],
        mask: &ObservationMask,
        h0: &DMatrix<f64>,
        cov: &CovarianceSpec,
    ) -> Result<Self> {
        let d = cov.dim();
        if y.len() != d || h0.nrows() != d || mask.dim() != d {
            return Err(Error::contract(format!(
                "dimension mismatch: y has {}, mask {}, H0 has {} rows, covariance is {d}x{d}",
                y.len(),
                mask.dim(),
                h0.nrows()
            )));
        }
        let q = h0.ncols();
        let block = MaskedBlock::new(cov, mask)?;
        let m = block.observed.len();
        if m == 0 {
            return Ok(Self {
                a: DMatrix::zeros(q, q),
                b: DVector::zeros(q),
                c: 0.0,
                observed: 0,
                log_det: 0.0,
            });
        }
        let h_obs = h0.select_rows(&block.observed);
        let y_obs = DVector::from_iterator(m, block.observed.iter().map(|&i| y[i]));
        let weighted_h = &block.precision * &h_obs;
        let weighted_y = &block.precision * &y_obs;
        let a = h_obs.transpose() * &weighted_h;
        Ok(Self {
            a: symmetrize(a),
            b: h_obs.transpose() * &weighted_y,
            c: y_obs.dot(&weighted_y),
            observed: m,
            log_det: block.log_det,
        })
    }
}

/// Adds one date to `acc`, returning the updated statistics.
pub fn accumulate(
    acc: &SegmentStats,
    y: &[f64],
    mask: &ObservationMask,
    h0: &DMatrix<f64>,
    cov: &CovarianceSpec,
) -> Result<SegmentStats> {
    if acc.q() != h0.ncols() {
        return Err(Error::contract(format!(
            "accumulator has q = {}, H0 has {} columns",
            acc.q(),
            h0.ncols()
        )));
    }
    let contribution = DateContribution::new(y, mask, h0, cov)?;
    Ok(acc.absorbed(&contribution))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}
