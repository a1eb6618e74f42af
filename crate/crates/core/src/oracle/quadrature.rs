// SPDX-License-Identifier: MIT OR Apache-2.0

//! Adaptive Gauss–Kronrod (7, 15) quadrature with a global error queue, and
//! scalar-model marginal likelihood / risk evaluated by brute integration.

use crate::emission::{EmissionConfig, NoiseMode};
use crate::error::{Error, Result};
use crate::numerics::{log_gamma, LogProb};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_PANELS: usize = 20_000;

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * KRONROD_WEIGHTS[7];
    let mut gauss = fc * GAUSS_WEIGHTS[3];
    for k in 0..7 {
        let dx = half * KRONROD_NODES[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += KRONROD_WEIGHTS[k] * pair;
        if k % 2 == 1 {
            gauss += GAUSS_WEIGHTS[k / 2] * pair;
        }
    }
    Panel {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Integrates `f` over `[a, b]`, starting from `panels` equal pieces and
/// always bisecting the panel with the largest error estimate.
pub fn integrate<F: FnMut(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    panels: usize,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Quadrature> {
    integrate_capped(f, a, b, panels, rel_tol, abs_tol, MAX_PANELS)
}

fn integrate_capped<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    panels: usize,
    rel_tol: f64,
    abs_tol: f64,
    max_panels: usize,
) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) || panels == 0 {
        return Err(Error::domain("quadrature needs a finite interval and at least one panel"));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0 });
    }
    let width = (b - a) / panels as f64;
    let mut heap = BinaryHeap::with_capacity(2 * panels);
    let (mut value, mut error) = (0.0, 0.0);
    for k in 0..panels {
        let lo = a + width * k as f64;
        let hi = if k + 1 == panels { b } else { lo + width };
        let p = gauss_kronrod(&mut f, lo, hi);
        value += p.value;
        error += p.error;
        heap.push(p);
    }
    loop {
        if !value.is_finite() {
            return Err(Error::numerical("quadrature integrand is not finite"));
        }
        // Below ~100 ulps of the total the error estimate is rounding noise.
        let floor = 100.0 * f64::EPSILON * value.abs();
        if error <= abs_tol.max(rel_tol * value.abs()).max(floor) {
            return Ok(Quadrature { value, error });
        }
        if heap.len() >= max_panels {
            log::debug!("quadrature stopped at {max_panels} panels with error {error:e}");
            return Ok(Quadrature { value, error });
        }
        let worst = heap.pop().expect("nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Cannot split further in floating point.
            error -= worst.error;
            heap.push(Panel { error: 0.0, ..worst });
            continue;
        }
        let left = gauss_kronrod(&mut f, worst.a, mid);
        let right = gauss_kronrod(&mut f, mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
}

/// `ln ∫ exp(log_f)` over `[a, b]` for a unimodal integrand. Repeated scans
/// zoom onto the region where the integrand is within `e^-80` of its peak,
/// and the peak value is used as a shift.
pub fn integrate_log<F: FnMut(f64) -> f64>(mut log_f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    const SCAN: usize = 512;
    const DEPTH: f64 = 80.0;
    if b <= a {
        return Ok(f64::NEG_INFINITY);
    }
    let (mut from, mut to) = (a, b);
    let mut reference = f64::NEG_INFINITY;
    for _ in 0..64 {
        let step = (to - from) / SCAN as f64;
        let grid: Vec<f64> = (0..=SCAN).map(|k| log_f(from + step * k as f64)).collect();
        reference = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if reference.is_nan() || grid.iter().any(|v| v.is_nan()) {
            return Err(Error::numerical("log-integrand is NaN"));
        }
        if reference == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let lo = grid.iter().position(|v| *v >= reference - DEPTH).expect("peak is on the grid");
        let hi = grid.iter().rposition(|v| *v >= reference - DEPTH).expect("peak is on the grid");
        let next_from = from + step * lo.saturating_sub(1) as f64;
        let next_to = (from + step * (hi + 1).min(SCAN) as f64).min(to);
        let shrink = (next_to - next_from) / (to - from);
        (from, to) = (next_from, next_to);
        if shrink > 0.25 || to - from <= f64::EPSILON * from.abs().max(to.abs()) {
            break;
        }
    }
    let q = integrate(|x| (log_f(x) - reference).exp(), from, to, 32, rel_tol, 0.0)?;
    Ok(q.value.ln() + reference)
}

struct Scalar {
    h: f64,
    s: f64,
    delta2: f64,
    ys: Vec<f64>,
}

impl Scalar {
    fn new(cfg: &EmissionConfig, ys: &[Option<f64>]) -> Result<Self> {
        if cfg.d() != 1 || cfg.q() != 1 {
            return Err(Error::contract("quadrature oracle supports d = q = 1 only"));
        }
        Ok(Self {
            h: cfg.h0()[(0, 0)],
            s: cfg.cov().matrix()[(0, 0)],
            delta2: cfg.prior_scale()[0],
            ys: ys.iter().flatten().copied().collect(),
        })
    }

    /// `ln [Π N(y; hμ, σ² s) · N(μ; 0, σ² δ²)]`.
    fn log_joint(&self, mu: f64, sigma2: f64) -> f64 {
        let var = sigma2 * self.s;
        let mut acc = -0.5 * (2.0 * PI * sigma2 * self.delta2).ln() - mu * mu / (2.0 * sigma2 * self.delta2);
        for y in &self.ys {
            let r = y - self.h * mu;
            acc += -0.5 * (2.0 * PI * var).ln() - r * r / (2.0 * var);
        }
        acc
    }

    /// Vertex and curvature of the log-joint in `μ` (it is quadratic), used
    /// only to place the integration window and the shift.
    fn vertex(&self, sigma2: f64) -> (f64, f64) {
        let info: f64 = self.ys.len() as f64 * self.h * self.h / self.s + 1.0 / self.delta2;
        let centre = self.ys.iter().map(|y| self.h * y / self.s).sum::<f64>() / info;
        (centre, (sigma2 / info).sqrt())
    }

    /// `log_joint(μ) - log_joint(c)`, written as products of differences.
    fn log_joint_offset(&self, mu: f64, c: f64, sigma2: f64) -> f64 {
        let var = sigma2 * self.s;
        let mut acc = -(mu - c) * (mu + c) / (2.0 * sigma2 * self.delta2);
        for y in &self.ys {
            acc -= self.h * (c - mu) * (2.0 * y - self.h * (mu + c)) / (2.0 * var);
        }
        acc
    }

    fn log_mu_integral(&self, sigma2: f64, upper: f64) -> Result<f64> {
        let (c, w) = self.vertex(sigma2);
        let (a, b) = (c - 40.0 * w, (c + 40.0 * w).min(upper));
        if b <= a {
            return Ok(f64::NEG_INFINITY);
        }
        // Where σ² is extreme the offsets carry rounding noise that no
        // refinement removes; those regions carry no mass, so cap the effort.
        let q = integrate_capped(
            |mu| self.log_joint_offset(mu, c, sigma2).exp(),
            a,
            b,
            32,
            1e-13,
            0.0,
            256,
        )?;
        Ok(self.log_joint(c, sigma2) + q.value.ln())
    }

    fn log_inverse_gamma(nu: f64, gamma: f64, sigma2: f64) -> Result<f64> {
        let shape = 0.5 * nu;
        let rate = 0.5 * gamma;
        Ok(shape * rate.ln() - log_gamma(shape)? - (shape + 1.0) * sigma2.ln() - rate / sigma2)
    }

    /// `ln ∫∫_{μ ≤ upper}` of the joint over `μ` and `σ²`.
    fn log_mass(&self, noise: NoiseMode, upper: f64) -> Result<f64> {
        match noise {
            NoiseMode::Fixed { sigma2 } => self.log_mu_integral(sigma2, upper),
            NoiseMode::InverseGamma { nu, gamma } => {
                log_gamma(0.5 * nu)?;
                // Outer variable u = ln σ²; dσ² = σ² du.
                let mut failure = None;
                let value = integrate_log(
                    |u| {
                        let sigma2 = u.exp();
                        let inner = self.log_mu_integral(sigma2, upper).unwrap_or_else(|e| {
                            failure.get_or_insert(e);
                            f64::NAN
                        });
                        inner + Self::log_inverse_gamma(nu, gamma, sigma2).unwrap_or(f64::NAN) + u
                    },
                    -60.0,
                    60.0,
                    1e-10,
                )?;
                match failure {
                    Some(e) => Err(e),
                    None => Ok(value),
                }
            }
        }
    }
}

/// `ln P(segment)` for a scalar model by numerical integration over the
/// segment parameters. `None` entries are unobserved dates.
pub fn quadrature_marginal(ys: &[Option<f64>], cfg: &EmissionConfig) -> Result<LogProb> {
    let scalar = Scalar::new(cfg, ys)?;
    if scalar.ys.is_empty() {
        return Ok(LogProb::CERTAIN);
    }
    LogProb::new(scalar.log_mass(cfg.noise(), f64::INFINITY)?)
}

/// `P(μ ≤ θ | segment)` for a scalar model by numerical integration.
pub fn quadrature_risk(ys: &[Option<f64>], cfg: &EmissionConfig, theta: f64) -> Result<f64> {
    let scalar = Scalar::new(cfg, ys)?;
    let total = scalar.log_mass(cfg.noise(), f64::INFINITY)?;
    let below = scalar.log_mass(cfg.noise(), theta)?;
    Ok((below - total).exp().min(1.0))
}
