// SPDX-License-Identifier: MIT OR Apache-2.0

//! Renewal prior on segment lengths.
//!
//! `g(t)` is the mass of the distance between consecutive changepoints and
//! `S(t) = 1 - G(t)` its survival function. The first segment, observed from
//! an arbitrary origin, follows the residual (size-biased) law
//! `g0(d) = S(d - 1) / E[L]` with survival `S0`. Hazards are the transition
//! probabilities of the predecessor-changepoint chain.
//!
//! Tables are filled from closed forms and grown on demand (doubling) until
//! the survival drops below [`TAIL_EPSILON`]; past that point a segment is
//! forced to end.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, RwLock};

/// Survival level below which tables stop growing and the hazard becomes 1.
pub const TAIL_EPSILON: f64 = 1e-12;

const INITIAL_HORIZON: usize = 256;

/// Family of the segment-length law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthKind {
    /// `g(t) = p (1-p)^(t-1)`.
    Geometric { p: f64 },
    /// Trials needed to reach `r` successes: `g(t) = C(t-1, r-1) p^r (1-p)^(t-r)`.
    NegativeBinomial { r: u32, p: f64 },
}

impl LengthKind {
    fn validate(&self) -> Result<()> {
        let p = match *self {
            LengthKind::Geometric { p } => p,
            LengthKind::NegativeBinomial { r, p } => {
                if r < 1 {
                    return Err(Error::domain("negative binomial r must be >= 1"));
                }
                p
            }
        };
        // p = 1 is the degenerate "every date starts a segment" law.
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::domain(format!("length prior p must lie in (0,1]; got {p}")));
        }
        Ok(())
    }
}

/// Probability of staying in the current segment versus starting a new one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hazard {
    pub stay: f64,
    pub change: f64,
}

#[derive(Debug)]
struct Tables {
    // Index t = 0..=horizon.
    mass: Vec<f64>,
    survival: Vec<f64>,
    residual_mass: Vec<f64>,
    residual_survival: Vec<f64>,
    cap: Option<usize>,
    residual_cap: Option<usize>,
}

impl Tables {
    fn horizon(&self) -> usize {
        self.mass.len() - 1
    }

    fn complete(&self) -> bool {
        self.cap.is_some() && self.residual_cap.is_some()
    }
}

/// Segment-length prior with lazily extended tables.
///
/// Cloning shares the table cache.
#[derive(Clone, Debug)]
pub struct LengthPrior {
    kind: LengthKind,
    tables: Arc<RwLock<Tables>>,
}

impl LengthPrior {
    pub fn new(kind: LengthKind) -> Result<Self> {
        Self::with_horizon(kind, INITIAL_HORIZON)
    }

    pub fn geometric(p: f64) -> Result<Self> {
        Self::new(LengthKind::Geometric { p })
    }

    pub fn negative_binomial(r: u32, p: f64) -> Result<Self> {
        Self::new(LengthKind::NegativeBinomial { r, p })
    }

    /// Builds the prior with tables precomputed through `horizon`.
    pub fn with_horizon(kind: LengthKind, horizon: usize) -> Result<Self> {
        kind.validate()?;
        let tables = Tables {
            mass: vec![0.0],
            survival: vec![1.0],
            residual_mass: vec![0.0],
            residual_survival: vec![1.0],
            cap: None,
            residual_cap: None,
        };
        let prior = Self {
            kind,
            tables: Arc::new(RwLock::new(tables)),
        };
        prior.ensure(horizon.max(1));
        Ok(prior)
    }

    pub fn kind(&self) -> LengthKind {
        self.kind
    }

    /// Current table horizon.
    pub fn horizon(&self) -> usize {
        self.tables.read().expect("length prior cache poisoned").horizon()
    }

    /// Expected segment length `E[L] = Σ_{s≥1} S(s-1)`.
    pub fn mean_length(&self) -> f64 {
        match self.kind {
            LengthKind::Geometric { p } => 1.0 / p,
            LengthKind::NegativeBinomial { r, p } => r as f64 / p,
        }
    }

    /// `g(t)`.
    pub fn mass(&self, t: usize) -> Result<f64> {
        if t < 1 {
            return Err(Error::domain("segment length mass is defined for t >= 1"));
        }
        Ok(self.lookup(t, |tab| &tab.mass, closed_mass))
    }

    /// Residual-time mass `g0(d)` of the first segment's length.
    pub fn residual_mass(&self, d: usize) -> Result<f64> {
        if d < 1 {
            return Err(Error::domain("residual mass is defined for d >= 1"));
        }
        Ok(self.lookup(d, |tab| &tab.residual_mass, closed_residual_mass))
    }

    /// `1 - G(t)`, for `t >= 0`.
    pub fn survival(&self, t: usize) -> f64 {
        self.lookup(t, |tab| &tab.survival, closed_survival)
    }

    /// `1 - G0(t)`, for `t >= 0`.
    pub fn residual_survival(&self, t: usize) -> f64 {
        self.lookup(t, |tab| &tab.residual_survival, closed_residual_survival)
    }

    /// Transition probabilities of a segment of current length `age`:
    /// `stay = S(age)/S(age-1)`, `change = g(age)/S(age-1)`, with the residual
    /// law when the segment is the first one.
    pub fn hazard(&self, age: usize, first_segment: bool) -> Result<Hazard> {
        if age < 1 {
            return Err(Error::domain("hazard is defined for age >= 1"));
        }
        self.ensure(age);
        let tab = self.tables.read().expect("length prior cache poisoned");
        let cap = if first_segment { tab.residual_cap } else { tab.cap };
        if cap.is_some_and(|c| age > c) {
            return Ok(Hazard {
                stay: 0.0,
                change: 1.0,
            });
        }
        let (mass, survival) = if first_segment {
            (&tab.residual_mass, &tab.residual_survival)
        } else {
            (&tab.mass, &tab.survival)
        };
        let before = survival[age - 1];
        if before <= 0.0 {
            return Ok(Hazard {
                stay: 0.0,
                change: 1.0,
            });
        }
        // The smaller branch is evaluated directly, the larger as its complement.
        let stay = survival[age] / before;
        if stay < 0.5 {
            Ok(Hazard {
                stay,
                change: 1.0 - stay,
            })
        } else {
            let change = mass[age] / before;
            Ok(Hazard {
                stay: 1.0 - change,
                change,
            })
        }
    }

    /// Draws a segment length by iterating the hazard.
    pub fn sample_length<R: Rng + ?Sized>(&self, rng: &mut R, first_segment: bool) -> usize {
        let mut age = 1;
        loop {
            let h = self
                .hazard(age, first_segment)
                .expect("age starts at 1");
            if rng.random::<f64>() < h.change {
                return age;
            }
            age += 1;
        }
    }

    fn lookup(
        &self,
        t: usize,
        table: impl Fn(&Tables) -> &Vec<f64>,
        closed: fn(LengthKind, usize) -> f64,
    ) -> f64 {
        self.ensure(t);
        let tab = self.tables.read().expect("length prior cache poisoned");
        match table(&tab).get(t) {
            Some(v) => *v,
            // Beyond the capped horizon: evaluate directly.
            None => closed(self.kind, t),
        }
    }

    fn ensure(&self, t: usize) {
        {
            let tab = self.tables.read().expect("length prior cache poisoned");
            if t <= tab.horizon() || tab.complete() {
                return;
            }
        }
        let mut tab = self.tables.write().expect("length prior cache poisoned");
        let current = tab.horizon();
        if t <= current || tab.complete() {
            return;
        }
        let target = t.max(2 * current).max(INITIAL_HORIZON);
        for s in current + 1..=target {
            let surv = closed_survival(self.kind, s);
            let res_surv = closed_residual_survival(self.kind, s);
            tab.mass.push(closed_mass(self.kind, s));
            tab.survival.push(surv);
            tab.residual_mass.push(closed_residual_mass(self.kind, s));
            tab.residual_survival.push(res_surv);
            if tab.cap.is_none() && surv < TAIL_EPSILON {
                tab.cap = Some(s);
            }
            if tab.residual_cap.is_none() && res_surv < TAIL_EPSILON {
                tab.residual_cap = Some(s);
            }
            if tab.complete() {
                break;
            }
        }
    }
}

fn ln_binomial_coefficient(m: usize, i: usize) -> f64 {
    let i = i.min(m - i);
    if i <= 64 {
        (1..=i)
            .map(|k| ((m - i + k) as f64 / k as f64).ln())
            .sum()
    } else {
        use crate::numerics::ln_gamma_positive as lg;
        lg(m as f64 + 1.0) - lg(i as f64 + 1.0) - lg((m - i) as f64 + 1.0)
    }
}

/// `P(Binomial(m, p) = i)`.
fn binomial_pmf(m: usize, i: usize, p: f64) -> f64 {
    if i > m {
        return 0.0;
    }
    let ln = ln_binomial_coefficient(m, i) + i as f64 * p.ln();
    ln.exp() * failure_power(p, m - i)
}

/// `(1-p)^k`, with `0^0 = 1`.
fn failure_power(p: f64, k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        (k as f64 * (-p).ln_1p()).exp()
    }
}

fn closed_mass(kind: LengthKind, t: usize) -> f64 {
    if t == 0 {
        return 0.0;
    }
    match kind {
        LengthKind::Geometric { p } => p * failure_power(p, t - 1),
        LengthKind::NegativeBinomial { r, p } => {
            let r = r as usize;
            if t < r {
                0.0
            } else {
                p * binomial_pmf(t - 1, r - 1, p)
            }
        }
    }
}

fn closed_survival(kind: LengthKind, t: usize) -> f64 {
    match kind {
        LengthKind::Geometric { p } => failure_power(p, t),
        // Fewer than r successes in t trials.
        LengthKind::NegativeBinomial { r, p } => (0..(r as usize).min(t + 1))
            .map(|i| binomial_pmf(t, i, p))
            .sum(),
    }
}

fn closed_residual_mass(kind: LengthKind, d: usize) -> f64 {
    if d == 0 {
        return 0.0;
    }
    match kind {
        LengthKind::Geometric { .. } => closed_mass(kind, d),
        LengthKind::NegativeBinomial { r, p } => p / r as f64 * closed_survival(kind, d - 1),
    }
}

fn closed_residual_survival(kind: LengthKind, d: usize) -> f64 {
    match kind {
        LengthKind::Geometric { .. } => closed_survival(kind, d),
        // Σ_{s>d} g0(s) = (1/r) Σ_{i<r} P(Binomial(d,p) ≤ i)
        LengthKind::NegativeBinomial { r, p } => {
            let r = r as usize;
            (0..r.min(d + 1))
                .map(|i| (r - i) as f64 * binomial_pmf(d, i, p))
                .sum::<f64>()
                / r as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mass_examples() {
        let geo = LengthPrior::geometric(0.5).unwrap();
        assert_eq!(geo.mass(1).unwrap(), 0.5);
        let nb = LengthPrior::negative_binomial(2, 0.5).unwrap();
        assert!((nb.mass(2).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(nb.mass(1).unwrap(), 0.0);
        assert!(matches!(nb.mass(0), Err(Error::Domain(_))));
    }

    #[test]
    fn residual_mass_examples() {
        let geo = LengthPrior::geometric(0.3).unwrap();
        assert!((geo.residual_mass(4).unwrap() - 0.1029).abs() < 1e-14);
        // S(0) / E[L] = 1 / 4, and the binomial closed form gives (0.5 * C(0,0) + 0) / 2.
        let nb = LengthPrior::negative_binomial(2, 0.5).unwrap();
        assert!((nb.residual_mass(1).unwrap() - 0.25).abs() < 1e-15);
        assert!(nb.residual_mass(0).is_err());
    }

    #[test]
    fn residual_mass_normalizes() {
        for prior in [
            LengthPrior::geometric(0.3).unwrap(),
            LengthPrior::negative_binomial(2, 0.5).unwrap(),
            LengthPrior::negative_binomial(5, 0.2).unwrap(),
        ] {
            let total: f64 = (1..5000).map(|d| prior.residual_mass(d).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-10, "{:?}: {total}", prior.kind());
        }
    }

    #[test]
    fn hazard_examples() {
        let geo = LengthPrior::geometric(0.2).unwrap();
        let h = geo.hazard(7, false).unwrap();
        assert!((h.stay - 0.8).abs() < 1e-14 && (h.change - 0.2).abs() < 1e-14);

        let nb = LengthPrior::negative_binomial(2, 0.5).unwrap();
        let h = nb.hazard(1, false).unwrap();
        assert_eq!((h.stay, h.change), (1.0, 0.0));
        let h = nb.hazard(2, false).unwrap();
        assert!((h.change - 0.25).abs() < 1e-15);
        assert!(nb.hazard(0, true).is_err());
    }

    #[test]
    fn hazard_sums_to_one_and_geometric_is_constant() {
        let priors = [
            LengthPrior::geometric(0.07).unwrap(),
            LengthPrior::negative_binomial(3, 0.25).unwrap(),
            LengthPrior::negative_binomial(1, 0.4).unwrap(),
        ];
        for prior in &priors {
            let horizon = prior.horizon();
            for age in 1..=horizon {
                for first in [false, true] {
                    let h = prior.hazard(age, first).unwrap();
                    assert!((h.stay + h.change - 1.0).abs() <= f64::EPSILON);
                }
            }
        }
        let geo = &priors[0];
        let h1 = geo.hazard(1, false).unwrap();
        for age in 2..200 {
            let h = geo.hazard(age, age % 2 == 0).unwrap();
            assert!((h.change - h1.change).abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_residual_equals_mass() {
        let geo = LengthPrior::geometric(0.11).unwrap();
        for d in 1..300 {
            assert!((geo.residual_mass(d).unwrap() - geo.mass(d).unwrap()).abs() < 1e-16);
        }
    }

    #[test]
    fn tables_grow_and_cap() {
        let geo = LengthPrior::geometric(0.5).unwrap();
        // 0.5^t < 1e-12 first at t = 40.
        let h = geo.hazard(41, false).unwrap();
        assert_eq!((h.stay, h.change), (0.0, 1.0));
        assert!(geo.survival(40) < TAIL_EPSILON);
        assert!(geo.survival(39) >= TAIL_EPSILON);

        let slow = LengthPrior::geometric(0.001).unwrap();
        assert_eq!(slow.horizon(), INITIAL_HORIZON);
        slow.hazard(1000, false).unwrap();
        assert!(slow.horizon() >= 1000);
        let surv = slow.survival(slow.horizon());
        assert!(surv > 0.0);
    }

    #[test]
    fn survival_consistent_with_mass() {
        let nb = LengthPrior::negative_binomial(4, 0.3).unwrap();
        let mut tail = 0.0;
        // S(t) = Σ_{s>t} g(s), summed from far out inward.
        let far = 400;
        let mut tails = vec![0.0; far + 1];
        for s in (1..=far).rev() {
            tails[s - 1] = tail + nb.mass(s).unwrap();
            tail = tails[s - 1];
        }
        for t in 0..100 {
            assert!((nb.survival(t) - tails[t]).abs() < 1e-14, "t={t}");
        }
    }

    #[test]
    fn sampled_lengths_follow_mass() {
        let nb = LengthPrior::negative_binomial(2, 0.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let mut counts = [0usize; 12];
        for _ in 0..draws {
            let len = nb.sample_length(&mut rng, false);
            if len < counts.len() {
                counts[len] += 1;
            }
        }
        for (t, &c) in counts.iter().enumerate().skip(1) {
            let g = nb.mass(t).unwrap();
            let se = (g * (1.0 - g) / draws as f64).sqrt().max(1e-12);
            let freq = c as f64 / draws as f64;
            assert!((freq - g).abs() < 4.0 * se + 1e-12, "t={t}: {freq} vs {g}");
        }
    }

    #[test]
    fn degenerate_geometric_always_changes() {
        let every = LengthPrior::geometric(1.0).unwrap();
        assert_eq!(every.mass(1).unwrap(), 1.0);
        assert_eq!(every.mass(2).unwrap(), 0.0);
        for first in [false, true] {
            let h = every.hazard(1, first).unwrap();
            assert_eq!((h.stay, h.change), (0.0, 1.0));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LengthPrior::geometric(0.0).is_err());
        assert!(LengthPrior::geometric(1.5).is_err());
        assert!(LengthPrior::negative_binomial(0, 0.3).is_err());
        assert!(LengthPrior::negative_binomial(2, f64::NAN).is_err());
    }
}
