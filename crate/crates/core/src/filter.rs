// SPDX-License-Identifier: MIT OR Apache-2.0

//! Online forward recursion over the predecessor changepoint.
//!
//! After `t` observations the filter holds, for each candidate start `j` of
//! the current segment, `p_t(j) = P(segment containing t starts at j | y_1..t)`
//! together with the sufficient statistics of `y_j..t`. Each step either
//! extends every live segment (hazard "stay") or opens a new one at `t`.

use crate::emission::{log_marginal_likelihood, EmissionConfig, SegmentStats};
use crate::error::{Error, Result};
use crate::length_prior::LengthPrior;
use crate::masked_linalg::{DateContribution, ObservationMask};
use crate::numerics::{log_sum_exp, LogProb};
use serde::Serialize;
use std::collections::BTreeMap;

/// Default cap on live particles.
pub const DEFAULT_MAX_PARTICLES: usize = 256;

/// Default normalized log-weight below which a particle is dropped (`ln 1e-10`).
pub const DEFAULT_MIN_LOG_WEIGHT: f64 = -23.025850929940457;

/// A candidate start of the current segment.
#[derive(Clone, Debug)]
pub struct Particle {
    pub changepoint: usize,
    pub log_weight: LogProb,
    pub stats: SegmentStats,
    // ln P(j, t), cached so the predictive weight is one likelihood evaluation.
    log_marginal: f64,
}

impl Particle {
    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }
}

/// Posterior over the current segment's start after `t` observations.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub t: usize,
    /// Sorted by changepoint; log-weights normalized.
    pub particles: Vec<Particle>,
    pub log_evidence: f64,
}

impl FilterState {
    fn new() -> Self {
        Self {
            t: 0,
            particles: Vec::new(),
            log_evidence: 0.0,
        }
    }
}

/// Pruning policy: drop below `min_log_weight`, then keep the `max_particles`
/// heaviest. The newest particle always survives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PruneSettings {
    /// `None` keeps every particle.
    pub max_particles: Option<usize>,
    pub min_log_weight: f64,
}

impl Default for PruneSettings {
    fn default() -> Self {
        Self {
            max_particles: Some(DEFAULT_MAX_PARTICLES),
            min_log_weight: DEFAULT_MIN_LOG_WEIGHT,
        }
    }
}

impl PruneSettings {
    pub fn new(max_particles: Option<usize>, min_log_weight: f64) -> Result<Self> {
        if max_particles.is_some_and(|k| k < 2) {
            return Err(Error::domain("max_particles must be at least 2"));
        }
        if min_log_weight.is_nan() || min_log_weight > 0.0 {
            return Err(Error::domain(format!(
                "min_log_weight must be a log-probability <= 0; got {min_log_weight}"
            )));
        }
        Ok(Self {
            max_particles,
            min_log_weight,
        })
    }

    /// No pruning at all: exact inference.
    pub fn exact() -> Self {
        Self {
            max_particles: None,
            min_log_weight: f64::NEG_INFINITY,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.max_particles.is_none() && self.min_log_weight == f64::NEG_INFINITY
    }
}

/// A particle removed by pruning.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PruneRecord {
    pub t: usize,
    pub changepoint: usize,
    /// Normalized log-weight at the time it was dropped.
    pub log_weight: f64,
}

/// Everything the backward passes need: the `(j, ln p_t(j))` pairs after each
/// step, the length prior for the transition kernel, and the pruning audit.
#[derive(Clone, Debug)]
pub struct FilterTrace {
    prior: LengthPrior,
    snapshots: Vec<Vec<(usize, f64)>>,
    pub dropped: Vec<PruneRecord>,
}

impl FilterTrace {
    pub fn new(prior: LengthPrior) -> Self {
        Self {
            prior,
            snapshots: Vec::new(),
            dropped: Vec::new(),
        }
    }

    /// Builds a trace from externally supplied snapshots (1-based in `t`).
    pub fn from_snapshots(prior: LengthPrior, snapshots: Vec<Vec<(usize, f64)>>) -> Self {
        Self {
            prior,
            snapshots,
            dropped: Vec::new(),
        }
    }

    pub fn prior(&self) -> &LengthPrior {
        &self.prior
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// `(j, ln p_t(j))` after step `t` (1-based).
    pub fn snapshot(&self, t: usize) -> Option<&[(usize, f64)]> {
        t.checked_sub(1)
            .and_then(|i| self.snapshots.get(i))
            .map(Vec::as_slice)
    }

    pub fn snapshots(&self) -> &[Vec<(usize, f64)>] {
        &self.snapshots
    }

    /// Total probability mass removed by pruning.
    pub fn dropped_mass(&self) -> f64 {
        self.dropped.iter().map(|r| r.log_weight.exp()).sum()
    }
}

/// Streaming detector: owns the model, the state and the trace.
#[derive(Clone, Debug)]
pub struct Filter {
    cfg: EmissionConfig,
    prior: LengthPrior,
    prune: PruneSettings,
    state: FilterState,
    trace: FilterTrace,
}

impl Filter {
    pub fn new(cfg: EmissionConfig, prior: LengthPrior, prune: PruneSettings) -> Self {
        let trace = FilterTrace::new(prior.clone());
        Self {
            cfg,
            prior,
            prune,
            state: FilterState::new(),
            trace,
        }
    }

    pub fn exact(cfg: EmissionConfig, prior: LengthPrior) -> Self {
        Self::new(cfg, prior, PruneSettings::exact())
    }

    pub fn config(&self) -> &EmissionConfig {
        &self.cfg
    }

    pub fn prior(&self) -> &LengthPrior {
        &self.prior
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn trace(&self) -> &FilterTrace {
        &self.trace
    }

    pub fn into_parts(self) -> (FilterState, FilterTrace) {
        (self.state, self.trace)
    }

    pub fn log_evidence(&self) -> f64 {
        self.state.log_evidence
    }

    /// Absorbs the observation at date `t + 1`.
    ///
    /// Entries of `y` outside `mask` are ignored and may be NaN.
    pub fn step(&mut self, y: &[f64], mask: &ObservationMask) -> Result<()> {
        let t = self.state.t + 1;
        if y.len() != self.cfg.d() || mask.dim() != self.cfg.d() {
            return Err(Error::contract(format!(
                "date {t}: expected {} components, got {} values and a mask of {}",
                self.cfg.d(),
                y.len(),
                mask.dim()
            )));
        }
        for (i, v) in y.iter().enumerate() {
            if mask.is_observed(i) && !v.is_finite() {
                return Err(Error::Input {
                    date: t,
                    component: i + 1,
                    detail: format!("observed value {v} is not finite"),
                });
            }
        }
        let contribution = self.cfg.contribution(y, mask).map_err(|e| e.at_date(t))?;

        let mut next = Vec::with_capacity(self.state.particles.len() + 1);
        let mut opening = Vec::with_capacity(self.state.particles.len());
        for particle in &self.state.particles {
            let age = t - particle.changepoint;
            let first = particle.changepoint == 1;
            let hazard = self.prior.hazard(age, first)?;
            let old = particle.log_weight.value();
            opening.push(old + hazard.change.ln());
            if hazard.stay <= 0.0 {
                continue;
            }
            let (stats, log_marginal, weight) =
                self.extend(&particle.stats, particle.log_marginal, &contribution)?;
            next.push(Particle {
                changepoint: particle.changepoint,
                log_weight: LogProb::new(old + hazard.stay.ln() + weight)?,
                stats,
                log_marginal,
            });
        }

        let (stats, log_marginal, _) =
            self.extend(&self.cfg.empty_stats(), 0.0, &contribution)?;
        let entry = if t == 1 { 0.0 } else { log_sum_exp(&opening) };
        next.push(Particle {
            changepoint: t,
            log_weight: LogProb::new(entry + log_marginal)?,
            stats,
            log_marginal,
        });

        let norm = normalize(&mut next)
            .ok_or_else(|| Error::numerical(format!("every hypothesis has zero weight at date {t}")))?;
        self.state.particles = next;
        self.state.t = t;
        self.state.log_evidence += norm;
        self.prune_current();
        self.trace.snapshots.push(
            self.state
                .particles
                .iter()
                .map(|p| (p.changepoint, p.log_weight.value()))
                .collect(),
        );
        Ok(())
    }

    /// Runs [`Filter::step`] over a whole series.
    pub fn run<'a>(
        &mut self,
        series: impl IntoIterator<Item = (&'a [f64], &'a ObservationMask)>,
    ) -> Result<()> {
        for (y, mask) in series {
            self.step(y, mask)?;
        }
        Ok(())
    }

    fn extend(
        &self,
        stats: &SegmentStats,
        log_marginal: f64,
        contribution: &DateContribution,
    ) -> Result<(SegmentStats, f64, f64)> {
        let after = stats.absorbed(contribution);
        if contribution.observed == 0 {
            return Ok((after, log_marginal, 0.0));
        }
        let now = log_marginal_likelihood(&self.cfg, &after)?.value();
        Ok((after, now, now - log_marginal))
    }

    fn prune_current(&mut self) {
        let t = self.state.t;
        let dropped = prune(&mut self.state.particles, self.prune);
        if !dropped.is_empty() {
            log::debug!("date {t}: pruned {} particles", dropped.len());
        }
        self.trace
            .dropped
            .extend(dropped.into_iter().map(|(changepoint, log_weight)| PruneRecord {
                t,
                changepoint,
                log_weight,
            }));
    }
}

/// Subtracts the log-normalizer in place and returns it; `None` if all
/// weights are zero.
fn normalize(particles: &mut [Particle]) -> Option<f64> {
    let weights: Vec<f64> = particles.iter().map(|p| p.log_weight.value()).collect();
    let norm = log_sum_exp(&weights);
    if !norm.is_finite() {
        return None;
    }
    for p in particles.iter_mut() {
        p.log_weight = LogProb::new(p.log_weight.value() - norm).unwrap_or(LogProb::IMPOSSIBLE);
    }
    Some(norm)
}

/// Applies `settings` to normalized particles sorted by changepoint, keeping
/// the last (newest) one, and renormalizes the survivors. Returns the dropped
/// `(changepoint, log_weight)` pairs. Zero-weight particles are always dropped.
pub fn prune(particles: &mut Vec<Particle>, settings: PruneSettings) -> Vec<(usize, f64)> {
    let Some(newest) = particles.len().checked_sub(1) else {
        return Vec::new();
    };
    let mut keep: Vec<bool> = particles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let w = p.log_weight.value();
            i == newest || (w > f64::NEG_INFINITY && w >= settings.min_log_weight)
        })
        .collect();
    if let Some(k) = settings.max_particles {
        let mut order: Vec<usize> = (0..newest).filter(|&i| keep[i]).collect();
        if order.len() + 1 > k {
            // Heaviest first; ties favour the later changepoint.
            order.sort_by(|&a, &b| {
                particles[b]
                    .log_weight
                    .value()
                    .total_cmp(&particles[a].log_weight.value())
                    .then(b.cmp(&a))
            });
            for &i in &order[k - 1..] {
                keep[i] = false;
            }
        }
    }
    if keep.iter().all(|k| *k) {
        return Vec::new();
    }
    let mut dropped = Vec::new();
    let mut i = 0;
    particles.retain(|p| {
        let k = keep[i];
        i += 1;
        if !k {
            dropped.push((p.changepoint, p.log_weight.value()));
        }
        k
    });
    if normalize(particles).is_none() {
        // Only the newest survived and it had no mass; give it all.
        if let Some(p) = particles.last_mut() {
            p.log_weight = LogProb::CERTAIN;
        }
    }
    dropped
}

/// `p_t(j)` keyed by changepoint.
pub fn last_changepoint_distribution(state: &FilterState) -> BTreeMap<usize, f64> {
    state
        .particles
        .iter()
        .map(|p| (p.changepoint, p.log_weight.prob()))
        .collect()
}
