// SPDX-License-Identifier: MIT OR Apache-2.0

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renewcp::emission::{EmissionConfig, NoiseMode, RiskQuery};
use renewcp::filter::{last_changepoint_distribution, Filter};
use renewcp::length_prior::LengthPrior;
use renewcp::masked_linalg::{CovarianceSpec, ObservationMask};
use renewcp::oracle::enumerate_posterior;
use renewcp::posterior::{last_segment_risk, marginal_changepoint_probabilities, BackwardKernels};

struct Instance {
    cfg: EmissionConfig,
    prior: LengthPrior,
    ys: Vec<Vec<f64>>,
    masks: Vec<ObservationMask>,
}

fn instance(rng: &mut ChaCha8Rng, case: usize) -> Instance {
    let n = rng.random_range(1..=10);
    let d = rng.random_range(1..=2);
    let q = rng.random_range(1..=d);
    let h0 = DMatrix::from_fn(d, q, |_, _| rng.random_range(-1.5..1.5));
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.8..0.8));
    let cov = CovarianceSpec::new(&a * a.transpose() + DMatrix::identity(d, d) * 0.4).unwrap();
    let noise = if case % 2 == 0 {
        NoiseMode::Fixed { sigma2: rng.random_range(0.3..2.0) }
    } else {
        NoiseMode::InverseGamma { nu: rng.random_range(0.5..6.0), gamma: rng.random_range(0.2..3.0) }
    };
    let scale = (0..q).map(|_| rng.random_range(0.3..9.0)).collect();
    let cfg = EmissionConfig::new(h0, cov, scale, noise).unwrap();
    let prior = if (case / 2) % 2 == 0 {
        LengthPrior::geometric(rng.random_range(0.05..0.7)).unwrap()
    } else {
        LengthPrior::negative_binomial(rng.random_range(1..=4), rng.random_range(0.2..0.9)).unwrap()
    };
    let mut ys = Vec::new();
    let mut masks = Vec::new();
    let mut level = 0.0;
    for _ in 0..n {
        if rng.random_bool(0.3) {
            level = rng.random_range(-3.0..3.0);
        }
        let all_blank = rng.random_bool(0.1);
        let flags: Vec<bool> = (0..d).map(|_| !all_blank && rng.random_bool(0.75)).collect();
        ys.push(
            flags
                .iter()
                .map(|&o| if o { level + rng.random_range(-1.0..1.0) } else { f64::NAN })
                .collect(),
        );
        masks.push(ObservationMask::new(flags));
    }
    Instance { cfg, prior, ys, masks }
}

#[test]
fn exact_filter_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..80 {
        let inst = instance(&mut rng, case);
        let mut filter = Filter::exact(inst.cfg.clone(), inst.prior.clone());
        for (y, m) in inst.ys.iter().zip(&inst.masks) {
            filter.step(y, m).unwrap();
        }
        let exact = enumerate_posterior(&inst.ys, &inst.masks, &inst.cfg, &inst.prior).unwrap();

        assert!(
            (filter.log_evidence() - exact.log_evidence).abs() < 1e-8,
            "case {case}: evidence {} vs {}",
            filter.log_evidence(),
            exact.log_evidence
        );
        let law = last_changepoint_distribution(filter.state());
        for (j, p) in exact.last_changepoint() {
            let got = law.get(&j).copied().unwrap_or(0.0);
            assert!((got - p).abs() < 1e-8, "case {case}: p_n({j}) {got} vs {p}");
        }
        let marg = marginal_changepoint_probabilities(filter.trace()).unwrap();
        for ((t, got), (_, want)) in marg.probabilities.iter().zip(exact.marginals()) {
            assert!((got - want).abs() < 1e-8, "case {case}: marginal({t}) {got} vs {want}");
        }
        let kernels = BackwardKernels::new(filter.trace()).unwrap();
        for j in 2..=exact.n() {
            let law = exact.predecessor_law(j);
            if law.is_empty() {
                continue;
            }
            for &(i, p) in kernels.kernel(j) {
                let want = law.get(&i).copied().unwrap_or(0.0);
                assert!((p - want).abs() < 1e-8, "case {case}: kernel({j})({i}) {p} vs {want}");
            }
        }
        let v: Vec<f64> = (0..inst.cfg.q()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let query = RiskQuery::parameter(v, rng.random_range(-1.0..1.0));
        let risk = last_segment_risk(filter.state(), &inst.cfg, &query).unwrap();
        let want = exact.risk(&query).unwrap();
        assert!((risk - want).abs() < 1e-8, "case {case}: risk {risk} vs {want}");
        assert_eq!(kernels.map_segmentation().unwrap(), exact.greedy_map(), "case {case}");
    }
}
