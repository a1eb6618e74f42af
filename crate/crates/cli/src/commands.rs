// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::series::{Index, SeriesFile};
use renewcp::filter::{last_changepoint_distribution, Filter, FilterState, FilterTrace, PruneSettings};
use renewcp::oracle::{enumerate_posterior, MAX_EXACT_LENGTH};
use renewcp::posterior::{
    last_segment_risk, summarize_segments, BackwardKernels, MarginalReport, Segmentation, SegmentSummary,
};
use renewcp::simulate::simulate;
use serde::Serialize;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Everything `detect` computes.
#[derive(Debug)]
pub struct Detection {
    pub series: SeriesFile,
    pub state: FilterState,
    pub trace: FilterTrace,
    pub marginals: MarginalReport,
    pub map: Segmentation,
    pub segments: Vec<SegmentSummary>,
    pub risk: Option<f64>,
    pub elapsed_ms: u128,
}

/// Runs the filter and the backward passes.
pub fn run_detection(cfg: &RunConfig, series: SeriesFile) -> CliResult<Detection> {
    if series.is_empty() {
        return Err(CliError::Input("series has no data rows".into()));
    }
    let start = Instant::now();
    let mut filter = Filter::new(cfg.emission.clone(), cfg.length_prior(), cfg.prune);
    for (y, m) in series.values.iter().zip(&series.masks) {
        filter.step(y, m)?;
    }
    let (state, trace) = filter.into_parts();
    let kernels = BackwardKernels::new(&trace)?;
    let marginals = kernels.marginals();
    let map = kernels.map_segmentation()?;
    let segments = summarize_segments(&cfg.emission, &series.values, &series.masks, &map)?;
    let risk = cfg
        .risk
        .as_ref()
        .map(|q| last_segment_risk(&state, &cfg.emission, q))
        .transpose()?;
    Ok(Detection {
        series,
        state,
        trace,
        marginals,
        map,
        segments,
        risk,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

#[derive(Serialize)]
struct TraceLine<'a> {
    t: usize,
    particles: &'a [(usize, f64)],
}

#[derive(Serialize)]
struct RunSummary<'a> {
    seed: u64,
    n: usize,
    d: usize,
    prune: &'a PruneSettings,
    log_evidence: f64,
    live_particles: usize,
    pruned_particles: usize,
    pruned_mass: f64,
    map_changepoints: &'a [usize],
}

fn create(path: &Path) -> CliResult<fs::File> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn label(index: &[Index], t: usize) -> String {
    index[t - 1].to_string()
}

/// Writes the detection reports into `dir`.
pub fn write_reports(cfg: &RunConfig, det: &Detection, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let idx = &det.series.index;

    let mut out = String::from("changepoint,index,probability\n");
    for (j, p) in last_changepoint_distribution(&det.state) {
        writeln!(out, "{j},{},{p:e}", label(idx, j)).expect("string write");
    }
    write_text(&dir.join("last_changepoint.csv"), &out)?;

    let mut out = String::from("t,index,probability\n");
    for &(t, p) in &det.marginals.probabilities {
        writeln!(out, "{t},{},{p:e}", label(idx, t)).expect("string write");
    }
    write_text(&dir.join("marginals.csv"), &out)?;

    let q = cfg.emission.q();
    let mut out = String::from("start,end,start_index,end_index");
    for i in 1..=q {
        write!(out, ",mu{i}").expect("string write");
    }
    out.push_str(",sigma2_mean\n");
    for s in &det.segments {
        write!(out, "{},{},{},{}", s.start, s.end, label(idx, s.start), label(idx, s.end)).expect("string write");
        for m in &s.mu_hat {
            write!(out, ",{m}").expect("string write");
        }
        match s.sigma2_mean {
            Some(v) => writeln!(out, ",{v}"),
            None => writeln!(out, ","),
        }
        .expect("string write");
    }
    write_text(&dir.join("map_segments.csv"), &out)?;

    write_text(&dir.join("evidence.txt"), &format!("{}\n", det.state.log_evidence))?;
    if let Some(r) = det.risk {
        write_text(&dir.join("risk.txt"), &format!("{r:e}\n"))?;
    }

    let path = dir.join("trace.jsonl");
    let mut w = std::io::BufWriter::new(create(&path)?);
    for (k, snap) in det.trace.snapshots().iter().enumerate() {
        let line = serde_json::to_string(&TraceLine { t: k + 1, particles: snap })
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let summary = RunSummary {
        seed: cfg.seed,
        n: det.series.len(),
        d: cfg.emission.d(),
        prune: &cfg.prune,
        log_evidence: det.state.log_evidence,
        live_particles: det.state.particles.len(),
        pruned_particles: det.trace.dropped.len(),
        pruned_mass: det.trace.dropped_mass(),
        map_changepoints: &det.map.changepoints,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_text(&dir.join("run.json"), &(json + "\n"))
}

pub fn detect(cfg: &RunConfig, input: &Path, output: &Path) -> CliResult<Detection> {
    let series = SeriesFile::read(input, cfg.emission.d())?;
    let det = run_detection(cfg, series)?;
    write_reports(cfg, &det, output)?;
    log::info!(
        "{} dates, {} MAP segments, log evidence {:.6}, {} ms",
        det.series.len(),
        det.map.changepoints.len(),
        det.state.log_evidence,
        det.elapsed_ms
    );
    Ok(det)
}

/// `risk`: detection followed by the configured risk query, printed to stdout.
pub fn risk(cfg: &RunConfig, input: &Path, output: Option<&Path>) -> CliResult<f64> {
    let query = cfg
        .risk
        .as_ref()
        .ok_or_else(|| CliError::config("risk.v", "the risk command needs risk.v and risk.theta"))?;
    let series = SeriesFile::read(input, cfg.emission.d())?;
    let det = run_detection(cfg, series)?;
    if let Some(dir) = output {
        write_reports(cfg, &det, dir)?;
    }
    let value = last_segment_risk(&det.state, &cfg.emission, query)?;
    println!("{value:e}");
    Ok(value)
}

#[derive(Serialize)]
struct Truth<'a> {
    seed: u64,
    n: usize,
    changepoints: &'a [usize],
    segments: &'a [renewcp::simulate::SimulatedSegment],
}

/// `simulate`: writes the series at `output` and `truth.json` beside it.
pub fn simulate_cmd(cfg: &RunConfig, n: Option<usize>, output: &Path) -> CliResult<PathBuf> {
    let n = n
        .or(cfg.simulate_n)
        .ok_or_else(|| CliError::config("simulate.n", "series length missing (set simulate.n or --n)"))?;
    let sim = simulate(&cfg.emission, &cfg.length_prior(), cfg.simulation(n), cfg.seed)
        .map_err(|e| CliError::config("simulate", e.to_string()))?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    SeriesFile::write_simulated(output, &sim.ys)?;
    let truth_path = output.with_file_name("truth.json");
    let truth = Truth {
        seed: sim.seed,
        n,
        changepoints: &sim.changepoints,
        segments: &sim.segments,
    };
    let json = serde_json::to_string_pretty(&truth).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_text(&truth_path, &(json + "\n"))?;
    Ok(truth_path)
}

/// Maximum absolute deviations between the filter and the enumeration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Deviations {
    pub last_changepoint: f64,
    pub marginals: f64,
    pub log_evidence: f64,
    pub risk: Option<f64>,
}

/// `exact`: enumeration report as text, plus deviations when `compare` is set.
pub fn exact(cfg: &RunConfig, input: &Path, compare: bool) -> CliResult<(String, Option<Deviations>)> {
    let series = SeriesFile::read(input, cfg.emission.d())?;
    exact_report(cfg, &series, compare)
}

pub fn exact_report(cfg: &RunConfig, series: &SeriesFile, compare: bool) -> CliResult<(String, Option<Deviations>)> {
    let n = series.len();
    if n == 0 {
        return Err(CliError::Input("series has no data rows".into()));
    }
    if n > MAX_EXACT_LENGTH {
        return Err(CliError::Input(format!(
            "exact enumeration is limited to {MAX_EXACT_LENGTH} dates; the series has {n}"
        )));
    }
    let prior = cfg.length_prior();
    let post = enumerate_posterior(&series.values, &series.masks, &cfg.emission, &prior)?;
    let mut out = String::new();
    writeln!(out, "log_evidence {}", post.log_evidence).expect("string write");
    writeln!(out, "\n# last changepoint").expect("string write");
    for (j, p) in post.last_changepoint() {
        writeln!(out, "{j} {p:e}").expect("string write");
    }
    writeln!(out, "\n# changepoint marginals").expect("string write");
    for (t, p) in post.marginals() {
        writeln!(out, "{t} {p:e}").expect("string write");
    }
    let risk = match &cfg.risk {
        Some(q) => Some(post.risk(q)?),
        None => None,
    };
    if let Some(r) = risk {
        writeln!(out, "\n# risk\n{r:e}").expect("string write");
    }
    writeln!(out, "\n# joint MAP\n{:?}", post.joint_map().segmentation.changepoints).expect("string write");
    writeln!(out, "# greedy MAP\n{:?}", post.greedy_map().changepoints).expect("string write");

    let mut ranked: Vec<_> = post.segmentations.iter().collect();
    ranked.sort_by(|a, b| b.log_posterior.total_cmp(&a.log_posterior));
    const LISTED: usize = 32;
    writeln!(
        out,
        "\n# segmentations (changepoints, prior, posterior){}",
        if ranked.len() > LISTED { format!(", top {LISTED} of {}", ranked.len()) } else { String::new() }
    )
    .expect("string write");
    for w in ranked.iter().take(LISTED) {
        writeln!(out, "{:?} {:e} {:e}", w.segmentation.changepoints, w.log_prior.exp(), w.log_posterior.exp())
            .expect("string write");
    }

    if !compare {
        return Ok((out, None));
    }
    let mut filter = Filter::exact(cfg.emission.clone(), prior);
    for (y, m) in series.values.iter().zip(&series.masks) {
        filter.step(y, m)?;
    }
    let kernels = BackwardKernels::new(filter.trace())?;
    let law = last_changepoint_distribution(filter.state());
    let mut dev = Deviations {
        log_evidence: (filter.log_evidence() - post.log_evidence).abs(),
        ..Default::default()
    };
    for (j, p) in post.last_changepoint() {
        dev.last_changepoint = dev.last_changepoint.max((law.get(&j).copied().unwrap_or(0.0) - p).abs());
    }
    for (j, p) in &law {
        if !post.last_changepoint().contains_key(j) {
            dev.last_changepoint = dev.last_changepoint.max(*p);
        }
    }
    for ((_, a), (_, b)) in kernels.marginals().probabilities.iter().zip(post.marginals()) {
        dev.marginals = dev.marginals.max((a - b).abs());
    }
    if let (Some(q), Some(r)) = (&cfg.risk, risk) {
        dev.risk = Some((last_segment_risk(filter.state(), &cfg.emission, q)? - r).abs());
    }
    writeln!(out, "\n# max |filter - exact|").expect("string write");
    writeln!(out, "last_changepoint {:e}", dev.last_changepoint).expect("string write");
    writeln!(out, "marginals {:e}", dev.marginals).expect("string write");
    writeln!(out, "log_evidence {:e}", dev.log_evidence).expect("string write");
    if let Some(r) = dev.risk {
        writeln!(out, "risk {r:e}").expect("string write");
    }
    Ok((out, Some(dev)))
}

/// Applies `--max-particles` (a count or `inf`).
pub fn override_max_particles(cfg: &mut RunConfig, value: &str) -> CliResult<()> {
    let parsed = crate::config::parse_max_particles(&crate::config::parse_value(value))
        .map_err(|d| CliError::config("--max-particles", d))?;
    let min_log_weight = if parsed.is_none() && cfg.prune.max_particles.is_some() {
        // Unlimited particles from the command line means exact inference.
        f64::NEG_INFINITY
    } else {
        cfg.prune.min_log_weight
    };
    cfg.prune = PruneSettings::new(parsed, min_log_weight).map_err(|e| CliError::config("--max-particles", e.to_string()))?;
    Ok(())
}
