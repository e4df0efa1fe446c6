//! The `fit`, `report` and `simulate` workflows and the files they write.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::chain::{run_chains, Trace};
use crate::data::{ChainConfig, Dataset, ExposureKind, Hyperparams};
use crate::diagnostics::{class_decomposition_pooled, gelman_rubin, pip_pooled, ClassDecomposition};
use crate::error::{BartError, Result};
use crate::estimands::{exposure_response, per_draw_effects, EffectSummary};
use crate::io::config::{parse_config, RunConfig};
use crate::io::table::ingest_csv;
use crate::io::trace::{parse_trace, render_trace, TraceFile};
use crate::io::{fmt4, write_atomic};
use crate::sim::{run_replicates, ScenarioSpec, SimulationReport};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PIP_FILE: &str = "pip.csv";
pub const RUN_CONF_FILE: &str = "run.conf";
pub const EXPOSURE_RESPONSE_FILE: &str = "exposure_response.csv";
pub const PIP_PLOT_FILE: &str = "pip_plot.csv";
pub const CLASS_FILE: &str = "class_decomposition.csv";

pub fn trace_file_name(chain: usize) -> String {
    format!("trace_{chain}.jsonl")
}

/// Headline result of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub estimand: String,
    pub effect: EffectSummary,
    /// `None` with a single chain.
    pub rhat: Option<f64>,
    pub n_chains: usize,
}

fn estimand_label(kind: ExposureKind) -> &'static str {
    match kind {
        ExposureKind::Binary => "ate",
        ExposureKind::Continuous => "delta_q75_q25",
    }
}

pub fn summarize(files: &[TraceFile]) -> Result<FitSummary> {
    let first = files.first().ok_or(BartError::EmptyTrace)?;
    let draws: Vec<f64> = files.iter().flat_map(|f| f.effects.iter().copied()).collect();
    let effect = EffectSummary::from_draws(draws)?;
    let rhat = if files.len() > 1 {
        let chains: Vec<Vec<f64>> = files.iter().map(|f| f.effects.clone()).collect();
        Some(gelman_rubin(&chains)?)
    } else {
        None
    };
    Ok(FitSummary {
        estimand: estimand_label(first.trace.exposure_kind).to_string(),
        effect,
        rhat,
        n_chains: files.len(),
    })
}

pub fn render_summary(s: &FitSummary) -> String {
    format!(
        "estimand,mean,ci_low,ci_high,rhat,n_draws,n_chains\n{},{},{},{},{},{},{}\n",
        s.estimand,
        fmt4(s.effect.mean),
        fmt4(s.effect.ci_low),
        fmt4(s.effect.ci_high),
        s.rhat.map_or_else(|| "NA".to_string(), fmt4),
        s.effect.draws.len(),
        s.n_chains
    )
}

pub fn render_pip(files: &[TraceFile]) -> Result<String> {
    let traces: Vec<Trace> = files.iter().map(|f| f.trace.clone()).collect();
    let report = pip_pooled(&traces)?;
    let mut out = String::from("variable,pip_exposure,pip_outcome,pip_any\n");
    if let Some(e) = report.exposure_variable {
        let _ = writeln!(out, "{},NA,{},{}", files[0].exposure_name, fmt4(e), fmt4(e));
    }
    for (j, name) in files[0].covariates.iter().enumerate() {
        let _ = writeln!(
            out,
            "{name},{},{},{}",
            fmt4(report.exposure[j]),
            fmt4(report.outcome[j]),
            fmt4(report.any[j])
        );
    }
    Ok(out)
}

/// Result of a completed `fit` run.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub summary: FitSummary,
    pub files: Vec<PathBuf>,
}

/// Runs every chain of `cfg` and writes traces, summary, PIP table and the
/// resolved configuration into `cfg.output`.
pub fn fit_to_dir(cfg: &RunConfig) -> Result<FitOutcome> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| BartError::Config("no input file given".into()))?;
    let roles = cfg.roles()?;
    let data = ingest_csv(input, &roles, cfg.exposure_kind)?;
    let traces = run_chains(&data, &cfg.hyper, &cfg.chain)?;
    let dir = &cfg.output;
    fs::create_dir_all(dir)?;

    let mut files = Vec::with_capacity(traces.len());
    for trace in traces {
        let effects = per_draw_effects(&trace, data.x(), data.a())?;
        files.push(TraceFile {
            trace,
            covariates: data.names().to_vec(),
            exposure_name: roles.exposure.clone(),
            effects,
        });
    }
    let mut written = Vec::new();
    for f in &files {
        let path = dir.join(trace_file_name(f.trace.chain));
        write_atomic(&path, render_trace(f).as_bytes())?;
        written.push(path);
    }
    let summary = summarize(&files)?;
    let path = dir.join(SUMMARY_FILE);
    write_atomic(&path, render_summary(&summary).as_bytes())?;
    written.push(path);
    let path = dir.join(PIP_FILE);
    write_atomic(&path, render_pip(&files)?.as_bytes())?;
    written.push(path);
    let path = dir.join(RUN_CONF_FILE);
    write_atomic(&path, cfg.render().as_bytes())?;
    written.push(path);
    Ok(FitOutcome {
        summary,
        files: written,
    })
}

/// Reads every `trace_<k>.jsonl` in `dir`, ordered by chain.
pub fn load_traces(dir: &Path) -> Result<Vec<TraceFile>> {
    let entries = fs::read_dir(dir)
        .map_err(|_| BartError::MissingArtifact(format!("{} is not a readable directory", dir.display())))?;
    let mut indexed = Vec::new();
    for e in entries {
        let name = e?.file_name().to_string_lossy().into_owned();
        if let Some(k) = name
            .strip_prefix("trace_")
            .and_then(|r| r.strip_suffix(".jsonl"))
            .and_then(|k| k.parse::<usize>().ok())
        {
            indexed.push(k);
        }
    }
    if indexed.is_empty() {
        return Err(BartError::MissingArtifact(format!(
            "no trace files in {}",
            dir.display()
        )));
    }
    indexed.sort_unstable();
    indexed
        .into_iter()
        .map(|k| {
            let text = fs::read_to_string(dir.join(trace_file_name(k)))?;
            parse_trace(&text)
        })
        .collect()
}

/// Options for `report`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOptions {
    /// Evenly spaced exposure grid size over the observed range.
    pub grid_points: Option<usize>,
    /// Explicit exposure grid; takes precedence over `grid_points`.
    pub grid_values: Option<Vec<f64>>,
    /// Required and enlarged variable sets, by covariate name.
    pub x_cap: Option<Vec<String>>,
    pub x_star: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub files: Vec<PathBuf>,
    pub curve: Option<Vec<(f64, EffectSummary)>>,
    pub classes: Option<ClassDecomposition>,
}

/// `n` evenly spaced points over `[lo, hi]`; a single point sits at the midpoint.
pub fn even_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

fn resolve_names(names: &[String], wanted: &[String]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|w| {
            names
                .iter()
                .position(|n| n == w)
                .ok_or_else(|| BartError::MissingColumn(w.clone()))
        })
        .collect()
}

fn load_dataset_for(dir: &Path) -> Result<Dataset> {
    let conf_path = dir.join(RUN_CONF_FILE);
    let text = fs::read_to_string(&conf_path)
        .map_err(|_| BartError::MissingArtifact(conf_path.display().to_string()))?;
    let mut cfg = RunConfig::default();
    cfg.apply_map(&parse_config(&text)?)?;
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| BartError::MissingArtifact("run.conf has no input path".into()))?;
    if !input.exists() {
        return Err(BartError::MissingArtifact(input.display().to_string()));
    }
    ingest_csv(&input, &cfg.roles()?, cfg.exposure_kind)
}

/// Post-processes the artifacts of a finished `fit` run.
pub fn report_dir(dir: &Path, opts: &ReportOptions) -> Result<ReportOutcome> {
    let files = load_traces(dir)?;
    let first = &files[0];
    let traces: Vec<Trace> = files.iter().map(|f| f.trace.clone()).collect();
    let mut written = Vec::new();

    let wants_grid = opts.grid_points.is_some() || opts.grid_values.is_some();
    if wants_grid && first.trace.exposure_kind == ExposureKind::Binary {
        return Err(BartError::UnsupportedForBinary(
            "an exposure-response grid needs a continuous exposure".into(),
        ));
    }

    let report = pip_pooled(&traces)?;
    let mut pip_csv = String::from("variable,model,pip\n");
    if let Some(e) = report.exposure_variable {
        let _ = writeln!(pip_csv, "{},outcome,{}", first.exposure_name, fmt4(e));
    }
    for (j, name) in first.covariates.iter().enumerate() {
        for (model, v) in [
            ("exposure", report.exposure[j]),
            ("outcome", report.outcome[j]),
            ("any", report.any[j]),
        ] {
            let _ = writeln!(pip_csv, "{name},{model},{}", fmt4(v));
        }
    }
    let path = dir.join(PIP_PLOT_FILE);
    write_atomic(&path, pip_csv.as_bytes())?;
    written.push(path);

    let classes = match (&opts.x_cap, &opts.x_star) {
        (None, None) => None,
        (cap, star) => {
            let cap_names = cap.clone().unwrap_or_default();
            let star_names = star.clone().unwrap_or_else(|| cap_names.clone());
            let cap_idx = resolve_names(&first.covariates, &cap_names)?;
            let star_idx = resolve_names(&first.covariates, &star_names)?;
            let d = class_decomposition_pooled(&traces, &cap_idx, &star_idx)?;
            let csv = format!(
                "x_cap,x_star,fraction_r_cap,fraction_r_star\n{},{},{},{}\n",
                cap_names.join(";"),
                star_names.join(";"),
                fmt4(d.fraction_r_cap),
                fmt4(d.fraction_r_star)
            );
            let path = dir.join(CLASS_FILE);
            write_atomic(&path, csv.as_bytes())?;
            written.push(path);
            Some(d)
        }
    };

    let curve = if wants_grid {
        let (lo, hi) = first.trace.exposure_range;
        let grid = match (&opts.grid_values, opts.grid_points) {
            (Some(v), _) => v.clone(),
            (None, Some(n)) => even_grid(lo, hi, n),
            (None, None) => unreachable!(),
        };
        if grid.is_empty() {
            return Err(BartError::EmptyGrid);
        }
        if let Some(&value) = grid.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(BartError::OutOfSupport {
                value,
                low: lo,
                high: hi,
            });
        }
        let data = load_dataset_for(dir)?;
        let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
        for t in &traces {
            for (k, s) in exposure_response(t, data.x(), &grid)?.into_iter().enumerate() {
                pooled[k].extend(s.draws);
            }
        }
        let mut csv = String::from("grid,mean,ci_low,ci_high\n");
        let mut curve = Vec::with_capacity(grid.len());
        for (a, draws) in grid.iter().zip(pooled) {
            let s = EffectSummary::from_draws(draws)?;
            let _ = writeln!(csv, "{},{},{},{}", fmt4(*a), fmt4(s.mean), fmt4(s.ci_low), fmt4(s.ci_high));
            curve.push((*a, s));
        }
        let path = dir.join(EXPOSURE_RESPONSE_FILE);
        write_atomic(&path, csv.as_bytes())?;
        written.push(path);
        Some(curve)
    } else {
        None
    };

    Ok(ReportOutcome {
        files: written,
        curve,
        classes,
    })
}

pub const METRICS_HEADER: &str = "row,scenario,scheme,m,bias,mse,coverage,wall_time_s";

/// Aggregate row first, then one row per replicate.
pub fn render_metrics(report: &SimulationReport) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    let a = &report.aggregate;
    let _ = writeln!(
        out,
        "all,{},{},{},{},{},{},{}",
        report.scenario,
        report.scheme,
        a.m,
        fmt4(a.bias),
        fmt4(a.mse),
        fmt4(a.coverage),
        fmt4(a.wall_time_s)
    );
    for r in &report.replicates {
        let _ = writeln!(
            out,
            "{},{},{},1,{},{},{},{}",
            r.index,
            report.scenario,
            report.scheme,
            fmt4(r.bias),
            fmt4(r.squared_error),
            if r.covered { "1.0000" } else { "0.0000" },
            fmt4(r.wall_time_s)
        );
    }
    out
}

pub fn simulate_to_file(
    spec: &ScenarioSpec,
    m: usize,
    hyper: &Hyperparams,
    chain: &ChainConfig,
    path: &Path,
) -> Result<SimulationReport> {
    let report = run_replicates(spec, m, hyper, chain)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(path, render_metrics(&report).as_bytes())?;
    Ok(report)
}
