use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bartcs::data::{ChainConfig, ExposureKind, Hyperparams, Scheme};
use bartcs::io::artifacts::{fit_to_dir, report_dir, simulate_to_file, ReportOptions};
use bartcs::io::config::{parse_config, RunConfig};
use bartcs::io::fmt4;
use bartcs::sim::{ScenarioId, ScenarioSpec};
use bartcs::BartError;

// stdout may be a closed pipe; output is advisory so write errors are dropped
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Bayesian additive regression trees for joint exposure/outcome modelling
/// with shared confounder-selection priors.
#[derive(Parser)]
#[command(name = "bartcs", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a CSV dataset.
    Fit(FitArgs),
    /// Run replicate simulations of a built-in scenario.
    Simulate(SimulateArgs),
    /// Summarize the artifacts of a previous fit.
    Report(ReportArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    exposure: Option<String>,
    /// Comma-separated covariate columns, or `all`.
    #[arg(long)]
    covariates: Option<String>,
    #[arg(long, value_parser = parse_kind)]
    exposure_kind: Option<ExposureKind>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    /// `n0`, `zero` or a nonnegative number.
    #[arg(long)]
    c_offset: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario)]
    scenario: ScenarioId,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    reps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_parser = parse_scheme, default_value = "marginal")]
    scheme: Scheme,
    #[arg(long, default_value_t = 25_000)]
    iters: usize,
    /// Defaults to half of `--iters`.
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 10)]
    thin: usize,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    /// Sample size; defaults to the scenario's own.
    #[arg(long)]
    n: Option<usize>,
    /// Number of covariates.
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value = "metrics.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    dir: PathBuf,
    /// Number of evenly spaced exposure values for the response curve.
    #[arg(long)]
    grid: Option<usize>,
    /// Explicit comma-separated exposure values.
    #[arg(long, value_delimiter = ',')]
    grid_values: Option<Vec<f64>>,
    /// Comma-separated covariates that every draw must use.
    #[arg(long, value_delimiter = ',')]
    x_cap: Option<Vec<String>>,
    /// Comma-separated superset of `--x-cap`.
    #[arg(long, value_delimiter = ',')]
    x_star: Option<Vec<String>>,
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    s.parse().map_err(|e: BartError| e.to_string())
}

fn parse_kind(s: &str) -> Result<ExposureKind, String> {
    s.parse().map_err(|e: BartError| e.to_string())
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    s.parse().map_err(|e: BartError| e.to_string())
}

enum Failure {
    Usage(String),
    Run(BartError),
}

impl From<BartError> for Failure {
    fn from(e: BartError) -> Self {
        Failure::Run(e)
    }
}

fn fit_config(args: &FitArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BartError::Io(format!("{}: {e}", path.display())))?;
        cfg.apply_map(&parse_config(&text)?)?;
    }
    let mut flags = BTreeMap::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            flags.insert(k.to_string(), v);
        }
    };
    put("input", args.input.as_ref().map(|p| p.display().to_string()));
    put("outcome", args.outcome.clone());
    put("exposure", args.exposure.clone());
    put("covariates", args.covariates.clone());
    put("exposure_kind", args.exposure_kind.map(|k| k.to_string()));
    put("scheme", args.scheme.map(|s| s.to_string()));
    put("iters", args.iters.map(|v| v.to_string()));
    put("burn_in", args.burn_in.map(|v| v.to_string()));
    put("thin", args.thin.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put("chains", args.chains.map(|v| v.to_string()));
    put("trees", args.trees.map(|v| v.to_string()));
    put("c_offset", args.c_offset.clone());
    put("output", args.output.as_ref().map(|p| p.display().to_string()));
    cfg.apply_map(&flags)?;

    for (what, missing) in [
        ("--input", cfg.input.is_none()),
        ("--outcome", cfg.outcome.is_none()),
        ("--exposure", cfg.exposure.is_none()),
    ] {
        if missing {
            return Err(Failure::Usage(format!(
                "the argument {what} is required (as a flag or in --config)"
            )));
        }
    }
    cfg.finish()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(input) = &cfg.input {
        if let Ok(abs) = std::fs::canonicalize(input) {
            cfg.input = Some(abs);
        }
    }
    Ok(cfg)
}

fn run_fit(args: &FitArgs) -> Result<(), Failure> {
    let cfg = fit_config(args)?;
    let out = fit_to_dir(&cfg)?;
    let s = &out.summary;
    say!(
        "{} mean={} ci=[{}, {}] rhat={} draws={}",
        s.estimand,
        fmt4(s.effect.mean),
        fmt4(s.effect.ci_low),
        fmt4(s.effect.ci_high),
        s.rhat.map_or_else(|| "NA".to_string(), fmt4),
        s.effect.draws.len()
    );
    for f in &out.files {
        say!("wrote {}", f.display());
    }
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut spec = ScenarioSpec::new(args.scenario, args.seed);
    spec.p = args.p;
    if let Some(n) = args.n {
        spec.n = n;
    }
    let hyper = Hyperparams {
        n_trees: args.trees,
        ..Hyperparams::default()
    };
    let chain = ChainConfig {
        n_iter: args.iters,
        burn_in: args.burn_in.unwrap_or(args.iters / 2),
        thin: args.thin,
        seed: args.seed,
        scheme: args.scheme,
        n_chains: args.chains,
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    hyper.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    chain.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let report = simulate_to_file(&spec, args.reps as usize, &hyper, &chain, &args.output)?;
    let a = &report.aggregate;
    say!(
        "all,{},{},{},{},{},{},{}",
        report.scenario,
        report.scheme,
        a.m,
        fmt4(a.bias),
        fmt4(a.mse),
        fmt4(a.coverage),
        fmt4(a.wall_time_s)
    );
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<(), Failure> {
    let opts = ReportOptions {
        grid_points: args.grid,
        grid_values: args.grid_values.clone(),
        x_cap: args.x_cap.clone(),
        x_star: args.x_star.clone(),
    };
    let out = report_dir(&args.dir, &opts)?;
    if let Some(d) = &out.classes {
        say!(
            "fraction_r_cap={} fraction_r_star={}",
            fmt4(d.fraction_r_cap),
            fmt4(d.fraction_r_star)
        );
    }
    for f in &out.files {
        say!("wrote {}", f.display());
    }
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("BARTCS_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        // a second initialization only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let result = match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Report(a) => run_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("ERROR {}: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
