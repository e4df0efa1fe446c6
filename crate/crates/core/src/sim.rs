//! Simulation scenarios, true-effect oracles and replicate metrics.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::chain::run_chains;
use crate::data::{binary_arms, ChainConfig, Dataset, ExposureKind, Features, Hyperparams, Scheme};
use crate::error::{BartError, Result};
use crate::estimands::{ate, EffectSummary};
use crate::sampling::{rng_for, standard_normal};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    PgtN,
    Targeted,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 8] = [
        ScenarioId::S1,
        ScenarioId::S2,
        ScenarioId::S3,
        ScenarioId::S4,
        ScenarioId::S5,
        ScenarioId::S6,
        ScenarioId::PgtN,
        ScenarioId::Targeted,
    ];

    pub fn default_n(self) -> usize {
        match self {
            ScenarioId::S5 => 500,
            ScenarioId::PgtN => 60,
            ScenarioId::Targeted => 250,
            _ => 300,
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioId::S1 => "S1",
            ScenarioId::S2 => "S2",
            ScenarioId::S3 => "S3",
            ScenarioId::S4 => "S4",
            ScenarioId::S5 => "S5",
            ScenarioId::S6 => "S6",
            ScenarioId::PgtN => "S_PgtN",
            ScenarioId::Targeted => "S_Targeted",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioId {
    type Err = BartError;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', '_'], "");
        Ok(match key.as_str() {
            "s1" => ScenarioId::S1,
            "s2" => ScenarioId::S2,
            "s3" => ScenarioId::S3,
            "s4" => ScenarioId::S4,
            "s5" => ScenarioId::S5,
            "s6" => ScenarioId::S6,
            "spgtn" | "pgtn" => ScenarioId::PgtN,
            "stargeted" | "targeted" => ScenarioId::Targeted,
            _ => return Err(BartError::Config(format!("unknown scenario `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Standard sample size and P = 100 covariates.
    pub fn new(id: ScenarioId, seed: u64) -> Self {
        ScenarioSpec {
            id,
            n: id.default_n(),
            p: 100,
            seed,
        }
    }

    fn min_p(&self) -> usize {
        match self.id {
            ScenarioId::S1 => 7,
            ScenarioId::S2 | ScenarioId::PgtN => 5,
            ScenarioId::S3 => 7,
            ScenarioId::S4 | ScenarioId::S5 | ScenarioId::S6 => 17,
            ScenarioId::Targeted => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p < self.min_p() {
            return Err(BartError::Config(format!(
                "scenario {} needs at least {} covariates",
                self.id,
                self.min_p()
            )));
        }
        if self.n < 2 {
            return Err(BartError::Config("scenario needs at least 2 units".into()));
        }
        Ok(())
    }
}

fn h1(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn h2(x: f64) -> f64 {
    if x >= 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn phi(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// Probit index of `P(A = 1 | x)`; `x` is 0-based so `x[0]` is X1.
pub fn exposure_index(id: ScenarioId, x: &[f64]) -> f64 {
    match id {
        ScenarioId::Targeted => prognostic_targeted(x),
        _ => {
            let base = 0.5 + 0.5 * h1(x[0]) + 0.5 * h2(x[1]) - 0.5 * (x[2] - 1.0).abs()
                + 1.5 * x[3] * x[4];
            if id == ScenarioId::S3 {
                base + 1.5 * x[5] - x[6]
            } else {
                base
            }
        }
    }
}

fn prognostic_targeted(x: &[f64]) -> f64 {
    if x[0] > x[1] {
        -1.0
    } else if x[0] < x[1] {
        1.0
    } else {
        0.0
    }
}

fn extra_predictors(x: &[f64]) -> f64 {
    x[7] + x[8] + x[9] + 0.5 * (x[10] + x[11] + x[12]) - 0.5 * (x[13] + x[14] + x[15])
        - (0.2 * x[16]).exp()
}

/// Noise-free outcome mean at exposure `a`.
pub fn outcome_mean(id: ScenarioId, x: &[f64], a: f64) -> f64 {
    let strong = || h1(x[0]) + 1.5 * h2(x[1]) - a + 2.0 * (x[2] + 1.0).abs() + 2.0 * x[3]
        + (0.5 * x[4]).exp();
    let s1_effect = || -0.5 * a * x[5].abs() - a * (x[6] + 1.0).abs();
    match id {
        ScenarioId::S2 | ScenarioId::S3 | ScenarioId::PgtN => strong() - 0.5 * a * x[4].abs(),
        ScenarioId::S1 => strong() + s1_effect(),
        ScenarioId::S4 | ScenarioId::S5 => strong() + s1_effect() + extra_predictors(x),
        ScenarioId::S6 => {
            0.5 * h1(x[0]) + 0.5 * h2(x[1]) - a + 0.5 * (x[2] + 1.0).abs() + 0.3 * x[3]
                + (0.5 * x[4]).exp()
                + s1_effect()
                + extra_predictors(x)
        }
        ScenarioId::Targeted => prognostic_targeted(x) - a,
    }
}

/// Outcome noise standard deviation.
pub fn noise_sd(id: ScenarioId) -> f64 {
    match id {
        ScenarioId::Targeted => 1.0,
        _ => 0.3,
    }
}

/// Unit-level effect `mu(x, 1) - mu(x, 0)`.
pub fn unit_effect(id: ScenarioId, x: &[f64]) -> f64 {
    outcome_mean(id, x, 1.0) - outcome_mean(id, x, 0.0)
}

/// `E|X|` for `X ~ N(0, 1)`.
pub fn folded_normal_mean() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// `E|X + 1|` for `X ~ N(0, 1)`.
pub fn shifted_folded_normal_mean() -> f64 {
    folded_normal_mean() * (-0.5f64).exp() + 1.0 - 2.0 * phi(-1.0)
}

/// Analytic average treatment effect.
pub fn true_effect(id: ScenarioId) -> f64 {
    match id {
        ScenarioId::S2 | ScenarioId::S3 | ScenarioId::PgtN => -1.0 - 0.5 * folded_normal_mean(),
        ScenarioId::S1 | ScenarioId::S4 | ScenarioId::S5 | ScenarioId::S6 => {
            -1.0 - 0.5 * folded_normal_mean() - shifted_folded_normal_mean()
        }
        ScenarioId::Targeted => -1.0,
    }
}

/// Monte Carlo average treatment effect and its standard error.
pub fn true_effect_mc(id: ScenarioId, n_samples: usize, seed: u64) -> (f64, f64) {
    let dim = 17;
    let chunks = 64;
    let per = n_samples.div_ceil(chunks);
    let (sum, sum_sq, count) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(seed, c as u64);
            let mut x = vec![0.0; dim];
            let (mut s, mut s2, mut k) = (0.0, 0.0, 0usize);
            for _ in 0..per.min(n_samples.saturating_sub(c * per)) {
                for v in x.iter_mut() {
                    *v = standard_normal(&mut rng);
                }
                let e = unit_effect(id, &x);
                s += e;
                s2 += e * e;
                k += 1;
            }
            (s, s2, k)
        })
        .reduce(|| (0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let n = count as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Draws one dataset; a single-arm exposure draw is regenerated.
pub fn gen_scenario<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<(Dataset, f64)> {
    spec.validate()?;
    let (n, p, id) = (spec.n, spec.p, spec.id);
    loop {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| standard_normal(rng)).collect())
            .collect();
        let a: Vec<f64> = rows
            .iter()
            .map(|x| {
                let u: f64 = rng.random();
                if u < phi(exposure_index(id, x)) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let sd = noise_sd(id);
        let y: Vec<f64> = rows
            .iter()
            .zip(&a)
            .map(|(x, &ai)| outcome_mean(id, x, ai) + sd * standard_normal(rng))
            .collect();
        if binary_arms(&a).is_err() {
            continue;
        }
        let names = (1..=p).map(|j| format!("X{j}")).collect();
        let data = Dataset::new(y, a, Features::from_rows(&rows)?, names, ExposureKind::Binary)?;
        return Ok((data, true_effect(id)));
    }
}

/// Per-replicate seed derived from the master seed.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMetrics {
    pub index: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bias: f64,
    pub squared_error: f64,
    pub covered: bool,
    pub wall_time_s: f64,
}

impl ReplicateMetrics {
    pub fn from_summary(index: usize, summary: &EffectSummary, truth: f64, wall: f64) -> Self {
        let bias = summary.mean - truth;
        ReplicateMetrics {
            index,
            estimate: summary.mean,
            ci_low: summary.ci_low,
            ci_high: summary.ci_high,
            bias,
            squared_error: bias * bias,
            covered: summary.covers(truth),
            wall_time_s: wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateMetrics {
    pub m: usize,
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub scenario: ScenarioId,
    pub scheme: Scheme,
    pub truth: f64,
    pub replicates: Vec<ReplicateMetrics>,
    pub aggregate: AggregateMetrics,
}

pub fn aggregate(replicates: &[ReplicateMetrics]) -> AggregateMetrics {
    let m = replicates.len() as f64;
    AggregateMetrics {
        m: replicates.len(),
        bias: replicates.iter().map(|r| r.bias).sum::<f64>() / m,
        mse: replicates.iter().map(|r| r.squared_error).sum::<f64>() / m,
        coverage: replicates.iter().filter(|r| r.covered).count() as f64 / m,
        wall_time_s: replicates.iter().map(|r| r.wall_time_s).sum(),
    }
}

/// Runs `m` replicates with a caller-supplied estimator. The estimator
/// receives the dataset and a replicate-specific chain seed.
pub fn run_replicates_with<F>(
    spec: &ScenarioSpec,
    m: usize,
    scheme: Scheme,
    estimator: F,
) -> Result<SimulationReport>
where
    F: Fn(&Dataset, u64) -> Result<EffectSummary> + Sync,
{
    if m == 0 {
        return Err(BartError::Config("number of replicates must be at least 1".into()));
    }
    spec.validate()?;
    let replicates = (0..m)
        .into_par_iter()
        .map(|r| {
            let start = Instant::now();
            let seed = replicate_seed(spec.seed, r);
            let wrap = |e: BartError| BartError::Replicate {
                index: r,
                source: Box::new(e),
            };
            let mut rng = rng_for(seed, 0);
            let (data, truth) = gen_scenario(spec, &mut rng).map_err(wrap)?;
            let summary = estimator(&data, replicate_seed(seed, 0)).map_err(wrap)?;
            Ok(ReplicateMetrics::from_summary(
                r,
                &summary,
                truth,
                start.elapsed().as_secs_f64(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport {
        scenario: spec.id,
        scheme,
        truth: true_effect(spec.id),
        aggregate: aggregate(&replicates),
        replicates,
    })
}

/// ATE from all chains of one fit, pooling their draws.
pub fn fit_ate(data: &Dataset, hyper: &Hyperparams, config: &ChainConfig) -> Result<EffectSummary> {
    let traces = run_chains(data, hyper, config)?;
    let mut draws = Vec::new();
    for t in &traces {
        draws.extend(ate(t)?.draws);
    }
    EffectSummary::from_draws(draws)
}

/// Runs `m` replicates of the full sampler.
pub fn run_replicates(
    spec: &ScenarioSpec,
    m: usize,
    hyper: &Hyperparams,
    config: &ChainConfig,
) -> Result<SimulationReport> {
    run_replicates_with(spec, m, config.scheme, |data, seed| {
        let cfg = ChainConfig { seed, ..*config };
        fit_ate(data, hyper, &cfg)
    })
}
