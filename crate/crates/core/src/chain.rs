//! Joint exposure/outcome chains under the separate and marginal schemes.

use rayon::prelude::*;

use crate::backfit::{probit_sweep, sweep, ModelRole, ModelState, MoveLog, SweepParams};
use crate::data::{
    binary_arms, standardize_outcome, ChainConfig, Dataset, ExposureKind, Features, Hyperparams,
    Scheme,
};
use crate::error::{BartError, Result};
use crate::forest::{ForestSnapshot, RowPredictor};
use crate::prior::{
    calibrate_leaf_prior_k, update_alpha, update_s_marginal, update_s_separate, SplitCounts,
    SplitProbVector,
};
use crate::sampling::{rng_for, ChainRng};

/// Latent-scale range used to calibrate the probit exposure leaf prior.
const PROBIT_RANGE: (f64, f64) = (-3.0, 3.0);

/// Outcome-model fits stored with each retained draw.
#[derive(Debug, Clone, PartialEq)]
pub enum DrawFits {
    /// Fits for every unit under exposure 1 and exposure 0.
    Binary {
        treated: Vec<f64>,
        control: Vec<f64>,
    },
    /// Outcome forest (exposure is column 0), evaluated on demand.
    Continuous(ForestSnapshot),
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub counts: SplitCounts,
    /// Outcome variances: `[sigma^2]` (marginal) or `[sigma_0^2, sigma_1^2]`.
    pub sigma2: Vec<f64>,
    /// Exposure-model variance for a continuous exposure.
    pub tau2: Option<f64>,
    pub alpha: f64,
    pub s: Vec<f64>,
    pub fits: DrawFits,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub scheme: Scheme,
    pub exposure_kind: ExposureKind,
    pub chain: usize,
    pub n_units: usize,
    pub n_covariates: usize,
    pub exposure_range: (f64, f64),
    pub records: Vec<TraceRecord>,
    /// Move tallies summed over every model and iteration.
    pub moves: MoveLog,
    /// Accepted marginal simplex proposals (marginal scheme only).
    pub s_accepted: usize,
}

/// Full sampler state for one chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub scheme: Scheme,
    pub exposure_kind: ExposureKind,
    pub exposure: ModelState,
    /// One marginal model, or `[arm 0, arm 1]`.
    pub outcomes: Vec<ModelState>,
    /// Global row indices of each arm (separate scheme).
    pub arms: Option<(Vec<usize>, Vec<usize>)>,
    pub s: SplitProbVector,
    pub alpha: f64,
    pub rng: ChainRng,
    pub iteration: usize,
    exposure_values: Vec<f64>,
    x_full: Features,
    hyper: Hyperparams,
    sweep_params: SweepParams,
    moves: MoveLog,
    s_accepted: usize,
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    if var > 0.0 {
        var
    } else {
        1.0
    }
}

fn outcome_model(
    role: ModelRole,
    features: Features,
    y: Vec<f64>,
    hyper: &Hyperparams,
) -> Result<ModelState> {
    let (_, range) = standardize_outcome(&y)?;
    let prior = calibrate_leaf_prior_k(range.min, range.max, hyper.n_trees, hyper.k_leaf)?;
    let sigma2 = variance(&y);
    Ok(ModelState::new(role, features, y, prior, sigma2, false))
}

impl ChainState {
    pub fn new(
        data: &Dataset,
        hyper: &Hyperparams,
        scheme: Scheme,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        hyper.validate()?;
        let kind = data.exposure_kind();
        if scheme == Scheme::Separate && kind == ExposureKind::Continuous {
            return Err(BartError::UnsupportedForContinuous(
                "the separate scheme needs a binary exposure".into(),
            ));
        }
        standardize_outcome(data.y())?;

        let exposure = match kind {
            ExposureKind::Binary => {
                let prior = calibrate_leaf_prior_k(
                    PROBIT_RANGE.0,
                    PROBIT_RANGE.1,
                    hyper.n_trees,
                    hyper.k_leaf,
                )?;
                ModelState::new(
                    ModelRole::Exposure,
                    data.x().clone(),
                    vec![0.0; data.n()],
                    prior,
                    1.0,
                    true,
                )
            }
            ExposureKind::Continuous => {
                let (lo, hi) = data.exposure_range();
                let prior = calibrate_leaf_prior_k(lo, hi, hyper.n_trees, hyper.k_leaf)
                    .map_err(|_| BartError::InvalidDataset("exposure is constant".into()))?;
                ModelState::new(
                    ModelRole::Exposure,
                    data.x().clone(),
                    data.a().to_vec(),
                    prior,
                    variance(data.a()),
                    false,
                )
            }
        };

        let (outcomes, arms) = match scheme {
            Scheme::Marginal => {
                let features = data.x().with_leading_column(data.a());
                let m = outcome_model(ModelRole::OutcomeMarginal, features, data.y().to_vec(), hyper)?;
                (vec![m], None)
            }
            Scheme::Separate => {
                let (i0, i1) = binary_arms(data.a())?;
                let arm = |rows: &[usize], role| {
                    let y = rows.iter().map(|&i| data.y()[i]).collect();
                    outcome_model(role, data.x().select_rows(rows), y, hyper)
                };
                let m0 = arm(&i0, ModelRole::OutcomeArm0)?;
                let m1 = arm(&i1, ModelRole::OutcomeArm1)?;
                (vec![m0, m1], Some((i0, i1)))
            }
        };

        Ok(ChainState {
            scheme,
            exposure_kind: kind,
            exposure,
            outcomes,
            arms,
            s: SplitProbVector::uniform(data.p(), scheme),
            alpha: hyper.alpha_init,
            rng: rng_for(seed, stream),
            iteration: 0,
            exposure_values: data.a().to_vec(),
            x_full: data.x().clone(),
            hyper: hyper.clone(),
            sweep_params: SweepParams::from(hyper),
            moves: MoveLog::default(),
            s_accepted: 0,
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.x_full.n_cols()
    }

    /// Split counts recomputed from the current forests.
    pub fn split_counts(&self) -> SplitCounts {
        let p = self.n_covariates();
        let exposure = self.exposure.forest.split_counts(p);
        match self.scheme {
            Scheme::Marginal => SplitCounts::Marginal {
                exposure,
                outcome: self.outcomes[0].forest.split_counts(p + 1),
            },
            Scheme::Separate => SplitCounts::Separate {
                exposure,
                arm0: self.outcomes[0].forest.split_counts(p),
                arm1: self.outcomes[1].forest.split_counts(p),
            },
        }
    }

    /// One full iteration: exposure sweep, outcome sweep(s), simplex update,
    /// concentration update.
    pub fn step(&mut self) -> MoveLog {
        let mut log = MoveLog::default();
        let params = self.sweep_params;
        let exposure_weights = self.s.exposure_model_weights().to_vec();
        let l = match self.exposure_kind {
            ExposureKind::Binary => probit_sweep(
                &mut self.exposure,
                &self.exposure_values,
                &exposure_weights,
                &params,
                &mut self.rng,
            ),
            ExposureKind::Continuous => {
                sweep(&mut self.exposure, &exposure_weights, &params, &mut self.rng)
            }
        };
        log.merge(&l);
        let outcome_weights = self.s.outcome_model_weights().to_vec();
        for model in &mut self.outcomes {
            log.merge(&sweep(model, &outcome_weights, &params, &mut self.rng));
        }

        let counts = self.split_counts();
        let p = self.n_covariates();
        match self.scheme {
            Scheme::Separate => {
                self.s = update_s_separate(&mut self.rng, &counts, self.alpha);
            }
            Scheme::Marginal => {
                let n0 = counts.exposure_splits().unwrap_or(0);
                let c = self.hyper.c_offset.value(n0);
                let (s, accepted) = update_s_marginal(&mut self.rng, &counts, self.alpha, c, &self.s);
                self.s = s;
                self.s_accepted += usize::from(accepted);
            }
        }
        self.alpha = update_alpha(
            &mut self.rng,
            &self.s,
            self.alpha,
            p,
            self.hyper.a0,
            self.hyper.b0,
            self.hyper.alpha_step,
        );
        self.iteration += 1;
        self.moves.merge(&log);
        log
    }

    /// Snapshot of the current state as a trace record.
    pub fn record(&self) -> TraceRecord {
        let fits = match (self.scheme, self.exposure_kind) {
            (Scheme::Marginal, ExposureKind::Binary) => {
                let forest = &self.outcomes[0].forest;
                DrawFits::Binary {
                    treated: counterfactual_fits_marginal(forest, &self.x_full, 1.0),
                    control: counterfactual_fits_marginal(forest, &self.x_full, 0.0),
                }
            }
            (Scheme::Marginal, ExposureKind::Continuous) => {
                DrawFits::Continuous(self.outcomes[0].forest.snapshot())
            }
            (Scheme::Separate, _) => DrawFits::Binary {
                treated: full_fits(&self.outcomes[1], &self.x_full),
                control: full_fits(&self.outcomes[0], &self.x_full),
            },
        };
        TraceRecord {
            iteration: self.iteration,
            counts: self.split_counts(),
            sigma2: self.outcomes.iter().map(|m| m.sigma2).collect(),
            tau2: (self.exposure_kind == ExposureKind::Continuous).then_some(self.exposure.sigma2),
            alpha: self.alpha,
            s: self.s.probs(),
            fits,
        }
    }

    pub fn moves(&self) -> MoveLog {
        self.moves
    }

    pub fn s_accepted(&self) -> usize {
        self.s_accepted
    }
}

/// Arm-model fits for every unit (both arms), via tree traversal.
fn full_fits(model: &ModelState, x: &Features) -> Vec<f64> {
    (0..x.n_rows())
        .map(|i| model.forest.predict_with(|j| x.get(i, j)))
        .collect()
}

/// Outcome-forest predictions with the exposure column (index 0) set to
/// `a_value` for every unit; `x` holds only the P covariates.
pub fn counterfactual_fits_marginal<F: RowPredictor>(forest: &F, x: &Features, a_value: f64) -> Vec<f64> {
    (0..x.n_rows())
        .map(|i| forest.predict_with(|j| if j == 0 { a_value } else { x.get(i, j - 1) }))
        .collect()
}

/// Runs one chain (stream 0 of `config.seed`).
pub fn run_chain(data: &Dataset, hyper: &Hyperparams, config: &ChainConfig) -> Result<Trace> {
    run_chain_indexed(data, hyper, config, 0)
}

/// Runs chain `index`, drawing from stream `index` of `config.seed`.
pub fn run_chain_indexed(
    data: &Dataset,
    hyper: &Hyperparams,
    config: &ChainConfig,
    index: usize,
) -> Result<Trace> {
    config.validate()?;
    let mut state = ChainState::new(data, hyper, config.scheme, config.seed, index as u64)?;
    let mut records = Vec::with_capacity(config.retained());
    for it in 1..=config.n_iter {
        state.step();
        if config.keeps(it) {
            records.push(state.record());
        }
    }
    Ok(Trace {
        scheme: config.scheme,
        exposure_kind: data.exposure_kind(),
        chain: index,
        n_units: data.n(),
        n_covariates: data.p(),
        exposure_range: data.exposure_range(),
        records,
        moves: state.moves(),
        s_accepted: state.s_accepted(),
    })
}

/// Runs `config.n_chains` independent chains in parallel.
pub fn run_chains(data: &Dataset, hyper: &Hyperparams, config: &ChainConfig) -> Result<Vec<Trace>> {
    config.validate()?;
    (0..config.n_chains)
        .into_par_iter()
        .map(|k| run_chain_indexed(data, hyper, config, k))
        .collect()
}

/// Exposure-split monitor for one marginal-scheme draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InclusionGuard {
    /// Outcome-model splits on the exposure.
    pub n0: u32,
    pub s0: f64,
    /// Set when the outcome model ignores the exposure entirely.
    pub flagged: bool,
}

pub fn exposure_inclusion_guard(counts: &SplitCounts, s: &[f64]) -> Result<InclusionGuard> {
    let n0 = counts.exposure_splits().ok_or_else(|| BartError::SchemeMismatch {
        expected: Scheme::Marginal.to_string(),
        found: Scheme::Separate.to_string(),
    })?;
    Ok(InclusionGuard {
        n0,
        s0: s[0],
        flagged: n0 == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::Forest;
    use crate::tree::{SplitRule, Tree, ROOT};

    fn toy_data(kind: ExposureKind) -> Dataset {
        let n = 40;
        let x1: Vec<f64> = (0..n).map(|i| ((i * 17) % 40) as f64 / 40.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 7) % 40) as f64 / 40.0).collect();
        let a: Vec<f64> = match kind {
            ExposureKind::Binary => x1.iter().map(|&v| if v > 0.4 { 1.0 } else { 0.0 }).collect(),
            ExposureKind::Continuous => x1.iter().map(|&v| 2.0 * v + 0.1).collect(),
        };
        let y = (0..n).map(|i| x2[i] + a[i]).collect();
        Dataset::new(
            y,
            a,
            Features::from_columns(vec![x1, x2]).unwrap(),
            vec!["x1".into(), "x2".into()],
            kind,
        )
        .unwrap()
    }

    fn short(scheme: Scheme) -> ChainConfig {
        ChainConfig {
            n_iter: 20,
            burn_in: 10,
            thin: 5,
            seed: 3,
            scheme,
            n_chains: 1,
        }
    }

    fn small_hyper() -> Hyperparams {
        Hyperparams {
            n_trees: 5,
            ..Hyperparams::default()
        }
    }

    #[test]
    fn retention_count() {
        let trace = run_chain(&toy_data(ExposureKind::Binary), &small_hyper(), &short(Scheme::Marginal))
            .unwrap();
        assert_eq!(trace.records.len(), 2);
        assert_eq!(trace.records[0].iteration, 15);
        assert_eq!(trace.records[1].iteration, 20);
    }

    #[test]
    fn same_seed_same_trace() {
        for scheme in [Scheme::Marginal, Scheme::Separate] {
            let d = toy_data(ExposureKind::Binary);
            let a = run_chain(&d, &small_hyper(), &short(scheme)).unwrap();
            let b = run_chain(&d, &small_hyper(), &short(scheme)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn separate_rejects_continuous_exposure() {
        let d = toy_data(ExposureKind::Continuous);
        assert!(matches!(
            run_chain(&d, &small_hyper(), &short(Scheme::Separate)),
            Err(BartError::UnsupportedForContinuous(_))
        ));
        let t = run_chain(&d, &small_hyper(), &short(Scheme::Marginal)).unwrap();
        assert!(matches!(t.records[0].fits, DrawFits::Continuous(_)));
        assert!(t.records[0].tau2.is_some());
    }

    #[test]
    fn scheme_shapes() {
        let d = toy_data(ExposureKind::Binary);
        let mut m = ChainState::new(&d, &small_hyper(), Scheme::Marginal, 1, 0).unwrap();
        let mut s = ChainState::new(&d, &small_hyper(), Scheme::Separate, 1, 0).unwrap();
        for _ in 0..10 {
            m.step();
            s.step();
            assert_eq!(m.s.len(), d.p() + 1);
            assert_eq!(s.s.len(), d.p());
            assert_eq!(m.outcomes.len(), 1);
            assert_eq!(s.outcomes.len(), 2);
        }
    }

    #[test]
    fn counterfactual_substitutes_exposure() {
        let x = Features::from_columns(vec![vec![0.1, 0.9, 0.5]]).unwrap();
        let aug = x.with_leading_column(&[0.0, 1.0, 1.0]);
        // never splits on exposure
        let mut t = Tree::stump(3, 0.0);
        t.grow(ROOT, SplitRule { var: 1, cut: 0.5 }, &aug, 1.0, 2.0);
        let f = Forest::from_trees(vec![t], 3);
        assert_eq!(
            counterfactual_fits_marginal(&f, &x, 0.0),
            counterfactual_fits_marginal(&f, &x, 1.0)
        );
        // splits only on exposure
        let mut t = Tree::stump(3, 0.0);
        t.grow(ROOT, SplitRule { var: 0, cut: 0.0 }, &aug, -3.0, 4.0);
        let f = Forest::from_trees(vec![t], 3);
        assert_eq!(counterfactual_fits_marginal(&f, &x, 0.0), vec![-3.0; 3]);
        assert_eq!(counterfactual_fits_marginal(&f, &x, 1.0), vec![4.0; 3]);
    }

    #[test]
    fn guard_reads_counts() {
        let c = SplitCounts::Marginal {
            exposure: vec![1, 2],
            outcome: vec![0, 3, 1],
        };
        let g = exposure_inclusion_guard(&c, &[0.2, 0.5, 0.3]).unwrap();
        assert!(g.flagged);
        assert_eq!(g.s0, 0.2);
        let c = SplitCounts::Marginal {
            exposure: vec![1, 2],
            outcome: vec![4, 3, 1],
        };
        assert!(!exposure_inclusion_guard(&c, &[0.2, 0.5, 0.3]).unwrap().flagged);
    }
}
