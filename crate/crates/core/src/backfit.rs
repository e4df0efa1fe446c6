//! Bayesian backfitting sweep for one sum-of-trees model.

use rand::Rng;

use crate::data::{Features, Hyperparams};
use crate::error::BartError;
use crate::forest::Forest;
use crate::moves::{self, MoveParams};
use crate::prior::{draw_leaf, probit_latent_update, sigma2_posterior_params, LeafPrior};
use crate::sampling::{inverse_gamma, open_uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelRole {
    Exposure,
    OutcomeMarginal,
    OutcomeArm0,
    OutcomeArm1,
}

/// One sum-of-trees model and the data it is fitted to.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub role: ModelRole,
    pub features: Features,
    /// Observed outcome, exposure, or probit latents.
    pub response: Vec<f64>,
    pub forest: Forest,
    pub sigma2: f64,
    /// Variance is held at its current value (probit exposure model).
    pub fixed_variance: bool,
    pub leaf_prior: LeafPrior,
}

impl ModelState {
    /// Stumps at the prior leaf mean.
    pub fn new(
        role: ModelRole,
        features: Features,
        response: Vec<f64>,
        leaf_prior: LeafPrior,
        sigma2: f64,
        fixed_variance: bool,
    ) -> Self {
        let forest = Forest::new(leaf_prior.n_trees, features.n_rows(), leaf_prior.leaf_mean());
        ModelState {
            role,
            features,
            response,
            forest,
            sigma2,
            fixed_variance,
            leaf_prior,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    /// Response minus the fit of every tree except `h`.
    pub fn partial_residuals(&self, h: usize) -> Vec<f64> {
        let total = self.forest.fit();
        let own = self.forest.tree_fit(h);
        self.response
            .iter()
            .zip(total)
            .zip(own)
            .map(|((y, t), o)| y - t + o)
            .collect()
    }

    /// Response minus the full forest fit.
    pub fn residuals(&self) -> Vec<f64> {
        self.response
            .iter()
            .zip(self.forest.fit())
            .map(|(y, f)| y - f)
            .collect()
    }
}

/// Proposal and acceptance tallies for one sweep, indexed by
/// [`MoveKind::index`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveLog {
    pub proposed: [usize; 3],
    pub accepted: [usize; 3],
    /// Trees with no applicable proposal this sweep.
    pub skipped: usize,
}

impl MoveLog {
    pub fn merge(&mut self, other: &MoveLog) {
        for k in 0..3 {
            self.proposed[k] += other.proposed[k];
            self.accepted[k] += other.accepted[k];
        }
        self.skipped += other.skipped;
    }
}

/// Settings a sweep needs beyond the model itself.
#[derive(Debug, Clone, Copy)]
pub struct SweepParams {
    pub moves: MoveParams,
    pub a_sigma: f64,
    pub b_sigma: f64,
}

impl From<&Hyperparams> for SweepParams {
    fn from(h: &Hyperparams) -> Self {
        SweepParams {
            moves: MoveParams::from(h),
            a_sigma: h.a_sigma,
            b_sigma: h.b_sigma,
        }
    }
}

/// Metropolis-within-Gibbs sweep over every tree in index order, followed
/// by a variance draw.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    log_weights: &[f64],
    params: &SweepParams,
    rng: &mut R,
) -> MoveLog {
    sweep_with_acceptance(state, log_weights, params, rng, |log_r, rng| {
        open_uniform(rng).ln() < log_r
    })
}

/// [`sweep`] with a caller-supplied accept/reject rule for tree moves.
pub fn sweep_with_acceptance<R, A>(
    state: &mut ModelState,
    log_weights: &[f64],
    params: &SweepParams,
    rng: &mut R,
    mut accept: A,
) -> MoveLog
where
    R: Rng + ?Sized,
    A: FnMut(f64, &mut R) -> bool,
{
    debug_assert_eq!(log_weights.len(), state.features.n_cols());
    let mut log = MoveLog::default();
    let leaf_mean = state.leaf_prior.leaf_mean();
    let sigma_mu2 = state.leaf_prior.sigma_mu2();
    for h in 0..state.forest.n_trees() {
        let resid = state.partial_residuals(h);
        let centered: Vec<f64> = resid.iter().map(|r| r - leaf_mean).collect();
        let tree = state.forest.tree(h);
        let outcome = moves::sample_move_kind(rng, tree, &state.features, &params.moves)
            .and_then(|kind| moves::propose(rng, kind, tree, &state.features, log_weights));
        match outcome {
            Ok(proposal) => {
                log.proposed[proposal.kind.index()] += 1;
                let log_r =
                    moves::log_accept(&proposal, &params.moves, state.sigma2, sigma_mu2, &centered);
                if accept(log_r, rng) {
                    log.accepted[proposal.kind.index()] += 1;
                    moves::apply(state.forest.tree_mut(h), &proposal, &state.features);
                }
            }
            Err(BartError::NoApplicableMove) | Err(BartError::NoGrowableNode) => log.skipped += 1,
            Err(e) => unreachable!("unexpected proposal error: {e}"),
        }
        redraw_leaves(state, h, &resid, rng);
    }
    debug_assert!(state.forest.cache_error(&state.features) < 1e-9);
    if !state.fixed_variance {
        let (shape, rate) =
            sigma2_posterior_params(&state.residuals(), params.a_sigma, params.b_sigma);
        state.sigma2 = inverse_gamma(rng, shape, rate);
    }
    log
}

fn redraw_leaves<R: Rng + ?Sized>(state: &mut ModelState, h: usize, resid: &[f64], rng: &mut R) {
    let sigma2 = state.sigma2;
    let prior = state.leaf_prior;
    let tree = state.forest.tree_mut(h);
    for id in tree.terminal_ids() {
        let rows = &tree.node(id).rows;
        let sum: f64 = rows.iter().map(|&i| resid[i]).sum();
        let mu = draw_leaf(rng, sum, rows.len(), sigma2, &prior);
        tree.set_mu(id, mu);
    }
    state.forest.refresh_tree(h);
}

/// Probit exposure sweep: refresh the latents from the current fit, then
/// backfit them with unit variance.
pub fn probit_sweep<R: Rng + ?Sized>(
    state: &mut ModelState,
    exposure: &[f64],
    log_weights: &[f64],
    params: &SweepParams,
    rng: &mut R,
) -> MoveLog {
    debug_assert!(state.fixed_variance && state.sigma2 == 1.0);
    state.response = probit_latent_update(rng, exposure, state.forest.fit());
    sweep(state, log_weights, params, rng)
}
