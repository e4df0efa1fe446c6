//! GROW / PRUNE / CHANGE proposals and their Metropolis-Hastings log ratios.
//!
//! Residuals passed to the `log_accept_*` functions must be measured from
//! the leaf prior mean, so that the zero-mean marginal likelihood of a
//! terminal node applies.

use rand::Rng;

use crate::data::{Features, Hyperparams};
use crate::error::{BartError, Result};
use crate::sampling::pick_weighted;
use crate::tree::{partition_rows, NodeId, SplitRule, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

impl MoveKind {
    pub fn index(self) -> usize {
        match self {
            MoveKind::Grow => 0,
            MoveKind::Prune => 1,
            MoveKind::Change => 2,
        }
    }
}

/// Move probabilities and depth prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveParams {
    pub p_grow: f64,
    pub p_prune: f64,
    pub p_change: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl From<&Hyperparams> for MoveParams {
    fn from(h: &Hyperparams) -> Self {
        MoveParams {
            p_grow: h.p_grow,
            p_prune: h.p_prune,
            p_change: h.p_change,
            beta1: h.beta1,
            beta2: h.beta2,
        }
    }
}

impl Default for MoveParams {
    fn default() -> Self {
        MoveParams::from(&Hyperparams::default())
    }
}

/// Prior probability that a node at depth `d` splits.
pub fn depth_split_prob(beta1: f64, beta2: f64, depth: usize) -> f64 {
    beta1 / (1.0 + depth as f64).powf(beta2)
}

/// A proposed tree alteration with everything its acceptance ratio needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MoveProposal {
    pub kind: MoveKind,
    pub node: NodeId,
    /// New rule (Grow, Change); the rule being removed for Prune.
    pub rule: SplitRule,
    /// Terminal nodes in the current tree.
    pub b: usize,
    /// Singly internal nodes in the current tree.
    pub w: usize,
    /// Singly internal nodes in the proposed tree.
    pub w_star: usize,
    /// Predictors with at least one admissible cutpoint at `node`.
    pub p_eta: usize,
    /// Admissible cutpoints of `rule.var` at `node`.
    pub n_p_eta: usize,
    pub depth: usize,
    /// Children after the move for Grow and Change; the children being
    /// removed for Prune.
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Children before the move (Change only).
    pub old_left: Vec<usize>,
    pub old_right: Vec<usize>,
}

/// Draws a move kind. A stump can only grow; a stump that cannot grow has
/// no applicable move.
pub fn sample_move_kind<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    features: &Features,
    params: &MoveParams,
) -> Result<MoveKind> {
    if tree.is_stump() {
        return if tree.available_predictors(features, crate::tree::ROOT).is_empty() {
            Err(BartError::NoApplicableMove)
        } else {
            Ok(MoveKind::Grow)
        };
    }
    let total = params.p_grow + params.p_prune + params.p_change;
    let u = rng.random::<f64>() * total;
    Ok(if u < params.p_grow {
        MoveKind::Grow
    } else if u < params.p_grow + params.p_prune {
        MoveKind::Prune
    } else {
        MoveKind::Change
    })
}

fn pick<R: Rng + ?Sized, T: Copy>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Picks a splitting variable at `node` from `log_weights` restricted to the
/// available predictors, then a cutpoint uniformly from its pool.
fn draw_rule<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    features: &Features,
    node: NodeId,
    log_weights: &[f64],
) -> Option<(SplitRule, usize, usize)> {
    let available = tree.available_predictors(features, node);
    if available.is_empty() {
        return None;
    }
    let var = pick_weighted(rng, &available, log_weights);
    let cuts = tree.valid_cutpoints(features, node, var);
    let cut = pick(rng, &cuts);
    Some((SplitRule { var, cut }, available.len(), cuts.len()))
}

pub fn propose_grow<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    features: &Features,
    log_weights: &[f64],
) -> Result<MoveProposal> {
    let growable: Vec<NodeId> = tree
        .terminal_ids()
        .into_iter()
        .filter(|&id| (0..features.n_cols()).any(|j| tree.has_cutpoint(features, id, j)))
        .collect();
    if growable.is_empty() {
        return Err(BartError::NoGrowableNode);
    }
    let node = pick(rng, &growable);
    let (rule, p_eta, n_p_eta) =
        draw_rule(rng, tree, features, node, log_weights).ok_or(BartError::NoGrowableNode)?;
    let (left, right) = partition_rows(&tree.node(node).rows, rule, features);
    let w = tree.singly_internal_count();
    // the grown node becomes singly internal; its parent stops being so if
    // the sibling is terminal
    let parent_loses = tree.node(node).parent.is_some_and(|p| {
        let (l, r) = tree.children(p).expect("parent is internal");
        let sibling = if l == node { r } else { l };
        tree.is_terminal(sibling)
    });
    Ok(MoveProposal {
        kind: MoveKind::Grow,
        node,
        rule,
        b: tree.n_terminal(),
        w,
        w_star: w + 1 - usize::from(parent_loses),
        p_eta,
        n_p_eta,
        depth: tree.node(node).depth,
        left,
        right,
        old_left: Vec::new(),
        old_right: Vec::new(),
    })
}

pub fn propose_prune<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    features: &Features,
) -> Result<MoveProposal> {
    let candidates = tree.singly_internal_ids();
    if candidates.is_empty() {
        return Err(BartError::NoApplicableMove);
    }
    let node = pick(rng, &candidates);
    let rule = tree.rule(node).expect("singly internal node has a rule");
    let (l, r) = tree.children(node).expect("singly internal node has children");
    let w = candidates.len();
    // after pruning, the parent may become singly internal
    let parent_gains = tree.node(node).parent.is_some_and(|p| {
        let (pl, pr) = tree.children(p).expect("parent is internal");
        let sibling = if pl == node { pr } else { pl };
        tree.is_terminal(sibling)
    });
    Ok(MoveProposal {
        kind: MoveKind::Prune,
        node,
        rule,
        b: tree.n_terminal(),
        w,
        w_star: w - 1 + usize::from(parent_gains),
        p_eta: tree.available_predictors(features, node).len(),
        n_p_eta: tree.valid_cutpoints(features, node, rule.var).len(),
        depth: tree.node(node).depth,
        left: tree.node(l).rows.clone(),
        right: tree.node(r).rows.clone(),
        old_left: Vec::new(),
        old_right: Vec::new(),
    })
}

pub fn propose_change<R: Rng + ?Sized>(
    rng: &mut R,
    tree: &Tree,
    features: &Features,
    log_weights: &[f64],
) -> Result<MoveProposal> {
    let candidates = tree.singly_internal_ids();
    if candidates.is_empty() {
        return Err(BartError::NoApplicableMove);
    }
    let node = pick(rng, &candidates);
    let (l, r) = tree.children(node).expect("singly internal node has children");
    let (rule, p_eta, n_p_eta) =
        draw_rule(rng, tree, features, node, log_weights).ok_or(BartError::NoApplicableMove)?;
    let (left, right) = partition_rows(&tree.node(node).rows, rule, features);
    let w = candidates.len();
    Ok(MoveProposal {
        kind: MoveKind::Change,
        node,
        rule,
        b: tree.n_terminal(),
        w,
        w_star: w,
        p_eta,
        n_p_eta,
        depth: tree.node(node).depth,
        left,
        right,
        old_left: tree.node(l).rows.clone(),
        old_right: tree.node(r).rows.clone(),
    })
}

pub fn propose<R: Rng + ?Sized>(
    rng: &mut R,
    kind: MoveKind,
    tree: &Tree,
    features: &Features,
    log_weights: &[f64],
) -> Result<MoveProposal> {
    match kind {
        MoveKind::Grow => propose_grow(rng, tree, features, log_weights),
        MoveKind::Prune => propose_prune(rng, tree, features),
        MoveKind::Change => propose_change(rng, tree, features, log_weights),
    }
}

/// Applies an accepted proposal. New leaves get value 0 until redrawn.
pub fn apply(tree: &mut Tree, proposal: &MoveProposal, features: &Features) {
    match proposal.kind {
        MoveKind::Grow => {
            tree.grow(proposal.node, proposal.rule, features, 0.0, 0.0);
        }
        MoveKind::Prune => tree.prune(proposal.node, 0.0),
        MoveKind::Change => tree.change_rule(proposal.node, proposal.rule, features),
    }
}

#[inline]
fn sum_over(rows: &[usize], residuals: &[f64]) -> f64 {
    rows.iter().map(|&i| residuals[i]).sum()
}

/// Log of the node marginal-likelihood contribution that differs between
/// tree shapes: `-0.5 ln(s2 + n sm2) + sm2 S^2 / (2 s2 (s2 + n sm2))`.
#[inline]
fn node_log_lik(n: usize, sum: f64, sigma2: f64, sigma_mu2: f64) -> f64 {
    let denom = sigma2 + n as f64 * sigma_mu2;
    -0.5 * denom.ln() + sigma_mu2 / (2.0 * sigma2) * sum * sum / denom
}

/// `ln[ beta1 (1 - beta1/(2+d)^beta2)^2 / ((1+d)^beta2 - beta1) ]`.
fn log_grow_structure(params: &MoveParams, depth: usize) -> f64 {
    let d = depth as f64;
    let child = 1.0 - params.beta1 / (2.0 + d).powf(params.beta2);
    params.beta1.ln() + 2.0 * child.ln() - ((1.0 + d).powf(params.beta2) - params.beta1).ln()
}

pub fn log_accept_grow(
    proposal: &MoveProposal,
    params: &MoveParams,
    sigma2: f64,
    sigma_mu2: f64,
    residuals: &[f64],
) -> f64 {
    debug_assert_eq!(proposal.kind, MoveKind::Grow);
    let (nl, nr) = (proposal.left.len(), proposal.right.len());
    let (sl, sr) = (
        sum_over(&proposal.left, residuals),
        sum_over(&proposal.right, residuals),
    );
    let pn = (proposal.p_eta as f64).ln() + (proposal.n_p_eta as f64).ln();
    let transition = (params.p_prune / params.p_grow).ln() + (proposal.b as f64).ln() + pn
        - (proposal.w_star as f64).ln();
    let likelihood = 0.5 * sigma2.ln() + node_log_lik(nl, sl, sigma2, sigma_mu2)
        + node_log_lik(nr, sr, sigma2, sigma_mu2)
        - node_log_lik(nl + nr, sl + sr, sigma2, sigma_mu2);
    let structure = log_grow_structure(params, proposal.depth) - pn;
    transition + likelihood + structure
}

pub fn log_accept_prune(
    proposal: &MoveProposal,
    params: &MoveParams,
    sigma2: f64,
    sigma_mu2: f64,
    residuals: &[f64],
) -> f64 {
    debug_assert_eq!(proposal.kind, MoveKind::Prune);
    let (nl, nr) = (proposal.left.len(), proposal.right.len());
    let (sl, sr) = (
        sum_over(&proposal.left, residuals),
        sum_over(&proposal.right, residuals),
    );
    let pn = (proposal.p_eta as f64).ln() + (proposal.n_p_eta as f64).ln();
    let transition = (params.p_grow / params.p_prune).ln() + (proposal.w as f64).ln()
        - ((proposal.b - 1) as f64).ln()
        - pn;
    let likelihood = -0.5 * sigma2.ln() - node_log_lik(nl, sl, sigma2, sigma_mu2)
        - node_log_lik(nr, sr, sigma2, sigma_mu2)
        + node_log_lik(nl + nr, sl + sr, sigma2, sigma_mu2);
    let structure = pn - log_grow_structure(params, proposal.depth);
    transition + likelihood + structure
}

pub fn log_accept_change(
    proposal: &MoveProposal,
    sigma2: f64,
    sigma_mu2: f64,
    residuals: &[f64],
) -> f64 {
    debug_assert_eq!(proposal.kind, MoveKind::Change);
    let k = sigma2 / sigma_mu2;
    let term = |rows: &[usize]| {
        let n = rows.len() as f64;
        let s = sum_over(rows, residuals);
        (-0.5 * (k + n).ln(), s * s / (n + k))
    };
    let (l1, q1) = term(&proposal.old_left);
    let (l2, q2) = term(&proposal.old_right);
    let (l1s, q1s) = term(&proposal.left);
    let (l2s, q2s) = term(&proposal.right);
    (l1s + l2s - l1 - l2) + (q1s + q2s - q1 - q2) / (2.0 * sigma2)
}

pub fn log_accept(
    proposal: &MoveProposal,
    params: &MoveParams,
    sigma2: f64,
    sigma_mu2: f64,
    residuals: &[f64],
) -> f64 {
    match proposal.kind {
        MoveKind::Grow => log_accept_grow(proposal, params, sigma2, sigma_mu2, residuals),
        MoveKind::Prune => log_accept_prune(proposal, params, sigma2, sigma_mu2, residuals),
        MoveKind::Change => log_accept_change(proposal, sigma2, sigma_mu2, residuals),
    }
}
