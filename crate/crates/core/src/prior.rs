//! Conjugate and Metropolis-Hastings updates for leaf values, variances,
//! the shared splitting simplex and its concentration.

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::data::Scheme;
use crate::error::{BartError, Result};
use crate::sampling::{
    log_dirichlet_draw, log_sum_exp, open_uniform, standard_normal, truncated_unit_normal,
};

/// Normal prior on every leaf: `N(mu_mu / H, sigma_mu^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPrior {
    /// Prior mean of the whole sum of trees.
    pub mu_mu: f64,
    pub sigma_mu: f64,
    pub n_trees: usize,
}

impl LeafPrior {
    pub fn leaf_mean(&self) -> f64 {
        self.mu_mu / self.n_trees as f64
    }

    pub fn sigma_mu2(&self) -> f64 {
        self.sigma_mu * self.sigma_mu
    }
}

/// Places the `k`-sd prior range of the sum of `n_trees` leaves on
/// `[y_min, y_max]`.
pub fn calibrate_leaf_prior_k(y_min: f64, y_max: f64, n_trees: usize, k: f64) -> Result<LeafPrior> {
    if !(y_max > y_min) {
        return Err(BartError::ConstantOutcome);
    }
    let h = n_trees as f64;
    Ok(LeafPrior {
        mu_mu: 0.5 * (y_min + y_max),
        sigma_mu: (y_max - y_min) / (2.0 * k * h.sqrt()),
        n_trees,
    })
}

/// Leaf prior with the standard two-sd calibration.
pub fn calibrate_leaf_prior(y_min: f64, y_max: f64, n_trees: usize) -> Result<LeafPrior> {
    calibrate_leaf_prior_k(y_min, y_max, n_trees, 2.0)
}

/// Posterior mean and variance of one leaf given the residual sum over its
/// `n` rows.
pub fn leaf_posterior_params(
    residual_sum: f64,
    n: usize,
    sigma2: f64,
    prior: &LeafPrior,
) -> (f64, f64) {
    let sm2 = prior.sigma_mu2();
    let precision = 1.0 / sm2 + n as f64 / sigma2;
    let mean = (prior.leaf_mean() / sm2 + residual_sum / sigma2) / precision;
    (mean, 1.0 / precision)
}

pub fn draw_leaf<R: Rng + ?Sized>(
    rng: &mut R,
    residual_sum: f64,
    n: usize,
    sigma2: f64,
    prior: &LeafPrior,
) -> f64 {
    let (mean, var) = leaf_posterior_params(residual_sum, n, sigma2, prior);
    mean + var.sqrt() * standard_normal(rng)
}

/// Inverse-gamma `(shape, rate)` for a variance given model residuals.
pub fn sigma2_posterior_params(residuals: &[f64], a_sigma: f64, b_sigma: f64) -> (f64, f64) {
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    (
        a_sigma + 0.5 * residuals.len() as f64,
        b_sigma + 0.5 * ssr,
    )
}

/// Split-count vectors for every model of one chain.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitCounts {
    /// `exposure` = m, `arm0` = n^0, `arm1` = n^1, all of length P.
    Separate {
        exposure: Vec<u32>,
        arm0: Vec<u32>,
        arm1: Vec<u32>,
    },
    /// `exposure` = m (length P); `outcome` = (n_0, n_1, .., n_P) where
    /// index 0 counts splits on the exposure.
    Marginal { exposure: Vec<u32>, outcome: Vec<u32> },
}

impl SplitCounts {
    pub fn n_covariates(&self) -> usize {
        self.exposure().len()
    }

    pub fn exposure(&self) -> &[u32] {
        match self {
            SplitCounts::Separate { exposure, .. } | SplitCounts::Marginal { exposure, .. } => {
                exposure
            }
        }
    }

    /// Outcome-model splits on covariate `j` (0-based over the P covariates),
    /// summed over arms for the separate scheme.
    pub fn outcome_on(&self, j: usize) -> u32 {
        match self {
            SplitCounts::Separate { arm0, arm1, .. } => arm0[j] + arm1[j],
            SplitCounts::Marginal { outcome, .. } => outcome[j + 1],
        }
    }

    /// Exposure-variable splits in the marginal outcome model.
    pub fn exposure_splits(&self) -> Option<u32> {
        match self {
            SplitCounts::Marginal { outcome, .. } => Some(outcome[0]),
            SplitCounts::Separate { .. } => None,
        }
    }

    /// `m_j + n_j^0 + n_j^1` (separate) or `m_j + n_j` (marginal) for j = 1..P.
    pub fn combined(&self) -> Vec<u32> {
        (0..self.n_covariates())
            .map(|j| self.exposure()[j] + self.outcome_on(j))
            .collect()
    }

    /// Total exposure-model splits `M`.
    pub fn exposure_total(&self) -> u32 {
        self.exposure().iter().sum()
    }
}

/// Selection probabilities over splitting variables, kept in log space so
/// that coordinates far below `f64::MIN_POSITIVE` remain ordered.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitProbVector {
    log_probs: Vec<f64>,
    scheme: Scheme,
}

impl SplitProbVector {
    /// Uniform simplex: length P (separate) or P + 1 (marginal).
    pub fn uniform(n_covariates: usize, scheme: Scheme) -> Self {
        let len = match scheme {
            Scheme::Separate => n_covariates,
            Scheme::Marginal => n_covariates + 1,
        };
        SplitProbVector {
            log_probs: vec![-(len as f64).ln(); len],
            scheme,
        }
    }

    /// Normalizes arbitrary log weights.
    pub fn from_log_weights(mut log_w: Vec<f64>, scheme: Scheme) -> Result<Self> {
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(BartError::DegenerateSimplex);
        }
        for l in &mut log_w {
            *l -= lse;
        }
        Ok(SplitProbVector {
            log_probs: log_w,
            scheme,
        })
    }

    pub fn from_probs(probs: &[f64], scheme: Scheme) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0)) {
            return Err(BartError::DegenerateSimplex);
        }
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect(), scheme)
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    /// Exposure coordinate `s_0` (marginal scheme only).
    pub fn exposure_prob(&self) -> Option<f64> {
        match self.scheme {
            Scheme::Marginal => Some(self.log_probs[0].exp()),
            Scheme::Separate => None,
        }
    }

    /// `ln(1 - s_0) = ln(sum_{j>=1} s_j)`, computed from the covariate
    /// coordinates to avoid cancellation.
    pub fn log_covariate_mass(&self) -> f64 {
        match self.scheme {
            Scheme::Marginal => log_sum_exp(&self.log_probs[1..]),
            Scheme::Separate => 0.0,
        }
    }

    /// Log weights over the covariate columns of the exposure model. In the
    /// marginal scheme these are `s_j / (1 - s_0)` up to normalization.
    pub fn exposure_model_weights(&self) -> &[f64] {
        match self.scheme {
            Scheme::Marginal => &self.log_probs[1..],
            Scheme::Separate => &self.log_probs,
        }
    }

    /// Log weights over the columns of an outcome model (exposure first in
    /// the marginal scheme).
    pub fn outcome_model_weights(&self) -> &[f64] {
        &self.log_probs
    }
}

/// Conjugate update `s ~ Dir(alpha/P + m_j + n^0_j + n^1_j)`.
pub fn update_s_separate<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &SplitCounts,
    alpha: f64,
) -> SplitProbVector {
    let p = counts.n_covariates() as f64;
    let conc: Vec<f64> = counts
        .combined()
        .iter()
        .map(|&c| alpha / p + f64::from(c))
        .collect();
    SplitProbVector {
        log_probs: log_dirichlet_draw(rng, &conc),
        scheme: Scheme::Separate,
    }
}

/// Closed-form posterior mean and variance of each `s_j` under the
/// conjugate Dirichlet update.
pub fn dirichlet_moments(counts: &SplitCounts, alpha: f64) -> Vec<(f64, f64)> {
    let p = counts.n_covariates() as f64;
    let conc: Vec<f64> = counts
        .combined()
        .iter()
        .map(|&c| alpha / p + f64::from(c))
        .collect();
    let total: f64 = conc.iter().sum();
    conc.iter()
        .map(|&a| {
            (
                a / total,
                a * (total - a) / (total * total * (total + 1.0)),
            )
        })
        .collect()
}

/// Concentration of the marginal-scheme proposal
/// `Dir(n_0 + c + alpha/P, m_1 + n_1 + alpha/P, ..)`.
pub fn marginal_proposal_concentration(counts: &SplitCounts, alpha: f64, c: f64) -> Vec<f64> {
    let p = counts.n_covariates() as f64;
    let n0 = counts.exposure_splits().expect("marginal counts");
    std::iter::once(f64::from(n0) + c + alpha / p)
        .chain(counts.combined().iter().map(|&k| f64::from(k) + alpha / p))
        .collect()
}

/// Log acceptance ratio of the independence proposal for the marginal
/// simplex: `M ln((1-s_0)/(1-s_0')) + c ln(s_0/s_0')`.
pub fn marginal_log_accept(
    current: &SplitProbVector,
    proposed: &SplitProbVector,
    m_total: u32,
    c: f64,
) -> Result<f64> {
    let cur_mass = current.log_covariate_mass();
    let new_mass = proposed.log_covariate_mass();
    if !cur_mass.is_finite() || !new_mass.is_finite() {
        return Err(BartError::DegenerateSimplex);
    }
    let mut log_r = f64::from(m_total) * (cur_mass - new_mass);
    if c != 0.0 {
        log_r += c * (current.log_probs[0] - proposed.log_probs[0]);
    }
    Ok(log_r)
}

/// One Metropolis-Hastings step for the marginal-scheme simplex. Returns
/// the new state and whether the proposal was accepted; a degenerate
/// proposal counts as a rejection.
pub fn update_s_marginal<R: Rng + ?Sized>(
    rng: &mut R,
    counts: &SplitCounts,
    alpha: f64,
    c: f64,
    current: &SplitProbVector,
) -> (SplitProbVector, bool) {
    let conc = marginal_proposal_concentration(counts, alpha, c);
    let proposed = SplitProbVector {
        log_probs: log_dirichlet_draw(rng, &conc),
        scheme: Scheme::Marginal,
    };
    match marginal_log_accept(current, &proposed, counts.exposure_total(), c) {
        Ok(log_r) if open_uniform(rng).ln() < log_r => (proposed, true),
        _ => (current.clone(), false),
    }
}

/// Unnormalized log posterior of `alpha` given the simplex: a symmetric
/// `Dir(alpha/P)` likelihood over all coordinates of `s` and a
/// `Beta(a0, b0)` prior on `alpha / (alpha + P)`.
pub fn alpha_log_target(alpha: f64, s: &SplitProbVector, n_covariates: usize, a0: f64, b0: f64) -> f64 {
    if !(alpha > 0.0) {
        return f64::NEG_INFINITY;
    }
    let p = n_covariates as f64;
    let k = s.len() as f64;
    let conc = alpha / p;
    let sum_log: f64 = s.log_probs().iter().sum();
    let lik = ln_gamma(k * conc) - k * ln_gamma(conc) + (conc - 1.0) * sum_log;
    let u = alpha / (alpha + p);
    let prior = (a0 - 1.0) * u.ln() + (b0 - 1.0) * (1.0 - u).ln() + p.ln()
        - 2.0 * (alpha + p).ln();
    lik + prior
}

/// Random-walk Metropolis step on `ln(alpha)`.
pub fn update_alpha<R: Rng + ?Sized>(
    rng: &mut R,
    s: &SplitProbVector,
    alpha: f64,
    n_covariates: usize,
    a0: f64,
    b0: f64,
    step: f64,
) -> f64 {
    let proposal = (alpha.ln() + step * standard_normal(rng)).exp();
    if proposal == alpha {
        return alpha;
    }
    // the log-scale walk contributes the Jacobian alpha'/alpha
    let log_r = alpha_log_target(proposal, s, n_covariates, a0, b0)
        - alpha_log_target(alpha, s, n_covariates, a0, b0)
        + proposal.ln()
        - alpha.ln();
    if open_uniform(rng).ln() < log_r {
        proposal
    } else {
        alpha
    }
}

/// Probit augmentation: `Z_i ~ N(fit_i, 1)` truncated to the side of zero
/// given by `a_i`.
pub fn probit_latent_update<R: Rng + ?Sized>(rng: &mut R, a: &[f64], fitted: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(fitted)
        .map(|(&ai, &f)| truncated_unit_normal(rng, f, ai == 1.0))
        .collect()
}
