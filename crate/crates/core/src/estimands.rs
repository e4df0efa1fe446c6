//! Posterior causal effects computed from retained draws.

use crate::chain::{DrawFits, Trace};
use crate::data::{ExposureKind, Features, Scheme};
use crate::error::{BartError, Result};
use crate::forest::RowPredictor;

/// Posterior mean and equal-tailed 95% interval of a per-draw quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectSummary {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub draws: Vec<f64>,
}

impl EffectSummary {
    pub fn from_draws(draws: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(BartError::EmptyTrace);
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let mut sorted = draws.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(EffectSummary {
            mean,
            ci_low: quantile_order_stat(&sorted, 0.025),
            ci_high: quantile_order_stat(&sorted, 0.975),
            draws,
        })
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Order statistic at rank `round(q (R - 1))` of an ascending slice.
pub fn quantile_order_stat(sorted: &[f64], q: f64) -> f64 {
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// How to treat exposure values outside the observed range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SupportPolicy {
    #[default]
    Strict,
    /// Proceed and leave reporting of the extrapolation to the caller.
    Allow,
}

fn require_scheme(trace: &Trace, scheme: Scheme) -> Result<()> {
    if trace.scheme != scheme {
        return Err(BartError::SchemeMismatch {
            expected: scheme.to_string(),
            found: trace.scheme.to_string(),
        });
    }
    Ok(())
}

fn binary_effects(trace: &Trace) -> Result<Vec<f64>> {
    trace
        .records
        .iter()
        .map(|r| match &r.fits {
            DrawFits::Binary { treated, control } => Ok(draw_ate(treated, control)),
            DrawFits::Continuous(_) => Err(BartError::UnsupportedForContinuous(
                "average treatment effect".into(),
            )),
        })
        .collect()
}

/// `(1/N) sum_i (treated_i - control_i)`.
pub fn draw_ate(treated: &[f64], control: &[f64]) -> f64 {
    let n = treated.len() as f64;
    treated.iter().zip(control).map(|(t, c)| t - c).sum::<f64>() / n
}

/// ATE from a separate-scheme trace (arm-specific forests).
pub fn ate_separate(trace: &Trace) -> Result<EffectSummary> {
    require_scheme(trace, Scheme::Separate)?;
    EffectSummary::from_draws(binary_effects(trace)?)
}

/// ATE from a marginal-scheme trace with a binary exposure.
pub fn ate_marginal(trace: &Trace) -> Result<EffectSummary> {
    require_scheme(trace, Scheme::Marginal)?;
    EffectSummary::from_draws(binary_effects(trace)?)
}

/// ATE under whichever scheme produced the trace.
pub fn ate(trace: &Trace) -> Result<EffectSummary> {
    match trace.scheme {
        Scheme::Separate => ate_separate(trace),
        Scheme::Marginal => ate_marginal(trace),
    }
}

fn check_support(trace: &Trace, value: f64, policy: SupportPolicy) -> Result<()> {
    let (low, high) = trace.exposure_range;
    if policy == SupportPolicy::Strict && !(low..=high).contains(&value) {
        return Err(BartError::OutOfSupport { value, low, high });
    }
    Ok(())
}

fn continuous_forests(trace: &Trace) -> Result<Vec<&crate::forest::ForestSnapshot>> {
    require_scheme(trace, Scheme::Marginal)?;
    if trace.exposure_kind != ExposureKind::Continuous {
        return Err(BartError::UnsupportedForBinary(
            "exposure-level contrasts need a continuous exposure".into(),
        ));
    }
    trace
        .records
        .iter()
        .map(|r| match &r.fits {
            DrawFits::Continuous(f) => Ok(f),
            DrawFits::Binary { .. } => Err(BartError::UnsupportedForBinary(
                "draw stores binary counterfactual fits".into(),
            )),
        })
        .collect()
}

/// `(1/N) sum_i g(a, X_i)` for one stored forest.
pub fn mean_response<F: RowPredictor>(forest: &F, x: &Features, a: f64) -> f64 {
    let n = x.n_rows();
    (0..n)
        .map(|i| forest.predict_with(|j| if j == 0 { a } else { x.get(i, j - 1) }))
        .sum::<f64>()
        / n as f64
}

/// Per-draw `Delta(a, a')`, averaged over the rows of `x`.
pub fn contrast_continuous(
    trace: &Trace,
    x: &Features,
    a: f64,
    a_prime: f64,
    policy: SupportPolicy,
) -> Result<EffectSummary> {
    let forests = continuous_forests(trace)?;
    check_support(trace, a, policy)?;
    check_support(trace, a_prime, policy)?;
    let n = x.n_rows() as f64;
    let draws = forests
        .iter()
        .map(|f| {
            (0..x.n_rows())
                .map(|i| {
                    let hi = f.predict_with(|j| if j == 0 { a } else { x.get(i, j - 1) });
                    let lo = f.predict_with(|j| if j == 0 { a_prime } else { x.get(i, j - 1) });
                    hi - lo
                })
                .sum::<f64>()
                / n
        })
        .collect();
    EffectSummary::from_draws(draws)
}

/// Posterior summary of `E[Y(a)]` at each grid point.
pub fn exposure_response(trace: &Trace, x: &Features, grid: &[f64]) -> Result<Vec<EffectSummary>> {
    if grid.is_empty() {
        return Err(BartError::EmptyGrid);
    }
    let forests = continuous_forests(trace)?;
    grid.iter()
        .map(|&a| EffectSummary::from_draws(forests.iter().map(|f| mean_response(*f, x, a)).collect()))
        .collect()
}

/// Exposure levels used for the headline continuous-exposure contrast:
/// the upper and lower quartiles of the observed exposure.
pub fn default_contrast_levels(exposure: &[f64]) -> (f64, f64) {
    let mut sorted = exposure.to_vec();
    sorted.sort_by(f64::total_cmp);
    (quantile_order_stat(&sorted, 0.75), quantile_order_stat(&sorted, 0.25))
}

/// Per-draw headline effect: the ATE for a binary exposure, or the
/// quartile contrast for a continuous one.
pub fn per_draw_effects(trace: &Trace, x: &Features, exposure: &[f64]) -> Result<Vec<f64>> {
    match trace.exposure_kind {
        ExposureKind::Binary => binary_effects(trace),
        ExposureKind::Continuous => {
            let (hi, lo) = default_contrast_levels(exposure);
            Ok(contrast_continuous(trace, x, hi, lo, SupportPolicy::Strict)?.draws)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backfit::MoveLog;
    use crate::chain::TraceRecord;
    use crate::forest::{Forest, ForestSnapshot};
    use crate::prior::SplitCounts;
    use crate::tree::{SplitRule, Tree, ROOT};

    fn record(fits: DrawFits) -> TraceRecord {
        TraceRecord {
            iteration: 1,
            counts: SplitCounts::Marginal {
                exposure: vec![0],
                outcome: vec![0, 0],
            },
            sigma2: vec![1.0],
            tau2: None,
            alpha: 1.0,
            s: vec![0.5, 0.5],
            fits,
        }
    }

    fn trace(scheme: Scheme, kind: ExposureKind, fits: Vec<DrawFits>) -> Trace {
        Trace {
            scheme,
            exposure_kind: kind,
            chain: 0,
            n_units: 2,
            n_covariates: 1,
            exposure_range: (0.0, 1.0),
            records: fits.into_iter().map(record).collect(),
            moves: MoveLog::default(),
            s_accepted: 0,
        }
    }

    fn bin(t: &[f64], c: &[f64]) -> DrawFits {
        DrawFits::Binary {
            treated: t.to_vec(),
            control: c.to_vec(),
        }
    }

    #[test]
    fn constant_and_identical_fits() {
        for scheme in [Scheme::Separate, Scheme::Marginal] {
            let t = trace(scheme, ExposureKind::Binary, vec![bin(&[2.0, 2.0], &[1.0, 1.0]); 3]);
            let s = ate(&t).unwrap();
            assert_eq!((s.mean, s.ci_low, s.ci_high), (1.0, 1.0, 1.0));
            let t = trace(scheme, ExposureKind::Binary, vec![bin(&[0.3, 4.0], &[0.3, 4.0]); 2]);
            assert_eq!(ate(&t).unwrap().mean, 0.0);
        }
    }

    #[test]
    fn hand_built_trace() {
        let fits = vec![bin(&[3.0, 1.0], &[1.0, 1.0]), bin(&[2.0, 2.0], &[0.0, 2.0])];
        let t = trace(Scheme::Separate, ExposureKind::Binary, fits.clone());
        let s = ate_separate(&t).unwrap();
        assert_eq!(s.draws, vec![1.0, 1.0]);
        assert_eq!(s.mean, 1.0);
        let t = trace(Scheme::Marginal, ExposureKind::Binary, fits);
        assert_eq!(ate_marginal(&t).unwrap().mean, 1.0);
    }

    #[test]
    fn scheme_mismatch() {
        let t = trace(Scheme::Marginal, ExposureKind::Binary, vec![bin(&[1.0, 1.0], &[0.0, 0.0])]);
        assert!(matches!(ate_separate(&t), Err(BartError::SchemeMismatch { .. })));
        let t = trace(Scheme::Separate, ExposureKind::Binary, vec![bin(&[1.0, 1.0], &[0.0, 0.0])]);
        assert!(matches!(ate_marginal(&t), Err(BartError::SchemeMismatch { .. })));
    }

    #[test]
    fn percentile_endpoints_are_order_statistics() {
        let draws: Vec<f64> = (0..101).map(f64::from).collect();
        let s = EffectSummary::from_draws(draws.clone()).unwrap();
        assert_eq!(s.ci_low, 3.0);
        assert_eq!(s.ci_high, 98.0);
        assert!(draws.contains(&s.ci_low) && draws.contains(&s.ci_high));
    }

    fn exposure_tree_trace(cut: f64, lo: f64, hi: f64) -> (Trace, Features) {
        let x = Features::from_columns(vec![vec![0.2, 0.8]]).unwrap();
        let aug = x.with_leading_column(&[0.0, 1.0]);
        let mut tree = Tree::stump(2, 0.0);
        tree.grow(ROOT, SplitRule { var: 0, cut }, &aug, lo, hi);
        let snap: ForestSnapshot = Forest::from_trees(vec![tree], 2).snapshot();
        let t = trace(
            Scheme::Marginal,
            ExposureKind::Continuous,
            vec![DrawFits::Continuous(snap.clone()), DrawFits::Continuous(snap)],
        );
        (t, x)
    }

    #[test]
    fn contrast_on_exposure_split() {
        let (t, x) = exposure_tree_trace(0.5, -1.0, 2.5);
        let d = contrast_continuous(&t, &x, 0.9, 0.1, SupportPolicy::Strict).unwrap();
        assert_eq!(d.draws, vec![3.5, 3.5]);
        let r = contrast_continuous(&t, &x, 0.1, 0.9, SupportPolicy::Strict).unwrap();
        for (a, b) in d.draws.iter().zip(&r.draws) {
            assert_eq!(*a, -b);
        }
        let z = contrast_continuous(&t, &x, 0.3, 0.3, SupportPolicy::Strict).unwrap();
        assert_eq!(z.draws, vec![0.0, 0.0]);
    }

    #[test]
    fn support_is_enforced() {
        let (t, x) = exposure_tree_trace(0.5, -1.0, 2.5);
        assert!(matches!(
            contrast_continuous(&t, &x, 1.5, 0.1, SupportPolicy::Strict),
            Err(BartError::OutOfSupport { .. })
        ));
        assert!(contrast_continuous(&t, &x, 1.5, 0.1, SupportPolicy::Allow).is_ok());
    }

    #[test]
    fn curve_matches_contrast() {
        let (t, x) = exposure_tree_trace(0.5, -1.0, 2.5);
        let curve = exposure_response(&t, &x, &[0.1, 0.9]).unwrap();
        let d = contrast_continuous(&t, &x, 0.9, 0.1, SupportPolicy::Strict).unwrap();
        for r in 0..2 {
            assert!((curve[1].draws[r] - curve[0].draws[r] - d.draws[r]).abs() < 1e-12);
        }
        assert!(matches!(exposure_response(&t, &x, &[]), Err(BartError::EmptyGrid)));
    }

    #[test]
    fn binary_trace_rejects_curve() {
        let t = trace(Scheme::Marginal, ExposureKind::Binary, vec![bin(&[1.0, 1.0], &[0.0, 0.0])]);
        let x = Features::from_columns(vec![vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            exposure_response(&t, &x, &[0.5]),
            Err(BartError::UnsupportedForBinary(_))
        ));
    }
}
