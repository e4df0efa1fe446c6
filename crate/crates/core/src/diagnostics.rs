//! Inclusion probabilities, model-class fractions, convergence and
//! posterior predictive checks.

use std::collections::BTreeSet;

use rand::Rng;

use crate::chain::{DrawFits, Trace, TraceRecord};
use crate::data::Dataset;
use crate::error::{BartError, Result};
use crate::forest::RowPredictor;
use crate::sampling::standard_normal;

/// Which model(s) a split must appear in to count as inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PipSelector {
    Exposure,
    #[default]
    Outcome,
    Any,
}

/// Posterior inclusion probabilities per covariate (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionReport {
    pub exposure: Vec<f64>,
    pub outcome: Vec<f64>,
    pub any: Vec<f64>,
    /// Marginal scheme only: share of draws whose outcome model splits on
    /// the exposure.
    pub exposure_variable: Option<f64>,
    pub n_draws: usize,
}

impl InclusionReport {
    pub fn selected(&self, selector: PipSelector) -> &[f64] {
        match selector {
            PipSelector::Exposure => &self.exposure,
            PipSelector::Outcome => &self.outcome,
            PipSelector::Any => &self.any,
        }
    }
}

pub fn pip(trace: &Trace) -> Result<InclusionReport> {
    pip_pooled(std::slice::from_ref(trace))
}

/// Inclusion probabilities over the draws of several chains.
pub fn pip_pooled(traces: &[Trace]) -> Result<InclusionReport> {
    let records: Vec<&TraceRecord> = traces.iter().flat_map(|t| &t.records).collect();
    if records.is_empty() {
        return Err(BartError::EmptyTrace);
    }
    let p = traces[0].n_covariates;
    let mut exposure = vec![0usize; p];
    let mut outcome = vec![0usize; p];
    let mut any = vec![0usize; p];
    let mut exposure_var = 0usize;
    for r in &records {
        let c = &r.counts;
        for j in 0..p {
            let e = c.exposure()[j] > 0;
            let o = c.outcome_on(j) > 0;
            exposure[j] += usize::from(e);
            outcome[j] += usize::from(o);
            any[j] += usize::from(e || o);
        }
        if c.exposure_splits().is_some_and(|n0| n0 > 0) {
            exposure_var += 1;
        }
    }
    let r = records.len() as f64;
    let frac = |v: Vec<usize>| v.into_iter().map(|k| k as f64 / r).collect();
    Ok(InclusionReport {
        exposure: frac(exposure),
        outcome: frac(outcome),
        any: frac(any),
        exposure_variable: records[0]
            .counts
            .exposure_splits()
            .map(|_| exposure_var as f64 / r),
        n_draws: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecomposition {
    /// Share of draws whose outcome model(s) split on every variable of `x_cap`.
    pub fraction_r_cap: f64,
    /// Same for `x_star`.
    pub fraction_r_star: f64,
    pub x_cap: Vec<usize>,
    pub x_star: Vec<usize>,
}

pub fn class_decomposition(
    trace: &Trace,
    x_cap: &[usize],
    x_star: &[usize],
) -> Result<ClassDecomposition> {
    class_decomposition_pooled(std::slice::from_ref(trace), x_cap, x_star)
}

pub fn class_decomposition_pooled(
    traces: &[Trace],
    x_cap: &[usize],
    x_star: &[usize],
) -> Result<ClassDecomposition> {
    let records: Vec<&TraceRecord> = traces.iter().flat_map(|t| &t.records).collect();
    if records.is_empty() {
        return Err(BartError::EmptyTrace);
    }
    let cap: BTreeSet<usize> = x_cap.iter().copied().collect();
    let star: BTreeSet<usize> = x_star.iter().copied().collect();
    if !cap.is_subset(&star) {
        let missing: Vec<String> = cap.difference(&star).map(|j| j.to_string()).collect();
        return Err(BartError::SetNesting(format!(
            "variables {} are in the required set but not in the larger set",
            missing.join(",")
        )));
    }
    if let Some(&j) = star.iter().find(|&&j| j >= traces[0].n_covariates) {
        return Err(BartError::SetNesting(format!("variable index {j} out of range")));
    }
    let all_used =
        |set: &BTreeSet<usize>, r: &TraceRecord| set.iter().all(|&j| r.counts.outcome_on(j) > 0);
    let n = records.len() as f64;
    let in_cap = records.iter().filter(|r| all_used(&cap, r)).count();
    let in_star = records.iter().filter(|r| all_used(&star, r)).count();
    Ok(ClassDecomposition {
        fraction_r_cap: in_cap as f64 / n,
        fraction_r_star: in_star as f64 / n,
        x_cap: cap.into_iter().collect(),
        x_star: star.into_iter().collect(),
    })
}

fn sample_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
}

/// Classic potential scale reduction factor. Returns `+inf` when every
/// chain is constant.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(BartError::ChainLengthMismatch("need at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(BartError::ChainLengthMismatch(format!(
            "lengths {:?}",
            chains.iter().map(Vec::len).collect::<Vec<_>>()
        )));
    }
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let means: Vec<f64> = chains
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let b_over_n = sample_variance(&means);
    if w == 0.0 {
        return Ok(f64::INFINITY);
    }
    let nf = n as f64;
    Ok((((nf - 1.0) / nf * w + b_over_n) / w).sqrt())
}

/// `k` replicated outcome vectors, each from a uniformly chosen draw.
pub fn posterior_predictive<R: Rng + ?Sized>(
    trace: &Trace,
    data: &Dataset,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if trace.records.is_empty() {
        return Err(BartError::EmptyTrace);
    }
    let a = data.a();
    let x = data.x();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let r = &trace.records[rng.random_range(0..trace.records.len())];
        let sd_for = |i: usize| {
            let s2 = if r.sigma2.len() == 2 {
                r.sigma2[usize::from(a[i] == 1.0)]
            } else {
                r.sigma2[0]
            };
            s2.sqrt()
        };
        let rep: Vec<f64> = (0..data.n())
            .map(|i| {
                let fit = match &r.fits {
                    DrawFits::Binary { treated, control } => {
                        if a[i] == 1.0 {
                            treated[i]
                        } else {
                            control[i]
                        }
                    }
                    DrawFits::Continuous(f) => {
                        f.predict_with(|j| if j == 0 { a[i] } else { x.get(i, j - 1) })
                    }
                };
                fit + sd_for(i) * standard_normal(rng)
            })
            .collect();
        out.push(rep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backfit::MoveLog;
    use crate::data::{ExposureKind, Features, Scheme};
    use crate::prior::SplitCounts;
    use crate::sampling::rng_for;

    fn trace_with(counts: Vec<SplitCounts>, fits: DrawFits, sigma2: f64) -> Trace {
        let n_cov = counts[0].n_covariates();
        Trace {
            scheme: Scheme::Marginal,
            exposure_kind: ExposureKind::Binary,
            chain: 0,
            n_units: 3,
            n_covariates: n_cov,
            exposure_range: (0.0, 1.0),
            records: counts
                .into_iter()
                .enumerate()
                .map(|(i, c)| TraceRecord {
                    iteration: i + 1,
                    counts: c,
                    sigma2: vec![sigma2],
                    tau2: None,
                    alpha: 1.0,
                    s: vec![],
                    fits: fits.clone(),
                })
                .collect(),
            moves: MoveLog::default(),
            s_accepted: 0,
        }
    }

    fn marg(exposure: &[u32], outcome: &[u32]) -> SplitCounts {
        SplitCounts::Marginal {
            exposure: exposure.to_vec(),
            outcome: outcome.to_vec(),
        }
    }

    fn flat_fits() -> DrawFits {
        DrawFits::Binary {
            treated: vec![1.0; 3],
            control: vec![0.0; 3],
        }
    }

    #[test]
    fn pip_counts_draws() {
        let t = trace_with(
            vec![
                marg(&[1, 0], &[1, 2, 0]),
                marg(&[0, 0], &[0, 0, 0]),
                marg(&[0, 0], &[1, 3, 0]),
                marg(&[2, 0], &[0, 0, 0]),
            ],
            flat_fits(),
            1.0,
        );
        let r = pip(&t).unwrap();
        assert_eq!(r.outcome, vec![0.5, 0.0]);
        assert_eq!(r.exposure, vec![0.5, 0.0]);
        assert_eq!(r.any, vec![0.75, 0.0]);
        assert_eq!(r.exposure_variable, Some(0.5));
        assert_eq!(r.selected(PipSelector::Any), r.any.as_slice());
    }

    #[test]
    fn empty_trace_errors() {
        let mut t = trace_with(vec![marg(&[0], &[0, 0])], flat_fits(), 1.0);
        t.records.clear();
        assert_eq!(pip(&t), Err(BartError::EmptyTrace));
    }

    #[test]
    fn class_fractions() {
        let t = trace_with(
            vec![marg(&[0, 0, 0], &[0, 1, 1, 0]), marg(&[0, 0, 0], &[0, 1, 1, 1])],
            flat_fits(),
            1.0,
        );
        let d = class_decomposition(&t, &[], &[0]).unwrap();
        assert_eq!(d.fraction_r_cap, 1.0);
        let d = class_decomposition(&t, &[0, 1], &[0, 1, 2]).unwrap();
        assert_eq!((d.fraction_r_cap, d.fraction_r_star), (1.0, 0.5));
        let d = class_decomposition(&t, &[2], &[2]).unwrap();
        assert_eq!(d.fraction_r_cap, 0.5);
        assert!(matches!(
            class_decomposition(&t, &[0, 2], &[0]),
            Err(BartError::SetNesting(_))
        ));
    }

    #[test]
    fn rhat_examples() {
        let r = gelman_rubin(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!((r - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
        let r = gelman_rubin(&[vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert!(r.is_infinite());
        assert!(gelman_rubin(&[vec![1.0, 2.0]]).is_err());
        assert!(gelman_rubin(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn rhat_affine_invariant() {
        let a = vec![0.3, 1.2, -0.4, 2.0];
        let b = vec![1.1, 0.2, 0.9, -0.7];
        let r1 = gelman_rubin(&[a.clone(), b.clone()]).unwrap();
        let t = |v: &Vec<f64>| v.iter().map(|x| 3.0 * x - 7.0).collect::<Vec<_>>();
        let r2 = gelman_rubin(&[t(&a), t(&b)]).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn rhat_same_stream_near_one() {
        let mut rng = rng_for(21, 0);
        let mut draw = || (0..10_000).map(|_| standard_normal(&mut rng)).collect::<Vec<_>>();
        let r = gelman_rubin(&[draw(), draw()]).unwrap();
        assert!(r > 0.99 && r < 1.05, "{r}");
    }

    #[test]
    fn predictive_zero_noise_and_shape() {
        let data = Dataset::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 1.0],
            Features::from_columns(vec![vec![0.0, 1.0, 2.0]]).unwrap(),
            vec!["x".into()],
            ExposureKind::Binary,
        )
        .unwrap();
        let fits = DrawFits::Binary {
            treated: vec![5.0, 6.0, 7.0],
            control: vec![1.0, 2.0, 3.0],
        };
        let t = trace_with(vec![marg(&[0], &[0, 0])], fits, 1e-20);
        let mut rng = rng_for(1, 0);
        let reps = posterior_predictive(&t, &data, 4, &mut rng).unwrap();
        assert_eq!(reps.len(), 4);
        for r in reps {
            assert_eq!(r.len(), 3);
            let expect = [1.0, 6.0, 7.0];
            for (a, b) in r.iter().zip(expect) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn predictive_mean_matches_fits() {
        let data = Dataset::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 1.0, 0.0],
            Features::from_columns(vec![vec![0.0, 1.0, 2.0]]).unwrap(),
            vec!["x".into()],
            ExposureKind::Binary,
        )
        .unwrap();
        let fits = DrawFits::Binary {
            treated: vec![5.0, 6.0, 7.0],
            control: vec![1.0, 2.0, 3.0],
        };
        let t = trace_with(vec![marg(&[0], &[0, 0])], fits, 1.0);
        let mut rng = rng_for(2, 0);
        let reps = posterior_predictive(&t, &data, 100, &mut rng).unwrap();
        let grand = reps.iter().flatten().sum::<f64>() / 300.0;
        // fits mean (1 + 6 + 3)/3; sd of the grand mean is 1/sqrt(300)
        assert!((grand - 10.0 / 3.0).abs() < 4.0 / 300f64.sqrt(), "{grand}");
    }
}
