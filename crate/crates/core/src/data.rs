//! Dataset container, hyperparameters and chain configuration.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BartError, Result};

/// Column-major numeric matrix. Trees address it as `(row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    n_rows: usize,
    cols: Vec<Vec<f64>>,
}

impl Features {
    /// Builds a matrix from columns of equal length.
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = cols.first().map_or(0, Vec::len);
        if cols.iter().any(|c| c.len() != n_rows) {
            return Err(BartError::InvalidDataset(
                "covariate columns have different lengths".into(),
            ));
        }
        Ok(Features { n_rows, cols })
    }

    /// Builds a matrix from row-major data.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(BartError::InvalidDataset("ragged rows".into()));
        }
        let cols = (0..n_cols)
            .map(|j| rows.iter().map(|r| r[j]).collect())
            .collect();
        Ok(Features {
            n_rows: rows.len(),
            cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cols[col][row]
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.cols[col]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[row]).collect()
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Features {
        Features {
            n_rows: rows.len(),
            cols: self
                .cols
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    /// Returns a copy with `col` inserted as column 0.
    pub fn with_leading_column(&self, col: &[f64]) -> Features {
        assert_eq!(col.len(), self.n_rows);
        let mut cols = Vec::with_capacity(self.cols.len() + 1);
        cols.push(col.to_vec());
        cols.extend(self.cols.iter().cloned());
        Features {
            n_rows: self.n_rows,
            cols,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExposureKind {
    Binary,
    Continuous,
}

impl fmt::Display for ExposureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExposureKind::Binary => f.write_str("binary"),
            ExposureKind::Continuous => f.write_str("continuous"),
        }
    }
}

impl FromStr for ExposureKind {
    type Err = BartError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(ExposureKind::Binary),
            "continuous" => Ok(ExposureKind::Continuous),
            other => Err(BartError::Config(format!("unknown exposure kind `{other}`"))),
        }
    }
}

/// Outcome, exposure and covariates for `N` units.
///
/// Immutable once built; a binary exposure is stored as `0.0` / `1.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    a: Vec<f64>,
    x: Features,
    names: Vec<String>,
    exposure_kind: ExposureKind,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        a: Vec<f64>,
        x: Features,
        names: Vec<String>,
        exposure_kind: ExposureKind,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(BartError::InvalidDataset(format!("need at least 2 units, got {n}")));
        }
        if a.len() != n || x.n_rows() != n {
            return Err(BartError::InvalidDataset(
                "outcome, exposure and covariates differ in length".into(),
            ));
        }
        if x.n_cols() == 0 {
            return Err(BartError::InvalidDataset("no covariates".into()));
        }
        if names.len() != x.n_cols() {
            return Err(BartError::InvalidDataset(
                "covariate name count does not match column count".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(BartError::InvalidDataset(format!("duplicate column `{name}`")));
            }
        }
        let all_values = y
            .iter()
            .chain(a.iter())
            .chain((0..x.n_cols()).flat_map(|j| x.column(j).iter()));
        for v in all_values {
            if !v.is_finite() {
                return Err(BartError::InvalidDataset("non-finite value".into()));
            }
        }
        if exposure_kind == ExposureKind::Binary {
            if let Some((row, &value)) = a.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0)
            {
                return Err(BartError::ExposureDomainError { row, value });
            }
            if !a.contains(&0.0) {
                return Err(BartError::EmptyArm(0));
            }
            if !a.contains(&1.0) {
                return Err(BartError::EmptyArm(1));
            }
        }
        Ok(Dataset {
            y,
            a,
            x,
            names,
            exposure_kind,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.n_cols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn x(&self) -> &Features {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exposure_kind(&self) -> ExposureKind {
        self.exposure_kind
    }

    /// Smallest and largest observed exposure.
    pub fn exposure_range(&self) -> (f64, f64) {
        min_max(&self.a)
    }
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// Range of the outcome, used to calibrate the leaf prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeRange {
    pub min: f64,
    pub max: f64,
    pub center: f64,
}

/// Records the outcome range. The outcome itself is returned untouched:
/// all estimates stay on the original scale.
pub fn standardize_outcome(y: &[f64]) -> Result<(Vec<f64>, OutcomeRange)> {
    let (min, max) = min_max(y);
    if y.is_empty() || max <= min {
        return Err(BartError::ConstantOutcome);
    }
    Ok((
        y.to_vec(),
        OutcomeRange {
            min,
            max,
            center: 0.5 * (min + max),
        },
    ))
}

/// Splits unit indices by exposure arm: `(I0, I1)`.
pub fn arm_indices(data: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    if data.exposure_kind() != ExposureKind::Binary {
        return Err(BartError::NotBinary);
    }
    binary_arms(data.a())
}

pub(crate) fn binary_arms(a: &[f64]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (i1, i0): (Vec<usize>, Vec<usize>) = (0..a.len()).partition(|&i| a[i] == 1.0);
    if i0.is_empty() {
        return Err(BartError::EmptyArm(0));
    }
    if i1.is_empty() {
        return Err(BartError::EmptyArm(1));
    }
    Ok((i0, i1))
}

/// How the exposure coordinate of the proposal Dirichlet is inflated in
/// the marginal scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum COffsetMode {
    Zero,
    /// `c` equals the current number of exposure splits in the outcome model.
    EqualToN0,
    Fixed(f64),
}

impl COffsetMode {
    pub fn value(&self, n0: u32) -> f64 {
        match *self {
            COffsetMode::Zero => 0.0,
            COffsetMode::EqualToN0 => f64::from(n0),
            COffsetMode::Fixed(c) => c,
        }
    }
}

impl fmt::Display for COffsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            COffsetMode::Zero => f.write_str("zero"),
            COffsetMode::EqualToN0 => f.write_str("n0"),
            COffsetMode::Fixed(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for COffsetMode {
    type Err = BartError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zero" | "0" => Ok(COffsetMode::Zero),
            "n0" => Ok(COffsetMode::EqualToN0),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|c| c.is_finite() && *c >= 0.0)
                .map(COffsetMode::Fixed)
                .ok_or_else(|| BartError::Config(format!("invalid c offset `{other}`"))),
        }
    }
}

/// Prior and proposal settings shared by every model in a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Trees per model.
    pub n_trees: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub a_sigma: f64,
    pub b_sigma: f64,
    /// Beta hyperprior on `alpha / (alpha + P)`.
    pub a0: f64,
    pub b0: f64,
    pub p_grow: f64,
    pub p_prune: f64,
    pub p_change: f64,
    /// Leaf prior spread: the forest sum spans the outcome range at `k_leaf` sd.
    pub k_leaf: f64,
    pub c_offset: COffsetMode,
    /// Random-walk step on `log(alpha)`.
    pub alpha_step: f64,
    pub alpha_init: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_trees: 50,
            beta1: 0.95,
            beta2: 2.0,
            a_sigma: 3.0,
            b_sigma: 3.0,
            a0: 0.5,
            b0: 1.0,
            p_grow: 0.28,
            p_prune: 0.28,
            p_change: 0.44,
            k_leaf: 2.0,
            c_offset: COffsetMode::EqualToN0,
            alpha_step: 0.3,
            alpha_init: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(BartError::InvalidHyperparams(msg.into()));
        if self.n_trees == 0 {
            return bad("at least one tree is required");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1 must lie in (0, 1)");
        }
        if !(self.beta2 >= 0.0) {
            return bad("beta2 must be nonnegative");
        }
        if !(self.a_sigma > 0.0 && self.b_sigma > 0.0) {
            return bad("a_sigma and b_sigma must be positive");
        }
        if !(self.a0 > 0.0 && self.b0 > 0.0) {
            return bad("a0 and b0 must be positive");
        }
        let probs = [self.p_grow, self.p_prune, self.p_change];
        if probs.iter().any(|&p| !(p > 0.0)) {
            return bad("move probabilities must be positive");
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("move probabilities must sum to one");
        }
        if !(self.k_leaf > 0.0) {
            return bad("k_leaf must be positive");
        }
        if let COffsetMode::Fixed(c) = self.c_offset {
            if !(c >= 0.0 && c.is_finite()) {
                return bad("fixed c offset must be finite and nonnegative");
            }
        }
        if !(self.alpha_step >= 0.0 && self.alpha_step.is_finite()) {
            return bad("alpha_step must be finite and nonnegative");
        }
        if !(self.alpha_init > 0.0 && self.alpha_init.is_finite()) {
            return bad("alpha_init must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One exposure forest plus one outcome forest per exposure arm.
    Separate,
    /// One exposure forest plus a single outcome forest that splits on the exposure.
    Marginal,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Separate => f.write_str("separate"),
            Scheme::Marginal => f.write_str("marginal"),
        }
    }
}

impl FromStr for Scheme {
    type Err = BartError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "separate" => Ok(Scheme::Separate),
            "marginal" => Ok(Scheme::Marginal),
            other => Err(BartError::Config(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub n_chains: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 25_000,
            burn_in: 12_500,
            thin: 10,
            seed: 1,
            scheme: Scheme::Marginal,
            n_chains: 1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BartError::InvalidChainConfig(msg));
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.burn_in >= self.n_iter {
            return bad(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            ));
        }
        if self.retained() == 0 {
            return bad("schedule retains no draws".into());
        }
        if self.n_chains == 0 {
            return bad("n_chains must be at least 1".into());
        }
        Ok(())
    }

    /// Number of draws kept after burn-in and thinning.
    pub fn retained(&self) -> usize {
        self.n_iter.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    /// Whether 1-based iteration `iter` is kept.
    pub fn keeps(&self, iter: usize) -> bool {
        iter > self.burn_in && (iter - self.burn_in) % self.thin == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(a: Vec<f64>) -> Result<Dataset> {
        let n = a.len();
        let y = (0..n).map(|i| i as f64).collect();
        let x = Features::from_columns(vec![(0..n).map(|i| (i * 7 % 5) as f64).collect()])?;
        Dataset::new(y, a, x, vec!["x1".into()], ExposureKind::Binary)
    }

    #[test]
    fn outcome_range_records() {
        let (y, r) = standardize_outcome(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(y, vec![0.0, 1.0, 2.0]);
        assert_eq!((r.min, r.max, r.center), (0.0, 2.0, 1.0));

        let (_, r) = standardize_outcome(&[-3.0, -3.0, 5.0]).unwrap();
        assert_eq!((r.min, r.max, r.center), (-3.0, 5.0, 1.0));

        assert_eq!(
            standardize_outcome(&[4.0, 4.0, 4.0]),
            Err(BartError::ConstantOutcome)
        );
    }

    #[test]
    fn arms_partition_units() {
        let d = toy(vec![1.0, 0.0, 1.0]).unwrap();
        let (i0, i1) = arm_indices(&d).unwrap();
        assert_eq!(i0, vec![1]);
        assert_eq!(i1, vec![0, 2]);

        let d = toy(vec![1.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        let (i0, i1) = arm_indices(&d).unwrap();
        assert_eq!((i0.len(), i1.len()), (2, 3));
    }

    #[test]
    fn single_arm_rejected() {
        assert_eq!(toy(vec![0.0, 0.0]), Err(BartError::EmptyArm(1)));
        assert_eq!(binary_arms(&[0.0, 0.0]), Err(BartError::EmptyArm(1)));
        assert_eq!(binary_arms(&[1.0, 1.0]), Err(BartError::EmptyArm(0)));
    }

    #[test]
    fn continuous_exposure_has_no_arms() {
        let x = Features::from_columns(vec![vec![0.0, 1.0]]).unwrap();
        let d = Dataset::new(
            vec![0.0, 1.0],
            vec![0.3, 2.5],
            x,
            vec!["x".into()],
            ExposureKind::Continuous,
        )
        .unwrap();
        assert_eq!(arm_indices(&d), Err(BartError::NotBinary));
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(matches!(
            toy(vec![1.0, 2.0, 0.0]),
            Err(BartError::ExposureDomainError { row: 1, .. })
        ));
        let x = Features::from_columns(vec![vec![0.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let dup = Dataset::new(
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            x,
            vec!["x".into(), "x".into()],
            ExposureKind::Binary,
        );
        assert!(matches!(dup, Err(BartError::InvalidDataset(_))));
    }

    #[test]
    fn retention_arithmetic() {
        let cfg = ChainConfig {
            n_iter: 20,
            burn_in: 10,
            thin: 5,
            ..ChainConfig::default()
        };
        assert_eq!(cfg.retained(), 2);
        assert_eq!((1..=20).filter(|&i| cfg.keeps(i)).count(), 2);
        assert!(ChainConfig {
            burn_in: 20,
            ..cfg.clone()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn default_hyperparams_are_valid() {
        Hyperparams::default().validate().unwrap();
        let h = Hyperparams {
            p_grow: 0.5,
            ..Hyperparams::default()
        };
        assert!(h.validate().is_err());
    }
}
