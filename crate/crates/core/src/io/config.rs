//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::{ChainConfig, ExposureKind, Hyperparams};
use crate::error::{BartError, Result};
use crate::io::table::ColumnRoles;

/// Parses `key = value` lines; `#` starts a comment. Later keys win.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| BartError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(BartError::Config(format!("line {}: empty key", i + 1)));
        }
        out.insert(key.to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Everything a `fit` run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub outcome: Option<String>,
    pub exposure: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub exposure_kind: ExposureKind,
    pub hyper: Hyperparams,
    pub chain: ChainConfig,
    /// Explicit burn-in; otherwise half of the iterations.
    pub burn_in_set: bool,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            outcome: None,
            exposure: None,
            covariates: None,
            exposure_kind: ExposureKind::Binary,
            hyper: Hyperparams::default(),
            chain: ChainConfig::default(),
            burn_in_set: false,
            output: PathBuf::from("bartcs_out"),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| BartError::Config(format!("invalid value `{v}` for `{key}`")))
}

impl RunConfig {
    /// Applies one setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "input" => self.input = Some(PathBuf::from(v)),
            "outcome" => self.outcome = Some(v.to_string()),
            "exposure" => self.exposure = Some(v.to_string()),
            "covariates" => {
                self.covariates = if v.eq_ignore_ascii_case("all") {
                    None
                } else {
                    Some(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
                }
            }
            "exposure_kind" => self.exposure_kind = v.parse()?,
            "scheme" => self.chain.scheme = v.parse()?,
            "iters" => self.chain.n_iter = num(key, v)?,
            "burn_in" => {
                self.chain.burn_in = num(key, v)?;
                self.burn_in_set = true;
            }
            "thin" => self.chain.thin = num(key, v)?,
            "seed" => self.chain.seed = num(key, v)?,
            "chains" => self.chain.n_chains = num(key, v)?,
            "trees" => self.hyper.n_trees = num(key, v)?,
            "beta1" => self.hyper.beta1 = num(key, v)?,
            "beta2" => self.hyper.beta2 = num(key, v)?,
            "a_sigma" => self.hyper.a_sigma = num(key, v)?,
            "b_sigma" => self.hyper.b_sigma = num(key, v)?,
            "a0" => self.hyper.a0 = num(key, v)?,
            "b0" => self.hyper.b0 = num(key, v)?,
            "p_grow" => self.hyper.p_grow = num(key, v)?,
            "p_prune" => self.hyper.p_prune = num(key, v)?,
            "p_change" => self.hyper.p_change = num(key, v)?,
            "k" => self.hyper.k_leaf = num(key, v)?,
            "c_offset" => self.hyper.c_offset = v.parse()?,
            "alpha_step" => self.hyper.alpha_step = num(key, v)?,
            "alpha_init" => self.hyper.alpha_init = num(key, v)?,
            "output" => self.output = PathBuf::from(v),
            _ => return Err(BartError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn apply_map(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in map {
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Fills derived defaults and checks the result.
    pub fn finish(&mut self) -> Result<()> {
        if !self.burn_in_set {
            self.chain.burn_in = self.chain.n_iter / 2;
            self.burn_in_set = true;
        }
        self.hyper.validate()?;
        self.chain.validate()?;
        Ok(())
    }

    pub fn roles(&self) -> Result<ColumnRoles> {
        let need = |v: &Option<String>, what: &str| {
            v.clone()
                .ok_or_else(|| BartError::Config(format!("no {what} column given")))
        };
        Ok(ColumnRoles {
            outcome: need(&self.outcome, "outcome")?,
            exposure: need(&self.exposure, "exposure")?,
            covariates: self.covariates.clone(),
        })
    }

    /// Resolved configuration in the same format it is read from.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(p) = &self.input {
            kv("input", p.display().to_string());
        }
        if let Some(o) = &self.outcome {
            kv("outcome", o.clone());
        }
        if let Some(e) = &self.exposure {
            kv("exposure", e.clone());
        }
        kv(
            "covariates",
            self.covariates
                .as_ref()
                .map_or_else(|| "all".to_string(), |c| c.join(",")),
        );
        kv("exposure_kind", self.exposure_kind.to_string());
        kv("scheme", self.chain.scheme.to_string());
        kv("iters", self.chain.n_iter.to_string());
        kv("burn_in", self.chain.burn_in.to_string());
        kv("thin", self.chain.thin.to_string());
        kv("seed", self.chain.seed.to_string());
        kv("chains", self.chain.n_chains.to_string());
        let h = &self.hyper;
        kv("trees", h.n_trees.to_string());
        kv("beta1", h.beta1.to_string());
        kv("beta2", h.beta2.to_string());
        kv("a_sigma", h.a_sigma.to_string());
        kv("b_sigma", h.b_sigma.to_string());
        kv("a0", h.a0.to_string());
        kv("b0", h.b0.to_string());
        kv("p_grow", h.p_grow.to_string());
        kv("p_prune", h.p_prune.to_string());
        kv("p_change", h.p_change.to_string());
        kv("k", h.k_leaf.to_string());
        kv("c_offset", h.c_offset.to_string());
        kv("alpha_step", h.alpha_step.to_string());
        kv("alpha_init", h.alpha_init.to_string());
        kv("output", self.output.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{COffsetMode, Scheme};

    #[test]
    fn comments_and_whitespace() {
        let m = parse_config("# header\n iters = 200  # short\n\nscheme=separate\n").unwrap();
        assert_eq!(m["iters"], "200");
        assert_eq!(m["scheme"], "separate");
        assert!(parse_config("oops\n").is_err());
    }

    #[test]
    fn burn_in_defaults_to_half() {
        let mut c = RunConfig::default();
        c.set("iters", "2000").unwrap();
        c.finish().unwrap();
        assert_eq!(c.chain.burn_in, 1000);
        let mut c = RunConfig::default();
        c.set("iters", "2000").unwrap();
        c.set("burn_in", "100").unwrap();
        c.finish().unwrap();
        assert_eq!(c.chain.burn_in, 100);
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        for (k, v) in [
            ("input", "d.csv"),
            ("outcome", "y"),
            ("exposure", "a"),
            ("covariates", "x1,x2"),
            ("scheme", "separate"),
            ("iters", "300"),
            ("c_offset", "2.5"),
            ("beta1", "0.9"),
        ] {
            c.set(k, v).unwrap();
        }
        c.finish().unwrap();
        let mut back = RunConfig::default();
        back.apply_map(&parse_config(&c.render()).unwrap()).unwrap();
        back.finish().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.chain.scheme, Scheme::Separate);
        assert_eq!(back.hyper.c_offset, COffsetMode::Fixed(2.5));
    }

    #[test]
    fn unknown_key_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("nonsense", "1"), Err(BartError::Config(_))));
        assert!(c.set("iters", "many").is_err());
    }
}
