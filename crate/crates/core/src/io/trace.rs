//! Line-delimited JSON traces: a header line, one line per retained draw,
//! and a footer with move tallies. Floats are written with 17 significant
//! digits so a trace reads back bit-for-bit.

use std::fmt::Write as _;

use serde_json::Value;

use crate::backfit::MoveLog;
use crate::chain::{DrawFits, Trace, TraceRecord};
use crate::data::{ExposureKind, Scheme};
use crate::error::{BartError, Result};
use crate::forest::{CompactNode, CompactTree, ForestSnapshot};
use crate::io::fmt17;
use crate::prior::SplitCounts;

pub const FORMAT_VERSION: u32 = 1;

/// A trace as stored on disk, with the covariate names and per-draw
/// headline effects.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub trace: Trace,
    pub covariates: Vec<String>,
    pub exposure_name: String,
    /// Per-draw ATE (binary) or quartile contrast (continuous).
    pub effects: Vec<f64>,
}

fn floats(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt17(x)).collect();
    format!("[{}]", parts.join(","))
}

fn ints(v: &[u32]) -> String {
    let parts: Vec<String> = v.iter().map(u32::to_string).collect();
    format!("[{}]", parts.join(","))
}

fn usizes(v: &[usize]) -> String {
    let parts: Vec<String> = v.iter().map(usize::to_string).collect();
    format!("[{}]", parts.join(","))
}

fn quoted(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn counts_json(c: &SplitCounts) -> String {
    match c {
        SplitCounts::Marginal { exposure, outcome } => {
            format!(r#"{{"exposure":{},"outcome":{}}}"#, ints(exposure), ints(outcome))
        }
        SplitCounts::Separate {
            exposure,
            arm0,
            arm1,
        } => format!(
            r#"{{"exposure":{},"arm0":{},"arm1":{}}}"#,
            ints(exposure),
            ints(arm0),
            ints(arm1)
        ),
    }
}

fn forest_json(f: &ForestSnapshot) -> String {
    let trees: Vec<String> = f
        .trees
        .iter()
        .map(|t| {
            let nodes: Vec<String> = t
                .nodes
                .iter()
                .map(|n| match *n {
                    CompactNode::Split {
                        var,
                        cut,
                        left,
                        right,
                    } => format!("[{var},{},{left},{right}]", fmt17(cut)),
                    CompactNode::Leaf { mu } => format!("[{}]", fmt17(mu)),
                })
                .collect();
            format!("[{}]", nodes.join(","))
        })
        .collect();
    format!("[{}]", trees.join(","))
}

fn header_line(file: &TraceFile) -> String {
    let t = &file.trace;
    let names: Vec<String> = file.covariates.iter().map(|n| quoted(n)).collect();
    format!(
        r#"{{"record":"header","format":{FORMAT_VERSION},"scheme":"{}","exposure_kind":"{}","chain":{},"n_units":{},"n_covariates":{},"exposure_range":{},"exposure":{},"covariates":[{}]}}"#,
        t.scheme,
        t.exposure_kind,
        t.chain,
        t.n_units,
        t.n_covariates,
        floats(&[t.exposure_range.0, t.exposure_range.1]),
        quoted(&file.exposure_name),
        names.join(",")
    )
}

fn draw_line(r: &TraceRecord, effect: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"{{"record":"draw","iteration":{},"effect":{},"sigma2":{},"tau2":{},"alpha":{},"s":{},"counts":{},"fits":"#,
        r.iteration,
        fmt17(effect),
        floats(&r.sigma2),
        r.tau2.map_or_else(|| "null".to_string(), fmt17),
        fmt17(r.alpha),
        floats(&r.s),
        counts_json(&r.counts),
    );
    match &r.fits {
        DrawFits::Binary { treated, control } => {
            let _ = write!(
                s,
                r#"{{"treated":{},"control":{}}}}}"#,
                floats(treated),
                floats(control)
            );
        }
        DrawFits::Continuous(f) => {
            let _ = write!(s, r#"{{"forest":{}}}}}"#, forest_json(f));
        }
    }
    s
}

fn footer_line(t: &Trace) -> String {
    format!(
        r#"{{"record":"footer","proposed":{},"accepted":{},"skipped":{},"s_accepted":{}}}"#,
        usizes(&t.moves.proposed),
        usizes(&t.moves.accepted),
        t.moves.skipped,
        t.s_accepted
    )
}

pub fn render_trace(file: &TraceFile) -> String {
    let mut out = header_line(file);
    out.push('\n');
    for (r, &e) in file.trace.records.iter().zip(&file.effects) {
        out.push_str(&draw_line(r, e));
        out.push('\n');
    }
    out.push_str(&footer_line(&file.trace));
    out.push('\n');
    out
}

fn bad(line: usize, msg: impl Into<String>) -> BartError {
    BartError::Io(format!("trace line {line}: {}", msg.into()))
}

struct Fields<'a> {
    v: &'a Value,
    line: usize,
}

impl<'a> Fields<'a> {
    fn get(&self, key: &str) -> Result<&'a Value> {
        self.v
            .get(key)
            .ok_or_else(|| bad(self.line, format!("missing `{key}`")))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .as_f64()
            .ok_or_else(|| bad(self.line, format!("`{key}` is not a number")))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| bad(self.line, format!("`{key}` is not an integer")))
    }

    fn str(&self, key: &str) -> Result<&'a str> {
        self.get(key)?
            .as_str()
            .ok_or_else(|| bad(self.line, format!("`{key}` is not a string")))
    }

    fn f64s(&self, key: &str) -> Result<Vec<f64>> {
        f64_array(self.get(key)?, self.line)
    }

    fn u32s(&self, key: &str) -> Result<Vec<u32>> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| bad(self.line, format!("`{key}` is not an array")))?
            .iter()
            .map(|x| {
                x.as_u64()
                    .and_then(|x| u32::try_from(x).ok())
                    .ok_or_else(|| bad(self.line, format!("`{key}` holds a non-count")))
            })
            .collect()
    }

    fn sub(&self, key: &str) -> Result<Fields<'a>> {
        Ok(Fields {
            v: self.get(key)?,
            line: self.line,
        })
    }
}

fn f64_array(v: &Value, line: usize) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| bad(line, "expected an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad(line, "expected a number")))
        .collect()
}

fn parse_forest(v: &Value, line: usize) -> Result<ForestSnapshot> {
    let trees = v.as_array().ok_or_else(|| bad(line, "forest is not an array"))?;
    let trees = trees
        .iter()
        .map(|t| {
            let nodes = t.as_array().ok_or_else(|| bad(line, "tree is not an array"))?;
            let nodes = nodes
                .iter()
                .map(|n| {
                    let n = n.as_array().ok_or_else(|| bad(line, "node is not an array"))?;
                    match n.as_slice() {
                        [mu] => Ok(CompactNode::Leaf {
                            mu: mu.as_f64().ok_or_else(|| bad(line, "leaf value"))?,
                        }),
                        [var, cut, left, right] => {
                            let idx = |x: &Value| {
                                x.as_u64().ok_or_else(|| bad(line, "node index"))
                            };
                            Ok(CompactNode::Split {
                                var: idx(var)? as usize,
                                cut: cut.as_f64().ok_or_else(|| bad(line, "cutpoint"))?,
                                left: idx(left)? as u32,
                                right: idx(right)? as u32,
                            })
                        }
                        _ => Err(bad(line, "node has the wrong arity")),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(CompactTree { nodes })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestSnapshot { trees })
}

pub fn parse_trace(text: &str) -> Result<TraceFile> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty trace"))?;
    let hv: Value = serde_json::from_str(first).map_err(|e| bad(1, e.to_string()))?;
    let h = Fields { v: &hv, line: 1 };
    if h.str("record")? != "header" {
        return Err(bad(1, "first record is not a header"));
    }
    let scheme: Scheme = h.str("scheme")?.parse()?;
    let exposure_kind: ExposureKind = h.str("exposure_kind")?.parse()?;
    let range = h.f64s("exposure_range")?;
    if range.len() != 2 {
        return Err(bad(1, "exposure_range needs two values"));
    }
    let covariates: Vec<String> = h
        .get("covariates")?
        .as_array()
        .ok_or_else(|| bad(1, "covariates is not an array"))?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad(1, "covariate name")))
        .collect::<Result<_>>()?;
    let mut trace = Trace {
        scheme,
        exposure_kind,
        chain: h.usize("chain")?,
        n_units: h.usize("n_units")?,
        n_covariates: h.usize("n_covariates")?,
        exposure_range: (range[0], range[1]),
        records: Vec::new(),
        moves: MoveLog::default(),
        s_accepted: 0,
    };
    let exposure_name = h.str("exposure")?.to_string();
    let mut effects = Vec::new();
    let mut saw_footer = false;

    for (i, raw) in lines {
        let line = i + 1;
        let v: Value = serde_json::from_str(raw).map_err(|e| bad(line, e.to_string()))?;
        let f = Fields { v: &v, line };
        match f.str("record")? {
            "draw" => {
                let c = f.sub("counts")?;
                let counts = match scheme {
                    Scheme::Marginal => SplitCounts::Marginal {
                        exposure: c.u32s("exposure")?,
                        outcome: c.u32s("outcome")?,
                    },
                    Scheme::Separate => SplitCounts::Separate {
                        exposure: c.u32s("exposure")?,
                        arm0: c.u32s("arm0")?,
                        arm1: c.u32s("arm1")?,
                    },
                };
                let fits_v = f.sub("fits")?;
                let fits = match exposure_kind {
                    ExposureKind::Binary => DrawFits::Binary {
                        treated: fits_v.f64s("treated")?,
                        control: fits_v.f64s("control")?,
                    },
                    ExposureKind::Continuous => {
                        DrawFits::Continuous(parse_forest(fits_v.get("forest")?, line)?)
                    }
                };
                let tau2 = match f.get("tau2")? {
                    Value::Null => None,
                    x => Some(x.as_f64().ok_or_else(|| bad(line, "`tau2` is not a number"))?),
                };
                effects.push(f.f64("effect")?);
                trace.records.push(TraceRecord {
                    iteration: f.usize("iteration")?,
                    counts,
                    sigma2: f.f64s("sigma2")?,
                    tau2,
                    alpha: f.f64("alpha")?,
                    s: f.f64s("s")?,
                    fits,
                });
            }
            "footer" => {
                let arr3 = |key: &str| -> Result<[usize; 3]> {
                    let v = f.get(key)?.as_array().ok_or_else(|| bad(line, key.to_string()))?;
                    let mut out = [0usize; 3];
                    if v.len() != 3 {
                        return Err(bad(line, format!("`{key}` needs three entries")));
                    }
                    for (o, x) in out.iter_mut().zip(v) {
                        *o = x.as_u64().ok_or_else(|| bad(line, key.to_string()))? as usize;
                    }
                    Ok(out)
                };
                trace.moves = MoveLog {
                    proposed: arr3("proposed")?,
                    accepted: arr3("accepted")?,
                    skipped: f.usize("skipped")?,
                };
                trace.s_accepted = f.usize("s_accepted")?;
                saw_footer = true;
            }
            other => return Err(bad(line, format!("unknown record type `{other}`"))),
        }
    }
    if !saw_footer {
        return Err(bad(0, "trace is truncated (no footer)"));
    }
    Ok(TraceFile {
        trace,
        covariates,
        exposure_name,
        effects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::run_chain;
    use crate::data::{ChainConfig, Dataset, Features, Hyperparams};
    use crate::estimands::per_draw_effects;

    fn data(kind: ExposureKind) -> Dataset {
        let n = 30;
        let x1: Vec<f64> = (0..n).map(|i| ((i * 13) % 30) as f64 / 7.0).collect();
        let x2: Vec<f64> = (0..n).map(|i| ((i * 11) % 30) as f64 / 3.0).collect();
        let a: Vec<f64> = match kind {
            ExposureKind::Binary => (0..n).map(|i| (i % 2) as f64).collect(),
            ExposureKind::Continuous => x1.iter().map(|v| v * 0.5 + 0.1).collect(),
        };
        let y = (0..n).map(|i| x2[i] - a[i] + 0.1 * i as f64).collect();
        Dataset::new(
            y,
            a,
            Features::from_columns(vec![x1, x2]).unwrap(),
            vec!["x1".into(), "quoted \"x2\"".into()],
            kind,
        )
        .unwrap()
    }

    fn round_trip(d: &Dataset, scheme: Scheme) {
        let hyper = Hyperparams {
            n_trees: 4,
            ..Hyperparams::default()
        };
        let cfg = ChainConfig {
            n_iter: 40,
            burn_in: 20,
            thin: 4,
            seed: 9,
            scheme,
            n_chains: 1,
        };
        let trace = run_chain(d, &hyper, &cfg).unwrap();
        let effects = per_draw_effects(&trace, d.x(), d.a()).unwrap();
        let file = TraceFile {
            trace,
            covariates: d.names().to_vec(),
            exposure_name: "a".into(),
            effects,
        };
        let text = render_trace(&file);
        assert_eq!(text.lines().count(), file.trace.records.len() + 2);
        let back = parse_trace(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(render_trace(&back), text);
    }

    #[test]
    fn binary_round_trip() {
        round_trip(&data(ExposureKind::Binary), Scheme::Marginal);
        round_trip(&data(ExposureKind::Binary), Scheme::Separate);
    }

    #[test]
    fn continuous_round_trip() {
        round_trip(&data(ExposureKind::Continuous), Scheme::Marginal);
    }

    #[test]
    fn truncated_trace_rejected() {
        let d = data(ExposureKind::Binary);
        let cfg = ChainConfig {
            n_iter: 10,
            burn_in: 5,
            thin: 1,
            seed: 1,
            scheme: Scheme::Marginal,
            n_chains: 1,
        };
        let hyper = Hyperparams {
            n_trees: 2,
            ..Hyperparams::default()
        };
        let trace = run_chain(&d, &hyper, &cfg).unwrap();
        let effects = vec![0.0; trace.records.len()];
        let text = render_trace(&TraceFile {
            trace,
            covariates: d.names().to_vec(),
            exposure_name: "a".into(),
            effects,
        });
        let cut: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(parse_trace(&cut).is_err());
        assert!(parse_trace("").is_err());
    }

    #[test]
    fn extreme_floats_survive() {
        for v in [f64::MIN_POSITIVE, 5e-324, f64::MAX, -1.0 / 3.0, 0.1 + 0.2] {
            let s = fmt17(v);
            let parsed: Value = serde_json::from_str(&s).unwrap();
            assert_eq!(parsed.as_f64().unwrap(), v, "{s}");
        }
    }
}
