//! Byte-level checks of artifact formatting against checked-in files.
//! Set `BARTCS_BLESS=1` to rewrite them after an intentional format change.

use std::path::{Path, PathBuf};

use bartcs::io::artifacts::fit_to_dir;
use bartcs::io::config::RunConfig;

const DATA: &str = "\
y,a,x1,x2
1.25,1,0.5,3
0.5,0,-1.0,2
2.0,1,1.5,1
-0.25,0,-0.5,4
1.0,1,0.0,2
0.0,0,-1.5,3
1.75,1,1.0,1
0.25,0,0.25,4
";

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("BARTCS_BLESS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from golden copy");
}

#[test]
fn fit_artifacts_match_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("d.csv");
    std::fs::write(&input, DATA).unwrap();
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("outcome", "y"),
        ("exposure", "a"),
        ("iters", "6"),
        ("burn_in", "2"),
        ("thin", "2"),
        ("trees", "2"),
        ("seed", "5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.input = Some(input);
    cfg.output = tmp.path().join("out");
    cfg.finish().unwrap();
    fit_to_dir(&cfg).unwrap();

    let read = |f: &str| std::fs::read_to_string(cfg.output.join(f)).unwrap();
    check("trace_0.jsonl", &read("trace_0.jsonl"));
    check("summary.csv", &read("summary.csv"));
    check("pip.csv", &read("pip.csv"));
}

#[test]
fn trace_floats_carry_seventeen_digits() {
    let text = std::fs::read_to_string(golden_dir().join("trace_0.jsonl")).unwrap();
    let draw = text.lines().nth(1).unwrap();
    let v: serde_json::Value = serde_json::from_str(draw).unwrap();
    let alpha = v["alpha"].as_f64().unwrap();
    assert!(draw.contains(&format!("{alpha:.16e}")));
}
