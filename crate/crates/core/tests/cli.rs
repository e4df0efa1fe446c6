use std::fmt::Write as _;
use std::path::Path;
use std::process::{Command, Output};

use bartcs::io::table::dataset_to_csv;
use bartcs::sampling::rng_for;
use bartcs::sim::{gen_scenario, ScenarioId, ScenarioSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bartcs"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env("BARTCS_THREADS", "1").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn binary_csv(dir: &Path) -> String {
    let mut spec = ScenarioSpec::new(ScenarioId::S1, 4);
    spec.n = 80;
    spec.p = 8;
    let (data, _) = gen_scenario(&spec, &mut rng_for(4, 0)).unwrap();
    let path = dir.join("binary.csv");
    std::fs::write(&path, dataset_to_csv(&data, "y", "a").unwrap()).unwrap();
    path.display().to_string()
}

fn continuous_csv(dir: &Path) -> String {
    let mut rng = rng_for(5, 0);
    let mut s = String::from("y,dose,x1,x2,x3\n");
    for _ in 0..80 {
        let x: Vec<f64> = (0..3).map(|_| bartcs::sampling::standard_normal(&mut rng)).collect();
        let dose = x[0] + bartcs::sampling::standard_normal(&mut rng);
        let y = 0.8 * dose + x[0] + 0.5 * bartcs::sampling::standard_normal(&mut rng);
        writeln!(s, "{y},{dose},{},{},{}", x[0], x[1], x[2]).unwrap();
    }
    let path = dir.join("cont.csv");
    std::fs::write(&path, s).unwrap();
    path.display().to_string()
}

fn fit(input: &str, exposure: &str, out: &Path, extra: &[&str]) -> Output {
    let out = out.display().to_string();
    let mut args = vec![
        "fit", "--input", input, "--outcome", "y", "--exposure", exposure, "--iters", "200",
        "--thin", "2", "--trees", "10", "--seed", "17", "--output", &out,
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn fit_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let out = tmp.path().join("run");
    let o = fit(&input, "a", &out, &["--chains", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trace_0.jsonl", "trace_1.jsonl", "summary.csv", "pip.csv", "run.conf"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "estimand,mean,ci_low,ci_high,rhat,n_draws,n_chains"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "ate");
    assert_eq!(row[5], "100");
    assert_eq!(row[6], "2");
    let pip = std::fs::read_to_string(out.join("pip.csv")).unwrap();
    // exposure-variable row plus one per covariate
    assert_eq!(pip.lines().count(), 1 + 1 + 8);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(fit(&input, "a", &a, &[]).status.success());
    assert!(fit(&input, "a", &b, &[]).status.success());
    let ta = std::fs::read(a.join("trace_0.jsonl")).unwrap();
    let tb = std::fs::read(b.join("trace_0.jsonl")).unwrap();
    assert_eq!(ta, tb);
    let c = tmp.path().join("c");
    assert!(fit(&input, "a", &c, &["--seed", "18"]).status.success());
    assert_ne!(ta, std::fs::read(c.join("trace_0.jsonl")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let conf = tmp.path().join("run.conf");
    let out = tmp.path().join("out");
    std::fs::write(
        &conf,
        format!(
            "input = {input}\noutcome = y\nexposure = a\niters = 100\nthin = 1\ntrees = 5\nscheme = separate\noutput = {}\n",
            out.display()
        ),
    )
    .unwrap();
    let o = run(&["fit", "--config", conf.to_str().unwrap(), "--iters", "60"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = std::fs::read_to_string(out.join("run.conf")).unwrap();
    assert!(resolved.contains("iters = 60"));
    assert!(resolved.contains("burn_in = 30"));
    assert!(resolved.contains("scheme = separate"));
}

#[test]
fn missing_exposure_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let o = run(&["fit", "--input", &input, "--outcome", "y"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_data_reports_error_code() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    std::fs::write(&path, "y,a,x1\n1,0,0.5\n2,3,0.1\n").unwrap();
    let o = run(&[
        "fit", "--input", path.to_str().unwrap(), "--outcome", "y", "--exposure", "a",
        "--output", tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR ExposureDomainError"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m.csv");
    let o = run(&[
        "simulate", "--scenario", "S2", "--reps", "2", "--iters", "60", "--thin", "2",
        "--trees", "5", "--p", "5", "--output", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "row,scenario,scheme,m,bias,mse,coverage,wall_time_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("all,S2,marginal,2,"));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("all,S2,"));
}

#[test]
fn simulate_rejects_bad_arguments() {
    assert_eq!(run(&["simulate", "--scenario", "S9"]).status.code(), Some(2));
    assert_eq!(
        run(&["simulate", "--scenario", "S2", "--reps", "0"]).status.code(),
        Some(2)
    );
}

#[test]
fn report_grid_needs_continuous_exposure() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let out = tmp.path().join("run");
    assert!(fit(&input, "a", &out, &[]).status.success());
    let o = run(&["report", "--dir", out.to_str().unwrap(), "--grid", "10"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("UnsupportedForBinary"));
}

#[test]
fn report_writes_exposure_response_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let input = continuous_csv(tmp.path());
    let out = tmp.path().join("run");
    let o = fit(&input, "dose", &out, &["--exposure-kind", "continuous"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("delta_q75_q25,"));

    let o = run(&["report", "--dir", out.to_str().unwrap(), "--grid", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let curve = std::fs::read_to_string(out.join("exposure_response.csv")).unwrap();
    let lines: Vec<&str> = curve.lines().collect();
    assert_eq!(lines[0], "grid,mean,ci_low,ci_high");
    assert_eq!(lines.len(), 11);
    for l in &lines[1..] {
        let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(v[2] <= v[1] && v[1] <= v[3], "{l}");
    }
}

#[test]
fn report_class_decomposition_checks_nesting() {
    let tmp = tempfile::tempdir().unwrap();
    let input = binary_csv(tmp.path());
    let out = tmp.path().join("run");
    assert!(fit(&input, "a", &out, &[]).status.success());
    let dir = out.to_str().unwrap();
    let o = run(&["report", "--dir", dir, "--x-cap", "X1", "--x-star", "X1,X2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(out.join("class_decomposition.csv")).unwrap();
    assert!(text.lines().count() >= 2);

    let o = run(&["report", "--dir", dir, "--x-cap", "X1,X2", "--x-star", "X1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SetNesting"));
}

#[test]
fn report_on_missing_dir_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["report", "--dir", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("ERROR"));
}
