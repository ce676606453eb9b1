use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hac-lrt"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn sample_writes_data_sidecar_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "5", "--out", "a.csv", "sample", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "1.5,2", "--n", "50"]);
    ok(d, &["--seed", "5", "--out", "b.csv", "sample", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "1.5,2", "--n", "50"]);
    let a = read(d, "a.csv");
    assert_eq!(a, read(d, "b.csv"));
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 51);
    assert_eq!(lines[0], "u1,u2,u3");
    // seventeen significant digits
    assert!(lines[1].split(',').all(|f| f.split('e').next().unwrap().replace(['.', '-'], "").len() == 17));
    let side: serde_json::Value = serde_json::from_str(&read(d, "a.csv.json")).unwrap();
    assert_eq!(side["seed"], 5);
    assert_eq!(side["params"]["family"], "gumbel");
    let manifest: serde_json::Value = serde_json::from_str(&read(d, "a.csv.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "sample");
    assert_eq!(manifest["n"], 50);
}

#[test]
fn test_command_is_bit_reproducible_and_reruns_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "11", "--out", "x.csv", "sample", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "1.5,1.5", "--n", "512"]);
    let args = ["test", "--data", "x.csv", "--tree", "[[1,2],3]", "--family", "gumbel", "--hypothesis", "(0,1)=(0)"];
    let first = ok(d, &args);
    let second = ok(d, &args);
    assert_eq!(first.stdout, second.stdout);
    let r: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(r["setting"], "cor1");
    assert_eq!(r["law"]["weights"], serde_json::json!([0.5, 0.5]));
    let p = r["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let mut mc = vec!["--out", "mc.json"];
    mc.extend(args);
    mc.extend(["--method", "mc", "--replicates", "1000"]);
    ok(d, &mc);
    ok(d, &["rerun", "mc.json.manifest.json", "--out", "mc2.json"]);
    assert_eq!(read(d, "mc.json"), read(d, "mc2.json"));
    let r: serde_json::Value = serde_json::from_str(&read(d, "mc.json")).unwrap();
    assert_eq!(r["replicates"], 1000);
    assert!(r["sigma"]["method"] == "analytic");
}

#[test]
fn fit_csv_reports_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "x.csv", "sample", "--tree", "[[1,2],3]", "--family", "clayton", "--theta", "1,3", "--n", "300"]);
    let out = ok(d, &["--format", "csv", "fit", "--data", "x.csv", "--tree", "[[1,2],3]", "--family", "clayton"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("key,value\nloglik,"));
    assert!(text.contains("theta0,") && text.contains("theta1,"));
}

#[test]
fn sigma_monte_carlo_reports_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["--seed", "2", "sigma", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "1.5,2", "--n", "100000"]);
    let est: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(est["source"]["kind"], "monte-carlo");
    assert_eq!(est["source"]["n"], 100000);
    assert_eq!(est["method"], "analytic");
    assert_eq!(est["sigma"].as_array().unwrap().len(), 4);
}

#[test]
fn detscan_clayton_is_positive() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["detscan", "--family", "clayton", "--k", "3", "--n", "3000"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let det: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(det > 0.0);
    }
}

#[test]
fn power_curve_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["power", "--tree", "[[1,2],3]", "--family", "clayton", "--tau", "0.3333333333333333", "--h-grid", "0,0.1", "--replicates", "20000", "--sigma-n", "20000"],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text.lines().skip(1).map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 2);
    assert!((rows[0][1] - 0.05).abs() < 0.01);
    // Clayton: h = 2 h' / (1 - tau)^2
    assert!((rows[1][5] - 0.45).abs() < 1e-9);
}

#[test]
fn scenario_emits_tables_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = [
        "--seed", "4", "--out", "s.csv", "scenario", "--scenario", "I", "--data-families", "clayton", "--model-families", "clayton,gumbel", "--cases", "a",
        "--n-grid", "64", "--replications", "8", "--wide",
    ];
    ok(d, &args);
    let long = read(d, "s.csv");
    assert_eq!(long.lines().count(), 1 + 2 * 2);
    for line in long.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let rate: f64 = f[12].parse().unwrap();
        assert!((0.0..=100.0).contains(&rate));
    }
    let wide = read(d, "s.csv.conditional.csv");
    assert!(wide.starts_with("case,model,clayton_n64\na,clayton,"));
    ok(d, &["rerun", "s.csv.manifest.json", "--out", "r.csv"]);
    assert_eq!(long, read(d, "r.csv"));
    assert_eq!(read(d, "s.csv.unconditional.csv"), read(d, "r.csv.unconditional.csv"));
}

#[test]
fn domain_and_numerical_errors_have_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = run(d, &["sample", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "2,1.5", "--n", "5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(error_json(&bad)["error"], "outside_cone");
    let missing = run(d, &["fit", "--data", "nope.csv", "--tree", "[[1,2],3]", "--family", "gumbel"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(error_json(&missing)["exit_code"], 2);
    std::fs::write(d.join("neg.csv"), "u1,u2,u3\n0.95,0.05,0.5\n0.05,0.95,0.5\n").unwrap();
    let overflow = run(d, &["sigma", "--tree", "[[1,2],3]", "--family", "gumbel", "--theta", "1,1e6", "--source", "observed", "--data", "neg.csv"]);
    assert_eq!(overflow.status.code(), Some(3), "{}", String::from_utf8_lossy(&overflow.stderr));
    assert_eq!(error_json(&overflow)["error"], "numeric");
    let family = run(d, &["sample", "--tree", "[[1,2],3]", "--family", "nope", "--theta", "2,3", "--n", "5"]);
    assert_eq!(family.status.code(), Some(2));
}
