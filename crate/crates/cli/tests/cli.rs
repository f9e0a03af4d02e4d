use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use banditcat::calibration::ProbabilitySurface;
use banditcat::irt::{ItemParams, ThetaGrid};
use banditcat::simulation::HistoricalSession;
use banditcat::{formats, SimulationReport};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_banditcat"));
    c.env_remove("BANDITCAT_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn surfaces_file(dir: &Path, items: &[(&str, f64, f64, f64)]) -> PathBuf {
    let lines: Vec<String> = items
        .iter()
        .map(|(id, a, c, d)| {
            let mut sf = ProbabilitySurface::from_params(*id, ThetaGrid::default(), &ItemParams::new(*a, *c, *d).unwrap());
            sf.item_type = Some("vic".into());
            serde_json::to_string(&sf).unwrap()
        })
        .collect();
    write(dir, "surfaces.jsonl", &(lines.join("\n") + "\n"))
}

#[test]
fn calibrate_round_trips_generating_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let truth = [("i1", 0.7, 0.0, -1.2), ("i2", 1.6, 0.0, 0.4), ("i3", 2.4, 0.0, 1.9)];
    let surf = surfaces_file(dir.path(), &truth);
    let out = dir.path().join("out");
    let o = run(&["calibrate", s(&surf), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("calibrated 3 items: 3 converged"), "{stdout}");
    let bank = formats::parse_bank(&std::fs::read_to_string(out.join("bank.json")).unwrap()).unwrap();
    for (id, a, _, d) in truth {
        let it = bank.get(id).unwrap();
        assert!((it.params.a - a).abs() < 1e-3 && (it.params.d - d).abs() < 1e-3, "{id}: {:?}", it.params);
        assert_eq!(it.item_type, "vic");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("calibration.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["converged"], 3);
}

#[test]
fn calibrate_model_flag_forces_zero_guessing() {
    let dir = tempfile::tempdir().unwrap();
    let surf = surfaces_file(dir.path(), &[("g", 1.2, 0.25, 0.3)]);
    let cfg = write(dir.path(), "run.json", r#"{"calibration": {"model": {"kind": "three_pl_free_c"}}}"#);
    let out = dir.path().join("out");
    let o = run(&["calibrate", s(&surf), "--config", s(&cfg), "--out", s(&out), "--model", "2pl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bank: Value = serde_json::from_str(&std::fs::read_to_string(out.join("bank.json")).unwrap()).unwrap();
    assert_eq!(bank[0]["c"], 0.0);
}

#[test]
fn calibrate_rejects_empty_and_malformed_input() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.jsonl", "");
    assert_eq!(code(&run(&["calibrate", s(&empty), "--out", s(dir.path())])), 2);
    let bad = write(dir.path(), "bad.jsonl", "{\"item_id\": 3}\n");
    assert_eq!(code(&run(&["calibrate", s(&bad), "--out", s(dir.path())])), 2);
    assert_eq!(code(&run(&["calibrate", s(&dir.path().join("nope.jsonl"))])), 2);
}

#[test]
fn calibrate_exits_3_when_too_many_fits_fail() {
    let dir = tempfile::tempdir().unwrap();
    let surf = surfaces_file(dir.path(), &[("x", 1.3, 0.0, 0.2), ("y", 0.9, 0.0, -0.7)]);
    // a two-iteration budget cannot converge
    let cfg = write(dir.path(), "run.json", r#"{"calibration": {"max_iterations": 2, "max_unconverged": 0.5}}"#);
    let o = run(&["calibrate", s(&surf), "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("2 of 2 items did not converge"));
    // the bank is still written for inspection
    assert!(dir.path().join("bank.json").is_file());
}

fn synthetic_config(dir: &Path, sessions: usize, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "seed": 42,
        "paths": {"out_dir": "out"},
        "selector": {"k_draws": 50},
        "blueprint": {"stages": [{"item_type": "synthetic", "count": 6, "time_limit_seconds": 5.0}]},
        "simulation": {"sessions": sessions, "synthetic_bank": {"items": 40}},
    });
    if let (Value::Object(base), Value::Object(add)) = (&mut cfg, extra) {
        for (k, v) in add {
            base.insert(k, v);
        }
    }
    write(dir, "run.json", &serde_json::to_string_pretty(&cfg).unwrap())
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), 60, json!({}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    assert_eq!(ra, rb);
    let run_a: Value = serde_json::from_slice(&std::fs::read(a.join("run.json")).unwrap()).unwrap();
    let run_b: Value = serde_json::from_slice(&std::fs::read(b.join("run.json")).unwrap()).unwrap();
    assert_eq!(run_a["determinism_hash"], run_b["determinism_hash"]);
    assert_eq!(run_a["determinism_hash"], banditcat_cli::commands::sha256_hex(&ra));
    let csv = std::fs::read_to_string(a.join("exposure.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);

    // a different seed changes the report
    let c = dir.path().join("c");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "43"])), 0);
    assert_ne!(std::fs::read(c.join("report.json")).unwrap(), ra);
}

#[test]
fn simulate_with_zero_sessions_writes_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), 0, json!({}));
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: SimulationReport = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert!(r.sessions.is_empty());
    assert_eq!(r.total_administrations(), 0);
}

#[test]
fn simulate_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = write(dir.path(), "run.json", r#"{"seed": 1, "paths": {"bank": "missing.json"}}"#);
    assert_eq!(code(&run(&["simulate", "--config", s(&missing)])), 2);
    let no_bank = write(dir.path(), "nobank.json", r#"{"seed": 1}"#);
    assert_eq!(code(&run(&["simulate", "--config", s(&no_bank)])), 2);
    let no_seed = write(dir.path(), "noseed.json", r#"{"simulation": {"synthetic_bank": {}}}"#);
    let o = run(&["simulate", "--config", s(&no_seed)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let typo = write(dir.path(), "typo.json", r#"{"seed": 1, "selecter": {}}"#);
    assert_eq!(code(&run(&["simulate", "--config", s(&typo)])), 2);
}

#[test]
fn toy_history_report_matches_nearest_donor_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let bank = json!([
        {"item_id": "a", "item_type": "t", "a": 1.0, "c": 0.0, "d": -1.0, "h": 0.25, "mu": -1.0, "nu": 1.8},
        {"item_id": "b", "item_type": "t", "a": 1.5, "c": 0.0, "d": 0.0, "h": 0.56, "mu": 0.0, "nu": 1.2},
        {"item_id": "c", "item_type": "t", "a": 0.8, "c": 0.0, "d": 1.0, "h": 0.16, "mu": 1.0, "nu": 2.3},
        {"item_id": "d", "item_type": "t", "a": 2.0, "c": 0.0, "d": 0.5, "h": 1.0, "mu": 0.5, "nu": 0.9}
    ]);
    write(dir.path(), "bank.json", &bank.to_string());
    let history = vec![
        HistoricalSession { session_id: "h1".into(), proxy_theta: -1.5, grades: [("a", 1), ("b", 0), ("c", 0), ("d", 0)].map(|(k, v)| (k.to_string(), v)).into() },
        HistoricalSession { session_id: "h2".into(), proxy_theta: 0.0, grades: [("a", 1), ("b", 1), ("d", 0)].map(|(k, v)| (k.to_string(), v)).into() },
        HistoricalSession { session_id: "h3".into(), proxy_theta: 0.9, grades: [("b", 1), ("c", 1), ("d", 1)].map(|(k, v)| (k.to_string(), v)).into() },
        HistoricalSession { session_id: "h4".into(), proxy_theta: 2.0, grades: [("a", 1), ("c", 1)].map(|(k, v)| (k.to_string(), v)).into() },
    ];
    let lines: Vec<String> = history.iter().map(|h| serde_json::to_string(h).unwrap()).collect();
    write(dir.path(), "history.jsonl", &lines.join("\n"));
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"seed": 5, "paths": {"bank": "bank.json", "history": "history.jsonl", "out_dir": "out"},
            "blueprint": {"stages": [{"item_type": "t", "count": 3, "time_limit_seconds": 20}]}}"#,
    );
    let o = run(&["simulate", "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r: SimulationReport = serde_json::from_slice(&std::fs::read(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(r.sessions.len(), history.len());
    assert_eq!(r.donor_fallbacks, 0);
    for (sess, h) in r.sessions.iter().zip(&history) {
        assert_eq!(sess.reference_theta, h.proxy_theta);
        for (item, grade) in sess.items.iter().zip(&sess.grades) {
            // exhaustive donor search: closest proxy ability, then smallest id
            let donor = history
                .iter()
                .filter(|d| d.grades.contains_key(item))
                .min_by(|x, y| {
                    (x.proxy_theta - h.proxy_theta)
                        .abs()
                        .total_cmp(&(y.proxy_theta - h.proxy_theta).abs())
                        .then_with(|| x.session_id.cmp(&y.session_id))
                })
                .unwrap();
            assert_eq!(*grade, donor.grades[item], "session {} item {item}", sess.session_id);
        }
    }
}

#[test]
fn tune_gamma_edge_targets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), 30, json!({"tune": {"iterations": 2}}));
    let o = run(&["tune-gamma", "--config", s(&cfg), "--target", "1.0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gamma"], 1e-3);
    assert!(dir.path().join("out/tune.json").is_file());
    // below the 1/40 floor
    let o = run(&["tune-gamma", "--config", s(&cfg), "--target", "0.01"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&run(&["tune-gamma", "--config", s(&cfg), "--target", "1.5"])), 2);
}

#[test]
fn metrics_pairs_two_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synthetic_config(dir.path(), 40, json!({}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["simulate", "--config", s(&cfg), "--out", s(&b), "--seed", "7"])), 0);
    let o = run(&["metrics", s(&a.join("report.json")), s(&b.join("report.json")), "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["sessions"], 40);
    // the two runs draw different abilities, so only the pairing count is checked
    assert_eq!(v["retest"]["synthetic"]["pairs"], 40);
    assert!(dir.path().join("metrics.json").is_file());
}
