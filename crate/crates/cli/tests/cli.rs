use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn magc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magc")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().expect("object").keys().cloned().collect();
    k.sort();
    k
}

fn path(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn plan_report_schema() {
    let out = magc(&["plan", "--layers", "16", "--seq", "256"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(
        keys(&v),
        ["constants", "l", "predicted_raw", "predicted_units", "regime", "s", "savings_ratio"]
    );
    assert_eq!(keys(&v["constants"]), ["c_grid", "c_l", "c_s", "c_state"]);
    assert_eq!((v["l"].as_u64(), v["s"].as_u64()), (Some(16), Some(16)));
    assert_eq!(v["predicted_raw"].as_f64(), Some(768.0));
}

#[test]
fn plan_classifies_long_sequences() {
    let v = json(&magc(&["plan", "--layers", "64", "--seq", "16384"]));
    assert_eq!(v["regime"], "LinearInS");
}

#[test]
fn plan_usage_errors_exit_2() {
    for args in [
        &["plan", "--layers", "0", "--seq", "8"][..],
        &["plan", "--layers", "4"],
        &["plan", "--layers", "4", "--seq", "8", "--preset", "nope"],
        &["plan", "--layers", "4", "--seq", "100", "--granularity", "256"],
        &["nonsense"],
    ] {
        let out = magc(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn faithful_mode_uses_coarse_granularity() {
    let v = json(&magc(&["plan", "--layers", "64", "--seq", "16384", "--paper-faithful", "--preset", "mamba2-2.7b"]));
    assert_eq!(v["s"].as_u64().unwrap() % 256, 0);
    let explicit = json(&magc(&["plan", "--layers", "64", "--seq", "16384", "--paper-faithful", "--granularity", "1", "--preset", "mamba2-2.7b"]));
    assert!(explicit["predicted_units"].as_f64() <= v["predicted_units"].as_f64());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(&dir, "run.cfg");
    fs::write(&cfg, "# plan defaults\nlayers = 64\nseq = 16384\npreset = mamba2-370m\n").unwrap();
    let from_file = json(&magc(&["plan", "--config", &cfg]));
    assert_eq!(from_file["constants"]["c_l"].as_f64(), Some(1024.0));
    let overridden = json(&magc(&["plan", "--config", &cfg, "--layers", "16", "--seq", "256", "--preset", "unit"]));
    assert_eq!(overridden["l"].as_u64(), Some(16));
    fs::write(&cfg, "layers 64\n").unwrap();
    assert_eq!(magc(&["plan", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let a = magc(&["gradcheck", "--seed", "3"]);
    assert!(a.status.success());
    let v = json(&a);
    assert_eq!(keys(&v), ["max_rel_err", "pass"]);
    assert_eq!(v["pass"], true);
    let b = magc(&["gradcheck", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn corrupted_gradcheck_exits_1() {
    let out = magc(&["gradcheck", "--corrupt"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["pass"], false);
}

#[test]
fn gradcheck_rejects_single_precision_and_large_models() {
    assert_eq!(magc(&["gradcheck", "--precision", "f32"]).status.code(), Some(2));
    assert_eq!(magc(&["gradcheck", "--layers", "8", "--dim", "32", "--heads", "2", "--state", "8"]).status.code(), Some(2));
}

fn read_csv(p: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(p).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn bench_sweep_records_and_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "sweep.csv");
    let status = magc(&["bench", "--layers", "8", "--min-pow", "8", "--max-pow", "13", "--out", &out]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let (header, rows) = read_csv(&out);
    assert_eq!(
        header.join(","),
        "strategy,L,S,l,s,peak_units,predicted_units,overhead_units,step_evals,wall_ms,seed"
    );
    assert_eq!(rows.len(), 24);
    let order: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(order[0], "gc_off");
    assert_eq!(order[23], "magc");
    for s in (8..=13).map(|p| (1usize << p).to_string()) {
        let o = |st: &str| -> u64 {
            rows.iter().find(|r| r[0] == st && r[2] == s).unwrap()[7].parse().unwrap()
        };
        assert!(o("magc") < o("sqrt_gc") && o("sqrt_gc") < o("gc_on") && o("gc_on") < o("gc_off"), "S={s}");
    }
    for r in &rows {
        assert_eq!(r[6].is_empty(), r[0] != "magc", "predicted_units only for magc");
    }
    let plot = fs::read_to_string(Path::new(&out).with_extension("plot")).unwrap();
    assert_eq!(plot.matches("# S overhead_units").count(), 4);
}

#[test]
fn bench_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(&dir, "a.csv"), path(&dir, "b.csv"));
    for p in [&a, &b] {
        assert!(magc(&["bench", "--layers", "2,4", "--min-pow", "6", "--max-pow", "7", "--seed", "9", "--jobs", "2", "--out", p]).status.success());
    }
    let strip = |p: &str| -> Vec<Vec<String>> {
        read_csv(p).1.into_iter().map(|mut r| {
            r[9].clear();
            r
        }).collect()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn budget_marks_infeasible_runs() {
    let dir = tempfile::tempdir().unwrap();
    let probe = path(&dir, "probe.csv");
    magc(&["bench", "--layers", "8", "--min-pow", "10", "--max-pow", "10", "--strategies", "gc_off,magc", "--out", &probe]);
    let (_, rows) = read_csv(&probe);
    let off: u64 = rows[0][7].parse().unwrap();
    let grid: u64 = rows[1][7].parse().unwrap();
    let budget = ((off + grid) / 2).to_string();
    let out = path(&dir, "budget.csv");
    let status = magc(&["bench", "--layers", "8", "--min-pow", "10", "--max-pow", "10", "--strategies", "gc_off,magc", "--budget-units", &budget, "--out", &out]);
    assert!(status.status.success());
    let (_, rows) = read_csv(&out);
    assert_eq!(rows[0][5], "");
    assert_eq!(rows[0][7], "-");
    assert!(rows[1][7].parse::<u64>().is_ok());
}

#[test]
fn bench_rejects_unknown_strategy() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "x.csv");
    assert_eq!(magc(&["bench", "--strategies", "magic", "--out", &out]).status.code(), Some(2));
}

#[test]
fn calibrate_round_trips_through_plan() {
    let dir = tempfile::tempdir().unwrap();
    let fit = path(&dir, "fit.json");
    let out = magc(&["calibrate", "--layers", "8", "--dim", "16", "--out", &fit]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    assert_eq!(keys(&v), ["constants", "probes", "residuals"]);
    let residuals = v["residuals"].as_array().unwrap();
    assert_eq!(residuals.len(), 6);
    assert!(residuals.iter().all(|r| r.as_f64().unwrap().abs() <= 0.15));

    let plan = json(&magc(&["plan", "--layers", "8", "--seq", "2048", "--constants", &fit]));
    let (l, s) = (plan["l"].as_u64().unwrap() as usize, plan["s"].as_u64().unwrap() as usize);
    let cfg = magc_core::ModelConfig::new(8, 16, 2, 4).unwrap();
    let measured = magc_cli::bench::measure::<f64>(&cfg, magc_core::Strategy::Magc(magc_core::CheckpointPlan::new(l, s)), 2048, 0, None)
        .unwrap()
        .overhead_units as f64;
    let predicted = plan["predicted_units"].as_f64().unwrap();
    assert!((predicted - measured).abs() / measured <= 0.15, "{predicted} vs {measured}");
}

#[test]
fn calibrate_needs_four_distinct_probes() {
    let out = magc(&["calibrate", "--probes", "1:8:64,2:8:64,4:8:64"]);
    assert_eq!(out.status.code(), Some(2));
    let out = magc(&["calibrate", "--probes", "1:8:64,2:8:64,4:8:64,4:8:64"]);
    assert_eq!(out.status.code(), Some(2));
    let out = magc(&["calibrate", "--probes", "1:8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_curves_match_across_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(&dir, "magc.csv"), path(&dir, "off.csv"));
    assert!(magc(&["train", "--steps", "300", "--strategy", "magc", "--out", &a]).status.success());
    assert!(magc(&["train", "--steps", "300", "--strategy", "gc_off", "--out", &b]).status.success());
    let (ha, ra) = read_csv(&a);
    let (_, rb) = read_csv(&b);
    assert_eq!(ha, ["step", "loss"]);
    assert_eq!(ra.len(), 301);
    let loss = |r: &Vec<String>| r[1].parse::<f64>().unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert!((loss(x) - loss(y)).abs() <= 1e-10);
    }
    assert!(loss(&ra[300]) <= 0.5 * loss(&ra[0]));
}

#[test]
fn zero_step_training_is_one_row() {
    let out = magc(&["train", "--steps", "0"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("step,loss\n0,"));
}

#[test]
fn divergent_training_exits_1() {
    let out = magc(&["train", "--optimizer", "sgd", "--lr", "1e200", "--steps", "20"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_usage_errors() {
    assert_eq!(magc(&["train", "--task", "copy"]).status.code(), Some(2));
    assert_eq!(magc(&["train", "--task", "delayed_copy", "--delay", "128"]).status.code(), Some(2));
    assert_eq!(magc(&["train", "--optimizer", "rmsprop"]).status.code(), Some(2));
}
