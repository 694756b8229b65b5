mod common;

use std::fs;
use std::path::Path;

use common::*;
use serde_json::Value;
use templar::eval::write_usage_log;
use templar::template::TemplateStore;

fn fixture() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path());
    let config = dir.path().join("run.toml").display().to_string();
    (dir, config)
}

fn edit_config(dir: &Path, from: &str, to: &str) {
    let path = dir.join("run.toml");
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.contains(from), "{from} not in config");
    fs::write(&path, text.replace(from, to)).unwrap();
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn construct_writes_initial_store() {
    let (dir, config) = fixture();
    let (code, out, err) = run_cli(&["construct", "--config", &config, "--num-triples", "5"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("constructed 15 templates"));
    let store = TemplateStore::load(&dir.path().join("out/store.iter0.json")).unwrap();
    assert_eq!(store.len(), 15);
    assert_eq!(store.iteration, 0);
    assert!(!store.oracle);
    assert_eq!(store.built_by.as_deref(), Some("mock"));
    let summary = json(&dir.path().join("out/construct.json"));
    assert_eq!(summary["sampled_query_ids"].as_array().unwrap().len(), 5);
}

#[test]
fn bad_path_exits_1_naming_it() {
    let (dir, config) = fixture();
    fs::remove_file(dir.path().join("triples.jsonl")).unwrap();
    let (code, _, err) = run_cli(&["construct", "--config", &config]);
    assert_eq!(code, 1);
    assert!(err.contains("triples.jsonl"), "{err}");
}

#[test]
fn oracle_flag_watermarks_store() {
    let (dir, config) = fixture();
    fs::copy(dir.path().join("triples.jsonl"), dir.path().join("oracle.jsonl")).unwrap();
    edit_config(dir.path(), "triples = \"triples.jsonl\"", "triples = \"triples.jsonl\"\noracle_triples = \"oracle.jsonl\"");
    let (code, _, err) = run_cli(&["construct", "--config", &config, "--oracle"]);
    assert_eq!(code, 0, "{err}");
    let raw = json(&dir.path().join("out/store.iter0.json"));
    assert_eq!(raw["oracle"], true);
}

#[test]
fn contamination_exits_2() {
    let (dir, config) = fixture();
    edit_config(dir.path(), "test = \"test.json\"", "test = \"train.json\"");
    let (code, _, err) = run_cli(&["construct", "--config", &config]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("contamination"));
}

#[test]
fn backend_failure_exits_3() {
    let (dir, config) = fixture();
    fs::write(dir.path().join("mock.json"), "{\"rules\": []}").unwrap();
    let (code, _, err) = run_cli(&["construct", "--config", &config]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn optimize_prints_decision_table_per_iteration() {
    let (dir, config) = fixture();
    assert_eq!(run_cli(&["construct", "--config", &config]).0, 0);
    let (code, out, err) = run_cli(&["optimize", "--config", &config, "--iterations", "3"]);
    assert_eq!(code, 0, "{err}");
    let header = out.lines().next().unwrap();
    for col in ["KEEP", "ADD", "FIX", "DISCARD"] {
        assert!(header.contains(col), "{header}");
    }
    assert_eq!(out.lines().count(), 4, "{out}");
    for k in 1..=3 {
        let report = json(&dir.path().join(format!("out/report.iter{k}.json")));
        assert_eq!(report["decision_counts"]["FIX"], 2);
    }
    let fixed = TemplateStore::load(&dir.path().join("out/store.iter1.json")).unwrap();
    assert_eq!(fixed.provenance[&"TID_1".into()].to_string(), "fixed-from:TID_1");
}

#[test]
fn early_stop_on_plateau_writes_fewer_reports() {
    let (dir, config) = fixture();
    assert_eq!(run_cli(&["construct", "--config", &config]).0, 0);
    let (code, out, err) = run_cli(&["optimize", "--config", &config, "--iterations", "4", "--early-stop", "true"]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("stopped early"), "{out}");
    assert!(dir.path().join("out/report.iter1.json").exists());
    assert!(!dir.path().join("out/report.iter4.json").exists());
}

#[test]
fn eval_modes_write_distinct_runs() {
    let (dir, config) = fixture();
    assert_eq!(run_cli(&["construct", "--config", &config]).0, 0);
    let (code, _, err) = run_cli(&["eval", "--config", &config, "--mode", "cic"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = run_cli(&["eval", "--config", &config, "--mode", "total"]);
    assert_eq!(code, 0, "{err}");
    let cic = json(&dir.path().join("out/runs/cic-mock/eval.json"));
    let total = json(&dir.path().join("out/runs/total-mock/eval.json"));
    assert_eq!(cic["metadata"]["mode"], "cic");
    assert_eq!(total["metadata"]["mode"], "total");
    assert_eq!(total["metadata"]["snapshot_iteration"], 0);
    assert_eq!(total["metadata"]["transfer"], false);
    assert_eq!(cic["rows"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("out/runs/total-mock/usage.jsonl").exists());
    assert!(dir.path().join("out/runs/total-mock/prompt_samples/q030.txt").exists());
}

#[test]
fn eval_with_retrieval_uses_k() {
    let (dir, config) = fixture();
    let (code, _, err) = run_cli(&["eval", "--config", &config, "--mode", "cic", "--k", "3"]);
    assert_eq!(code, 0, "{err}");
    let run = json(&dir.path().join("out/runs/cic-mock-k3/eval.json"));
    assert_eq!(run["metadata"]["k"], 3);
    for row in run["rows"].as_array().unwrap() {
        assert_eq!(row["context_doc_ids"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn retrieve_sweep_writes_monotone_csv() {
    let (dir, config) = fixture();
    let (code, _, err) = run_cli(&["retrieve", "--config", &config, "--k", "1,3,5,10"]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("out/recall.csv")).unwrap();
    let rows: Vec<(usize, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (k, r) = l.split_once(',').unwrap();
            (k.parse().unwrap(), r.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 3, 5, 10]);
    assert!(rows.windows(2).all(|w| w[1].1 >= w[0].1));
}

#[test]
fn analyze_exports_chained_pair() {
    let (dir, config) = fixture();
    // three queries chain TID_45 into TID_65
    let log = vec![
        usage(0, &[45, 65, 12], 1.0),
        usage(1, &[45, 65], 1.0),
        usage(2, &[7, 45, 65], 0.0),
        usage(3, &[7], 0.0),
        usage(4, &[12], 1.0),
    ];
    let log_path = dir.path().join("usage.jsonl");
    write_usage_log(&log_path, &log).unwrap();
    let store = store_with(70, |_| "generic".into());
    store.snapshot(&dir.path().join("store.json")).unwrap();
    let (code, _, err) = run_cli(&[
        "analyze",
        "--config",
        &config,
        "--usage",
        log_path.to_str().unwrap(),
        "--store",
        dir.path().join("store.json").to_str().unwrap(),
        "--percentile",
        "25",
        "--direction",
        "top",
    ]);
    assert_eq!(code, 0, "{err}");
    let lift = fs::read_to_string(dir.path().join("out/lift.csv")).unwrap();
    assert!(lift.starts_with("tid_a,tid_b,lift,support\n"));
    let row = lift.lines().find(|l| l.starts_with("TID_45,TID_65,")).expect("pair present");
    assert_eq!(row, "TID_45,TID_65,1.6666666666666667,3");
    let hist = fs::read_to_string(dir.path().join("out/usage_histogram.csv")).unwrap();
    assert!(hist.contains("TID_45,3\n"));
    let subset = TemplateStore::load(&dir.path().join("out/store.top25.json")).unwrap();
    assert_eq!(subset.len(), 18);
}

#[test]
fn help_exits_0_and_unknown_flag_exits_1() {
    let (code, out, _) = run_cli(&["--help"]);
    assert_eq!(code, 0);
    for sub in ["construct", "optimize", "eval", "retrieve", "analyze"] {
        assert!(out.contains(sub));
    }
    assert_eq!(run_cli(&["eval", "--config", "x.toml", "--bogus"]).0, 1);
}
