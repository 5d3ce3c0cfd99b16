use std::fs;
use std::path::Path;

use adc_cli::commands::{cmd_prep, cmd_train, PrepArgs, TrainArgs};
use adc_cli::error::{EXIT_DATA, EXIT_OK, EXIT_USAGE};
use adc_cli::run;

const SMALL: &[&str] = &[
    "--set", "d=8", "--set", "learn_rate=0.05", "--set", "batch_size=64", "--max-epochs", "4", "--runs", "2",
];

fn adc(args: &[&str]) -> i32 {
    run(std::iter::once("adc").chain(args.iter().copied()))
}

fn prep(dir: &Path) {
    let d = dir.to_str().unwrap();
    assert_eq!(adc(&["prep", "--dir", d, "--synthetic", "2,150,80,1.0,0.5", "--densities", "0.04,0.08", "--seed", "3"]), EXIT_OK);
}

fn train(dir: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    adc(&args)
}

#[test]
fn help_and_version_exit_zero_and_bad_usage_exits_one() {
    assert_eq!(adc(&["--help"]), EXIT_OK);
    assert_eq!(adc(&["--version"]), EXIT_OK);
    assert_eq!(adc(&["train", "--no-such-flag"]), EXIT_USAGE);
    assert_eq!(adc(&[]), EXIT_USAGE);
}

#[test]
fn missing_domain_file_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("x");
    let missing = tmp.path().join("nope.tsv");
    assert_eq!(adc(&["prep", "--dir", d.to_str().unwrap(), missing.to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn prep_from_files_keeps_domain_order() {
    let tmp = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (name, items) in [("books", ["b1", "b2", "b3"]), ("films", ["f1", "f2", "f3"])] {
        let mut text = String::new();
        for u in 0..6 {
            for (j, i) in items.iter().enumerate() {
                text += &format!("user{u}\t{i}\t{}\n", 1 + (u + j) % 5);
            }
        }
        let p = tmp.path().join(format!("{name}.tsv"));
        fs::write(&p, text).unwrap();
        files.push(p);
    }
    let dir = tmp.path().join("exp");
    let out = cmd_prep(&PrepArgs {
        dir: dir.clone(),
        files: files.clone(),
        target: 1,
        ..PrepArgs::default()
    })
    .unwrap();
    assert_eq!(out.datasets.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), ["books", "films"]);
    assert!(out.stats.contains("films"));
    let (back, manifest) = adc_cli::commands::load_prepared(&dir).unwrap();
    assert_eq!(back, out.datasets);
    assert_eq!(manifest.setting("target"), Some("1"));
}

#[test]
fn invalid_configuration_reports_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    prep(tmp.path());
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "gamma = -1\nbatch_size = 0\nunknown_key = 3\n").unwrap();
    let args = TrainArgs {
        dir: tmp.path().to_path_buf(),
        config: Some(cfg.clone()),
        ..TrainArgs::default()
    };
    let msg = cmd_train(&args).unwrap_err().to_string();
    assert!(msg.contains("gamma"), "{msg}");
    assert!(msg.contains("batch_size"), "{msg}");
    assert!(msg.contains("unknown_key"), "{msg}");
    assert_eq!(train(tmp.path(), &["--config", cfg.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    prep(tmp.path());
    assert_eq!(train(tmp.path(), &["--dry-run"]), EXIT_OK);
    assert!(!tmp.path().join("config.txt").exists());
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn training_is_deterministic_and_eval_reproduces_test_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for t in [&a, &b] {
        prep(t.path());
        assert_eq!(train(t.path(), &["--with-baseline"]), EXIT_OK);
    }
    for f in ["report.tsv", "runs.tsv", "runs/r0/history.tsv", "runs/r1/balancer.tsv", "runs/r1/split.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(adc(&["eval", "--dir", a.path().to_str().unwrap()]), EXIT_OK);
    assert_eq!(
        fs::read_to_string(a.path().join("runs.tsv")).unwrap(),
        fs::read_to_string(a.path().join("eval/runs.tsv")).unwrap()
    );
    let runs = fs::read_to_string(a.path().join("eval/runs.tsv")).unwrap();
    let recall_rows = runs
        .lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|f| f[0] == "0" && f[2] == "adc" && f[4] == "recall")
        .count();
    assert_eq!(recall_rows, 4);
}

#[test]
fn interrupted_training_resumes_to_the_same_result() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    prep(full.path());
    prep(split.path());
    assert_eq!(train(full.path(), &[]), EXIT_OK);
    assert_eq!(train(split.path(), &["--stop-after", "2"]), EXIT_OK);
    assert!(!split.path().join("report.tsv").exists());
    assert!(split.path().join("runs/r0/checkpoint.bin").exists());
    assert_eq!(train(split.path(), &["--resume"]), EXIT_OK);
    for f in ["report.tsv", "runs/r0/history.tsv", "runs/r0/balancer.tsv", "runs/r1/history.tsv"] {
        assert_eq!(fs::read(full.path().join(f)).unwrap(), fs::read(split.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_writes_one_row_per_value_and_report_summarizes() {
    let tmp = tempfile::tempdir().unwrap();
    prep(tmp.path());
    let d = tmp.path().to_str().unwrap();
    let mut args = vec!["sweep", "--dir", d, "--axis", "h", "--values", "1,2", "--parallel", "2"];
    args.extend_from_slice(SMALL);
    assert_eq!(adc(&args), EXIT_OK);
    let tsv = fs::read_to_string(tmp.path().join("sweep/h.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 3);
    assert!(tmp.path().join("sweep/h/2/runs/r1/history.tsv").exists());
    assert_eq!(adc(&["report", "--dir", d]), EXIT_OK);
    let summary = fs::read_to_string(tmp.path().join("summary.txt")).unwrap();
    assert!(summary.contains("sweep over h"));
}

#[test]
fn tampered_data_is_detected() {
    let tmp = tempfile::tempdir().unwrap();
    prep(tmp.path());
    let data = tmp.path().join("data/synth0.tsv");
    let mut text = fs::read_to_string(&data).unwrap();
    text.push_str("u0\td0i0\t5\n");
    fs::write(&data, text).unwrap();
    assert_eq!(train(tmp.path(), &[]), EXIT_DATA);
    assert_eq!(adc(&["report", "--dir", tmp.path().to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn single_value_sweep_matches_plain_training() {
    let tmp = tempfile::tempdir().unwrap();
    prep(tmp.path());
    let d = tmp.path().to_str().unwrap();
    let mut args = vec!["sweep", "--dir", d, "--axis", "gamma", "--values", "2"];
    args.extend_from_slice(SMALL);
    assert_eq!(adc(&args), EXIT_OK);
    assert_eq!(train(tmp.path(), &[]), EXIT_OK);
    assert_eq!(adc(&["eval", "--dir", d]), EXIT_OK);
    let tsv = fs::read_to_string(tmp.path().join("sweep/gamma.tsv")).unwrap();
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    let report = fs::read_to_string(tmp.path().join("eval/report.tsv")).unwrap();
    let ndcg10 = report
        .lines()
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .find(|f| f[0] == "adc" && f[1] == "10" && f[2] == "ndcg")
        .unwrap()[3]
        .to_string();
    assert_eq!(tsv.lines().count(), 2);
    assert_eq!(row[1], ndcg10);
    assert_eq!(
        fs::read(tmp.path().join("sweep/gamma/2/runs/r0/history.tsv")).unwrap(),
        fs::read(tmp.path().join("runs/r0/history.tsv")).unwrap()
    );
}
