use std::fs;

use adc_core::dataset::{load_domains, split, write_domain, SplitAssignment, SplitTag};
use adc_core::synthetic::{generate, SyntheticSpec};
use adc_core::trainer::{run_once, PreparedData, TrainConfig};

fn small_cfg() -> TrainConfig {
    TrainConfig {
        d: 8,
        max_epochs: 6,
        batch_size: 64,
        learn_rate: 0.05,
        mf_epochs: 10,
        baseline_epochs: 10,
        runs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn domains_round_trip_through_files_and_split_manifest() {
    let data = generate(&SyntheticSpec::uniform(3, 120, 60, 0.7, 0.5, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for ds in &data {
        let path = dir.path().join(format!("{}.tsv", ds.name));
        let mut buf = Vec::new();
        write_domain(ds, &mut buf).unwrap();
        fs::write(&path, buf).unwrap();
        paths.push(path);
    }
    let loaded = load_domains(&paths).unwrap();
    assert_eq!(loaded, data);

    let s = split(&loaded, 1, 9).unwrap();
    let manifest = dir.path().join("split.tsv");
    let mut buf = Vec::new();
    s.write_manifest(&loaded, &mut buf).unwrap();
    fs::write(&manifest, buf).unwrap();
    let back = SplitAssignment::read_manifest(fs::read(&manifest).unwrap().as_slice(), &loaded).unwrap();
    assert_eq!(back, s);
    for (k, ds) in loaded.iter().enumerate() {
        let tags = back.tags(k);
        assert_eq!(tags.len(), ds.ratings().len());
        let held_out = tags.iter().any(|t| matches!(t, SplitTag::Validation | SplitTag::Test));
        assert_eq!(held_out, k == 1, "domain {k}");
    }
}

#[test]
fn partial_overlap_users_are_imputed_and_evaluated() {
    let data = generate(&SyntheticSpec::uniform(2, 200, 80, 0.5, 0.5, 2)).unwrap();
    let prepared = PreparedData::split_with(data.clone(), 0, 2).unwrap();
    let only_one = (0..prepared.index.n_users()).filter(|&g| prepared.index.presence(g).len() == 1).count();
    assert!(only_one > 0);
    let r = run_once(&small_cfg(), data, 2, true).unwrap();
    for m in std::iter::once(&r.adc).chain(r.baseline.as_ref()) {
        assert!(m.n_users > 0);
        assert!(m.recall.iter().chain(&m.ndcg).all(|v| (0.0..=1.0).contains(v)));
        assert!(m.recall.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn whole_run_is_reproducible() {
    let data = generate(&SyntheticSpec::uniform(2, 150, 60, 1.0, 0.5, 5)).unwrap();
    let a = run_once(&small_cfg(), data.clone(), 5, false).unwrap();
    let b = run_once(&small_cfg(), data, 5, false).unwrap();
    assert_eq!(a.adc, b.adc);
    assert_eq!(a.outcome.history.to_tsv(), b.outcome.history.to_tsv());
    assert_eq!(a.outcome.telemetry, b.outcome.telemetry);
    assert_eq!(a.outcome.params, b.outcome.params);
}
