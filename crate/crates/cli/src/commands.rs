//! Subcommand implementations. Each works inside one experiment directory:
//!
//! ```text
//! DIR/data/<domain>.tsv      normalized domain files           (prep)
//! DIR/stats.tsv, split.tsv   dataset summary, split manifest   (prep)
//! DIR/config.txt             resolved training configuration   (train)
//! DIR/runs/r<N>/             per-run split, factors, checkpoints,
//!                            balancer.tsv, history.tsv, timing.tsv
//! DIR/report.tsv, runs.tsv   test metrics                      (train)
//! DIR/eval/                  re-evaluation output              (eval)
//! DIR/sweep/<axis>/<value>/  one training directory per value  (sweep)
//! DIR/<command>.manifest     settings and file digests
//! ```

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use adc_core::balancer::telemetry_header;
use adc_core::dataset::{load_domains, parse_domain, stats_table, write_domain, DomainDataset, SplitAssignment, SplitTag};
use adc_core::factorization::FactorModel;
use adc_core::metrics::{RankingReport, RunMetrics};
use adc_core::network::NetworkParams;
use adc_core::synthetic::{generate, SyntheticSpec};
use adc_core::trainer::{
    baseline_for, evaluate_factor_model, evaluate_network, factorize_domains, train_with, Checkpoint,
    NetworkInputs, PreparedData, TrainConfig, TrainOptions,
};

use crate::error::{CliError, Result};
use crate::manifest::RunManifest;

pub const RUN_ROOT_ENV: &str = "ADC_RUN_ROOT";

/// Relative directories are placed under `$ADC_RUN_ROOT` when it is set.
pub fn resolve_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(RUN_ROOT_ENV) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.to_path_buf(),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn save_binary(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::io(path, e))?;
    let tmp = path.with_extension("tmp");
    write(&tmp, &buf)?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn rel(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

// ---------------------------------------------------------------- prep

#[derive(Debug, Clone, Default)]
pub struct PrepArgs {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// `p,users,items,overlap,noise[,density]`.
    pub synthetic: Option<String>,
    /// Per-domain density overrides for synthetic data.
    pub densities: Option<Vec<f64>>,
    /// Per-domain item-count overrides for synthetic data.
    pub items: Option<Vec<usize>>,
    pub target: usize,
    pub seed: u64,
}

pub struct PrepOutput {
    pub stats: String,
    pub datasets: Vec<DomainDataset>,
}

pub fn cmd_prep(args: &PrepArgs) -> Result<PrepOutput> {
    let dir = &args.dir;
    let datasets = match (&args.synthetic, args.files.is_empty()) {
        (Some(s), true) => {
            let mut spec = SyntheticSpec::parse_short(s, args.seed)?;
            let p = spec.domains.len();
            if let Some(ds) = &args.densities {
                if ds.len() != p {
                    return Err(CliError::Usage(format!("--densities needs {p} values")));
                }
                spec.domains.iter_mut().zip(ds).for_each(|(d, v)| d.density = *v);
            }
            if let Some(items) = &args.items {
                if items.len() != p {
                    return Err(CliError::Usage(format!("--items needs {p} values")));
                }
                spec.domains.iter_mut().zip(items).for_each(|(d, v)| d.items = *v);
            }
            generate(&spec)?
        }
        (None, false) => load_domains(&args.files)?,
        (Some(_), false) => return Err(CliError::Usage("give either domain files or --synthetic, not both".into())),
        (None, true) => return Err(CliError::Usage("no domain files given (or use --synthetic)".into())),
    };
    let mut names: Vec<&str> = datasets.iter().map(|d| d.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("domain file names must be distinct".into()));
    }
    let split = adc_core::dataset::split(&datasets, args.target, args.seed)?;

    let mut manifest = RunManifest::new("prep");
    manifest.seeds.push(args.seed);
    manifest.settings.push(("target".into(), args.target.to_string()));
    if let Some(s) = &args.synthetic {
        manifest.settings.push(("synthetic".into(), s.clone()));
    }
    for (k, ds) in datasets.iter().enumerate() {
        let rel_path = format!("data/{}.tsv", ds.name);
        let mut buf = Vec::new();
        write_domain(ds, &mut buf).map_err(|e| CliError::io(&dir.join(&rel_path), e))?;
        write(&dir.join(&rel_path), buf)?;
        manifest.settings.push((format!("domain.{k}"), ds.name.clone()));
        manifest.add_output(dir, &rel_path)?;
    }
    for f in &args.files {
        manifest.settings.push(("source".into(), f.display().to_string()));
    }
    let stats: Vec<_> = datasets.iter().map(DomainDataset::stats).collect();
    let table = stats_table(&stats);
    write(&dir.join("stats.tsv"), &table)?;
    let mut buf = Vec::new();
    split.write_manifest(&datasets, &mut buf).map_err(|e| CliError::io(&dir.join("split.tsv"), e))?;
    write(&dir.join("split.tsv"), buf)?;
    manifest.add_output(dir, "stats.tsv")?;
    manifest.add_output(dir, "split.tsv")?;
    manifest.save(&dir.join("prep.manifest"))?;
    Ok(PrepOutput { stats: table, datasets })
}

/// Verifies the prep manifest and loads the domains in their original order.
pub fn load_prepared(dir: &Path) -> Result<(Vec<DomainDataset>, RunManifest)> {
    let manifest = RunManifest::load(&dir.join("prep.manifest"), dir)?;
    let mut datasets = Vec::new();
    for k in 0.. {
        let Some(name) = manifest.setting(&format!("domain.{k}")) else { break };
        let path = dir.join(format!("data/{name}.tsv"));
        datasets.push(parse_domain(open(&path)?, k, name)?);
    }
    if datasets.is_empty() {
        return Err(CliError::Tamper("prep manifest lists no domains".into()));
    }
    Ok((datasets, manifest))
}

// ---------------------------------------------------------------- config

/// Defaults, then the prep target, then the config file, then `key=value`
/// overrides in order. All problems are reported together.
pub fn resolve_config(prep: &RunManifest, file: Option<&Path>, overrides: &[String]) -> Result<TrainConfig> {
    let mut text = String::new();
    if let Some(t) = prep.setting("target") {
        let _ = writeln!(text, "target = {t}");
    }
    if let Some(f) = file {
        text += &read_text(f)?;
        text.push('\n');
    }
    for o in overrides {
        text += o;
        text.push('\n');
    }
    Ok(TrainConfig::from_text(&text)?)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub dir: PathBuf,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub with_baseline: bool,
    pub dry_run: bool,
    pub resume: bool,
    /// Stop every run after this many epochs, leaving a checkpoint.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub config: TrainConfig,
    /// `None` when interrupted or a dry run.
    pub report: Option<RankingReport>,
    pub baseline: Option<RankingReport>,
    pub runs: Vec<RunMetrics>,
    pub text: String,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    let (datasets, prep) = load_prepared(&args.dir)?;
    let cfg = resolve_config(&prep, args.config.as_deref(), &args.overrides)?;
    if args.dry_run {
        let mut text = String::from("configuration valid\n");
        for r in 0..cfg.runs {
            let data = PreparedData::split_with(datasets.clone(), cfg.target, cfg.run_seed(r))?;
            let _ = writeln!(
                text,
                "run {r}: seed {} train users {} validation users {} test users {}",
                cfg.run_seed(r),
                data.train.active_users().len(),
                data.validation.n_evaluable(),
                data.test.n_evaluable()
            );
        }
        return Ok(TrainSummary {
            config: cfg,
            report: None,
            baseline: None,
            runs: Vec::new(),
            text,
        });
    }
    train_experiment(&args.dir, &args.dir, &datasets, &cfg, args)
}

fn run_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("runs/r{r}"))
}

/// Trains every run of `cfg` on the prepared data of `data_dir`, writing
/// into `out`.
pub fn train_experiment(data_dir: &Path, out: &Path, datasets: &[DomainDataset], cfg: &TrainConfig, args: &TrainArgs) -> Result<TrainSummary> {
    let mut manifest = RunManifest::new("train");
    for d in RunManifest::load(&data_dir.join("prep.manifest"), data_dir)?.outputs {
        if d.path.starts_with("data/") {
            let full = rel(out, &data_dir.join(&d.path));
            manifest.inputs.push(crate::manifest::FileDigest { path: full, sha256: d.sha256 });
        }
    }
    write(&out.join("config.txt"), cfg.to_text())?;
    manifest.add_output(out, "config.txt")?;
    for key in adc_core::trainer::CONFIG_KEYS {
        manifest.settings.push((key.to_string(), cfg.get(key).unwrap_or_default()));
    }

    let mut runs = Vec::new();
    let mut baselines = Vec::new();
    let mut interrupted = false;
    let mut rows = String::from("run\tseed\tarm\tcutoff\tmetric\tvalue\n");
    for r in 0..cfg.runs {
        let seed = cfg.run_seed(r);
        manifest.seeds.push(seed);
        let rd = run_dir(out, r);
        let data = PreparedData::split_with(datasets.to_vec(), cfg.target, seed)?;
        let mut buf = Vec::new();
        data.split.write_manifest(&data.datasets, &mut buf).map_err(|e| CliError::io(&rd, e))?;
        write(&rd.join("split.tsv"), buf)?;
        let models = factorize_domains(&data, cfg, seed).map_err(adc_core::trainer::TrainError::from)?;
        for (k, m) in models.iter().enumerate() {
            save_binary(&rd.join(format!("factors/{k}.bin")), |b| m.write_to(b))?;
        }
        let inputs = NetworkInputs::from_factors(&models, &data.index).map_err(adc_core::trainer::TrainError::from)?;

        let ckpt_path = rd.join("checkpoint.bin");
        let resume = if args.resume && ckpt_path.exists() {
            Some(Checkpoint::read_from(open(&ckpt_path)?).map_err(|e| CliError::io(&ckpt_path, e))?)
        } else {
            None
        };
        let mut save = |c: &Checkpoint| -> std::io::Result<()> {
            save_binary(&ckpt_path, |b| c.write_to(b)).map_err(|e| std::io::Error::other(e.to_string()))
        };
        let outcome = train_with(
            cfg,
            &data,
            &inputs,
            seed,
            TrainOptions {
                resume,
                on_epoch: Some(&mut save),
                stop_after: args.stop_after,
            },
        )?;
        write(&rd.join("history.tsv"), outcome.history.to_tsv())?;
        write(&rd.join("timing.tsv"), outcome.history.timing_tsv())?;
        let mut tele = telemetry_header(data.n_domains()) + "\n";
        for row in &outcome.telemetry {
            tele += row;
            tele.push('\n');
        }
        write(&rd.join("balancer.tsv"), tele)?;
        let run_rel = rel(out, &rd);
        for f in ["split.tsv", "history.tsv", "balancer.tsv", "checkpoint.bin"] {
            manifest.add_output(out, &format!("{run_rel}/{f}"))?;
        }
        if !outcome.finished {
            interrupted = true;
            eprintln!("run {r}: stopped after {} epochs; resume with --resume", outcome.history.wall_clock.len());
            continue;
        }
        save_binary(&rd.join("best.bin"), |b| outcome.params.write_to(b))?;
        manifest.add_output(out, &format!("{run_rel}/best.bin"))?;
        let metrics = evaluate_network(&outcome.params, &inputs.users, &data, &data.test, &cfg.cutoffs)?;
        push_rows(&mut rows, r, seed, "adc", &metrics);
        eprintln!(
            "run {r}: seed {seed} epochs {} best {:?} test ndcg@{} {:.4}",
            outcome.history.epochs.len(),
            outcome.history.best_epoch,
            metrics.cutoffs[0],
            metrics.ndcg[0]
        );
        runs.push(metrics);
        if args.with_baseline {
            let model = baseline_for(cfg, &data, seed)?;
            save_binary(&rd.join("baseline.bin"), |b| model.write_to(b))?;
            manifest.add_output(out, &format!("{run_rel}/baseline.bin"))?;
            let m = evaluate_factor_model(&model, &data, &data.test, &cfg.cutoffs)?;
            push_rows(&mut rows, r, seed, "bpr", &m);
            baselines.push(m);
        }
    }

    if interrupted {
        manifest.save(&out.join("train.manifest"))?;
        return Ok(TrainSummary {
            config: cfg.clone(),
            report: None,
            baseline: None,
            runs,
            text: "training interrupted; resume with --resume\n".into(),
        });
    }
    let seeds: Vec<u64> = (0..cfg.runs).map(|r| cfg.run_seed(r)).collect();
    let report = RankingReport::from_runs(&runs, seeds.clone()).map_err(adc_core::trainer::TrainError::from)?;
    let baseline = if baselines.is_empty() {
        None
    } else {
        Some(RankingReport::from_runs(&baselines, seeds).map_err(adc_core::trainer::TrainError::from)?)
    };
    let text = write_reports(out, &report, baseline.as_ref(), &rows, &mut manifest)?;
    manifest.save(&out.join("train.manifest"))?;
    Ok(TrainSummary {
        config: cfg.clone(),
        report: Some(report),
        baseline,
        runs,
        text,
    })
}

fn push_rows(out: &mut String, run: usize, seed: u64, arm: &str, m: &RunMetrics) {
    for (i, c) in m.cutoffs.iter().enumerate() {
        let _ = writeln!(out, "{run}\t{seed}\t{arm}\t{c}\trecall\t{}", m.recall[i]);
    }
    for (i, c) in m.cutoffs.iter().enumerate() {
        let _ = writeln!(out, "{run}\t{seed}\t{arm}\t{c}\tndcg\t{}", m.ndcg[i]);
    }
}

fn report_tsv(report: &RankingReport, baseline: Option<&RankingReport>) -> String {
    let mut out = String::from("arm\tcutoff\tmetric\tvalue\tstderr\n");
    for (arm, r) in std::iter::once(("adc", report)).chain(baseline.map(|b| ("bpr", b))) {
        for row in r.rows() {
            let _ = writeln!(out, "{arm}\t{}\t{}\t{}\t{}", row.cutoff, row.metric.name(), row.value, row.stderr);
        }
    }
    out
}

fn report_text(report: &RankingReport, baseline: Option<&RankingReport>) -> String {
    let mut text = format!("ADC\n{}", report.to_table());
    if let Some(b) = baseline {
        text += &format!("\nBPR baseline\n{}", b.to_table());
    }
    text
}

fn write_reports(out: &Path, report: &RankingReport, baseline: Option<&RankingReport>, rows: &str, manifest: &mut RunManifest) -> Result<String> {
    write(&out.join("report.tsv"), report_tsv(report, baseline))?;
    write(&out.join("runs.tsv"), rows)?;
    let text = report_text(report, baseline);
    write(&out.join("report.txt"), &text)?;
    for f in ["report.tsv", "runs.tsv", "report.txt"] {
        manifest.add_output(out, f)?;
    }
    Ok(text)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalSplit {
    #[default]
    Test,
    Validation,
}

#[derive(Debug, Clone, Default)]
pub struct EvalArgs {
    pub dir: PathBuf,
    pub cutoffs: Option<Vec<usize>>,
    pub split: EvalSplit,
}

pub struct EvalOutput {
    pub report: RankingReport,
    pub baseline: Option<RankingReport>,
    pub runs: Vec<RunMetrics>,
    pub text: String,
}

/// Re-evaluates every run's best (or latest checkpointed) parameters.
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutput> {
    let dir = &args.dir;
    let (datasets, _) = load_prepared(dir)?;
    let train_manifest = dir.join("train.manifest");
    if train_manifest.exists() {
        RunManifest::load(&train_manifest, dir)?;
    }
    let cfg = TrainConfig::from_text(&read_text(&dir.join("config.txt"))?)?;
    let cutoffs = args.cutoffs.clone().unwrap_or_else(|| cfg.cutoffs.clone());
    let tag = match args.split {
        EvalSplit::Test => SplitTag::Test,
        EvalSplit::Validation => SplitTag::Validation,
    };
    let mut manifest = RunManifest::new("eval");
    manifest.settings.push(("cutoffs".into(), cutoffs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")));
    manifest.settings.push(("split".into(), tag.to_string()));
    let mut rows = String::from("run\tseed\tarm\tcutoff\tmetric\tvalue\n");
    let (mut runs, mut baselines, mut seeds) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..cfg.runs {
        let rd = run_dir(dir, r);
        let seed = cfg.run_seed(r);
        let split = SplitAssignment::read_manifest(open(&rd.join("split.tsv"))?, &datasets)?;
        let data = PreparedData::new(datasets.clone(), split)?;
        let models = (0..datasets.len())
            .map(|k| {
                let p = rd.join(format!("factors/{k}.bin"));
                FactorModel::read_from(open(&p)?).map_err(|e| CliError::io(&p, e))
            })
            .collect::<Result<Vec<_>>>()?;
        let inputs = NetworkInputs::from_factors(&models, &data.index).map_err(adc_core::trainer::TrainError::from)?;
        let best = rd.join("best.bin");
        let params = if best.exists() {
            NetworkParams::read_from(open(&best)?).map_err(|e| CliError::io(&best, e))?
        } else {
            let p = rd.join("checkpoint.bin");
            Checkpoint::read_from(open(&p)?).map_err(|e| CliError::io(&p, e))?.params
        };
        let relevance = match args.split {
            EvalSplit::Test => &data.test,
            EvalSplit::Validation => &data.validation,
        };
        let m = evaluate_network(&params, &inputs.users, &data, relevance, &cutoffs)?;
        push_rows(&mut rows, r, seed, "adc", &m);
        runs.push(m);
        seeds.push(seed);
        manifest.seeds.push(seed);
        let b = rd.join("baseline.bin");
        if b.exists() {
            let model = FactorModel::read_from(open(&b)?).map_err(|e| CliError::io(&b, e))?;
            let m = evaluate_factor_model(&model, &data, relevance, &cutoffs)?;
            push_rows(&mut rows, r, seed, "bpr", &m);
            baselines.push(m);
        }
    }
    let report = RankingReport::from_runs(&runs, seeds.clone()).map_err(adc_core::trainer::TrainError::from)?;
    let baseline = if baselines.len() == runs.len() {
        Some(RankingReport::from_runs(&baselines, seeds).map_err(adc_core::trainer::TrainError::from)?)
    } else {
        None
    };
    let out = dir.join("eval");
    let text = write_reports(&out, &report, baseline.as_ref(), &rows, &mut manifest)?;
    for d in &mut manifest.outputs {
        d.path = format!("eval/{}", d.path);
    }
    manifest.save(&dir.join("eval.manifest"))?;
    Ok(EvalOutput {
        report,
        baseline,
        runs,
        text,
    })
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Gamma,
    H,
}

impl SweepAxis {
    pub fn key(self) -> &'static str {
        match self {
            SweepAxis::Gamma => "gamma",
            SweepAxis::H => "h",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub train: TrainArgs,
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub parallel: usize,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: String,
    pub summary: TrainSummary,
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(Vec<SweepRow>, String)> {
    if args.values.is_empty() {
        return Err(CliError::Usage("--values needs at least one value".into()));
    }
    let dir = &args.train.dir;
    let (datasets, prep) = load_prepared(dir)?;
    let key = args.axis.key();
    let configs = args
        .values
        .iter()
        .map(|v| {
            let mut o = args.train.overrides.clone();
            o.push(format!("{key} = {v}"));
            resolve_config(&prep, args.train.config.as_deref(), &o)
        })
        .collect::<Result<Vec<_>>>()?;
    let job = |(value, cfg): (&String, &TrainConfig)| -> Result<SweepRow> {
        let out = dir.join(format!("sweep/{key}/{value}"));
        let summary = train_experiment(dir, &out, &datasets, cfg, &args.train)?;
        Ok(SweepRow {
            value: value.clone(),
            summary,
        })
    };
    let pairs: Vec<(&String, &TrainConfig)> = args.values.iter().zip(&configs).collect();
    let rows: Vec<SweepRow> = if args.parallel > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.parallel)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        pool.install(|| pairs.into_par_iter().map(job).collect::<Result<Vec<_>>>())?
    } else {
        pairs.into_iter().map(job).collect::<Result<Vec<_>>>()?
    };
    let mut tsv = format!("{key}\tndcg@10\tstderr\trecall@10\n");
    let mut table = format!("{key:>8}  {:>9}  {:>8}  {:>9}\n", "ndcg@10", "stderr", "recall@10");
    for row in &rows {
        if let Some(r) = &row.summary.report {
            let i = r.cutoffs.iter().position(|&c| c == 10);
            let (n, s, rc) = i.map_or((f64::NAN, f64::NAN, f64::NAN), |i| (r.ndcg[i], r.ndcg_stderr[i], r.recall[i]));
            let _ = writeln!(tsv, "{}\t{n}\t{s}\t{rc}", row.value);
            let _ = writeln!(table, "{:>8}  {n:>9.4}  {s:>8.4}  {rc:>9.4}", row.value);
        }
    }
    write(&dir.join(format!("sweep/{key}.tsv")), &tsv)?;
    let mut manifest = RunManifest::new("sweep");
    manifest.settings.push(("axis".into(), key.into()));
    manifest.settings.push(("values".into(), args.values.join(",")));
    manifest.add_output(dir, &format!("sweep/{key}.tsv"))?;
    manifest.save(&dir.join(format!("sweep-{key}.manifest")))?;
    Ok((rows, table))
}

// ---------------------------------------------------------------- report

/// Verifies every manifest in the directory and collects the outputs into
/// one summary, also written to `summary.txt`.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut text = String::new();
    let prep = RunManifest::load(&dir.join("prep.manifest"), dir)?;
    let _ = writeln!(text, "experiment: {}", dir.display());
    let _ = writeln!(text, "target domain: {}\n", prep.setting("target").unwrap_or("?"));
    text += &read_text(&dir.join("stats.tsv"))?;
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "manifest"))
        .collect();
    entries.sort();
    for m in &entries {
        RunManifest::load(m, dir)?;
    }
    let _ = writeln!(text, "\nverified manifests: {}", entries.len());
    if dir.join("report.txt").exists() {
        text += "\n== test report (train)\n";
        text += &read_text(&dir.join("report.txt"))?;
    }
    if dir.join("eval/report.txt").exists() {
        text += "\n== eval report\n";
        text += &read_text(&dir.join("eval/report.txt"))?;
    }
    for axis in ["gamma", "h"] {
        let p = dir.join(format!("sweep/{axis}.tsv"));
        if p.exists() {
            let _ = write!(text, "\n== sweep over {axis}\n{}", read_text(&p)?);
        }
    }
    write(&dir.join("summary.txt"), &text)?;
    Ok(text)
}
