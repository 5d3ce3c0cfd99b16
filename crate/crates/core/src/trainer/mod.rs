//! End-to-end training: per-domain factorization inputs, one-layer
//! pretraining, growth to the configured depth, then mini-batch joint
//! optimization of the shared network with a balancer step per batch and
//! early stopping on validation NDCG@10.

mod baseline;
mod checkpoint;
mod config;

use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::balancer::{telemetry_row, BalancerError, BalancerState};
use crate::dataset::{align_users, label_relevance_for, split, DataError, DomainDataset, GlobalUserIndex, RelevanceSet, SplitAssignment, SplitTag};
use crate::factorization::{build_input_matrix, factorize, FactorError, FactorModel};
use crate::loss::{batch_loss, sample_triples, BatchLoss, LossError, RegTarget, TrainInteractions, TripleBatch};
use crate::metrics::{evaluate_run, MetricsError, RunMetrics};
use crate::network::{backward, forward, grow_from_pretrain, GradientSet, NetworkError, NetworkParams};
use crate::rng::{derive_seed, stream, Purpose};

pub use baseline::{baseline_for, evaluate_factor_model, train_bpr_baseline, BaselineConfig, ValidationScore};
pub use checkpoint::{BestSnapshot, Checkpoint};
pub use config::{ConfigError, TrainConfig, KEYS as CONFIG_KEYS};

/// Cutoff of the validation metric driving early stopping.
pub const VALIDATION_CUTOFF: usize = 10;

/// Rows per forward pass when scoring users for evaluation.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Balancer(#[from] BalancerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite {what} in {phase} epoch {epoch}, batch {batch}; losses {losses:?}; try a smaller learn_rate")]
    NonFinite {
        what: &'static str,
        phase: Phase,
        epoch: usize,
        batch: usize,
        losses: Vec<f64>,
    },
    #[error("checkpoint does not match: {0}")]
    Checkpoint(String),
}

impl TrainError {
    /// Divergence or other floating-point failure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFinite { .. }
                | TrainError::Factor(FactorError::Diverged { .. })
                | TrainError::Balancer(BalancerError::NonFiniteGradient { .. })
                | TrainError::Metrics(MetricsError::NonFiniteScore { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Train,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::Train => "train",
        })
    }
}

/// Datasets with their alignment, split and derived training/evaluation views.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub datasets: Vec<DomainDataset>,
    pub index: GlobalUserIndex,
    pub split: SplitAssignment,
    pub train: TrainInteractions,
    pub validation: RelevanceSet,
    pub test: RelevanceSet,
}

impl PreparedData {
    pub fn new(datasets: Vec<DomainDataset>, split: SplitAssignment) -> Result<Self, DataError> {
        let index = align_users(&datasets)?;
        let train = TrainInteractions::new(&datasets, &split, &index);
        let validation = label_relevance_for(&split, &datasets, SplitTag::Validation);
        let test = label_relevance_for(&split, &datasets, SplitTag::Test);
        Ok(PreparedData {
            datasets,
            index,
            split,
            train,
            validation,
            test,
        })
    }

    /// Splits freshly with `seed` and prepares.
    pub fn split_with(datasets: Vec<DomainDataset>, target: usize, seed: u64) -> Result<Self, DataError> {
        let s = split(&datasets, target, seed)?;
        Self::new(datasets, s)
    }

    pub fn target(&self) -> usize {
        self.split.target_domain
    }

    pub fn n_domains(&self) -> usize {
        self.datasets.len()
    }
}

/// Factorizes every domain's train ratings, one thread per domain. Domain
/// `k` is seeded from `(seed, k)`.
pub fn factorize_domains(data: &PreparedData, cfg: &TrainConfig, seed: u64) -> Result<Vec<FactorModel>, FactorError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = data
            .datasets
            .iter()
            .enumerate()
            .map(|(k, ds)| {
                let mf = cfg.mf(derive_seed(seed, Purpose::Factorize, k as u64, 0));
                let ratings = data.split.train_ratings(ds);
                s.spawn(move || factorize(&ratings, ds.n_users(), ds.n_items(), &mf))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("factorization thread panicked")).collect()
    })
}

/// Factorization output ready for the network: concatenated user inputs and
/// item vectors per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInputs {
    /// `n_global x (p·d)`.
    pub users: Array2<f64>,
    pub items: Vec<Array2<f64>>,
}

impl NetworkInputs {
    pub fn from_factors(models: &[FactorModel], index: &GlobalUserIndex) -> Result<Self, FactorError> {
        Ok(NetworkInputs {
            users: build_input_matrix(models, index)?,
            items: models.iter().map(|m| m.items.clone()).collect(),
        })
    }
}

/// Loss, weighted gradients and head-gradient norms of one batch.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub loss: BatchLoss,
    /// `∇ L_cross` for every parameter, item vectors included.
    pub grads: GradientSet,
    /// `‖∇_W w_k L_k‖`.
    pub weighted_norms: Vec<f64>,
    /// `‖∇_W L_k‖`.
    pub unweighted_norms: Vec<f64>,
}

fn frobenius(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Forward pass, per-domain losses and the exact gradient of
/// `L_cross = Σ_k w_k L_k` on one batch. Weights must be positive.
pub fn loss_and_gradients(
    params: &NetworkParams,
    batch: &Array2<f64>,
    triples: &TripleBatch,
    weights: &[f64],
    lambda: f64,
    reg_on: RegTarget,
) -> Result<BatchEvaluation, TrainError> {
    let (heads, cache) = forward(batch.view(), params)?;
    let loss = batch_loss(&heads, params.all_item_factors(), triples, weights, lambda, reg_on, batch)?;
    let weighted: Vec<Array2<f64>> = loss.head_grads.iter().zip(weights).map(|(g, w)| g * *w).collect();
    let mut grads = backward(&cache, params, &weighted)?;
    for ((dst, g), w) in grads.items.iter_mut().zip(&loss.item_grads).zip(weights) {
        *dst = g * *w;
    }
    let weighted_norms: Vec<f64> = grads.head_per_domain.iter().map(frobenius).collect();
    let unweighted_norms = weighted_norms.iter().zip(weights).map(|(n, w)| if *w > 0.0 { n / w } else { 0.0 }).collect();
    Ok(BatchEvaluation {
        loss,
        grads,
        weighted_norms,
        unweighted_norms,
    })
}

/// Heavy-ball momentum: `v ← μ v + g`, `θ ← θ − ε v`.
pub(crate) fn momentum_step(params: &mut NetworkParams, velocity: &mut [Vec<f64>], grads: &GradientSet, lr: f64, mu: f64, freeze_items: bool) {
    let n_items = params.n_domains();
    let grads = grads.tensors();
    let n = grads.len();
    for (i, ((theta, v), g)) in params.tensors_mut().into_iter().zip(velocity.iter_mut()).zip(grads).enumerate() {
        if freeze_items && i >= n - n_items {
            continue;
        }
        for ((t, vi), gi) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = mu * *vi + gi;
            *t -= lr * *vi;
        }
    }
}

pub(crate) fn zero_velocity(params: &NetworkParams) -> Vec<Vec<f64>> {
    params.tensors().iter().map(|t| vec![0.0; t.len()]).collect()
}

/// Head outputs of domain `domain` for the given global users, `rows x d`.
pub fn head_outputs(params: &NetworkParams, inputs: &Array2<f64>, rows: &[usize], domain: usize) -> Result<Array2<f64>, NetworkError> {
    let d = params.dim();
    let mut out = Array2::zeros((rows.len(), d));
    for (c, chunk) in rows.chunks(EVAL_CHUNK).enumerate() {
        let x = inputs.select(Axis(0), chunk);
        let (heads, _) = forward(x.view(), params)?;
        out.slice_mut(ndarray::s![c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len(), ..]).assign(&heads[domain]);
    }
    Ok(out)
}

/// Ranks the relevance set's domain for every evaluable user with the
/// network's head scores `z_u · v_i`.
pub fn evaluate_network(
    params: &NetworkParams,
    inputs: &Array2<f64>,
    data: &PreparedData,
    relevance: &RelevanceSet,
    cutoffs: &[usize],
) -> Result<RunMetrics, TrainError> {
    let k = relevance.domain;
    let locals: Vec<usize> = relevance.evaluable().map(|u| u.user).collect();
    let globals: Vec<usize> = locals.iter().map(|&l| data.index.to_global(k, l)).collect();
    let z = head_outputs(params, inputs, &globals, k)?;
    let row_of: std::collections::HashMap<usize, usize> = locals.iter().enumerate().map(|(r, &l)| (l, r)).collect();
    let items = params.item_factors(k);
    let n_items = items.nrows();
    Ok(evaluate_run(
        relevance,
        n_items,
        cutoffs,
        |u| items.dot(&z.row(row_of[&u])).to_vec(),
        |u| data.train.positives_local(k, u).to_vec(),
    )?)
}

/// One epoch's summary. Losses are means over the epoch's batches.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// 1-based within the phase.
    pub epoch: usize,
    pub losses: Vec<f64>,
    pub cross: f64,
    pub validation_ndcg: f64,
    /// Balancer weights at the end of the epoch.
    pub weights: Vec<f64>,
    pub batches: usize,
    pub skipped_batches: usize,
    /// Users skipped in sampling because they observed every item.
    pub skipped_users: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub pretrain: Vec<EpochRecord>,
    /// Main-phase epochs.
    pub epochs: Vec<EpochRecord>,
    /// Seconds per executed epoch, pretraining first.
    pub wall_clock: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// One row per epoch (pretraining included). Wall-clock time is kept out
    /// so identical runs give identical text.
    pub fn to_tsv(&self) -> String {
        let p = self.epochs.first().or(self.pretrain.first()).map_or(0, |r| r.losses.len());
        let mut cols = vec!["phase".to_string(), "epoch".into()];
        cols.extend((0..p).map(|k| format!("loss{k}")));
        cols.push("cross".into());
        cols.push("val_ndcg@10".into());
        cols.extend((0..p).map(|k| format!("w{k}")));
        cols.extend(["batches", "skipped_batches", "skipped_users"].map(String::from));
        let mut out = cols.join("\t") + "\n";
        for r in self.pretrain.iter().chain(&self.epochs) {
            let mut row = vec![r.phase.to_string(), r.epoch.to_string()];
            row.extend(r.losses.iter().map(f64::to_string));
            row.push(r.cross.to_string());
            row.push(r.validation_ndcg.to_string());
            row.extend(r.weights.iter().map(f64::to_string));
            row.extend([r.batches, r.skipped_batches, r.skipped_users].map(|v| v.to_string()));
            out += &(row.join("\t") + "\n");
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("executed_epoch\tseconds\n");
        for (i, s) in self.wall_clock.iter().enumerate() {
            out += &format!("{}\t{s}\n", i + 1);
        }
        out
    }
}

/// Called with the full training state after every epoch.
pub type EpochHook<'a> = dyn FnMut(&Checkpoint) -> std::io::Result<()> + 'a;

/// Controls for [`train_with`].
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub resume: Option<Checkpoint>,
    /// Called with the full state after every epoch.
    pub on_epoch: Option<&'a mut EpochHook<'a>>,
    /// Return after executing this many epochs in this call.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation parameters (the latest when training stopped before finishing).
    pub params: NetworkParams,
    pub balancer: BalancerState,
    pub history: TrainHistory,
    /// Balancer telemetry rows, see [`crate::balancer::telemetry_header`].
    pub telemetry: Vec<String>,
    pub finished: bool,
    pub state: Checkpoint,
}

/// Runs the whole procedure from factorization inputs.
pub fn train(cfg: &TrainConfig, data: &PreparedData, inputs: &NetworkInputs, seed: u64) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, data, inputs, seed, TrainOptions::default())
}

/// Trains only the one-layer network for the pretraining budget.
pub fn pretrain(cfg: &TrainConfig, data: &PreparedData, inputs: &NetworkInputs, seed: u64) -> Result<NetworkParams, TrainError> {
    let opts = TrainOptions {
        stop_after: Some(cfg.pretrain_epochs()),
        ..Default::default()
    };
    let out = train_with(cfg, data, inputs, seed, opts)?;
    Ok(out.state.params)
}

fn fresh_state(cfg: &TrainConfig, data: &PreparedData, inputs: &NetworkInputs, seed: u64) -> Result<Checkpoint, TrainError> {
    let p = data.n_domains();
    let params = NetworkParams::init(
        p,
        cfg.d,
        &[cfg.hidden_width(p)],
        inputs.items.clone(),
        &mut stream(seed, Purpose::NetworkInit, 0, 0),
    )?;
    Ok(Checkpoint {
        config: cfg.to_text(),
        seed,
        phase: Phase::Pretrain,
        epoch: 0,
        step: 0,
        finished: false,
        velocity: zero_velocity(&params),
        balancer: BalancerState::new(p, &cfg.balancer())?,
        params,
        best: None,
        since_best: 0,
        history: TrainHistory::default(),
        telemetry: Vec::new(),
    })
}

/// [`train`] with resumption, per-epoch callbacks and an epoch limit.
/// Every epoch draws its randomness from `(seed, phase, epoch)`, so a resumed
/// run continues exactly as the uninterrupted one would have.
pub fn train_with(
    cfg: &TrainConfig,
    data: &PreparedData,
    inputs: &NetworkInputs,
    seed: u64,
    mut opts: TrainOptions<'_>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if inputs.items.len() != data.n_domains() || inputs.users.nrows() != data.index.n_users() {
        return Err(TrainError::Checkpoint("inputs do not match the prepared data".into()));
    }
    let mut st = match opts.resume.take() {
        Some(c) => {
            if c.config != cfg.to_text() || c.seed != seed {
                return Err(TrainError::Checkpoint("configuration or seed differs from the checkpoint".into()));
            }
            c
        }
        None => fresh_state(cfg, data, inputs, seed)?,
    };
    let mut executed = 0;
    while !st.finished {
        if opts.stop_after.is_some_and(|limit| executed >= limit) {
            break;
        }
        if st.phase == Phase::Pretrain && st.epoch >= cfg.pretrain_epochs() {
            st.params = grow_from_pretrain(&st.params, cfg.h, cfg.growth_noise, &mut stream(seed, Purpose::Growth, 0, 0))?;
            st.velocity = zero_velocity(&st.params);
            st.balancer = BalancerState::new(data.n_domains(), &cfg.balancer())?;
            st.phase = Phase::Train;
            st.epoch = 0;
        }
        let started = Instant::now();
        let record = run_epoch(&mut st, cfg, data, inputs, seed)?;
        st.history.wall_clock.push(started.elapsed().as_secs_f64());
        executed += 1;
        match st.phase {
            Phase::Pretrain => st.history.pretrain.push(record),
            Phase::Train => {
                let score = record.validation_ndcg;
                let improved = match &st.best {
                    None => true,
                    Some(b) => score > b.validation_ndcg || (score.is_nan() && b.validation_ndcg.is_nan()),
                };
                if improved {
                    st.best = Some(BestSnapshot {
                        params: st.params.clone(),
                        balancer: st.balancer.clone(),
                        epoch: st.epoch,
                        validation_ndcg: score,
                    });
                    st.since_best = 0;
                    st.history.best_epoch = Some(st.epoch);
                } else {
                    st.since_best += 1;
                }
                st.history.epochs.push(record);
                if st.since_best > cfg.patience {
                    st.finished = true;
                    st.history.stopped_early = true;
                } else if st.epoch >= cfg.max_epochs {
                    st.finished = true;
                }
            }
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&st).map_err(|e| TrainError::Checkpoint(format!("saving checkpoint: {e}")))?;
        }
    }
    let (params, balancer) = match (&st.best, st.finished) {
        (Some(b), true) => (b.params.clone(), b.balancer.clone()),
        _ => (st.params.clone(), st.balancer.clone()),
    };
    Ok(TrainOutcome {
        params,
        balancer,
        history: st.history.clone(),
        telemetry: st.telemetry.clone(),
        finished: st.finished,
        state: st,
    })
}

fn run_epoch(st: &mut Checkpoint, cfg: &TrainConfig, data: &PreparedData, inputs: &NetworkInputs, seed: u64) -> Result<EpochRecord, TrainError> {
    let p = data.n_domains();
    let phase_id = st.phase as u64;
    let epoch = st.epoch;
    let mut users = data.train.active_users();
    users.shuffle(&mut stream(seed, Purpose::Shuffle, phase_id, epoch as u64));

    let mut loss_sum = vec![0.0; p];
    let mut cross_sum = 0.0;
    let (mut batches, mut skipped_batches, mut skipped_users) = (0, 0, 0);
    for (bi, chunk) in users.chunks(cfg.batch_size).enumerate() {
        let batch_seed = derive_seed(seed, Purpose::Sampling, (phase_id << 32) | epoch as u64, bi as u64);
        let triples = sample_triples(&data.train, chunk, cfg.negatives, batch_seed);
        skipped_users += triples.skipped;
        if triples.is_empty() {
            skipped_batches += 1;
            continue;
        }
        let x = inputs.users.select(Axis(0), chunk);
        let eval = loss_and_gradients(&st.params, &x, &triples, st.balancer.weights(), cfg.lambda, cfg.reg_on)?;
        let losses = eval.loss.breakdown.per_domain.clone();
        let non_finite = |what| TrainError::NonFinite {
            what,
            phase: st.phase,
            epoch: epoch + 1,
            batch: bi,
            losses: losses.clone(),
        };
        if !eval.loss.breakdown.cross.is_finite() {
            return Err(non_finite("loss"));
        }
        if !eval.grads.is_finite() {
            return Err(non_finite("gradient"));
        }
        momentum_step(&mut st.params, &mut st.velocity, &eval.grads, cfg.learn_rate, cfg.momentum, cfg.freeze_items);
        if !st.params.is_finite() {
            return Err(non_finite("parameter"));
        }
        st.step += 1;
        let all_domains = eval.loss.breakdown.triples.iter().all(|&n| n > 0);
        if all_domains && st.step.is_multiple_of(cfg.balance_every as u64) {
            let snap = st.balancer.snapshot(&eval.weighted_norms, &losses)?;
            st.balancer.apply_step(&snap, &losses, &eval.unweighted_norms);
            if st.phase == Phase::Train {
                st.telemetry
                    .push(telemetry_row(st.balancer.iteration(), st.balancer.weights(), &losses, &snap));
            }
        }
        for (s, l) in loss_sum.iter_mut().zip(&losses) {
            *s += l;
        }
        cross_sum += eval.loss.breakdown.cross;
        batches += 1;
    }
    st.epoch += 1;
    let validation_ndcg = if data.validation.n_evaluable() == 0 {
        f64::NAN
    } else {
        evaluate_network(&st.params, &inputs.users, data, &data.validation, &[VALIDATION_CUTOFF])?.ndcg[0]
    };
    let scale = if batches > 0 { 1.0 / batches as f64 } else { 0.0 };
    Ok(EpochRecord {
        phase: st.phase,
        epoch: st.epoch,
        losses: loss_sum.iter().map(|s| s * scale).collect(),
        cross: cross_sum * scale,
        validation_ndcg,
        weights: st.balancer.weights().to_vec(),
        batches,
        skipped_batches,
        skipped_users,
    })
}

/// Metrics of one seeded run on the target domain's test set.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub adc: RunMetrics,
    pub baseline: Option<RunMetrics>,
    pub outcome: TrainOutcome,
}

/// Split, factorize, train and test with one seed; optionally the
/// single-domain baseline on the same split.
pub fn run_once(cfg: &TrainConfig, datasets: Vec<DomainDataset>, seed: u64, with_baseline: bool) -> Result<RunResult, TrainError> {
    cfg.validate()?;
    let data = PreparedData::split_with(datasets, cfg.target, seed)?;
    let models = factorize_domains(&data, cfg, seed)?;
    let inputs = NetworkInputs::from_factors(&models, &data.index)?;
    let outcome = train(cfg, &data, &inputs, seed)?;
    let adc = evaluate_network(&outcome.params, &inputs.users, &data, &data.test, &cfg.cutoffs)?;
    let baseline = if with_baseline {
        let model = baseline_for(cfg, &data, seed)?;
        Some(evaluate_factor_model(&model, &data, &data.test, &cfg.cutoffs)?)
    } else {
        None
    };
    Ok(RunResult {
        seed,
        adc,
        baseline,
        outcome,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            d: 4,
            h: 2,
            max_epochs: 6,
            patience: 10,
            batch_size: 32,
            learn_rate: 0.02,
            mf_epochs: 10,
            runs: 1,
            ..Default::default()
        }
    }

    fn small_data(seed: u64) -> (PreparedData, NetworkInputs) {
        let spec = SyntheticSpec::parse_short("2,120,30,0.7,0.3,0.15", seed).unwrap();
        let data = PreparedData::split_with(generate(&spec).unwrap(), 0, seed).unwrap();
        let models = factorize_domains(&data, &small_cfg(), seed).unwrap();
        let inputs = NetworkInputs::from_factors(&models, &data.index).unwrap();
        (data, inputs)
    }

    #[test]
    fn pretrain_is_deterministic_and_single_layer() {
        let (data, inputs) = small_data(1);
        let a = pretrain(&small_cfg(), &data, &inputs, 5).unwrap();
        let b = pretrain(&small_cfg(), &data, &inputs, 5).unwrap();
        assert_eq!(a.depth(), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn pretrain_reduces_loss() {
        let (data, inputs) = small_data(2);
        let mut cfg = small_cfg();
        cfg.max_epochs = 40;
        cfg.pretrain_fraction = 0.25;
        let out = train_with(
            &cfg,
            &data,
            &inputs,
            3,
            TrainOptions {
                stop_after: Some(10),
                ..Default::default()
            },
        )
        .unwrap();
        let h = &out.history.pretrain;
        assert_eq!(h.len(), 10);
        assert!(h.last().unwrap().cross < h[0].cross, "{:?}", h.iter().map(|r| r.cross).collect::<Vec<_>>());
    }

    #[test]
    fn identity_growth_continues_from_pretrained_parameters() {
        let (data, inputs) = small_data(3);
        let mut cfg = small_cfg();
        cfg.h = 1;
        let pre = pretrain(&cfg, &data, &inputs, 4).unwrap();
        let grown = grow_from_pretrain(&pre, 1, cfg.growth_noise, &mut stream(4, Purpose::Growth, 0, 0)).unwrap();
        assert_eq!(grown, pre);
    }

    #[test]
    fn one_step_on_frozen_batch_descends() {
        let (data, inputs) = small_data(4);
        let cfg = small_cfg();
        let params = NetworkParams::init(2, 4, &[8, 8], inputs.items.clone(), &mut stream(1, Purpose::NetworkInit, 0, 0)).unwrap();
        let users: Vec<usize> = data.train.active_users().into_iter().take(16).collect();
        let triples = sample_triples(&data.train, &users, 5, 9);
        let x = inputs.users.select(Axis(0), &users);
        let w = [0.7, 1.3];
        let before = loss_and_gradients(&params, &x, &triples, &w, cfg.lambda, RegTarget::Heads).unwrap();
        for eps in [1e-2, 1e-3, 1e-4] {
            let mut next = params.clone();
            let mut vel = zero_velocity(&next);
            momentum_step(&mut next, &mut vel, &before.grads, eps, 0.9, false);
            let after = loss_and_gradients(&next, &x, &triples, &w, cfg.lambda, RegTarget::Heads).unwrap();
            assert!(after.loss.breakdown.cross < before.loss.breakdown.cross, "eps {eps}");
        }
    }

    #[test]
    fn frozen_items_stay_fixed() {
        let (data, inputs) = small_data(5);
        let mut cfg = small_cfg();
        cfg.freeze_items = true;
        cfg.max_epochs = 2;
        let out = train(&cfg, &data, &inputs, 1).unwrap();
        assert_eq!(out.state.params.all_item_factors(), &inputs.items[..]);
    }

    #[test]
    fn weights_stay_normalized_during_training() {
        let (data, inputs) = small_data(6);
        let out = train(&small_cfg(), &data, &inputs, 2).unwrap();
        assert!(!out.telemetry.is_empty());
        for row in &out.telemetry {
            let cols: Vec<f64> = row.split('\t').map(|c| c.parse().unwrap()).collect();
            assert!((cols[1] + cols[2] - 2.0).abs() <= 1e-12);
        }
        assert!(out.history.epochs.len() <= small_cfg().max_epochs);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let (data, inputs) = small_data(7);
        let mut cfg = small_cfg();
        cfg.patience = 0;
        cfg.max_epochs = 30;
        let out = train(&cfg, &data, &inputs, 3).unwrap();
        let scores: Vec<f64> = out.history.epochs.iter().map(|r| r.validation_ndcg).collect();
        let n = scores.len();
        if out.history.stopped_early {
            assert!(scores[n - 1] <= scores[n - 2]);
            assert!(scores[..n - 1].windows(2).all(|w| w[1] > w[0]), "{scores:?}");
        } else {
            assert_eq!(n, 30);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (data, inputs) = small_data(8);
        let cfg = small_cfg();
        let full = train(&cfg, &data, &inputs, 11).unwrap();
        let part = train_with(
            &cfg,
            &data,
            &inputs,
            11,
            TrainOptions {
                stop_after: Some(3),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!part.finished);
        let mut buf = Vec::new();
        part.state.write_to(&mut buf).unwrap();
        let restored = Checkpoint::read_from(&buf[..]).unwrap();
        let resumed = train_with(
            &cfg,
            &data,
            &inputs,
            11,
            TrainOptions {
                resume: Some(restored),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(resumed.params, full.params);
        assert_eq!(resumed.history.to_tsv(), full.history.to_tsv());
        assert_eq!(resumed.telemetry, full.telemetry);
        let other = TrainConfig { gamma: 1.0, ..cfg };
        assert!(train_with(
            &other,
            &data,
            &inputs,
            11,
            TrainOptions {
                resume: Some(part.state),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn checkpoint_round_trip_keeps_validation_score() {
        let (data, inputs) = small_data(9);
        let out = train(&small_cfg(), &data, &inputs, 1).unwrap();
        let mut buf = Vec::new();
        out.state.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&buf[..]).unwrap();
        let best = back.best.as_ref().unwrap();
        let score = evaluate_network(&best.params, &inputs.users, &data, &data.validation, &[10]).unwrap().ndcg[0];
        assert_eq!(score, best.validation_ndcg);
        let direct = evaluate_network(&out.params, &inputs.users, &data, &data.validation, &[10]).unwrap().ndcg[0];
        assert_eq!(score, direct);
    }

    #[test]
    fn untrained_network_evaluates() {
        let (data, inputs) = small_data(10);
        let params = NetworkParams::init(2, 4, &[8], inputs.items.clone(), &mut stream(0, Purpose::NetworkInit, 0, 0)).unwrap();
        let m = evaluate_network(&params, &inputs.users, &data, &data.test, &[5, 10]).unwrap();
        assert!(m.ndcg.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
