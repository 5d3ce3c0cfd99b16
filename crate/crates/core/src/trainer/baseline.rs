//! Single-domain BPR matrix factorization, the comparison arm.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::RelevanceSet;
use crate::factorization::FactorModel;
use crate::loss::{sample_negative, sigmoid};
use crate::metrics::{evaluate_run, RunMetrics};
use crate::rng::{stream, Purpose};

use super::{PreparedData, TrainConfig, TrainError, VALIDATION_CUTOFF};

/// Scores a model on held-out data; higher is better.
pub type ValidationScore<'a> = dyn FnMut(&FactorModel) -> Result<f64, TrainError> + 'a;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learn_rate: f64,
    pub reg: f64,
    pub init_scale: f64,
    pub seed: u64,
    /// Early-stopping patience when a validation callback is given.
    pub patience: usize,
}

impl BaselineConfig {
    pub fn from_train(cfg: &TrainConfig, seed: u64) -> Self {
        BaselineConfig {
            dim: cfg.d,
            epochs: cfg.baseline_epochs,
            learn_rate: cfg.baseline_learn_rate,
            reg: cfg.baseline_reg,
            init_scale: cfg.baseline_init_scale,
            seed,
            patience: cfg.patience,
        }
    }
}

/// SGD on `−log σ(u·v_i − u·v_j)` over (user, observed item, sampled
/// unobserved item) triples, one negative per positive per epoch.
///
/// `positives[u]` lists user `u`'s observed items in ascending order. With a
/// `validate` callback the model with the best score is returned, stopping
/// after more than `patience` epochs without improvement.
pub fn train_bpr_baseline(
    cfg: &BaselineConfig,
    positives: &[Vec<usize>],
    n_items: usize,
    mut validate: Option<&mut ValidationScore<'_>>,
) -> Result<FactorModel, TrainError> {
    let mut rng = stream(cfg.seed, Purpose::Baseline, 0, 0);
    let s = cfg.init_scale;
    let mut model = FactorModel {
        users: Array2::from_shape_simple_fn((positives.len(), cfg.dim), || rng.random_range(-s..=s)),
        items: Array2::from_shape_simple_fn((n_items, cfg.dim), || rng.random_range(-s..=s)),
    };
    let mut pairs: Vec<(usize, usize)> = positives
        .iter()
        .enumerate()
        .filter(|(_, items)| items.len() < n_items)
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i)))
        .collect();
    let mut best: Option<(f64, FactorModel)> = None;
    let mut since_best = 0;
    let (lr, reg) = (cfg.learn_rate, cfg.reg);
    for epoch in 0..cfg.epochs {
        let mut rng = stream(cfg.seed, Purpose::Baseline, 1, epoch as u64);
        pairs.shuffle(&mut rng);
        for &(u, i) in &pairs {
            let j = sample_negative(&positives[u], n_items, &mut rng);
            let user = model.users.row(u).to_owned();
            let diff = &model.items.row(i) - &model.items.row(j);
            let g = sigmoid(-user.dot(&diff));
            model.users.row_mut(u).zip_mut_with(&diff, |w, d| *w += lr * (g * d - reg * *w));
            model.items.row_mut(i).zip_mut_with(&user, |v, uu| *v += lr * (g * uu - reg * *v));
            model.items.row_mut(j).zip_mut_with(&user, |v, uu| *v += lr * (-g * uu - reg * *v));
        }
        if !model.is_finite() {
            return Err(TrainError::NonFinite {
                what: "baseline parameter",
                phase: super::Phase::Train,
                epoch: epoch + 1,
                batch: 0,
                losses: Vec::new(),
            });
        }
        if let Some(v) = validate.as_mut() {
            let score = v(&model)?;
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, model.clone()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    break;
                }
            }
        }
    }
    Ok(best.map_or(model, |(_, m)| m))
}

/// Ranks with `u·v_i` and the same candidate rule as the network.
pub fn evaluate_factor_model(
    model: &FactorModel,
    data: &PreparedData,
    relevance: &RelevanceSet,
    cutoffs: &[usize],
) -> Result<RunMetrics, TrainError> {
    let k = relevance.domain;
    Ok(evaluate_run(
        relevance,
        model.items.nrows(),
        cutoffs,
        |u| model.items.dot(&model.users.row(u)).to_vec(),
        |u| data.train.positives_local(k, u).to_vec(),
    )?)
}

/// Baseline on the target domain's train ratings with validation early stopping.
pub fn baseline_for(cfg: &TrainConfig, data: &PreparedData, seed: u64) -> Result<FactorModel, TrainError> {
    let k = data.target();
    let ds = &data.datasets[k];
    let positives: Vec<Vec<usize>> = (0..ds.n_users()).map(|u| data.train.positives_local(k, u).to_vec()).collect();
    let bcfg = BaselineConfig::from_train(cfg, seed);
    if data.validation.n_evaluable() == 0 {
        return train_bpr_baseline(&bcfg, &positives, ds.n_items(), None);
    }
    let mut validate =
        |m: &FactorModel| -> Result<f64, TrainError> { Ok(evaluate_factor_model(m, data, &data.validation, &[VALIDATION_CUTOFF])?.ndcg[0]) };
    train_bpr_baseline(&bcfg, &positives, ds.n_items(), Some(&mut validate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize) -> BaselineConfig {
        BaselineConfig {
            dim: 4,
            epochs,
            learn_rate: 0.1,
            reg: 0.0,
            init_scale: 0.1,
            seed: 3,
            patience: 5,
        }
    }

    #[test]
    fn observed_item_ranks_above_unobserved() {
        let m = train_bpr_baseline(&cfg(200), &[vec![0]], 2, None).unwrap();
        assert!(m.predict(0, 0) > m.predict(0, 1));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let m = train_bpr_baseline(&cfg(0), &[vec![0], vec![1]], 3, None).unwrap();
        let mut rng = stream(3, Purpose::Baseline, 0, 0);
        let users = Array2::from_shape_simple_fn((2, 4), || rng.random_range(-0.1..=0.1));
        assert_eq!(m.users, users);
        assert!(m.items.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn deterministic() {
        let pos = vec![vec![0, 2], vec![1], vec![3, 4]];
        let a = train_bpr_baseline(&cfg(20), &pos, 6, None).unwrap();
        let b = train_bpr_baseline(&cfg(20), &pos, 6, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let pos = vec![vec![0], vec![1]];
        let mut calls = 0;
        let mut scores = [0.1, 0.5, 0.2, 0.3, 0.1, 0.1].into_iter();
        let mut snapshots = Vec::new();
        let mut validate = |m: &FactorModel| {
            calls += 1;
            snapshots.push(m.clone());
            Ok(scores.next().unwrap_or(0.0))
        };
        let mut c = cfg(50);
        c.patience = 2;
        let m = train_bpr_baseline(&c, &pos, 3, Some(&mut validate)).unwrap();
        assert_eq!(calls, 5);
        assert_eq!(m, snapshots[1]);
    }
}
