//! Per-domain matrix factorization used to initialize user and item latent
//! vectors, and the cross-domain averaging that fills in users missing from a
//! domain.

use std::io::{self, Read, Write};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::dataset::{GlobalUserIndex, Rating};
use crate::persist;
use crate::rng::{stream, Purpose};

const FACTOR_MAGIC: &[u8; 8] = b"ADCFACT1";

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("invalid factorization setting: {0}")]
    InvalidConfig(String),
    #[error("factorization diverged at epoch {epoch} (squared error not finite); retry with a learn_rate below {learn_rate}")]
    Diverged { epoch: usize, learn_rate: f64 },
    #[error("user {0} is not present in any domain")]
    UserNotPresent(usize),
    #[error("expected {expected} factor models, found {found}")]
    DomainCount { expected: usize, found: usize },
    #[error("rating refers to user {user}/item {item} outside a {n_users}x{n_items} matrix")]
    OutOfRange {
        user: usize,
        item: usize,
        n_users: usize,
        n_items: usize,
    },
}

/// User and item latent matrices of one domain, one row per entity.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl FactorModel {
    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        self.users.row(user).dot(&self.items.row(item))
    }

    /// Mean squared error over the given ratings.
    pub fn mse(&self, ratings: &[Rating]) -> f64 {
        if ratings.is_empty() {
            return 0.0;
        }
        ratings
            .iter()
            .map(|r| {
                let e = r.value - self.predict(r.user, r.item);
                e * e
            })
            .sum::<f64>()
            / ratings.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|v| v.is_finite())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(FACTOR_MAGIC)?;
        persist::write_u64(&mut w, self.dim() as u64)?;
        persist::write_matrix(&mut w, &self.users)?;
        persist::write_matrix(&mut w, &self.items)
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        persist::expect_magic(&mut r, FACTOR_MAGIC)?;
        let d = persist::read_u64(&mut r)? as usize;
        let users = persist::read_matrix(&mut r)?;
        let items = persist::read_matrix(&mut r)?;
        if users.ncols() != d || items.ncols() != d {
            return Err(persist::invalid("factor width disagrees with header"));
        }
        Ok(FactorModel { users, items })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learn_rate: f64,
    /// L2 weight on both factors; 0 gives the plain reconstruction objective.
    pub reg: f64,
    pub seed: u64,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 100,
            epochs: 30,
            learn_rate: 0.01,
            reg: 1e-4,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl MfConfig {
    fn validate(&self) -> Result<(), FactorError> {
        let mut problems = Vec::new();
        if self.dim == 0 {
            problems.push("dim must be >= 1".to_string());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".to_string());
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            problems.push(format!("learn_rate must be > 0, got {}", self.learn_rate));
        }
        if self.reg.is_nan() || self.reg < 0.0 {
            problems.push(format!("reg must be >= 0, got {}", self.reg));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(FactorError::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Squared error of one entry plus the L2 term, with its gradients with
/// respect to the user and item vectors.
pub fn entry_gradient(
    rating: f64,
    user: ArrayView1<f64>,
    item: ArrayView1<f64>,
    reg: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let err = rating - user.dot(&item);
    let loss = err * err + reg * (user.dot(&user) + item.dot(&item));
    let gu = user
        .iter()
        .zip(item.iter())
        .map(|(&u, &v)| -2.0 * err * v + 2.0 * reg * u)
        .collect();
    let gv = user
        .iter()
        .zip(item.iter())
        .map(|(&u, &v)| -2.0 * err * u + 2.0 * reg * v)
        .collect();
    (loss, gu, gv)
}

/// Fits `R ~ U V^T` on the observed entries by SGD over shuffled ratings.
pub fn factorize(ratings: &[Rating], n_users: usize, n_items: usize, cfg: &MfConfig) -> Result<FactorModel, FactorError> {
    factorize_traced(ratings, n_users, n_items, cfg).map(|(m, _)| m)
}

/// As [`factorize`], also returning the observed-entry MSE before training
/// and after every epoch (`epochs + 1` values).
pub fn factorize_traced(
    ratings: &[Rating],
    n_users: usize,
    n_items: usize,
    cfg: &MfConfig,
) -> Result<(FactorModel, Vec<f64>), FactorError> {
    cfg.validate()?;
    if let Some(r) = ratings.iter().find(|r| r.user >= n_users || r.item >= n_items) {
        return Err(FactorError::OutOfRange {
            user: r.user,
            item: r.item,
            n_users,
            n_items,
        });
    }
    let mut rng = stream(cfg.seed, Purpose::Factorize, 0, 0);
    let s = cfg.init_scale;
    let mut model = FactorModel {
        users: Array2::from_shape_simple_fn((n_users, cfg.dim), || rng.random_range(-s..=s)),
        items: Array2::from_shape_simple_fn((n_items, cfg.dim), || rng.random_range(-s..=s)),
    };
    let mut trace = vec![model.mse(ratings)];
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    let (lr, reg) = (cfg.learn_rate, cfg.reg);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let r = ratings[idx];
            let mut u = model.users.row_mut(r.user);
            let mut v = model.items.row_mut(r.item);
            let err = r.value - u.dot(&v);
            for (uk, vk) in u.iter_mut().zip(v.iter_mut()) {
                let (u0, v0) = (*uk, *vk);
                *uk -= lr * (-2.0 * err * v0 + 2.0 * reg * u0);
                *vk -= lr * (-2.0 * err * u0 + 2.0 * reg * v0);
            }
        }
        let mse = model.mse(ratings);
        if !mse.is_finite() || !model.is_finite() {
            return Err(FactorError::Diverged { epoch, learn_rate: lr });
        }
        trace.push(mse);
    }
    Ok((model, trace))
}

/// The user's latent vector in `domain`, or the mean of their vectors in the
/// domains they appear in when absent from it.
pub fn user_vector(
    global_user: usize,
    domain: usize,
    models: &[FactorModel],
    index: &GlobalUserIndex,
) -> Result<Vec<f64>, FactorError> {
    check_models(models, index)?;
    match index.local(global_user, domain) {
        Some(local) => Ok(models[domain].users.row(local).to_vec()),
        None => impute_missing_user(global_user, models, index),
    }
}

/// Arithmetic mean of the user's vectors over the domains containing them.
pub fn impute_missing_user(global_user: usize, models: &[FactorModel], index: &GlobalUserIndex) -> Result<Vec<f64>, FactorError> {
    check_models(models, index)?;
    let present = index.presence(global_user);
    if present.is_empty() {
        return Err(FactorError::UserNotPresent(global_user));
    }
    let d = models[present[0]].dim();
    let mut mean = vec![0.0; d];
    for &k in present {
        let local = index.local(global_user, k).expect("presence implies a local index");
        for (m, v) in mean.iter_mut().zip(models[k].users.row(local)) {
            *m += v;
        }
    }
    let n = present.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Concatenation of the user's real or imputed vectors in domain order,
/// length `p * d`.
pub fn build_concat_input(global_user: usize, models: &[FactorModel], index: &GlobalUserIndex) -> Result<Vec<f64>, FactorError> {
    check_models(models, index)?;
    if index.presence(global_user).is_empty() {
        return Err(FactorError::UserNotPresent(global_user));
    }
    let mut imputed: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(models.len() * models[0].dim());
    for (k, model) in models.iter().enumerate() {
        match index.local(global_user, k) {
            Some(local) => out.extend(model.users.row(local).iter()),
            None => {
                if imputed.is_none() {
                    imputed = Some(impute_missing_user(global_user, models, index)?);
                }
                out.extend(imputed.as_deref().unwrap());
            }
        }
    }
    Ok(out)
}

/// Input rows for every global user, `n_global x (p * d)`.
pub fn build_input_matrix(models: &[FactorModel], index: &GlobalUserIndex) -> Result<Array2<f64>, FactorError> {
    check_models(models, index)?;
    let width = models.iter().map(FactorModel::dim).sum();
    let mut out = Array2::zeros((index.n_users(), width));
    for g in 0..index.n_users() {
        let row = build_concat_input(g, models, index)?;
        out.row_mut(g).assign(&ArrayView1::from(&row[..]));
    }
    Ok(out)
}

fn check_models(models: &[FactorModel], index: &GlobalUserIndex) -> Result<(), FactorError> {
    if models.len() != index.n_domains() || models.is_empty() {
        return Err(FactorError::DomainCount {
            expected: index.n_domains(),
            found: models.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{align_users, DomainDataset, RatingTriple};
    use ndarray::array;
    use proptest::{prop_assert_eq, proptest};

    fn cfg(dim: usize, epochs: usize, lr: f64, reg: f64) -> MfConfig {
        MfConfig {
            dim,
            epochs,
            learn_rate: lr,
            reg,
            seed: 3,
            init_scale: 0.01,
        }
    }

    #[test]
    fn single_entry_rank_one_fit() {
        let r = [Rating {
            user: 0,
            item: 0,
            value: 4.0,
        }];
        let m = factorize(&r, 1, 1, &cfg(1, 2000, 0.01, 0.0)).unwrap();
        assert!((m.predict(0, 0) - 4.0).abs() < 1e-2, "{}", m.predict(0, 0));
    }

    #[test]
    fn zero_ratings_shrink_factors() {
        let r: Vec<Rating> = (0..4)
            .map(|i| Rating {
                user: i % 2,
                item: i / 2,
                value: 0.0,
            })
            .collect();
        let mut c = cfg(3, 1, 0.05, 0.5);
        c.init_scale = 0.5;
        let start = factorize(&r, 2, 2, &MfConfig { epochs: 1, learn_rate: 1e-12, ..c.clone() }).unwrap();
        c.epochs = 200;
        let end = factorize(&r, 2, 2, &c).unwrap();
        let norm = |m: &FactorModel| m.users.iter().chain(m.items.iter()).map(|v| v * v).sum::<f64>();
        assert!(norm(&end) < 1e-3 * norm(&start));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let r: Vec<Rating> = (0..30)
            .map(|i| Rating {
                user: i % 5,
                item: i % 7,
                value: (i % 5) as f64,
            })
            .collect();
        let a = factorize(&r, 5, 7, &cfg(4, 5, 0.01, 1e-4)).unwrap();
        let b = factorize(&r, 5, 7, &cfg(4, 5, 0.01, 1e-4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let r: Vec<Rating> = (0..20)
            .map(|i| Rating {
                user: i % 4,
                item: i % 5,
                value: 50.0,
            })
            .collect();
        let err = factorize(&r, 4, 5, &cfg(4, 50, 5.0, 0.0)).unwrap_err();
        assert!(matches!(err, FactorError::Diverged { .. }));
        assert!(err.to_string().contains("learn_rate"));
    }

    #[test]
    fn rejects_bad_config() {
        let r = [Rating {
            user: 0,
            item: 0,
            value: 1.0,
        }];
        assert!(matches!(factorize(&r, 1, 1, &cfg(0, 0, -1.0, 0.0)), Err(FactorError::InvalidConfig(_))));
    }

    #[test]
    fn descent_on_rank_two_matrix() {
        let mut rng = stream(1, Purpose::Synthetic, 0, 0);
        let a = Array2::from_shape_simple_fn((50, 2), || rng.random_range(0.5..1.5));
        let b = Array2::from_shape_simple_fn((50, 2), || rng.random_range(0.5..1.5));
        let full = a.dot(&b.t());
        let ratings: Vec<Rating> = full
            .indexed_iter()
            .map(|((u, i), &v)| Rating { user: u, item: i, value: v })
            .collect();
        let (_, trace) = factorize_traced(&ratings, 50, 50, &cfg(2, 30, 1e-3, 0.0)).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0], "epoch error increased: {trace:?}");
        }
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn entry_gradient_matches_finite_differences() {
        let mut rng = stream(9, Purpose::Synthetic, 1, 0);
        for _ in 0..20 {
            let d = 4;
            let u: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = rng.random_range(1.0..5.0);
            let reg = 0.1;
            let f = |u: &[f64], v: &[f64]| entry_gradient(r, ArrayView1::from(u), ArrayView1::from(v), reg).0;
            let (_, gu, gv) = entry_gradient(r, ArrayView1::from(&u[..]), ArrayView1::from(&v[..]), reg);
            let eps = 1e-6;
            for j in 0..d {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[j] += eps;
                um[j] -= eps;
                let num = (f(&up, &v) - f(&um, &v)) / (2.0 * eps);
                assert!((num - gu[j]).abs() <= 1e-5 * num.abs().max(gu[j].abs()).max(1e-2));
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[j] += eps;
                vm[j] -= eps;
                let num = (f(&u, &vp) - f(&u, &vm)) / (2.0 * eps);
                assert!((num - gv[j]).abs() <= 1e-5 * num.abs().max(gv[j].abs()).max(1e-2));
            }
        }
    }

    fn three_domains() -> (Vec<FactorModel>, GlobalUserIndex) {
        let a = DomainDataset::from_triples(0, "a", [RatingTriple::new("u", "x", 1.0), RatingTriple::new("w", "x", 1.0)]).unwrap();
        let b = DomainDataset::from_triples(1, "b", [RatingTriple::new("u", "y", 1.0)]).unwrap();
        let c = DomainDataset::from_triples(2, "c", [RatingTriple::new("u", "z", 1.0), RatingTriple::new("v", "z", 1.0)]).unwrap();
        let index = align_users(&[a, b, c]).unwrap();
        let models = vec![
            FactorModel {
                users: array![[1.0, 0.0], [7.0, 7.0]],
                items: array![[0.0, 0.0]],
            },
            FactorModel {
                users: array![[0.0, 1.0]],
                items: array![[0.0, 0.0]],
            },
            FactorModel {
                users: array![[2.0, 2.0], [5.0, 5.0]],
                items: array![[0.0, 0.0]],
            },
        ];
        (models, index)
    }

    #[test]
    fn imputation_is_componentwise_mean() {
        let (models, index) = three_domains();
        let u = index.global("u").unwrap();
        assert_eq!(impute_missing_user(u, &models, &index).unwrap(), vec![1.0, 1.0]);
        let v = index.global("v").unwrap();
        assert_eq!(impute_missing_user(v, &models, &index).unwrap(), vec![5.0, 5.0]);
        let w = index.global("w").unwrap();
        assert_eq!(user_vector(w, 0, &models, &index).unwrap(), vec![7.0, 7.0]);
        assert_eq!(user_vector(u, 1, &models, &index).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn concat_fills_absent_slots() {
        let (models, index) = three_domains();
        let u = index.global("u").unwrap();
        assert_eq!(build_concat_input(u, &models, &index).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let w = index.global("w").unwrap();
        assert_eq!(build_concat_input(w, &models, &index).unwrap(), vec![7.0, 7.0, 7.0, 7.0, 7.0, 7.0]);
        let x = build_input_matrix(&models, &index).unwrap();
        assert_eq!(x.dim(), (3, 6));
        assert_eq!(x.row(u).to_vec(), build_concat_input(u, &models, &index).unwrap());
        assert!(matches!(build_concat_input(u, &models[..2], &index), Err(FactorError::DomainCount { .. })));
    }

    #[test]
    fn two_domain_mean_and_single_domain_concat() {
        let a = DomainDataset::from_triples(0, "a", [RatingTriple::new("u", "x", 1.0)]).unwrap();
        let b = DomainDataset::from_triples(1, "b", [RatingTriple::new("u", "y", 1.0), RatingTriple::new("v", "y", 1.0)]).unwrap();
        let index = align_users(&[a.clone(), b]).unwrap();
        let models = vec![
            FactorModel {
                users: array![[1.0, 1.0]],
                items: array![[0.0, 0.0]],
            },
            FactorModel {
                users: array![[3.0, 3.0], [4.0, -4.0]],
                items: array![[0.0, 0.0]],
            },
        ];
        let u = index.global("u").unwrap();
        assert_eq!(impute_missing_user(u, &models, &index).unwrap(), vec![2.0, 2.0]);
        let only = align_users(&[a]).unwrap();
        assert_eq!(build_concat_input(0, &models[..1], &only).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn factor_file_round_trip() {
        let (models, _) = three_domains();
        let mut buf = Vec::new();
        models[2].write_to(&mut buf).unwrap();
        assert_eq!(FactorModel::read_from(&buf[..]).unwrap(), models[2]);
        buf[0] = b'X';
        assert!(FactorModel::read_from(&buf[..]).is_err());
    }

    proptest! {
        #[test]
        fn present_user_vector_is_stored_row(vals in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let a = DomainDataset::from_triples(0, "a", [RatingTriple::new("u", "x", 1.0)]).unwrap();
            let b = DomainDataset::from_triples(1, "b", [RatingTriple::new("u", "y", 1.0)]).unwrap();
            let index = align_users(&[a, b]).unwrap();
            let models = vec![
                FactorModel { users: Array2::from_shape_vec((1, 2), vals[..2].to_vec()).unwrap(), items: Array2::zeros((1, 2)) },
                FactorModel { users: Array2::from_shape_vec((1, 2), vals[2..].to_vec()).unwrap(), items: Array2::zeros((1, 2)) },
            ];
            prop_assert_eq!(user_vector(0, 0, &models, &index).unwrap(), vals[..2].to_vec());
            prop_assert_eq!(user_vector(0, 1, &models, &index).unwrap(), vals[2..].to_vec());
        }
    }
}
