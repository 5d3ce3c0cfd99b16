//! Pairwise ranking loss per domain with the cross-domain user regularizer,
//! the weighted joint loss, and negative sampling.

use ndarray::{s, Array2, ArrayView1};
use rand::Rng;
use thiserror::Error;

use crate::dataset::{DomainDataset, GlobalUserIndex, SplitAssignment, SplitTag};
use crate::rng::{stream, Purpose};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("{values} loss values but {weights} weights")]
    LengthMismatch { values: usize, weights: usize },
    #[error("weight {index} is negative ({value})")]
    NegativeWeight { index: usize, value: f64 },
}

/// `-log σ(x)`, evaluated without overflow for either sign of `x`.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BprTerm {
    pub value: f64,
    pub grad_user: Vec<f64>,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<f64>,
}

/// `-log σ(z·v⁺ − z·v⁻)` and its gradients.
pub fn bpr_loss(z: ArrayView1<f64>, v_pos: ArrayView1<f64>, v_neg: ArrayView1<f64>) -> BprTerm {
    let margin = z.dot(&v_pos) - z.dot(&v_neg);
    // d/dm of -log σ(m) is -σ(-m)
    let slope = -sigmoid(-margin);
    BprTerm {
        value: neg_log_sigmoid(margin),
        grad_user: v_pos.iter().zip(v_neg.iter()).map(|(p, n)| slope * (p - n)).collect(),
        grad_pos: z.iter().map(|zi| slope * zi).collect(),
        grad_neg: z.iter().map(|zi| -slope * zi).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegTerm {
    pub value: f64,
    /// Gradient with respect to each domain's vector.
    pub grads: Vec<Vec<f64>>,
}

/// `λ Σ_{q≠anchor} ‖z_q − z_anchor‖²` for one user's per-domain vectors.
pub fn user_reg(z_all: &[ArrayView1<f64>], anchor: usize, lambda: f64) -> RegTerm {
    let d = z_all.first().map_or(0, |z| z.len());
    let mut grads = vec![vec![0.0; d]; z_all.len()];
    let mut value = 0.0;
    if lambda == 0.0 {
        return RegTerm { value, grads };
    }
    let za = &z_all[anchor];
    for (q, zq) in z_all.iter().enumerate() {
        if q == anchor {
            continue;
        }
        for j in 0..d {
            let diff = zq[j] - za[j];
            value += diff * diff;
            grads[q][j] += 2.0 * lambda * diff;
            grads[anchor][j] -= 2.0 * lambda * diff;
        }
    }
    RegTerm {
        value: lambda * value,
        grads,
    }
}

/// `Σ_k w_k L_k`.
pub fn cross_loss(values: &[f64], weights: &[f64]) -> Result<f64, LossError> {
    if values.len() != weights.len() {
        return Err(LossError::LengthMismatch {
            values: values.len(),
            weights: weights.len(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| **w < 0.0) {
        return Err(LossError::NegativeWeight { index, value });
    }
    Ok(values.iter().zip(weights).map(|(l, w)| w * l).sum())
}

/// Which per-domain user vectors the regularizer compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegTarget {
    /// Network head outputs; the regularizer shapes the network.
    Heads,
    /// Fixed factorization inputs; contributes to loss values only.
    Inputs,
}

impl std::str::FromStr for RegTarget {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heads" => Ok(RegTarget::Heads),
            "inputs" => Ok(RegTarget::Inputs),
            o => Err(format!("reg_on must be `heads` or `inputs`, got `{o}`")),
        }
    }
}

impl std::fmt::Display for RegTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegTarget::Heads => "heads",
            RegTarget::Inputs => "inputs",
        })
    }
}

/// Train positives per domain, addressed by global user.
#[derive(Debug, Clone)]
pub struct TrainInteractions {
    /// `[domain][local user]` -> sorted train items.
    positives: Vec<Vec<Vec<usize>>>,
    n_items: Vec<usize>,
    index: GlobalUserIndex,
}

impl TrainInteractions {
    pub fn new(datasets: &[DomainDataset], split: &SplitAssignment, index: &GlobalUserIndex) -> Self {
        let positives = datasets
            .iter()
            .map(|ds| {
                let mut lists = vec![Vec::new(); ds.n_users()];
                for r in split.ratings_with(ds, SplitTag::Train) {
                    lists[r.user].push(r.item);
                }
                lists.iter_mut().for_each(|l| l.sort_unstable());
                lists
            })
            .collect();
        TrainInteractions {
            positives,
            n_items: datasets.iter().map(DomainDataset::n_items).collect(),
            index: index.clone(),
        }
    }

    pub fn n_domains(&self) -> usize {
        self.n_items.len()
    }

    pub fn n_items(&self, domain: usize) -> usize {
        self.n_items[domain]
    }

    pub fn index(&self) -> &GlobalUserIndex {
        &self.index
    }

    /// Sorted train items of a global user in `domain`; empty when absent.
    pub fn positives(&self, domain: usize, global_user: usize) -> &[usize] {
        match self.index.local(global_user, domain) {
            Some(local) => &self.positives[domain][local],
            None => &[],
        }
    }

    pub fn positives_local(&self, domain: usize, local_user: usize) -> &[usize] {
        &self.positives[domain][local_user]
    }

    /// Global users with at least one train positive in some domain, ascending.
    pub fn active_users(&self) -> Vec<usize> {
        (0..self.index.n_users())
            .filter(|&g| (0..self.n_domains()).any(|k| !self.positives(k, g).is_empty()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triple {
    /// Row of the user in the batch.
    pub row: usize,
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleBatch {
    pub per_domain: Vec<Vec<Triple>>,
    /// Users skipped because they observed every item of a domain.
    pub skipped: usize,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.per_domain.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws `negatives` unobserved items for every train positive of every
/// listed user in every domain they have positives in. Each domain uses its
/// own stream derived from `seed`.
pub fn sample_triples(train: &TrainInteractions, users: &[usize], negatives: usize, seed: u64) -> TripleBatch {
    let mut skipped = 0;
    let per_domain = (0..train.n_domains())
        .map(|k| {
            let mut rng = stream(seed, Purpose::Sampling, k as u64, 0);
            let m = train.n_items(k);
            let mut out = Vec::new();
            for (row, &user) in users.iter().enumerate() {
                let pos = train.positives(k, user);
                if pos.is_empty() {
                    continue;
                }
                if pos.len() >= m {
                    skipped += 1;
                    continue;
                }
                for &p in pos {
                    for _ in 0..negatives {
                        let neg = sample_negative(pos, m, &mut rng);
                        out.push(Triple { row, user, pos: p, neg });
                    }
                }
            }
            out
        })
        .collect();
    TripleBatch { per_domain, skipped }
}

/// Uniform draw from `0..m` minus the sorted `observed` list. Rejection
/// sampling for at most `m` attempts, then an explicit complement draw.
pub(crate) fn sample_negative<R: Rng>(observed: &[usize], m: usize, rng: &mut R) -> usize {
    for _ in 0..m {
        let j = rng.random_range(0..m);
        if observed.binary_search(&j).is_err() {
            return j;
        }
    }
    let free: Vec<usize> = (0..m).filter(|j| observed.binary_search(j).is_err()).collect();
    free[rng.random_range(0..free.len())]
}

/// Per-domain and joint loss values of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// `L_k` = BPR part + regularizer part.
    pub per_domain: Vec<f64>,
    pub bpr: Vec<f64>,
    pub reg: Vec<f64>,
    pub triples: Vec<usize>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    /// `Σ_k w_k L_k`.
    pub cross: f64,
}

/// Loss values and unweighted cotangents of one batch.
#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub breakdown: LossBreakdown,
    /// `∂L_k/∂Z` over the full head output, `B x (p·d)`.
    pub head_grads: Vec<Array2<f64>>,
    /// `∂L_k/∂V^(k)`, `m_k x d`.
    pub item_grads: Vec<Array2<f64>>,
}

/// Evaluates every `L_k` on a batch.
///
/// The BPR part is the mean over the domain's triples (zero without
/// triples); the regularizer part anchored at `k` is averaged over all batch
/// rows. `heads[k]` is `B x d`; `inputs` (the batch's `B x (p·d)` input rows)
/// is read only when `reg_on` is [`RegTarget::Inputs`].
pub fn batch_loss(
    heads: &[Array2<f64>],
    items: &[Array2<f64>],
    triples: &TripleBatch,
    weights: &[f64],
    lambda: f64,
    reg_on: RegTarget,
    inputs: &Array2<f64>,
) -> Result<BatchLoss, LossError> {
    let p = heads.len();
    let (b, d) = heads[0].dim();
    let mut head_grads = vec![Array2::<f64>::zeros((b, p * d)); p];
    let mut item_grads: Vec<Array2<f64>> = items.iter().map(|v| Array2::zeros(v.dim())).collect();
    let mut bpr = vec![0.0; p];
    let mut reg = vec![0.0; p];

    for k in 0..p {
        let ts = &triples.per_domain[k];
        if ts.is_empty() {
            continue;
        }
        let scale = 1.0 / ts.len() as f64;
        let z = &heads[k];
        let v = &items[k];
        for t in ts {
            let term = bpr_loss(z.row(t.row), v.row(t.pos), v.row(t.neg));
            bpr[k] += scale * term.value;
            let mut gz = head_grads[k].slice_mut(s![t.row, k * d..(k + 1) * d]);
            for j in 0..d {
                gz[j] += scale * term.grad_user[j];
            }
            let gv = &mut item_grads[k];
            for j in 0..d {
                gv[[t.pos, j]] += scale * term.grad_pos[j];
                gv[[t.neg, j]] += scale * term.grad_neg[j];
            }
        }
    }

    if lambda != 0.0 && p > 1 && b > 0 {
        let scale = 1.0 / b as f64;
        for row in 0..b {
            let vectors: Vec<ArrayView1<f64>> = match reg_on {
                RegTarget::Heads => heads.iter().map(|h| h.row(row)).collect(),
                RegTarget::Inputs => (0..p).map(|q| inputs.slice(s![row, q * d..(q + 1) * d])).collect(),
            };
            for k in 0..p {
                let term = user_reg(&vectors, k, lambda);
                reg[k] += scale * term.value;
                if reg_on == RegTarget::Heads {
                    for (q, g) in term.grads.iter().enumerate() {
                        let mut dst = head_grads[k].slice_mut(s![row, q * d..(q + 1) * d]);
                        for j in 0..d {
                            dst[j] += scale * g[j];
                        }
                    }
                }
            }
        }
    }

    let per_domain: Vec<f64> = bpr.iter().zip(&reg).map(|(a, b)| a + b).collect();
    let cross = cross_loss(&per_domain, weights)?;
    Ok(BatchLoss {
        breakdown: LossBreakdown {
            per_domain,
            bpr,
            reg,
            triples: triples.per_domain.iter().map(Vec::len).collect(),
            weights: weights.to_vec(),
            lambda,
            cross,
        },
        head_grads,
        item_grads,
    })
}
