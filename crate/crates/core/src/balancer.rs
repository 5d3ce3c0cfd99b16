//! Adaptive per-domain loss weights driven by gradient norms on the head
//! matrix.
//!
//! Each step compares every domain's weighted head-gradient norm `G_k` with
//! a target `Ĝ · r_k^γ`, where `Ĝ` is the mean norm and `r_k` the domain's
//! loss ratio relative to the mean ratio. Weights descend the L1 gap with the
//! targets held constant, are clamped at `w_min` and rescaled to sum to `p`.

use std::io::{self, Read, Write};

use ndarray::Array2;
use thiserror::Error;

use crate::persist;

const BALANCER_MAGIC: &[u8; 8] = b"ADCBAL01";

/// Relative tolerance under which `G_k` counts as equal to its target.
const KINK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum BalancerError {
    #[error("non-finite head gradient for domain {domain}")]
    NonFiniteGradient { domain: usize },
    #[error("initial loss for domain {domain} is {value}; it must be positive")]
    NonPositiveInitialLoss { domain: usize, value: f64 },
    #[error("expected {expected} per-domain values, got {found}")]
    DomainCount { expected: usize, found: usize },
    #[error("invalid balancer setting: {0}")]
    InvalidConfig(String),
}

/// L2 (Frobenius) norm of each domain's head gradient and their mean.
pub fn grad_norms(per_domain: &[Array2<f64>]) -> Result<(Vec<f64>, f64), BalancerError> {
    let norms = per_domain
        .iter()
        .enumerate()
        .map(|(domain, g)| {
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n.is_finite() {
                Ok(n)
            } else {
                Err(BalancerError::NonFiniteGradient { domain })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mean = mean(&norms);
    Ok((norms, mean))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Loss ratios `L_k(t) / L_k(0)` and relative inverse rates (ratios over
/// their mean). When every ratio is zero all rates are 1.
pub fn learning_ratios(current: &[f64], initial: &[f64]) -> Result<(Vec<f64>, Vec<f64>), BalancerError> {
    if current.len() != initial.len() {
        return Err(BalancerError::DomainCount {
            expected: initial.len(),
            found: current.len(),
        });
    }
    if let Some((domain, &value)) = initial.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
        return Err(BalancerError::NonPositiveInitialLoss { domain, value });
    }
    let ratios: Vec<f64> = current.iter().zip(initial).map(|(c, i)| c / i).collect();
    let m = mean(&ratios);
    let rates = if m > 0.0 {
        ratios.iter().map(|r| r / m).collect()
    } else {
        vec![1.0; ratios.len()]
    };
    Ok((ratios, rates))
}

/// `Ĝ · r_k^γ` for every domain.
pub fn target_norms(mean_norm: f64, rates: &[f64], gamma: f64) -> Vec<f64> {
    rates.iter().map(|r| mean_norm * r.powf(gamma)).collect()
}

/// `Σ_k |G_k − target_k|`.
pub fn lgrad(norms: &[f64], targets: &[f64]) -> f64 {
    norms.iter().zip(targets).map(|(g, t)| (g - t).abs()).sum()
}

fn kink_sign(diff: f64, scale: f64) -> f64 {
    if diff.abs() <= KINK_TOLERANCE * scale {
        0.0
    } else {
        diff.signum()
    }
}

/// `∂L_grad/∂w_k = sign(G_k − target_k) · ‖∇_W L_k‖`, targets held constant,
/// with a zero subgradient at the kink.
pub fn lgrad_weight_gradient(snapshot: &BalanceSnapshot, unweighted_norms: &[f64]) -> Vec<f64> {
    snapshot
        .norms
        .iter()
        .zip(&snapshot.targets)
        .zip(unweighted_norms)
        .map(|((g, t), n)| kink_sign(g - t, g.abs().max(t.abs())) * n)
        .collect()
}

/// Quantities of one balancing step.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceSnapshot {
    /// Weighted head-gradient norms `G_k`.
    pub norms: Vec<f64>,
    pub mean_norm: f64,
    pub loss_ratios: Vec<f64>,
    pub inverse_rates: Vec<f64>,
    pub targets: Vec<f64>,
    pub lgrad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancerConfig {
    pub gamma: f64,
    pub learn_rate: f64,
    pub w_min: f64,
    /// Exponential smoothing of the losses fed into the ratios; `None` uses
    /// batch losses directly.
    pub loss_ema: Option<f64>,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        BalancerConfig {
            gamma: 2.0,
            learn_rate: 0.01,
            w_min: 1e-3,
            loss_ema: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancerState {
    weights: Vec<f64>,
    initial_losses: Vec<f64>,
    gamma: f64,
    learn_rate: f64,
    w_min: f64,
    loss_ema: Option<f64>,
    smoothed: Option<Vec<f64>>,
    iteration: u64,
}

impl BalancerState {
    /// Unit weights and `L_k(0) = log p` for `p >= 2` domains.
    pub fn new(p: usize, cfg: &BalancerConfig) -> Result<Self, BalancerError> {
        Self::with_initial_losses(vec![(p as f64).ln(); p], cfg)
    }

    pub fn with_initial_losses(initial_losses: Vec<f64>, cfg: &BalancerConfig) -> Result<Self, BalancerError> {
        if let Some((domain, &value)) = initial_losses.iter().enumerate().find(|(_, v)| v.is_nan() || **v <= 0.0) {
            return Err(BalancerError::NonPositiveInitialLoss { domain, value });
        }
        let p = initial_losses.len();
        let mut problems = Vec::new();
        if !(cfg.gamma >= 0.0 && cfg.gamma.is_finite()) {
            problems.push(format!("gamma must be >= 0, got {}", cfg.gamma));
        }
        if !(cfg.learn_rate > 0.0 && cfg.learn_rate.is_finite()) {
            problems.push(format!("balancer learn_rate must be > 0, got {}", cfg.learn_rate));
        }
        if !(cfg.w_min > 0.0 && cfg.w_min < 1.0) {
            problems.push(format!("w_min must be in (0, 1), got {}", cfg.w_min));
        }
        if let Some(decay) = cfg.loss_ema {
            if !(0.0..1.0).contains(&decay) {
                problems.push(format!("loss_ema decay must be in [0, 1), got {decay}"));
            }
        }
        if !problems.is_empty() {
            return Err(BalancerError::InvalidConfig(problems.join("; ")));
        }
        Ok(BalancerState {
            weights: vec![1.0; p],
            initial_losses,
            gamma: cfg.gamma,
            learn_rate: cfg.learn_rate,
            w_min: cfg.w_min,
            loss_ema: cfg.loss_ema,
            smoothed: None,
            iteration: 0,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn initial_losses(&self) -> &[f64] {
        &self.initial_losses
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn n_domains(&self) -> usize {
        self.weights.len()
    }

    /// Evaluates norms, ratios and targets for the current batch.
    /// `weighted_norms[k]` is `‖∇_W w_k L_k‖`.
    pub fn snapshot(&self, weighted_norms: &[f64], current_losses: &[f64]) -> Result<BalanceSnapshot, BalancerError> {
        let p = self.n_domains();
        for v in [weighted_norms, current_losses] {
            if v.len() != p {
                return Err(BalancerError::DomainCount {
                    expected: p,
                    found: v.len(),
                });
            }
        }
        if let Some(domain) = weighted_norms.iter().position(|n| !n.is_finite()) {
            return Err(BalancerError::NonFiniteGradient { domain });
        }
        let losses = self.smoothed_losses(current_losses);
        let mean_norm = mean(weighted_norms);
        let (loss_ratios, inverse_rates) = learning_ratios(&losses, &self.initial_losses)?;
        let targets = target_norms(mean_norm, &inverse_rates, self.gamma);
        Ok(BalanceSnapshot {
            lgrad: lgrad(weighted_norms, &targets),
            norms: weighted_norms.to_vec(),
            mean_norm,
            loss_ratios,
            inverse_rates,
            targets,
        })
    }

    fn smoothed_losses(&self, current: &[f64]) -> Vec<f64> {
        match (self.loss_ema, &self.smoothed) {
            (Some(decay), Some(prev)) => prev.iter().zip(current).map(|(s, c)| decay * s + (1.0 - decay) * c).collect(),
            _ => current.to_vec(),
        }
    }

    /// One gradient step on the weights followed by clamping and
    /// renormalization; advances the iteration counter.
    pub fn apply_step(&mut self, snapshot: &BalanceSnapshot, current_losses: &[f64], unweighted_norms: &[f64]) {
        let grad = lgrad_weight_gradient(snapshot, unweighted_norms);
        for (w, g) in self.weights.iter_mut().zip(&grad) {
            *w -= self.learn_rate * g;
        }
        project_weights(&mut self.weights, self.w_min);
        if self.loss_ema.is_some() {
            self.smoothed = Some(self.smoothed_losses(current_losses));
        }
        self.iteration += 1;
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(BALANCER_MAGIC)?;
        persist::write_f64s(&mut w, &self.weights)?;
        persist::write_f64s(&mut w, &self.initial_losses)?;
        persist::write_f64(&mut w, self.gamma)?;
        persist::write_f64(&mut w, self.learn_rate)?;
        persist::write_f64(&mut w, self.w_min)?;
        persist::write_f64(&mut w, self.loss_ema.unwrap_or(f64::NAN))?;
        match &self.smoothed {
            Some(s) => {
                persist::write_u64(&mut w, 1)?;
                persist::write_f64s(&mut w, s)?;
            }
            None => persist::write_u64(&mut w, 0)?,
        }
        persist::write_u64(&mut w, self.iteration)
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        persist::expect_magic(&mut r, BALANCER_MAGIC)?;
        let weights = persist::read_f64s(&mut r)?;
        let initial_losses = persist::read_f64s(&mut r)?;
        let gamma = persist::read_f64(&mut r)?;
        let learn_rate = persist::read_f64(&mut r)?;
        let w_min = persist::read_f64(&mut r)?;
        let ema = persist::read_f64(&mut r)?;
        let smoothed = match persist::read_u64(&mut r)? {
            0 => None,
            _ => Some(persist::read_f64s(&mut r)?),
        };
        let iteration = persist::read_u64(&mut r)?;
        if weights.len() != initial_losses.len() {
            return Err(persist::invalid("balancer weight and loss counts differ"));
        }
        Ok(BalancerState {
            weights,
            initial_losses,
            gamma,
            learn_rate,
            w_min,
            loss_ema: if ema.is_nan() { None } else { Some(ema) },
            smoothed,
            iteration,
        })
    }
}

/// Functional form of [`BalancerState::apply_step`].
pub fn lgrad_and_weight_step(
    state: &BalancerState,
    snapshot: &BalanceSnapshot,
    current_losses: &[f64],
    unweighted_norms: &[f64],
) -> BalancerState {
    let mut next = state.clone();
    next.apply_step(snapshot, current_losses, unweighted_norms);
    next
}

/// Clamps every weight at `w_min` and rescales the unclamped ones so the
/// weights sum to their count.
pub fn project_weights(weights: &mut [f64], w_min: f64) {
    let p = weights.len();
    let target = p as f64;
    let mut clamped = vec![false; p];
    loop {
        for (w, c) in weights.iter_mut().zip(clamped.iter_mut()) {
            if !*c && (w.is_nan() || *w <= w_min) {
                *w = w_min;
                *c = true;
            }
        }
        let n_clamped = clamped.iter().filter(|c| **c).count();
        if n_clamped == p {
            weights.iter_mut().for_each(|w| *w = 1.0);
            return;
        }
        let free_sum: f64 = weights.iter().zip(&clamped).filter(|(_, c)| !**c).map(|(w, _)| w).sum();
        let budget = target - w_min * n_clamped as f64;
        let scale = budget / free_sum;
        for (w, c) in weights.iter_mut().zip(&clamped) {
            if !*c {
                *w *= scale;
            }
        }
        if weights.iter().zip(&clamped).all(|(w, c)| *c || *w > w_min) {
            return;
        }
    }
}

/// Header of the per-step telemetry log.
pub fn telemetry_header(p: usize) -> String {
    let mut cols = vec!["step".to_string()];
    for prefix in ["w", "loss", "norm", "target"] {
        cols.extend((0..p).map(|k| format!("{prefix}{k}")));
    }
    cols.push("lgrad".into());
    cols.join("\t")
}

/// One telemetry row: step, weights after the step, losses, norms, targets, L_grad.
pub fn telemetry_row(step: u64, weights: &[f64], losses: &[f64], snapshot: &BalanceSnapshot) -> String {
    let mut cols = vec![step.to_string()];
    for v in [weights, losses, &snapshot.norms, &snapshot.targets] {
        cols.extend(v.iter().map(|x| x.to_string()));
    }
    cols.push(snapshot.lgrad.to_string());
    cols.join("\t")
}
