//! Flat `key = value` training configuration.

use std::fmt::Write as _;

use thiserror::Error;

use crate::balancer::BalancerConfig;
use crate::factorization::MfConfig;
use crate::loss::RegTarget;
use crate::metrics::DEFAULT_CUTOFFS;

#[derive(Debug, Error, PartialEq)]
#[error("invalid configuration:\n  {}", .0.join("\n  "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Index of the target domain among the loaded domains.
    pub target: usize,
    pub d: usize,
    /// Shared hidden layers.
    pub h: usize,
    /// Hidden width; `None` means `p·d`.
    pub width: Option<usize>,
    pub gamma: f64,
    pub lambda: f64,
    pub reg_on: RegTarget,
    pub negatives: usize,
    pub batch_size: usize,
    pub learn_rate: f64,
    pub momentum: f64,
    pub balancer_learn_rate: f64,
    pub w_min: f64,
    /// Balancer step every this many batches.
    pub balance_every: usize,
    pub loss_ema: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    /// Share of `max_epochs` spent pretraining the one-layer network (at least one epoch).
    pub pretrain_fraction: f64,
    pub growth_noise: f64,
    pub freeze_items: bool,
    pub mf_epochs: usize,
    pub mf_learn_rate: f64,
    pub mf_reg: f64,
    pub mf_init_scale: f64,
    pub baseline_epochs: usize,
    pub baseline_learn_rate: f64,
    pub baseline_reg: f64,
    pub baseline_init_scale: f64,
    pub seed: u64,
    /// Repeated runs, each re-seeding split and training with `seed + r`.
    pub runs: usize,
    pub cutoffs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            target: 0,
            d: 100,
            h: 2,
            width: None,
            gamma: 2.0,
            lambda: 0.01,
            reg_on: RegTarget::Heads,
            negatives: 5,
            batch_size: 256,
            learn_rate: 0.005,
            momentum: 0.9,
            balancer_learn_rate: 0.025,
            w_min: 1e-3,
            balance_every: 1,
            loss_ema: None,
            max_epochs: 100,
            patience: 10,
            pretrain_fraction: 0.2,
            growth_noise: 0.01,
            freeze_items: false,
            mf_epochs: 30,
            mf_learn_rate: 0.01,
            mf_reg: 1e-4,
            mf_init_scale: 0.01,
            baseline_epochs: 100,
            baseline_learn_rate: 0.05,
            baseline_reg: 0.01,
            baseline_init_scale: 0.1,
            seed: 0,
            runs: 5,
            cutoffs: DEFAULT_CUTOFFS.to_vec(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "target",
    "d",
    "h",
    "width",
    "gamma",
    "lambda",
    "reg_on",
    "negatives",
    "batch_size",
    "learn_rate",
    "momentum",
    "balancer_learn_rate",
    "w_min",
    "balance_every",
    "loss_ema",
    "max_epochs",
    "patience",
    "pretrain_fraction",
    "growth_noise",
    "freeze_items",
    "mf_epochs",
    "mf_learn_rate",
    "mf_reg",
    "mf_init_scale",
    "baseline_epochs",
    "baseline_learn_rate",
    "baseline_reg",
    "baseline_init_scale",
    "seed",
    "runs",
    "cutoffs",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse `{value}`"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got `{value}`")),
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        match key {
            "target" => self.target = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "h" => self.h = parse(key, value)?,
            "width" => {
                self.width = match value {
                    "auto" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "gamma" => self.gamma = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "reg_on" => self.reg_on = value.parse().map_err(|e: String| format!("{key}: {e}"))?,
            "negatives" => self.negatives = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learn_rate" => self.learn_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "balancer_learn_rate" => self.balancer_learn_rate = parse(key, value)?,
            "w_min" => self.w_min = parse(key, value)?,
            "balance_every" => self.balance_every = parse(key, value)?,
            "loss_ema" => {
                self.loss_ema = match value {
                    "off" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "pretrain_fraction" => self.pretrain_fraction = parse(key, value)?,
            "growth_noise" => self.growth_noise = parse(key, value)?,
            "freeze_items" => self.freeze_items = parse_bool(key, value)?,
            "mf_epochs" => self.mf_epochs = parse(key, value)?,
            "mf_learn_rate" => self.mf_learn_rate = parse(key, value)?,
            "mf_reg" => self.mf_reg = parse(key, value)?,
            "mf_init_scale" => self.mf_init_scale = parse(key, value)?,
            "baseline_epochs" => self.baseline_epochs = parse(key, value)?,
            "baseline_learn_rate" => self.baseline_learn_rate = parse(key, value)?,
            "baseline_reg" => self.baseline_reg = parse(key, value)?,
            "baseline_init_scale" => self.baseline_init_scale = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "runs" => self.runs = parse(key, value)?,
            "cutoffs" => {
                self.cutoffs = value
                    .split(',')
                    .map(|c| parse(key, c.trim()))
                    .collect::<Result<_, _>>()?
            }
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "target" => self.target.to_string(),
            "d" => self.d.to_string(),
            "h" => self.h.to_string(),
            "width" => self.width.map_or("auto".into(), |w| w.to_string()),
            "gamma" => self.gamma.to_string(),
            "lambda" => self.lambda.to_string(),
            "reg_on" => self.reg_on.to_string(),
            "negatives" => self.negatives.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learn_rate" => self.learn_rate.to_string(),
            "momentum" => self.momentum.to_string(),
            "balancer_learn_rate" => self.balancer_learn_rate.to_string(),
            "w_min" => self.w_min.to_string(),
            "balance_every" => self.balance_every.to_string(),
            "loss_ema" => self.loss_ema.map_or("off".into(), |v| v.to_string()),
            "max_epochs" => self.max_epochs.to_string(),
            "patience" => self.patience.to_string(),
            "pretrain_fraction" => self.pretrain_fraction.to_string(),
            "growth_noise" => self.growth_noise.to_string(),
            "freeze_items" => self.freeze_items.to_string(),
            "mf_epochs" => self.mf_epochs.to_string(),
            "mf_learn_rate" => self.mf_learn_rate.to_string(),
            "mf_reg" => self.mf_reg.to_string(),
            "mf_init_scale" => self.mf_init_scale.to_string(),
            "baseline_epochs" => self.baseline_epochs.to_string(),
            "baseline_learn_rate" => self.baseline_learn_rate.to_string(),
            "baseline_reg" => self.baseline_reg.to_string(),
            "baseline_init_scale" => self.baseline_init_scale.to_string(),
            "seed" => self.seed.to_string(),
            "runs" => self.runs.to_string(),
            "cutoffs" => list(&self.cutoffs),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are skipped. Every problem is reported, not just the first.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        let mut problems = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v) {
                        problems.push(format!("line {}: {e}", n + 1));
                    }
                }
                None => problems.push(format!("line {}: expected key = value, got `{line}`", n + 1)),
            }
        }
        if let Err(ConfigError(more)) = cfg.validate() {
            problems.extend(more);
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError(problems))
        }
    }

    /// Every key with its current value, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut p = Vec::new();
        let mut positive = |name: &str, ok: bool| {
            if !ok {
                p.push(format!("{name} must be positive"));
            }
        };
        positive("d", self.d > 0);
        positive("h", self.h > 0);
        positive("width", self.width != Some(0));
        positive("negatives", self.negatives > 0);
        positive("batch_size", self.batch_size > 0);
        positive("learn_rate", self.learn_rate > 0.0 && self.learn_rate.is_finite());
        positive("balancer_learn_rate", self.balancer_learn_rate > 0.0 && self.balancer_learn_rate.is_finite());
        positive("balance_every", self.balance_every > 0);
        positive("max_epochs", self.max_epochs > 0);
        positive("mf_epochs", self.mf_epochs > 0);
        positive("mf_learn_rate", self.mf_learn_rate > 0.0);
        positive("baseline_learn_rate", self.baseline_learn_rate > 0.0);
        positive("runs", self.runs > 0);
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            p.push(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            p.push(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.w_min > 0.0 && self.w_min < 1.0) {
            p.push(format!("w_min must be in (0, 1), got {}", self.w_min));
        }
        if let Some(decay) = self.loss_ema {
            if !(0.0..1.0).contains(&decay) {
                p.push(format!("loss_ema must be off or in [0, 1), got {decay}"));
            }
        }
        if !(0.0..=1.0).contains(&self.pretrain_fraction) {
            p.push(format!("pretrain_fraction must be in [0, 1], got {}", self.pretrain_fraction));
        }
        if self.growth_noise.is_nan() || self.growth_noise < 0.0 {
            p.push(format!("growth_noise must be >= 0, got {}", self.growth_noise));
        }
        for (name, v) in [
            ("mf_reg", self.mf_reg),
            ("mf_init_scale", self.mf_init_scale),
            ("baseline_reg", self.baseline_reg),
            ("baseline_init_scale", self.baseline_init_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                p.push(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            p.push("cutoffs must be a non-empty list of positive integers".into());
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(p))
        }
    }

    /// Hidden width for `p` domains.
    pub fn hidden_width(&self, p: usize) -> usize {
        self.width.unwrap_or(p * self.d)
    }

    /// `max(1, round(pretrain_fraction · max_epochs))`.
    pub fn pretrain_epochs(&self) -> usize {
        ((self.pretrain_fraction * self.max_epochs as f64).round() as usize).max(1)
    }

    pub fn balancer(&self) -> BalancerConfig {
        BalancerConfig {
            gamma: self.gamma,
            learn_rate: self.balancer_learn_rate,
            w_min: self.w_min,
            loss_ema: self.loss_ema,
        }
    }

    pub fn mf(&self, seed: u64) -> MfConfig {
        MfConfig {
            dim: self.d,
            epochs: self.mf_epochs,
            learn_rate: self.mf_learn_rate,
            reg: self.mf_reg,
            seed,
            init_scale: self.mf_init_scale,
        }
    }

    /// Seed of run `r`.
    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }
}
