//! Seeded generator of correlated multi-domain rating data.
//!
//! Every global user has one latent vector. Domain `k` sees it through its
//! own random rotation, so preferences are linearly related across domains
//! without being identical. Each present user observes items drawn without
//! replacement with probability increasing in affinity (Gumbel top-k), and
//! rates them `3` plus the item's affinity relative to the mean affinity of
//! the user's rated items, plus Gaussian noise, rounded into 1..=5.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use thiserror::Error;

use crate::dataset::{DataError, DomainDataset, RatingTriple};
use crate::rng::{stream, Purpose, StreamRng};

/// Fewest ratings any present user receives in a domain.
pub const MIN_RATINGS_PER_USER: usize = 3;

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDomain {
    pub items: usize,
    /// Expected fraction of the catalog each present user rates.
    pub density: f64,
    /// Relative share of the single-domain users assigned here.
    pub user_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub domains: Vec<SyntheticDomain>,
    pub users: usize,
    /// Fraction of users present in every domain.
    pub overlap: f64,
    /// Standard deviation of the Gaussian rating noise.
    pub noise: f64,
    pub rank: usize,
    /// How strongly affinity drives which items get rated.
    pub selectivity: f64,
    /// Weight of a domain-private component mixed into each user's vector.
    pub specificity: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// `p` identical domains of `items` items each.
    pub fn uniform(p: usize, users: usize, items: usize, overlap: f64, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            domains: vec![
                SyntheticDomain {
                    items,
                    density: 0.05,
                    user_share: 1.0,
                };
                p
            ],
            users,
            overlap,
            noise,
            rank: 8,
            selectivity: 2.0,
            specificity: 0.0,
            seed,
        }
    }

    /// Parses `p,users,items,overlap,noise[,density]`.
    pub fn parse_short(s: &str, seed: u64) -> Result<Self, SyntheticError> {
        let fields: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(SyntheticError::Invalid(format!(
                "expected p,users,items,overlap,noise[,density], got `{s}`"
            )));
        }
        let int = |i: usize, name: &str| {
            fields[i]
                .parse::<usize>()
                .map_err(|_| SyntheticError::Invalid(format!("{name} must be a non-negative integer, got `{}`", fields[i])))
        };
        let real = |i: usize, name: &str| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| SyntheticError::Invalid(format!("{name} must be a number, got `{}`", fields[i])))
        };
        let mut spec = Self::uniform(
            int(0, "p")?,
            int(1, "users")?,
            int(2, "items")?,
            real(3, "overlap")?,
            real(4, "noise")?,
            seed,
        );
        if fields.len() == 6 {
            let density = real(5, "density")?;
            spec.domains.iter_mut().for_each(|d| d.density = density);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let mut problems = Vec::new();
        if self.domains.is_empty() {
            problems.push("at least one domain required".to_string());
        }
        if self.users == 0 {
            problems.push("users must be positive".into());
        }
        if self.rank == 0 {
            problems.push("rank must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            problems.push(format!("overlap must be in [0, 1], got {}", self.overlap));
        }
        if self.noise.is_nan() || self.noise < 0.0 {
            problems.push(format!("noise must be >= 0, got {}", self.noise));
        }
        for (k, d) in self.domains.iter().enumerate() {
            if d.items < MIN_RATINGS_PER_USER + 1 {
                problems.push(format!("domain {k}: needs at least {} items", MIN_RATINGS_PER_USER + 1));
            }
            if !(d.density > 0.0 && d.density <= 1.0) {
                problems.push(format!("domain {k}: density must be in (0, 1], got {}", d.density));
            }
            if d.user_share.is_nan() || d.user_share < 0.0 {
                problems.push(format!("domain {k}: user_share must be >= 0"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SyntheticError::Invalid(problems.join("; ")))
        }
    }
}

/// Random orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
fn random_rotation(r: usize, rng: &mut StreamRng) -> Array2<f64> {
    loop {
        let mut q = Array2::<f64>::zeros((r, r));
        q.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let mut ok = true;
        for i in 0..r {
            for j in 0..i {
                let proj = q.row(i).dot(&q.row(j));
                let prev = q.row(j).to_owned();
                q.row_mut(i).scaled_add(-proj, &prev);
            }
            let norm = q.row(i).dot(&q.row(i)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut StreamRng) -> Array2<f64> {
    let mut m = Array2::<f64>::zeros((rows, cols));
    m.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    m
}

/// Presence mask `[user][domain]`: overlapping users everywhere, the rest in
/// one domain picked by `user_share`.
fn assign_presence(spec: &SyntheticSpec, rng: &mut StreamRng) -> Vec<Vec<bool>> {
    let p = spec.domains.len();
    let mut order: Vec<usize> = (0..spec.users).collect();
    order.shuffle(rng);
    let n_shared = (spec.overlap * spec.users as f64).round() as usize;
    let total_share: f64 = spec.domains.iter().map(|d| d.user_share).sum();
    let mut presence = vec![vec![false; p]; spec.users];
    for (pos, &u) in order.iter().enumerate() {
        if pos < n_shared || total_share <= 0.0 {
            presence[u].iter_mut().for_each(|x| *x = true);
        } else {
            let mut draw = rng.random::<f64>() * total_share;
            let mut k = p - 1;
            for (i, d) in spec.domains.iter().enumerate() {
                if draw < d.user_share {
                    k = i;
                    break;
                }
                draw -= d.user_share;
            }
            presence[u][k] = true;
        }
    }
    presence
}

/// Generates one dataset per domain; domain `k` is named `synth{k}`, users
/// `u{g}` and items `d{k}i{j}`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<DomainDataset>, SyntheticError> {
    spec.validate()?;
    let r = spec.rank;
    let mut rng = stream(spec.seed, Purpose::Synthetic, 0, 0);
    let global = gaussian_matrix(spec.users, r, &mut rng);
    let presence = assign_presence(spec, &mut rng);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| SyntheticError::Invalid(e.to_string()))?;
    let scale = 1.0 / (r as f64).sqrt();
    let mix = (1.0 - spec.specificity.clamp(0.0, 1.0).powi(2)).sqrt();

    let mut out = Vec::with_capacity(spec.domains.len());
    for (k, dom) in spec.domains.iter().enumerate() {
        let mut rng = stream(spec.seed, Purpose::Synthetic, 1, k as u64);
        let rotation = random_rotation(r, &mut rng);
        let private = gaussian_matrix(spec.users, r, &mut rng);
        let items = gaussian_matrix(dom.items, r, &mut rng);
        let users = (global.dot(&rotation.t()) * mix) + private * spec.specificity.clamp(0.0, 1.0);
        let affinity = users.dot(&items.t()) * scale;
        let count = Poisson::new(dom.density * dom.items as f64).map_err(|e| SyntheticError::Invalid(e.to_string()))?;

        let mut triples = Vec::new();
        for (u, row) in affinity.outer_iter().enumerate() {
            if !presence[u][k] {
                continue;
            }
            let n = (count.sample(&mut rng) as usize).clamp(MIN_RATINGS_PER_USER, dom.items);
            let keys: Array1<f64> = row.mapv(|a| {
                let g: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                spec.selectivity * a - (-g.ln()).ln()
            });
            let mut idx: Vec<usize> = (0..dom.items).collect();
            idx.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
            let chosen = &idx[..n];
            let centre = chosen.iter().map(|&i| row[i]).sum::<f64>() / n as f64;
            for &i in chosen {
                let value = (3.0 + row[i] - centre + noise.sample(&mut rng)).round().clamp(1.0, 5.0);
                triples.push(RatingTriple::new(format!("u{u}"), format!("d{k}i{i}"), value));
            }
        }
        out.push(DomainDataset::from_triples(k, format!("synth{k}"), triples)?);
    }
    Ok(out)
}
