//! Shared ReLU MLP with a dense head matrix producing one decoupled
//! `d`-dimensional representation per domain, with an exact reverse pass.
//!
//! Rows are examples: a layer computes `x · W + b` with `W` stored
//! `fan_in x fan_out`. The head matrix `W` is `s x (p·d)`; columns
//! `k·d..(k+1)·d` produce domain `k`'s representation and carry no activation.

use std::io::{self, Read, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::persist;

const PARAMS_MAGIC: &[u8; 8] = b"ADCNET01";

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("{what}: expected {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("forward cache does not belong to the current parameters")]
    StaleCache,
    #[error("growth needs a network with exactly one shared layer, found {0}")]
    NotSingleLayer(usize),
    #[error("a network needs at least one shared layer")]
    ZeroDepth,
}

fn shape_err(what: &'static str, expected: impl ToString, found: impl ToString) -> NetworkError {
    NetworkError::Shape {
        what,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

static STAMPS: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    STAMPS.fetch_add(1, Ordering::Relaxed)
}

/// Affine layer `x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    /// He-uniform weights, zero bias.
    pub fn random<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / fan_in.max(1) as f64).sqrt();
        Dense {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }
}

/// Trainable state: shared layers, head matrix and per-domain item vectors.
#[derive(Debug, Clone)]
pub struct NetworkParams {
    p: usize,
    d: usize,
    shared: Vec<Dense>,
    head: Dense,
    item_factors: Vec<Array2<f64>>,
    stamp: u64,
}

impl PartialEq for NetworkParams {
    fn eq(&self, other: &Self) -> bool {
        self.p == other.p
            && self.d == other.d
            && self.shared == other.shared
            && self.head == other.head
            && self.item_factors == other.item_factors
    }
}

impl NetworkParams {
    /// Assembles parameters, checking that shapes chain
    /// `p·d -> widths... -> s -> p·d` and item matrices are `m_k x d`.
    pub fn from_parts(p: usize, d: usize, shared: Vec<Dense>, head: Dense, item_factors: Vec<Array2<f64>>) -> Result<Self, NetworkError> {
        if shared.is_empty() {
            return Err(NetworkError::ZeroDepth);
        }
        let mut width = p * d;
        for layer in &shared {
            if layer.fan_in() != width {
                return Err(shape_err("shared layer input width", width, layer.fan_in()));
            }
            if layer.bias.len() != layer.fan_out() {
                return Err(shape_err("shared layer bias", layer.fan_out(), layer.bias.len()));
            }
            width = layer.fan_out();
        }
        if head.fan_in() != width || head.fan_out() != p * d || head.bias.len() != p * d {
            return Err(shape_err(
                "head matrix",
                format!("{width}x{}", p * d),
                format!("{}x{}", head.fan_in(), head.fan_out()),
            ));
        }
        if item_factors.len() != p {
            return Err(shape_err("item factor domains", p, item_factors.len()));
        }
        if let Some(v) = item_factors.iter().find(|v| v.ncols() != d) {
            return Err(shape_err("item factor width", d, v.ncols()));
        }
        Ok(NetworkParams {
            p,
            d,
            shared,
            head,
            item_factors: item_factors.into_iter().map(|v| v.as_standard_layout().to_owned()).collect(),
            stamp: fresh_stamp(),
        })
    }

    /// Random shared layers of the given widths (one per hidden layer) and a
    /// random head, with item vectors taken as given.
    pub fn init<R: Rng>(p: usize, d: usize, widths: &[usize], item_factors: Vec<Array2<f64>>, rng: &mut R) -> Result<Self, NetworkError> {
        if widths.is_empty() {
            return Err(NetworkError::ZeroDepth);
        }
        let mut fan_in = p * d;
        let mut shared = Vec::with_capacity(widths.len());
        for &w in widths {
            shared.push(Dense::random(fan_in, w, rng));
            fan_in = w;
        }
        let head = Dense::random(fan_in, p * d, rng);
        Self::from_parts(p, d, shared, head, item_factors)
    }

    pub fn n_domains(&self) -> usize {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn input_width(&self) -> usize {
        self.p * self.d
    }

    /// Number of shared hidden layers.
    pub fn depth(&self) -> usize {
        self.shared.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.shared.iter().map(Dense::fan_out).collect()
    }

    pub fn shared(&self) -> &[Dense] {
        &self.shared
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    pub fn item_factors(&self, domain: usize) -> &Array2<f64> {
        &self.item_factors[domain]
    }

    pub fn all_item_factors(&self) -> &[Array2<f64>] {
        &self.item_factors
    }

    /// Flat views of every tensor, in the order of [`tensor_names`](Self::tensor_names).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.shared {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out.push(self.head.weight.as_slice().expect("standard layout"));
        out.push(self.head.bias.as_slice().expect("standard layout"));
        for v in &self.item_factors {
            out.push(v.as_slice().expect("standard layout"));
        }
        out
    }

    /// Mutable flat views; invalidates outstanding forward caches.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.stamp = fresh_stamp();
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.shared {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.weight.as_slice_mut().expect("standard layout"));
        out.push(self.head.bias.as_slice_mut().expect("standard layout"));
        for v in &mut self.item_factors {
            out.push(v.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for l in 0..self.shared.len() {
            out.push(format!("shared[{l}].weight"));
            out.push(format!("shared[{l}].bias"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        for k in 0..self.p {
            out.push(format!("items[{k}]"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(PARAMS_MAGIC)?;
        persist::write_u64(&mut w, self.p as u64)?;
        persist::write_u64(&mut w, self.d as u64)?;
        persist::write_u64(&mut w, self.shared.len() as u64)?;
        for l in self.shared.iter().chain(std::iter::once(&self.head)) {
            persist::write_matrix(&mut w, &l.weight)?;
            persist::write_vector(&mut w, &l.bias)?;
        }
        for v in &self.item_factors {
            persist::write_matrix(&mut w, v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> io::Result<Self> {
        persist::expect_magic(&mut r, PARAMS_MAGIC)?;
        let p = persist::read_len(&mut r, 1 << 16)?;
        let d = persist::read_len(&mut r, 1 << 20)?;
        let h = persist::read_len(&mut r, 1 << 10)?;
        let mut layers = Vec::with_capacity(h + 1);
        for _ in 0..=h {
            let weight = persist::read_matrix(&mut r)?;
            let bias = persist::read_vector(&mut r)?;
            layers.push(Dense { weight, bias });
        }
        let head = layers.pop().expect("h + 1 layers read");
        let items = (0..p).map(|_| persist::read_matrix(&mut r)).collect::<io::Result<Vec<_>>>()?;
        Self::from_parts(p, d, layers, head, items).map_err(|e| persist::invalid(e.to_string()))
    }
}

/// Activations of one forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    /// Pre-activation of every shared layer.
    pre: Vec<Array2<f64>>,
    /// ReLU output of every shared layer.
    post: Vec<Array2<f64>>,
    /// Head output, `B x (p·d)`.
    output: Array2<f64>,
    stamp: u64,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.nrows()
    }

    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }

    pub fn activations(&self) -> &[Array2<f64>] {
        &self.post
    }
}

/// Per-domain head outputs `B x d` and the cache for the reverse pass.
pub fn forward(batch: ArrayView2<f64>, params: &NetworkParams) -> Result<(Vec<Array2<f64>>, ForwardCache), NetworkError> {
    if batch.ncols() != params.input_width() {
        return Err(shape_err("batch width", params.input_width(), batch.ncols()));
    }
    let mut pre = Vec::with_capacity(params.depth());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(params.depth());
    for layer in &params.shared {
        let z = match post.last() {
            Some(prev) => layer.apply(&prev.view()),
            None => layer.apply(&batch),
        };
        post.push(z.mapv(|v| v.max(0.0)));
        pre.push(z);
    }
    let output = params.head.apply(&post.last().expect("depth >= 1").view());
    let d = params.d;
    let heads = (0..params.p).map(|k| output.slice(s![.., k * d..(k + 1) * d]).to_owned()).collect();
    let cache = ForwardCache {
        input: batch.to_owned(),
        pre,
        post,
        output,
        stamp: params.stamp,
    };
    Ok((heads, cache))
}

/// Gradients mirroring [`NetworkParams`], plus the head-matrix gradient of
/// each domain's loss on its own.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub shared: Vec<Dense>,
    pub head: Dense,
    /// `∇_W` of domain `k`'s (weighted) loss, full `s x (p·d)`.
    pub head_per_domain: Vec<Array2<f64>>,
    pub items: Vec<Array2<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        GradientSet {
            shared: params.shared.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
            head: Dense::zeros(params.head.fan_in(), params.head.fan_out()),
            head_per_domain: vec![Array2::zeros(params.head.weight.dim()); params.p],
            items: params.item_factors.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    /// Flat views in the same order as [`NetworkParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in self.shared.iter().chain(std::iter::once(&self.head)) {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        for v in &self.items {
            out.push(v.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Exact reverse pass.
///
/// `head_grads[k]` is the cotangent of domain `k`'s loss with respect to the
/// head output: either `B x d` (domain `k`'s slice only) or `B x (p·d)` (all
/// slices, when the loss couples domains). The total cotangent is their sum;
/// `head_per_domain[k]` backpropagates `head_grads[k]` alone through `W`.
/// Item gradients are returned zeroed for the loss to fill in.
pub fn backward(cache: &ForwardCache, params: &NetworkParams, head_grads: &[Array2<f64>]) -> Result<GradientSet, NetworkError> {
    if cache.stamp != params.stamp {
        return Err(NetworkError::StaleCache);
    }
    if head_grads.len() != params.p {
        return Err(shape_err("head gradient domains", params.p, head_grads.len()));
    }
    let (b, d, pd) = (cache.batch_size(), params.d, params.input_width());
    let full: Vec<Array2<f64>> = head_grads
        .iter()
        .enumerate()
        .map(|(k, g)| {
            if g.nrows() != b {
                return Err(shape_err("head gradient rows", b, g.nrows()));
            }
            if g.ncols() == pd {
                Ok(g.clone())
            } else if g.ncols() == d {
                let mut f = Array2::zeros((b, pd));
                f.slice_mut(s![.., k * d..(k + 1) * d]).assign(g);
                Ok(f)
            } else {
                Err(shape_err("head gradient width", format!("{d} or {pd}"), g.ncols()))
            }
        })
        .collect::<Result<_, _>>()?;

    let last = cache.post.last().expect("depth >= 1");
    let head_per_domain: Vec<Array2<f64>> = full.iter().map(|g| last.t().dot(g)).collect();
    let mut total = Array2::<f64>::zeros((b, pd));
    for g in &full {
        total += g;
    }
    let head = Dense {
        weight: last.t().dot(&total),
        bias: total.sum_axis(Axis(0)),
    };

    let mut delta = total.dot(&params.head.weight.t());
    let mut shared = Vec::with_capacity(params.depth());
    for l in (0..params.depth()).rev() {
        delta.zip_mut_with(&cache.pre[l], |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        let x = if l == 0 { &cache.input } else { &cache.post[l - 1] };
        shared.push(Dense {
            weight: x.t().dot(&delta),
            bias: delta.sum_axis(Axis(0)),
        });
        if l > 0 {
            delta = delta.dot(&params.shared[l].weight.t());
        }
    }
    shared.reverse();
    Ok(GradientSet {
        shared,
        head,
        head_per_domain,
        items: params.item_factors.iter().map(|v| Array2::zeros(v.dim())).collect(),
    })
}

/// Deepens a one-layer network to `h_target` shared layers. Layer 1 and the
/// head are kept; inserted layers are identity plus uniform noise in
/// `[-noise, noise]` with zero bias, so non-negative activations pass through
/// unchanged when `noise == 0`.
pub fn grow_from_pretrain<R: Rng>(params: &NetworkParams, h_target: usize, noise: f64, rng: &mut R) -> Result<NetworkParams, NetworkError> {
    if params.depth() != 1 {
        return Err(NetworkError::NotSingleLayer(params.depth()));
    }
    if h_target == 0 {
        return Err(NetworkError::ZeroDepth);
    }
    let s = params.shared[0].fan_out();
    if params.head.fan_in() != s {
        return Err(shape_err("head input width", s, params.head.fan_in()));
    }
    let mut shared = params.shared.clone();
    for _ in 1..h_target {
        let mut weight = Array2::<f64>::eye(s);
        if noise > 0.0 {
            weight.mapv_inplace(|v| v + rng.random_range(-noise..=noise));
        }
        shared.push(Dense {
            weight,
            bias: Array1::zeros(s),
        });
    }
    NetworkParams::from_parts(params.p, params.d, shared, params.head.clone(), params.item_factors.clone())
}
