//! Bidirectional transformer denoiser with hand-written reverse-mode gradients.
//!
//! Architecture: token + learned positional embeddings, `layers` pre-norm blocks of
//! full (unmasked) multi-head self-attention and a GELU feed-forward network, a final
//! layer norm and an untied projection to vocabulary logits. Linear maps compute
//! `y = x W + b` with `W` stored row-major as `in x out`.
//!
//! All weights live in one flat buffer described by a [`Layout`], which makes
//! checkpointing, optimizer updates and finite-difference probing uniform.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::rng::{Domain, Seed};
use crate::tokenizer::TokenId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: TokenId, vocab: usize },
    #[error("sequence length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    Empty,
    #[error("tensor {0} not found")]
    UnknownTensor(String),
}

/// Floating-point element type of the model (`f32` for training, `f64` for checks).
pub trait Scalar:
    num_traits::Float + core::iter::Sum + Default + Send + Sync + core::fmt::Debug + 'static
{
    #[allow(clippy::too_many_arguments)]
    #[doc(hidden)]
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );

    fn from_f64(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Strided matrix view `(data, row stride, column stride)`.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rs: usize,
    cs: usize,
}

fn view<T>(data: &[T], rs: usize, cs: usize) -> View<'_, T> {
    View { data, rs, cs }
}

fn fits(len: usize, rows: usize, cols: usize, rs: usize, cs: usize) -> bool {
    rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
}

/// `C = alpha * A B + beta * C` where `A` is `m x k`, `B` is `k x n`, `C` is `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Scalar>(
    m: usize, k: usize, n: usize, alpha: T,
    a: View<'_, T>, b: View<'_, T>,
    beta: T, c: &mut [T], rsc: usize, csc: usize,
) {
    assert!(fits(a.data.len(), m, k, a.rs, a.cs), "gemm: A out of bounds");
    assert!(fits(b.data.len(), k, n, b.rs, b.cs), "gemm: B out of bounds");
    assert!(fits(c.len(), m, n, rsc, csc), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every element addressed by the strides is inside its slice (checked above).
    unsafe {
        T::gemm_raw(
            m, k, n, alpha,
            a.data.as_ptr(), a.rs as isize, a.cs as isize,
            b.data.as_ptr(), b.rs as isize, b.cs as isize,
            beta, c.as_mut_ptr(), rsc as isize, csc as isize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { layers: 4, heads: 4, dim: 128, ff_dim: 512, max_len: 256, vocab_size: 0 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.ff_dim == 0 || self.max_len == 0 {
            return err(format!("all dimensions must be positive: {self:?}"));
        }
        if self.dim % self.heads != 0 {
            return err(format!("dim {} not divisible by heads {}", self.dim, self.heads));
        }
        if self.vocab_size == 0 {
            return err("vocab_size must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (v, d, f, l) = (self.vocab_size, self.dim, self.ff_dim, self.max_len);
        let block = 4 * (d * d + d) + 4 * d + (d * f + f) + (f * d + d);
        v * d + l * d + self.layers * block + 2 * d + d * v + v
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    fn is_bias_like(&self) -> bool {
        self.shape.len() == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerIx {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Names, shapes and offsets of every tensor in the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    config: ModelConfig,
    specs: Vec<TensorSpec>,
    total: usize,
    tok_emb: usize,
    pos_emb: usize,
    layers: Vec<LayerIx>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (v, d, f) = (config.vocab_size, config.dim, config.ff_dim);
        let mut specs = Vec::new();
        let mut total = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let offset = total;
            total += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset });
            offset
        };
        let tok_emb = push("tok_emb".into(), vec![v, d]);
        let pos_emb = push("pos_emb".into(), vec![config.max_len, d]);
        let mut layers = Vec::with_capacity(config.layers);
        for i in 0..config.layers {
            let p = |s: &str| format!("layers.{i}.{s}");
            layers.push(LayerIx {
                ln1_g: push(p("ln1.gain"), vec![d]),
                ln1_b: push(p("ln1.bias"), vec![d]),
                wq: push(p("attn.wq"), vec![d, d]),
                bq: push(p("attn.bq"), vec![d]),
                wk: push(p("attn.wk"), vec![d, d]),
                bk: push(p("attn.bk"), vec![d]),
                wv: push(p("attn.wv"), vec![d, d]),
                bv: push(p("attn.bv"), vec![d]),
                wo: push(p("attn.wo"), vec![d, d]),
                bo: push(p("attn.bo"), vec![d]),
                ln2_g: push(p("ln2.gain"), vec![d]),
                ln2_b: push(p("ln2.bias"), vec![d]),
                w1: push(p("ffn.w1"), vec![d, f]),
                b1: push(p("ffn.b1"), vec![f]),
                w2: push(p("ffn.w2"), vec![f, d]),
                b2: push(p("ffn.b2"), vec![d]),
            });
        }
        let lnf_g = push("ln_f.gain".into(), vec![d]);
        let lnf_b = push("ln_f.bias".into(), vec![d]);
        let head_w = push("head.w".into(), vec![d, v]);
        let head_b = push("head.b".into(), vec![v]);
        Ok(Layout { config, specs, total, tok_emb, pos_emb, layers, lnf_g, lnf_b, head_w, head_b })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// A flat buffer of tensors laid out per a [`Layout`]. Used for parameters, gradients
/// and optimizer moments alike.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTensors<T> {
    layout: Arc<Layout>,
    data: Vec<T>,
}

pub type DenoiserParams<T = f32> = FlatTensors<T>;
pub type Gradients<T = f32> = FlatTensors<T>;

impl<T: Scalar> FlatTensors<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![T::zero(); layout.total()];
        FlatTensors { layout, data }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<T>) -> Result<Self, ModelError> {
        if data.len() != layout.total() {
            return Err(ModelError::Config(format!(
                "buffer holds {} values, layout needs {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(FlatTensors { layout, data })
    }

    /// Deterministic initialization: normal weights (unit-variance embeddings, linear maps
    /// at `1/sqrt(fan_in)`, residual projections further scaled by `1/sqrt(2 layers)`),
    /// unit layer-norm gains, zero biases.
    pub fn init(config: ModelConfig, seed: Seed) -> Result<Self, ModelError> {
        let layout = Arc::new(Layout::new(config)?);
        let mut params = Self::zeros(layout.clone());
        let mut rng = seed.stream(Domain::Init, &[]);
        let residual_scale = 1.0 / libm::sqrt(2.0 * config.layers as f64);
        for spec in layout.specs() {
            let name = spec.name.as_str();
            let slice = &mut params.data[spec.range()];
            if name.ends_with(".gain") {
                slice.fill(T::one());
                continue;
            }
            if spec.is_bias_like() {
                continue;
            }
            let std = if name.ends_with("_emb") {
                1.0
            } else {
                let fan_in = spec.shape[0] as f64;
                let base = 1.0 / libm::sqrt(fan_in);
                if name.ends_with("attn.wo") || name.ends_with("ffn.w2") {
                    base * residual_scale
                } else {
                    base
                }
            };
            let normal = Normal::new(0.0, std).expect("positive std");
            for x in slice.iter_mut() {
                *x = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(params)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.layout.config
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn tensor(&self, name: &str) -> Result<&[T], ModelError> {
        let spec = self.layout.spec(name).ok_or_else(|| ModelError::UnknownTensor(name.into()))?;
        Ok(&self.data[spec.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut [T], ModelError> {
        let spec = self.layout.spec(name).ok_or_else(|| ModelError::UnknownTensor(name.into()))?;
        let range = spec.range();
        Ok(&mut self.data[range])
    }

    /// `(name, shape, values)` for every tensor in layout order.
    pub fn tensors(&self) -> impl Iterator<Item = (&str, &[usize], &[T])> {
        self.layout.specs().iter().map(move |s| (s.name.as_str(), s.shape.as_slice(), &self.data[s.range()]))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
    }

    /// Elementwise `self += other`, in index order.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for a in &mut self.data {
            *a = *a * factor;
        }
    }

    pub fn cast<U: Scalar>(&self) -> FlatTensors<U> {
        FlatTensors { layout: self.layout.clone(), data: self.data.iter().map(|x| U::from_f64(x.as_f64())).collect() }
    }
}

/// Row-major `rows x cols` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize, out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let eps = T::from_f64(LN_EPS);
    let inv_d = T::one() / T::from_f64(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            out[r * d + j] = xh * gain[j] + bias[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates into `dx`, `dgain`, `dbias`.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    d: usize,
    dx: &mut [T],
    dgain: &mut [T],
    dbias: &mut [T],
) {
    let rows = dy.len() / d;
    let inv_d = T::one() / T::from_f64(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] = dgain[j] + dyr[j] * xh[j];
            dbias[j] = dbias[j] + dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat = mean_dxhat + dxhat[j];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[j] * xh[j];
        }
        mean_dxhat = mean_dxhat * inv_d;
        mean_dxhat_xhat = mean_dxhat_xhat * inv_d;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = dx[r * d + j] + rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` from a single `exp`, much cheaper than the platform `tanh`.
#[inline]
fn fast_tanh<T: Scalar>(y: T) -> T {
    let two = T::from_f64(2.0);
    let e = (two * y.abs()).exp();
    let t = if e.is_infinite() { T::one() } else { T::one() - two / (e + T::one()) };
    t.copysign(y)
}

/// `tanh(c (x + a x^3))`, the inner term of the tanh-form GELU.
#[inline]
fn gelu_tanh<T: Scalar>(x: T) -> T {
    let (c, a) = (T::from_f64(GELU_C), T::from_f64(GELU_A));
    fast_tanh(c * (x + a * x * x * x))
}

#[inline]
fn gelu<T: Scalar>(x: T, th: T) -> T {
    T::from_f64(0.5) * x * (T::one() + th)
}

#[inline]
fn gelu_grad<T: Scalar>(x: T, th: T) -> T {
    let (c, a, half) = (T::from_f64(GELU_C), T::from_f64(GELU_A), T::from_f64(0.5));
    let three = T::from_f64(3.0);
    half * (T::one() + th) + half * x * (T::one() - th * th) * c * (T::one() + three * a * x * x)
}

/// `out[r] = x[r] W + b` for each row.
fn linear<T: Scalar>(x: &[T], rows: usize, w: &[T], b: &[T], din: usize, dout: usize, out: &mut [T]) {
    for r in 0..rows {
        out[r * dout..(r + 1) * dout].copy_from_slice(b);
    }
    gemm(rows, din, dout, T::one(), view(x, din, 1), view(w, dout, 1), T::one(), out, dout, 1);
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and, if given, `dx += dy W^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    rows: usize,
    w: &[T],
    din: usize,
    dout: usize,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    gemm(din, rows, dout, T::one(), view(x, 1, din), view(dy, dout, 1), T::one(), dw, dout, 1);
    for r in 0..rows {
        for j in 0..dout {
            db[j] = db[j] + dy[r * dout + j];
        }
    }
    if let Some(dx) = dx {
        gemm(rows, dout, din, T::one(), view(dy, dout, 1), view(w, 1, dout), T::one(), dx, din, 1);
    }
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    f_pre: Vec<T>,
    f_tanh: Vec<T>,
    f_act: Vec<T>,
}

/// Activations recorded by [`forward_with_cache`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    ids: Vec<TokenId>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    hf: Vec<T>,
}

fn check_input(config: &ModelConfig, ids: &[TokenId]) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::Empty);
    }
    if ids.len() > config.max_len {
        return Err(ModelError::TooLong { len: ids.len(), max: config.max_len });
    }
    if let Some(&id) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::TokenOutOfRange { id, vocab: config.vocab_size });
    }
    Ok(())
}

/// Logits `L x V` for the (possibly corrupted) input `ids`.
pub fn forward<T: Scalar>(params: &DenoiserParams<T>, ids: &[TokenId]) -> Result<Logits<T>, ModelError> {
    forward_with_cache(params, ids).map(|(logits, _)| logits)
}

pub fn forward_with_cache<T: Scalar>(
    params: &DenoiserParams<T>,
    ids: &[TokenId],
) -> Result<(Logits<T>, ForwardCache<T>), ModelError> {
    let layout = &*params.layout;
    let cfg = layout.config;
    check_input(&cfg, ids)?;
    let p = &params.data;
    let (l, d, f, v, nh) = (ids.len(), cfg.dim, cfg.ff_dim, cfg.vocab_size, cfg.heads);
    let dh = d / nh;
    let scale = T::one() / T::from_f64(dh as f64).sqrt();

    let mut x = vec![T::zero(); l * d];
    for (i, &id) in ids.iter().enumerate() {
        let te = &p[layout.tok_emb + id as usize * d..][..d];
        let pe = &p[layout.pos_emb + i * d..][..d];
        for j in 0..d {
            x[i * d + j] = te[j] + pe[j];
        }
    }

    let mut layers = Vec::with_capacity(cfg.layers);
    for ix in &layout.layers {
        let mut h1 = vec![T::zero(); l * d];
        let ln1 = layer_norm(&x, &p[ix.ln1_g..][..d], &p[ix.ln1_b..][..d], d, &mut h1);
        let mut q = vec![T::zero(); l * d];
        let mut k = vec![T::zero(); l * d];
        let mut vv = vec![T::zero(); l * d];
        linear(&h1, l, &p[ix.wq..][..d * d], &p[ix.bq..][..d], d, d, &mut q);
        linear(&h1, l, &p[ix.wk..][..d * d], &p[ix.bk..][..d], d, d, &mut k);
        linear(&h1, l, &p[ix.wv..][..d * d], &p[ix.bv..][..d], d, d, &mut vv);

        let mut probs = vec![T::zero(); nh * l * l];
        let mut att = vec![T::zero(); l * d];
        for h in 0..nh {
            let o = h * dh;
            let s = &mut probs[h * l * l..(h + 1) * l * l];
            gemm(l, dh, l, scale, view(&q[o..], d, 1), view(&k[o..], 1, d), T::zero(), s, l, 1);
            for r in 0..l {
                softmax_in_place(&mut s[r * l..(r + 1) * l]);
            }
            gemm(l, l, dh, T::one(), view(s, l, 1), view(&vv[o..], d, 1), T::zero(), &mut att[o..], d, 1);
        }
        let mut proj = vec![T::zero(); l * d];
        linear(&att, l, &p[ix.wo..][..d * d], &p[ix.bo..][..d], d, d, &mut proj);
        for (xi, pi) in x.iter_mut().zip(&proj) {
            *xi = *xi + *pi;
        }

        let mut h2 = vec![T::zero(); l * d];
        let ln2 = layer_norm(&x, &p[ix.ln2_g..][..d], &p[ix.ln2_b..][..d], d, &mut h2);
        let mut f_pre = vec![T::zero(); l * f];
        linear(&h2, l, &p[ix.w1..][..d * f], &p[ix.b1..][..f], d, f, &mut f_pre);
        let f_tanh: Vec<T> = f_pre.iter().map(|&z| gelu_tanh(z)).collect();
        let f_act: Vec<T> = f_pre.iter().zip(&f_tanh).map(|(&z, &th)| gelu(z, th)).collect();
        let mut ffn = vec![T::zero(); l * d];
        linear(&f_act, l, &p[ix.w2..][..f * d], &p[ix.b2..][..d], f, d, &mut ffn);
        for (xi, fi) in x.iter_mut().zip(&ffn) {
            *xi = *xi + *fi;
        }
        layers.push(LayerCache { ln1, h1, q, k, v: vv, probs, att, ln2, h2, f_pre, f_tanh, f_act });
    }

    let mut hf = vec![T::zero(); l * d];
    let lnf = layer_norm(&x, &p[layout.lnf_g..][..d], &p[layout.lnf_b..][..d], d, &mut hf);
    let mut logits = vec![T::zero(); l * v];
    linear(&hf, l, &p[layout.head_w..][..d * v], &p[layout.head_b..][..v], d, v, &mut logits);
    Ok((Logits { rows: l, cols: v, data: logits }, ForwardCache { ids: ids.to_vec(), layers, lnf, hf }))
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in row.iter_mut() {
        *x = *x / sum;
    }
}

/// Accumulate parameter gradients into `grads` given `dlogits = dLoss/dlogits`.
pub fn backward<T: Scalar>(
    params: &DenoiserParams<T>,
    cache: &ForwardCache<T>,
    dlogits: &[T],
    grads: &mut Gradients<T>,
) {
    let layout = &*params.layout;
    let cfg = layout.config;
    let p = &params.data;
    let g = &mut grads.data;
    let (l, d, f, v, nh) = (cache.ids.len(), cfg.dim, cfg.ff_dim, cfg.vocab_size, cfg.heads);
    let dh = d / nh;
    let scale = T::one() / T::from_f64(dh as f64).sqrt();
    assert_eq!(dlogits.len(), l * v, "dlogits shape");

    let mut dhf = vec![T::zero(); l * d];
    {
        let (dw, db) = split2(g, layout.head_w, d * v, layout.head_b, v);
        linear_backward(&cache.hf, dlogits, l, &p[layout.head_w..][..d * v], d, v, dw, db, Some(&mut dhf));
    }
    let mut dx = vec![T::zero(); l * d];
    {
        let (dg, db) = split2(g, layout.lnf_g, d, layout.lnf_b, d);
        layer_norm_backward(&dhf, &cache.lnf, &p[layout.lnf_g..][..d], d, &mut dx, dg, db);
    }

    for (ix, lc) in layout.layers.iter().zip(&cache.layers).rev() {
        // Feed-forward sub-block: x += W2 gelu(W1 LN2(x)).
        let mut dact = vec![T::zero(); l * f];
        {
            let (dw, db) = split2(g, ix.w2, f * d, ix.b2, d);
            linear_backward(&lc.f_act, &dx, l, &p[ix.w2..][..f * d], f, d, dw, db, Some(&mut dact));
        }
        for ((da, &z), &th) in dact.iter_mut().zip(&lc.f_pre).zip(&lc.f_tanh) {
            *da = *da * gelu_grad(z, th);
        }
        let mut dh2 = vec![T::zero(); l * d];
        {
            let (dw, db) = split2(g, ix.w1, d * f, ix.b1, f);
            linear_backward(&lc.h2, &dact, l, &p[ix.w1..][..d * f], d, f, dw, db, Some(&mut dh2));
        }
        {
            let (dg, db) = split2(g, ix.ln2_g, d, ix.ln2_b, d);
            layer_norm_backward(&dh2, &lc.ln2, &p[ix.ln2_g..][..d], d, &mut dx, dg, db);
        }

        // Attention sub-block: x += Wo Attn(LN1(x)).
        let mut datt = vec![T::zero(); l * d];
        {
            let (dw, db) = split2(g, ix.wo, d * d, ix.bo, d);
            linear_backward(&lc.att, &dx, l, &p[ix.wo..][..d * d], d, d, dw, db, Some(&mut datt));
        }
        let mut dq = vec![T::zero(); l * d];
        let mut dk = vec![T::zero(); l * d];
        let mut dv = vec![T::zero(); l * d];
        let mut dp = vec![T::zero(); l * l];
        for h in 0..nh {
            let o = h * dh;
            let pr = &lc.probs[h * l * l..(h + 1) * l * l];
            gemm(l, dh, l, T::one(), view(&datt[o..], d, 1), view(&lc.v[o..], 1, d), T::zero(), &mut dp, l, 1);
            gemm(l, l, dh, T::one(), view(pr, 1, l), view(&datt[o..], d, 1), T::zero(), &mut dv[o..], d, 1);
            for r in 0..l {
                let prow = &pr[r * l..(r + 1) * l];
                let drow = &mut dp[r * l..(r + 1) * l];
                let dot: T = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum();
                for (dsv, &pv) in drow.iter_mut().zip(prow) {
                    *dsv = pv * (*dsv - dot) * scale;
                }
            }
            gemm(l, l, dh, T::one(), view(&dp, l, 1), view(&lc.k[o..], d, 1), T::zero(), &mut dq[o..], d, 1);
            gemm(l, l, dh, T::one(), view(&dp, 1, l), view(&lc.q[o..], d, 1), T::zero(), &mut dk[o..], d, 1);
        }
        let mut dh1 = vec![T::zero(); l * d];
        for (w, b, dy) in [(ix.wq, ix.bq, &dq), (ix.wk, ix.bk, &dk), (ix.wv, ix.bv, &dv)] {
            let (dw, db) = split2(g, w, d * d, b, d);
            linear_backward(&lc.h1, dy, l, &p[w..][..d * d], d, d, dw, db, Some(&mut dh1));
        }
        {
            let (dg, db) = split2(g, ix.ln1_g, d, ix.ln1_b, d);
            layer_norm_backward(&dh1, &lc.ln1, &p[ix.ln1_g..][..d], d, &mut dx, dg, db);
        }
    }

    for (i, &id) in cache.ids.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        let te = layout.tok_emb + id as usize * d;
        let pe = layout.pos_emb + i * d;
        for j in 0..d {
            g[te + j] = g[te + j] + row[j];
            g[pe + j] = g[pe + j] + row[j];
        }
    }
}

/// Two disjoint mutable sub-slices of `buf`; `a` must precede `b`.
fn split2<T>(buf: &mut [T], a: usize, alen: usize, b: usize, blen: usize) -> (&mut [T], &mut [T]) {
    assert!(a + alen <= b, "split2: ranges must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b);
    (&mut lo[a..a + alen], &mut hi[..blen])
}
