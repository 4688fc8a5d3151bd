//! Layers with explicit forward caches and analytic backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// `y = act(x W^T + b)` with `W: out x in`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Tensor2,
    pub activation: Activation,
}

impl Linear {
    /// Weights and bias uniform in `+-1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        Self {
            weight: Tensor2::from_vec(output, input, sample(output * input)).expect("shape"),
            bias: Tensor2::row_vector(sample(output)),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            weight: Tensor2::zeros(output, input),
            bias: Tensor2::zeros(1, output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Per-row normalisation with learned gain and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Tensor2,
    pub bias: Tensor2,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Tensor2::filled(1, dim, 1.0),
            bias: Tensor2::zeros(1, dim),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gain.cols()
    }
}

/// Single-head scaled dot-product self-attention without output projection:
/// `softmax((x Wq)(x Wk)^T / sqrt(d)) (x Wv)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAttention {
    pub wq: Tensor2,
    pub wk: Tensor2,
    pub wv: Tensor2,
}

impl SelfAttention {
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut sample = || {
            let v = (0..dim * dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Tensor2::from_vec(dim, dim, v).expect("shape")
        };
        Self {
            wq: sample(),
            wk: sample(),
            wv: sample(),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layer {
    Linear(Linear),
    LayerNorm(LayerNorm),
    SelfAttention(SelfAttention),
    /// Column-wise mean over rows; no parameters.
    MeanPool,
}

#[derive(Debug, Clone)]
pub enum Cache {
    Linear {
        input: Tensor2,
        pre: Tensor2,
        out: Tensor2,
    },
    LayerNorm {
        normalized: Tensor2,
        inv_std: Vec<f64>,
    },
    SelfAttention {
        input: Tensor2,
        q: Tensor2,
        k: Tensor2,
        v: Tensor2,
        weights: Tensor2,
    },
    MeanPool {
        rows: usize,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear(_) => "linear",
            Layer::LayerNorm(_) => "layer_norm",
            Layer::SelfAttention(_) => "self_attention",
            Layer::MeanPool => "mean_pool",
        }
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        match self {
            Layer::Linear(l) => vec![&l.weight, &l.bias],
            Layer::LayerNorm(n) => vec![&n.gain, &n.bias],
            Layer::SelfAttention(a) => vec![&a.wq, &a.wk, &a.wv],
            Layer::MeanPool => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        match self {
            Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
            Layer::LayerNorm(n) => vec![&mut n.gain, &mut n.bias],
            Layer::SelfAttention(a) => vec![&mut a.wq, &mut a.wk, &mut a.wv],
            Layer::MeanPool => vec![],
        }
    }

    pub fn forward(&self, x: &Tensor2) -> Result<(Tensor2, Cache)> {
        forward_any(self.into(), x)
    }

    /// Returns the input gradient and one gradient per entry of `params()`.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor2) -> Result<(Tensor2, Vec<Tensor2>)> {
        backward_any(self.into(), cache, grad_out)
    }
}

macro_rules! typed_layer {
    ($ty:ty, $variant:ident) => {
        impl $ty {
            pub fn forward(&self, x: &Tensor2) -> Result<(Tensor2, Cache)> {
                forward_any(LayerRef::$variant(self), x)
            }

            pub fn backward(&self, cache: &Cache, grad_out: &Tensor2) -> Result<(Tensor2, Vec<Tensor2>)> {
                backward_any(LayerRef::$variant(self), cache, grad_out)
            }
        }
    };
}

typed_layer!(Linear, Linear);
typed_layer!(LayerNorm, LayerNorm);
typed_layer!(SelfAttention, SelfAttention);

pub fn mean_pool(x: &Tensor2) -> Result<(Tensor2, Cache)> {
    mean_pool_forward(x)
}

pub fn mean_pool_backward(cache: &Cache, grad_out: &Tensor2) -> Result<Tensor2> {
    backward_any(LayerRef::MeanPool, cache, grad_out).map(|(g, _)| g)
}

#[derive(Clone, Copy)]
enum LayerRef<'a> {
    Linear(&'a Linear),
    LayerNorm(&'a LayerNorm),
    SelfAttention(&'a SelfAttention),
    MeanPool,
}

impl<'a> From<&'a Layer> for LayerRef<'a> {
    fn from(l: &'a Layer) -> Self {
        match l {
            Layer::Linear(x) => LayerRef::Linear(x),
            Layer::LayerNorm(x) => LayerRef::LayerNorm(x),
            Layer::SelfAttention(x) => LayerRef::SelfAttention(x),
            Layer::MeanPool => LayerRef::MeanPool,
        }
    }
}

fn forward_any(layer: LayerRef<'_>, x: &Tensor2) -> Result<(Tensor2, Cache)> {
    match layer {
        LayerRef::Linear(l) => linear_forward(l, x),
        LayerRef::LayerNorm(n) => layer_norm_forward(n, x),
        LayerRef::SelfAttention(a) => attention_forward(a, x),
        LayerRef::MeanPool => mean_pool_forward(x),
    }
}

fn backward_any(layer: LayerRef<'_>, cache: &Cache, grad_out: &Tensor2) -> Result<(Tensor2, Vec<Tensor2>)> {
    match (layer, cache) {
        (LayerRef::Linear(l), Cache::Linear { input, pre, out }) => {
            linear_backward(l, input, pre, out, grad_out)
        }
        (LayerRef::LayerNorm(n), Cache::LayerNorm { normalized, inv_std }) => {
            layer_norm_backward(n, normalized, inv_std, grad_out)
        }
        (LayerRef::SelfAttention(a), Cache::SelfAttention { input, q, k, v, weights }) => {
            attention_backward(a, input, q, k, v, weights, grad_out)
        }
        (LayerRef::MeanPool, Cache::MeanPool { rows }) => {
            if grad_out.rows() != 1 {
                return Err(Error::Shape("mean-pool gradient must be one row".into()));
            }
            let mut gx = Tensor2::zeros(*rows, grad_out.cols());
            let inv = 1.0 / *rows as f64;
            for r in 0..*rows {
                gx.row_mut(r)
                    .iter_mut()
                    .zip(grad_out.row(0))
                    .for_each(|(g, &y)| *g = y * inv);
            }
            Ok((gx, vec![]))
        }
        _ => Err(Error::Shape("cache does not match the layer kind".into())),
    }
}

fn linear_forward(l: &Linear, x: &Tensor2) -> Result<(Tensor2, Cache)> {
    if x.cols() != l.input_dim() {
        return Err(Error::Shape(format!(
            "linear expects {} inputs, got {}",
            l.input_dim(),
            x.cols()
        )));
    }
    let mut pre = x.matmul_nt(&l.weight)?;
    for r in 0..pre.rows() {
        pre.row_mut(r)
            .iter_mut()
            .zip(l.bias.row(0))
            .for_each(|(p, &b)| *p += b);
    }
    let mut out = pre.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = l.activation.apply(*v));
    Ok((
        out.clone(),
        Cache::Linear {
            input: x.clone(),
            pre,
            out,
        },
    ))
}

fn linear_backward(
    l: &Linear,
    input: &Tensor2,
    pre: &Tensor2,
    out: &Tensor2,
    grad_out: &Tensor2,
) -> Result<(Tensor2, Vec<Tensor2>)> {
    if !grad_out.same_shape(out) {
        return Err(Error::Shape("linear grad_out shape".into()));
    }
    let mut g_pre = grad_out.clone();
    for ((g, &x), &y) in g_pre.data_mut().iter_mut().zip(pre.data()).zip(out.data()) {
        *g *= l.activation.derivative(x, y);
    }
    let grad_w = g_pre.matmul_tn(input)?;
    let mut grad_b = Tensor2::zeros(1, l.output_dim());
    for r in 0..g_pre.rows() {
        grad_b
            .row_mut(0)
            .iter_mut()
            .zip(g_pre.row(r))
            .for_each(|(b, &g)| *b += g);
    }
    let grad_x = g_pre.matmul(&l.weight)?;
    Ok((grad_x, vec![grad_w, grad_b]))
}

fn layer_norm_forward(n: &LayerNorm, x: &Tensor2) -> Result<(Tensor2, Cache)> {
    let d = n.dim();
    if x.cols() != d {
        return Err(Error::Shape(format!("layer norm expects {d} columns, got {}", x.cols())));
    }
    let mut normalized = Tensor2::zeros(x.rows(), d);
    let mut out = Tensor2::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + n.eps).sqrt();
        inv_std.push(is);
        for c in 0..d {
            let xh = (row[c] - mean) * is;
            normalized.set(r, c, xh);
            out.set(r, c, n.gain.get(0, c) * xh + n.bias.get(0, c));
        }
    }
    Ok((out, Cache::LayerNorm { normalized, inv_std }))
}

fn layer_norm_backward(
    n: &LayerNorm,
    normalized: &Tensor2,
    inv_std: &[f64],
    grad_out: &Tensor2,
) -> Result<(Tensor2, Vec<Tensor2>)> {
    if !grad_out.same_shape(normalized) {
        return Err(Error::Shape("layer norm grad_out shape".into()));
    }
    let d = n.dim();
    let mut grad_gain = Tensor2::zeros(1, d);
    let mut grad_bias = Tensor2::zeros(1, d);
    let mut grad_x = Tensor2::zeros(normalized.rows(), d);
    for r in 0..normalized.rows() {
        let xh = normalized.row(r);
        let gy = grad_out.row(r);
        let mut g_xh = vec![0.0; d];
        for c in 0..d {
            grad_gain.data_mut()[c] += gy[c] * xh[c];
            grad_bias.data_mut()[c] += gy[c];
            g_xh[c] = gy[c] * n.gain.get(0, c);
        }
        let mean_g = g_xh.iter().sum::<f64>() / d as f64;
        let mean_gx = g_xh.iter().zip(xh).map(|(g, x)| g * x).sum::<f64>() / d as f64;
        for c in 0..d {
            grad_x.set(r, c, inv_std[r] * (g_xh[c] - mean_g - xh[c] * mean_gx));
        }
    }
    Ok((grad_x, vec![grad_gain, grad_bias]))
}

/// Row-wise softmax, stabilised by the row max.
pub fn softmax_rows(x: &mut Tensor2) {
    for r in 0..x.rows() {
        let row = x.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn attention_forward(a: &SelfAttention, x: &Tensor2) -> Result<(Tensor2, Cache)> {
    if x.cols() != a.dim() {
        return Err(Error::Shape(format!(
            "attention expects {} columns, got {}",
            a.dim(),
            x.cols()
        )));
    }
    let q = x.matmul(&a.wq)?;
    let k = x.matmul(&a.wk)?;
    let v = x.matmul(&a.wv)?;
    let mut weights = q.matmul_nt(&k)?;
    weights.scale(1.0 / (a.dim() as f64).sqrt());
    softmax_rows(&mut weights);
    let y = weights.matmul(&v)?;
    Ok((
        y,
        Cache::SelfAttention {
            input: x.clone(),
            q,
            k,
            v,
            weights,
        },
    ))
}

fn attention_backward(
    a: &SelfAttention,
    input: &Tensor2,
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    weights: &Tensor2,
    grad_out: &Tensor2,
) -> Result<(Tensor2, Vec<Tensor2>)> {
    if !grad_out.same_shape(v) {
        return Err(Error::Shape("attention grad_out shape".into()));
    }
    let g_weights = grad_out.matmul_nt(v)?;
    let g_v = weights.matmul_tn(grad_out)?;
    // softmax Jacobian, then the 1/sqrt(d) scale
    let mut g_scores = Tensor2::zeros(weights.rows(), weights.cols());
    let scale = 1.0 / (a.dim() as f64).sqrt();
    for r in 0..weights.rows() {
        let w = weights.row(r);
        let gw = g_weights.row(r);
        let inner: f64 = w.iter().zip(gw).map(|(a, b)| a * b).sum();
        for c in 0..weights.cols() {
            g_scores.set(r, c, w[c] * (gw[c] - inner) * scale);
        }
    }
    let g_q = g_scores.matmul(k)?;
    let g_k = g_scores.matmul_tn(q)?;
    let grad_wq = input.matmul_tn(&g_q)?;
    let grad_wk = input.matmul_tn(&g_k)?;
    let grad_wv = input.matmul_tn(&g_v)?;
    let mut grad_x = g_q.matmul_nt(&a.wq)?;
    grad_x.add_assign(&g_k.matmul_nt(&a.wk)?);
    grad_x.add_assign(&g_v.matmul_nt(&a.wv)?);
    Ok((grad_x, vec![grad_wq, grad_wk, grad_wv]))
}

fn mean_pool_forward(x: &Tensor2) -> Result<(Tensor2, Cache)> {
    if x.rows() == 0 {
        return Err(Error::Shape("mean-pool over zero rows".into()));
    }
    let mut out = Tensor2::zeros(1, x.cols());
    for r in 0..x.rows() {
        out.row_mut(0)
            .iter_mut()
            .zip(x.row(r))
            .for_each(|(o, &v)| *o += v);
    }
    out.scale(1.0 / x.rows() as f64);
    Ok((out, Cache::MeanPool { rows: x.rows() }))
}
