//! Speaker-embedding network: a small 3x3 conv stack with ReLU and optional
//! 2x2 average pooling, temporal mean+std statistics pooling, and a linear
//! projection. Forward and backward are exact and run in `f64`.
//!
//! Convolutions wrap around on the time axis and zero-pad on the mel axis.
//! Circular time padding keeps the network free of utterance-boundary
//! effects, so tiling an utterance in time leaves its pooled statistics
//! unchanged.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectral::MelFeatures;
use crate::tensorfile::{self, Tensor};

/// Smoothing inside the std pooling: `sqrt(var + eps) - sqrt(eps)`.
pub const STD_EPS: f64 = 1e-6;

/// Variance floor of the input normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Norm below which cosine quantities are undefined.
pub const MIN_NORM: f64 = 1e-12;

const WEIGHTS_KIND: &str = "encoder-weights";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub n_mels: usize,
    /// Output channels of each 3x3 convolution.
    pub conv_channels: Vec<usize>,
    /// Indices of conv layers followed by 2x2 average pooling.
    #[serde(default)]
    pub pool_after: Vec<usize>,
    pub embed_dim: usize,
    pub min_frames: usize,
    /// Normalize each mel channel of the input to zero mean and unit
    /// variance over time before the conv stack.
    #[serde(default)]
    pub input_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 64,
            conv_channels: vec![8, 16, 16],
            pool_after: vec![0, 1],
            embed_dim: 128,
            min_frames: 4,
            input_norm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.conv_channels.is_empty() {
            return bad("at least one conv layer is required".into());
        }
        if self.conv_channels.contains(&0) {
            return bad("conv layers need at least one output channel".into());
        }
        if self.embed_dim < 2 {
            return bad(format!("embed_dim must be >= 2, got {}", self.embed_dim));
        }
        for (i, &p) in self.pool_after.iter().enumerate() {
            if p >= self.conv_channels.len() {
                return bad(format!("pool_after index {p} has no conv layer"));
            }
            if self.pool_after[..i].contains(&p) {
                return bad(format!("pool_after index {p} repeated"));
            }
        }
        if self.pooled_mels() == 0 {
            return bad(format!(
                "{} mel channels vanish after {} poolings",
                self.n_mels,
                self.pool_after.len()
            ));
        }
        let need = 1usize << self.pool_after.len();
        if self.min_frames < need {
            return bad(format!(
                "min_frames {} leaves no time step after {} poolings (need >= {need})",
                self.min_frames,
                self.pool_after.len()
            ));
        }
        Ok(())
    }

    fn pools(&self, layer: usize) -> bool {
        self.pool_after.contains(&layer)
    }

    fn pooled_mels(&self) -> usize {
        self.n_mels >> self.pool_after.len()
    }

    /// Length of the mean+std statistics vector fed to the projection.
    pub fn stats_dim(&self) -> usize {
        2 * self.conv_channels.last().copied().unwrap_or(0) * self.pooled_mels()
    }

    fn in_channels(&self, layer: usize) -> usize {
        if layer == 0 {
            1
        } else {
            self.conv_channels[layer - 1]
        }
    }
}

/// Immutable parameter set for one [`EncoderConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    config: EncoderConfig,
    /// `[out, in, 3, 3]` per layer.
    conv_weights: Vec<Vec<f64>>,
    conv_biases: Vec<Vec<f64>>,
    /// `[embed_dim, stats_dim]`.
    proj_weight: Vec<f64>,
    proj_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-call intermediates needed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    frames: usize,
    n_mels: usize,
    /// Normalized input and `sqrt(var + NORM_EPS)` per mel channel.
    input_norm: Option<(Vec<f64>, Vec<f64>)>,
    layers: Vec<LayerCache>,
    /// Final feature map `[C, T, M]` before statistics pooling.
    top: Vec<f64>,
    top_dims: (usize, usize, usize),
    mean: Vec<f64>,
    /// `sqrt(var + STD_EPS)`.
    root: Vec<f64>,
    stats: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    c_in: usize,
    c_out: usize,
    t: usize,
    m: usize,
    pooled: bool,
}

impl ForwardCache {
    /// Which ReLU units were active (pre-activation > 0), all layers in
    /// order. `forward` is smooth along any path on which this is constant.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.layers
            .iter()
            .flat_map(|l| l.pre.iter().map(|&v| v > 0.0))
            .collect()
    }
}

/// Parameter gradients, laid out like [`WeightStore`].
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub conv_weights: Vec<Vec<f64>>,
    pub conv_biases: Vec<Vec<f64>>,
    pub proj_weight: Vec<f64>,
    pub proj_bias: Vec<f64>,
}

impl WeightStore {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (l, (w, b)) in self.conv_weights.iter().zip(&self.conv_biases).enumerate() {
            let (ci, co) = (self.config.in_channels(l), self.config.conv_channels[l]);
            out.push(Tensor::new(format!("conv{l}.weight"), vec![co, ci, 3, 3], w.clone()));
            out.push(Tensor::new(format!("conv{l}.bias"), vec![co], b.clone()));
        }
        let (e, s) = (self.config.embed_dim, self.config.stats_dim());
        out.push(Tensor::new("proj.weight", vec![e, s], self.proj_weight.clone()));
        out.push(Tensor::new("proj.bias", vec![e], self.proj_bias.clone()));
        out
    }

    pub fn from_tensors(config: EncoderConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let mut by_name: std::collections::HashMap<String, Tensor> =
            tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
        let mut take = |name: String, shape: Vec<usize>| -> Result<Vec<f64>> {
            let t = by_name.remove(&name).ok_or_else(|| Error::BadTensor {
                name: name.clone(),
                reason: "missing from file".into(),
            })?;
            if t.shape != shape {
                return Err(Error::BadTensor {
                    name,
                    reason: format!("shape {:?}, config requires {shape:?}", t.shape),
                });
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadTensor {
                    name,
                    reason: "non-finite value".into(),
                });
            }
            Ok(t.data)
        };
        let mut conv_weights = Vec::new();
        let mut conv_biases = Vec::new();
        for l in 0..config.conv_channels.len() {
            let (ci, co) = (config.in_channels(l), config.conv_channels[l]);
            conv_weights.push(take(format!("conv{l}.weight"), vec![co, ci, 3, 3])?);
            conv_biases.push(take(format!("conv{l}.bias"), vec![co])?);
        }
        let (e, s) = (config.embed_dim, config.stats_dim());
        let proj_weight = take("proj.weight".into(), vec![e, s])?;
        let proj_bias = take("proj.bias".into(), vec![e])?;
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::BadTensor {
                name: extra.clone(),
                reason: "not part of this encoder configuration".into(),
            });
        }
        Ok(Self {
            config,
            conv_weights,
            conv_biases,
            proj_weight,
            proj_bias,
        })
    }

    /// Applies `param -= lr * grad` to every parameter.
    pub fn apply_update(&mut self, grads: &ParamGrads, lr: f64) {
        let step = |p: &mut [f64], g: &[f64]| {
            for (p, g) in p.iter_mut().zip(g) {
                *p -= lr * g;
            }
        };
        for (p, g) in self.conv_weights.iter_mut().zip(&grads.conv_weights) {
            step(p, g);
        }
        for (p, g) in self.conv_biases.iter_mut().zip(&grads.conv_biases) {
            step(p, g);
        }
        step(&mut self.proj_weight, &grads.proj_weight);
        step(&mut self.proj_bias, &grads.proj_bias);
    }

    pub fn conv_weight(&self, layer: usize) -> &[f64] {
        &self.conv_weights[layer]
    }

    pub fn proj_weight(&self) -> &[f64] {
        &self.proj_weight
    }

    /// Copy with every bias set to zero.
    pub fn without_biases(&self) -> Self {
        let mut ws = self.clone();
        ws.conv_biases.iter_mut().for_each(|b| b.fill(0.0));
        ws.proj_bias.fill(0.0);
        ws
    }

    /// Copy with every bias set to `value`.
    pub fn with_constant_biases(&self, value: f64) -> Self {
        let mut ws = self.clone();
        ws.conv_biases.iter_mut().for_each(|b| b.fill(value));
        ws.proj_bias.fill(value);
        ws
    }
}

/// He-scaled uniform initialization; biases start at zero.
///
/// Conv kernels draw from `U(-sqrt(6/fan_in), sqrt(6/fan_in))` (variance
/// `2/fan_in`), the projection from `U(-sqrt(3/fan_in), sqrt(3/fan_in))`.
pub fn init_random(cfg: &EncoderConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |n: usize, bound: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
    let mut conv_weights = Vec::new();
    let mut conv_biases = Vec::new();
    for l in 0..cfg.conv_channels.len() {
        let (ci, co) = (cfg.in_channels(l), cfg.conv_channels[l]);
        let fan_in = (ci * 9) as f64;
        conv_weights.push(uniform(co * ci * 9, (6.0 / fan_in).sqrt()));
        conv_biases.push(vec![0.0; co]);
    }
    let s = cfg.stats_dim();
    let proj_weight = uniform(cfg.embed_dim * s, (3.0 / s as f64).sqrt());
    Ok(WeightStore {
        config: cfg.clone(),
        conv_weights,
        conv_biases,
        proj_weight,
        proj_bias: vec![0.0; cfg.embed_dim],
    })
}

pub fn encode_weights(ws: &WeightStore) -> Result<Vec<u8>> {
    let config = serde_json::to_value(&ws.config).map_err(|e| Error::Header(e.to_string()))?;
    tensorfile::encode(WEIGHTS_KIND, config, &ws.to_tensors())
}

pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    let (header, tensors) = tensorfile::decode(bytes, WEIGHTS_KIND)?;
    let config: EncoderConfig =
        serde_json::from_value(header.config).map_err(|e| Error::Header(format!("config: {e}")))?;
    WeightStore::from_tensors(config, tensors)
}

pub fn save_weights(ws: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    tensorfile::write_file(path.as_ref(), &encode_weights(ws)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    decode_weights(&tensorfile::read_file(path.as_ref())?)
}

/// 3x3 convolution, circular in time, zero-padded in mel.
fn conv_forward(input: &[f64], c_in: usize, t: usize, m: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let c_out = b.len();
    let plane = t * m;
    let mut out = vec![0.0; c_out * plane];
    for o in 0..c_out {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(b[o]);
        for i in 0..c_in {
            let in_i = &input[i * plane..(i + 1) * plane];
            let k = &w[(o * c_in + i) * 9..(o * c_in + i + 1) * 9];
            for tt in 0..t {
                let orow = &mut out_o[tt * m..(tt + 1) * m];
                for dt in 0..3 {
                    let st = (tt + t + dt - 1) % t;
                    let irow = &in_i[st * m..(st + 1) * m];
                    let (k0, k1, k2) = (k[dt * 3], k[dt * 3 + 1], k[dt * 3 + 2]);
                    for mm in 1..m {
                        orow[mm] += k0 * irow[mm - 1];
                    }
                    for mm in 0..m {
                        orow[mm] += k1 * irow[mm];
                    }
                    for mm in 0..m - 1 {
                        orow[mm] += k2 * irow[mm + 1];
                    }
                }
            }
        }
    }
    out
}

/// Gradient of [`conv_forward`] with respect to its input.
fn conv_backward_input(grad_out: &[f64], c_in: usize, t: usize, m: usize, w: &[f64], c_out: usize) -> Vec<f64> {
    let plane = t * m;
    let mut gin = vec![0.0; c_in * plane];
    for o in 0..c_out {
        let go = &grad_out[o * plane..(o + 1) * plane];
        for i in 0..c_in {
            let gi = &mut gin[i * plane..(i + 1) * plane];
            let k = &w[(o * c_in + i) * 9..(o * c_in + i + 1) * 9];
            for tt in 0..t {
                let grow = &go[tt * m..(tt + 1) * m];
                for dt in 0..3 {
                    let st = (tt + t + dt - 1) % t;
                    let irow = &mut gi[st * m..(st + 1) * m];
                    let (k0, k1, k2) = (k[dt * 3], k[dt * 3 + 1], k[dt * 3 + 2]);
                    for mm in 1..m {
                        irow[mm - 1] += k0 * grow[mm];
                    }
                    for mm in 0..m {
                        irow[mm] += k1 * grow[mm];
                    }
                    for mm in 0..m - 1 {
                        irow[mm + 1] += k2 * grow[mm];
                    }
                }
            }
        }
    }
    gin
}

/// Gradient of [`conv_forward`] with respect to kernel and bias.
fn conv_backward_params(
    grad_out: &[f64],
    input: &[f64],
    c_in: usize,
    t: usize,
    m: usize,
    c_out: usize,
) -> (Vec<f64>, Vec<f64>) {
    let plane = t * m;
    let mut gw = vec![0.0; c_out * c_in * 9];
    let mut gb = vec![0.0; c_out];
    for o in 0..c_out {
        let go = &grad_out[o * plane..(o + 1) * plane];
        gb[o] = go.iter().sum();
        for i in 0..c_in {
            let in_i = &input[i * plane..(i + 1) * plane];
            let k = &mut gw[(o * c_in + i) * 9..(o * c_in + i + 1) * 9];
            for tt in 0..t {
                let grow = &go[tt * m..(tt + 1) * m];
                for dt in 0..3 {
                    let st = (tt + t + dt - 1) % t;
                    let irow = &in_i[st * m..(st + 1) * m];
                    k[dt * 3] += (1..m).map(|mm| grow[mm] * irow[mm - 1]).sum::<f64>();
                    k[dt * 3 + 1] += (0..m).map(|mm| grow[mm] * irow[mm]).sum::<f64>();
                    k[dt * 3 + 2] += (0..m - 1).map(|mm| grow[mm] * irow[mm + 1]).sum::<f64>();
                }
            }
        }
    }
    (gw, gb)
}

fn avg_pool(input: &[f64], c: usize, t: usize, m: usize) -> Vec<f64> {
    let (t2, m2) = (t / 2, m / 2);
    let mut out = vec![0.0; c * t2 * m2];
    for ch in 0..c {
        let src = &input[ch * t * m..(ch + 1) * t * m];
        for a in 0..t2 {
            for b in 0..m2 {
                let s = src[2 * a * m + 2 * b]
                    + src[2 * a * m + 2 * b + 1]
                    + src[(2 * a + 1) * m + 2 * b]
                    + src[(2 * a + 1) * m + 2 * b + 1];
                out[(ch * t2 + a) * m2 + b] = 0.25 * s;
            }
        }
    }
    out
}

fn avg_pool_backward(grad: &[f64], c: usize, t: usize, m: usize) -> Vec<f64> {
    let (t2, m2) = (t / 2, m / 2);
    let mut out = vec![0.0; c * t * m];
    for ch in 0..c {
        let dst = &mut out[ch * t * m..(ch + 1) * t * m];
        for a in 0..t2 {
            for b in 0..m2 {
                let g = 0.25 * grad[(ch * t2 + a) * m2 + b];
                dst[2 * a * m + 2 * b] = g;
                dst[2 * a * m + 2 * b + 1] = g;
                dst[(2 * a + 1) * m + 2 * b] = g;
                dst[(2 * a + 1) * m + 2 * b + 1] = g;
            }
        }
    }
    out
}

pub fn forward(feat: &MelFeatures, ws: &WeightStore) -> Result<(Embedding, ForwardCache)> {
    let cfg = &ws.config;
    let (frames, n_mels) = feat.values.shape();
    if n_mels != cfg.n_mels {
        return Err(Error::shape(
            format!("{} mel channels", cfg.n_mels),
            format!("{n_mels} mel channels"),
        ));
    }
    if frames < cfg.min_frames {
        return Err(Error::TooFewFrames {
            frames,
            min: cfg.min_frames,
        });
    }

    let mut x = feat.values.as_slice().to_vec();
    let input_norm = if cfg.input_norm {
        let roots = normalize_columns(&mut x, frames, n_mels);
        Some((x.clone(), roots))
    } else {
        None
    };
    let (mut t, mut m) = (frames, n_mels);
    let mut layers = Vec::with_capacity(cfg.conv_channels.len());
    for (l, &c_out) in cfg.conv_channels.iter().enumerate() {
        let c_in = cfg.in_channels(l);
        let pre = conv_forward(&x, c_in, t, m, &ws.conv_weights[l], &ws.conv_biases[l]);
        let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let pooled = cfg.pools(l);
        let input = std::mem::take(&mut x);
        x = if pooled { avg_pool(&act, c_out, t, m) } else { act };
        layers.push(LayerCache {
            input,
            pre,
            c_in,
            c_out,
            t,
            m,
            pooled,
        });
        if pooled {
            t /= 2;
            m /= 2;
        }
    }

    let c = *cfg.conv_channels.last().unwrap();
    let cm = c * m;
    let mut mean = vec![0.0; cm];
    let mut root = vec![0.0; cm];
    for ch in 0..c {
        let plane = &x[ch * t * m..(ch + 1) * t * m];
        for mm in 0..m {
            let mu = (0..t).map(|tt| plane[tt * m + mm]).sum::<f64>() / t as f64;
            let var = (0..t).map(|tt| (plane[tt * m + mm] - mu).powi(2)).sum::<f64>() / t as f64;
            mean[ch * m + mm] = mu;
            root[ch * m + mm] = (var + STD_EPS).sqrt();
        }
    }
    let eps_root = STD_EPS.sqrt();
    let mut stats = mean.clone();
    stats.extend(root.iter().map(|r| r - eps_root));

    let s = stats.len();
    let embedding: Vec<f64> = (0..cfg.embed_dim)
        .map(|j| {
            let row = &ws.proj_weight[j * s..(j + 1) * s];
            ws.proj_bias[j] + row.iter().zip(&stats).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();

    let cache = ForwardCache {
        frames,
        n_mels,
        input_norm,
        layers,
        top: x,
        top_dims: (c, t, m),
        mean,
        root,
        stats,
    };
    Ok((Embedding(embedding), cache))
}

/// In-place `(x - mean) / sqrt(var + NORM_EPS)` down each column of a
/// `[t, m]` matrix; returns the per-column roots.
fn normalize_columns(x: &mut [f64], t: usize, m: usize) -> Vec<f64> {
    let tf = t as f64;
    (0..m)
        .map(|mm| {
            let mu = (0..t).map(|tt| x[tt * m + mm]).sum::<f64>() / tf;
            let var = (0..t).map(|tt| (x[tt * m + mm] - mu).powi(2)).sum::<f64>() / tf;
            let root = (var + NORM_EPS).sqrt();
            for tt in 0..t {
                x[tt * m + mm] = (x[tt * m + mm] - mu) / root;
            }
            root
        })
        .collect()
}

/// `dx = (dy - mean(dy) - y * mean(dy * y)) / root`, column by column.
fn normalize_columns_backward(g: &mut [f64], y: &[f64], roots: &[f64], t: usize, m: usize) {
    let tf = t as f64;
    for (mm, &root) in roots.iter().enumerate() {
        let mean_g = (0..t).map(|tt| g[tt * m + mm]).sum::<f64>() / tf;
        let mean_gy = (0..t).map(|tt| g[tt * m + mm] * y[tt * m + mm]).sum::<f64>() / tf;
        for tt in 0..t {
            let p = tt * m + mm;
            g[p] = (g[p] - mean_g - y[p] * mean_gy) / root;
        }
    }
}

/// Runs the forward pass and discards the cache.
pub fn embed(feat: &MelFeatures, ws: &WeightStore) -> Result<Embedding> {
    forward(feat, ws).map(|(e, _)| e)
}

fn check_grad(cache: &ForwardCache, ws: &WeightStore, grad: &[f64]) -> Result<()> {
    if grad.len() != ws.config.embed_dim {
        return Err(Error::shape(ws.config.embed_dim, grad.len()));
    }
    let (c, _, m) = cache.top_dims;
    if cache.stats.len() != ws.config.stats_dim() || c * m * 2 != cache.stats.len() {
        return Err(Error::shape(
            format!("cache for stats_dim {}", ws.config.stats_dim()),
            cache.stats.len(),
        ));
    }
    Ok(())
}

/// Back-propagates through statistics pooling and the conv stack. Returns
/// the gradient with respect to the layer-0 input and, if `params` is set,
/// accumulates parameter gradients into it.
fn backprop(
    cache: &ForwardCache,
    ws: &WeightStore,
    grad_embedding: &[f64],
    mut params: Option<&mut ParamGrads>,
) -> Matrix {
    let s = cache.stats.len();
    let mut gstats = vec![0.0; s];
    for (j, &g) in grad_embedding.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &ws.proj_weight[j * s..(j + 1) * s];
        for (gs, &w) in gstats.iter_mut().zip(row) {
            *gs += g * w;
        }
    }
    if let Some(p) = params.as_deref_mut() {
        for (j, &g) in grad_embedding.iter().enumerate() {
            p.proj_bias[j] += g;
            let prow = &mut p.proj_weight[j * s..(j + 1) * s];
            for (pw, &st) in prow.iter_mut().zip(&cache.stats) {
                *pw += g * st;
            }
        }
    }

    let (c, t, m) = cache.top_dims;
    let cm = c * m;
    let (gmean, gstd) = gstats.split_at(cm);
    let mut g = vec![0.0; c * t * m];
    let tf = t as f64;
    for ch in 0..c {
        for mm in 0..m {
            let idx = ch * m + mm;
            let mu = cache.mean[idx];
            let a = gmean[idx] / tf;
            let b = gstd[idx] / (tf * cache.root[idx]);
            for tt in 0..t {
                let p = (ch * t + tt) * m + mm;
                g[p] = a + b * (cache.top[p] - mu);
            }
        }
    }

    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let mut gact = if layer.pooled {
            avg_pool_backward(&g, layer.c_out, layer.t, layer.m)
        } else {
            g
        };
        for (ga, &pre) in gact.iter_mut().zip(&layer.pre) {
            if pre <= 0.0 {
                *ga = 0.0;
            }
        }
        if let Some(p) = params.as_deref_mut() {
            let (gw, gb) = conv_backward_params(&gact, &layer.input, layer.c_in, layer.t, layer.m, layer.c_out);
            p.conv_weights[l].iter_mut().zip(&gw).for_each(|(a, b)| *a += b);
            p.conv_biases[l].iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
        }
        g = conv_backward_input(&gact, layer.c_in, layer.t, layer.m, &ws.conv_weights[l], layer.c_out);
    }
    if let Some((y, roots)) = &cache.input_norm {
        normalize_columns_backward(&mut g, y, roots, cache.frames, cache.n_mels);
    }
    Matrix::from_vec(cache.frames, cache.n_mels, g)
}

/// Exact gradient of `grad_embedding . forward(feat)` with respect to the
/// log-mel input.
pub fn backward(cache: &ForwardCache, ws: &WeightStore, grad_embedding: &[f64]) -> Result<Matrix> {
    check_grad(cache, ws, grad_embedding)?;
    Ok(backprop(cache, ws, grad_embedding, None))
}

/// Like [`backward`], additionally accumulating parameter gradients.
pub fn backward_with_params(
    cache: &ForwardCache,
    ws: &WeightStore,
    grad_embedding: &[f64],
    params: &mut ParamGrads,
) -> Result<Matrix> {
    check_grad(cache, ws, grad_embedding)?;
    Ok(backprop(cache, ws, grad_embedding, Some(params)))
}

impl ParamGrads {
    pub fn zeros_like(ws: &WeightStore) -> Self {
        Self {
            conv_weights: ws.conv_weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            conv_biases: ws.conv_biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            proj_weight: vec![0.0; ws.proj_weight.len()],
            proj_bias: vec![0.0; ws.proj_bias.len()],
        }
    }

    pub fn add(&mut self, other: &ParamGrads) {
        let acc = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        for (a, b) in self.conv_weights.iter_mut().zip(&other.conv_weights) {
            acc(a, b);
        }
        for (a, b) in self.conv_biases.iter_mut().zip(&other.conv_biases) {
            acc(a, b);
        }
        acc(&mut self.proj_weight, &other.proj_weight);
        acc(&mut self.proj_bias, &other.proj_bias);
    }

    pub fn scale(&mut self, k: f64) {
        self.conv_weights.iter_mut().flatten().for_each(|v| *v *= k);
        self.conv_biases.iter_mut().flatten().for_each(|v| *v *= k);
        self.proj_weight.iter_mut().for_each(|v| *v *= k);
        self.proj_bias.iter_mut().for_each(|v| *v *= k);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared norms of both vectors, checked against [`MIN_NORM`].
fn squared_norms(e: &Embedding, e_tilde: &Embedding) -> Result<(f64, f64)> {
    if e.len() != e_tilde.len() {
        return Err(Error::shape(e.len(), e_tilde.len()));
    }
    let (ee, tt) = (dot(&e.0, &e.0), dot(&e_tilde.0, &e_tilde.0));
    let smallest = ee.min(tt).sqrt();
    if !(smallest > MIN_NORM) {
        return Err(Error::NearZeroNorm(smallest));
    }
    Ok((ee, tt))
}

/// Cosine similarity in `[-1, 1]`. Identical inputs give exactly 1.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    let (aa, bb) = squared_norms(a, b)?;
    // sqrt(aa * bb) rather than |a| |b| so that a == b divides exactly
    Ok((dot(&a.0, &b.0) / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

/// Negative cosine similarity, `-(e . e~) / (|e| |e~|)`, in `[-1, 1]`.
pub fn cosine_loss(e: &Embedding, e_tilde: &Embedding) -> Result<f64> {
    cosine_similarity(e, e_tilde).map(|c| -c)
}

/// Gradient of [`cosine_loss`] with respect to `e_tilde`; `e` is held fixed.
pub fn cosine_loss_grad(e: &Embedding, e_tilde: &Embedding) -> Result<Vec<f64>> {
    let (ee, tt) = squared_norms(e, e_tilde)?;
    let (ne, nt) = (ee.sqrt(), tt.sqrt());
    let cos = dot(&e.0, &e_tilde.0) / (ee * tt).sqrt();
    let ratio = ne / nt;
    let denom = ne * nt;
    // factored so that e_tilde == e yields an exactly zero gradient
    Ok(e.0
        .iter()
        .zip(&e_tilde.0)
        .map(|(&a, &b)| -(a - cos * ratio * b) / denom)
        .collect())
}
