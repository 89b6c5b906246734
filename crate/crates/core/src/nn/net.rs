//! The shared-weight embedding branch: conv(3×3) → ReLU → maxpool(2×2) →
//! conv(3×3) → ReLU → maxpool(2×2) → dense, with hand-written backprop.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::seed;
use crate::volume::Volume;

pub const KERNEL: usize = 3;

/// Layer sizes. Kernels are 3×3 with stride 1 and padding 1; pools are 2×2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetSpec {
    pub input_h: usize,
    pub input_w: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub embed_dim: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self::with_input(64, 64)
    }
}

impl NetSpec {
    pub fn with_input(input_h: usize, input_w: usize) -> Self {
        Self {
            input_h,
            input_w,
            conv1_filters: 8,
            conv2_filters: 16,
            embed_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_h == 0 || self.input_w == 0 || !self.input_h.is_multiple_of(4) || !self.input_w.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "input size {}x{} must be positive and divisible by 4",
                self.input_h, self.input_w
            )));
        }
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn dense_inputs(&self) -> usize {
        self.conv2_filters * (self.input_h / 4) * (self.input_w / 4)
    }

    fn layer_shapes(&self) -> [Vec<usize>; 6] {
        [
            vec![self.conv1_filters, 1, KERNEL, KERNEL],
            vec![self.conv1_filters],
            vec![self.conv2_filters, self.conv1_filters, KERNEL, KERNEL],
            vec![self.conv2_filters],
            vec![self.embed_dim, self.dense_inputs()],
            vec![self.embed_dim],
        ]
    }
}

pub const LAYER_NAMES: [&str; 6] = ["conv1.w", "conv1.b", "conv2.w", "conv2.b", "dense.w", "dense.b"];

/// Weights and biases in fixed layer order. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub dense_w: Tensor,
    pub dense_b: Tensor,
}

impl Params {
    pub fn zeros(spec: &NetSpec) -> Self {
        let [a, b, c, d, e, f] = spec.layer_shapes().map(Tensor::zeros);
        Self {
            conv1_w: a,
            conv1_b: b,
            conv2_w: c,
            conv2_b: d,
            dense_w: e,
            dense_b: f,
        }
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense_w,
            &self.dense_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense_w,
            &mut self.dense_b,
        ]
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_congruent(&self, other: &Params) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for x in t.data_mut() {
                *x *= factor;
            }
        }
    }

    /// Element `index` in the concatenation of all layers in [`LAYER_NAMES`] order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range")
    }
}

/// Gradients with the same layout as [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Params);

impl ParamGrads {
    pub fn zeros(spec: &NetSpec) -> Self {
        Self(Params::zeros(spec))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        self.0.add_assign(&other.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    pub spec: NetSpec,
    pub params: Params,
    pub init_seed: u64,
}

/// Activations kept by [`EmbeddingNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub spec: NetSpec,
    pub input: Vec<f64>,
    /// conv1 output after ReLU, `F1×H×W`.
    pub conv1: Vec<f64>,
    pub pool1: Vec<f64>,
    pool1_arg: Vec<u32>,
    /// conv2 output after ReLU, `F2×H/2×W/2`.
    pub conv2: Vec<f64>,
    /// Flattened input of the dense layer.
    pub pool2: Vec<f64>,
    pool2_arg: Vec<u32>,
}

/// How a volume's slice embeddings reduce to one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    MeanSlices,
    MidSlice,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::MeanSlices => "mean_slices",
            Pooling::MidSlice => "mid_slice",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_slices" => Ok(Pooling::MeanSlices),
            "mid_slice" => Ok(Pooling::MidSlice),
            other => Err(Error::InvalidArgument(format!("unknown pooling '{other}'"))),
        }
    }
}

fn conv3x3_forward(input: &[f64], channels: usize, h: usize, w: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let filters = bias.len();
    let plane = h * w;
    let mut out = vec![0.0; filters * plane];
    for (o, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias[o]);
        for c in 0..channels {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                let (y_lo, y_hi) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..KERNEL {
                    let wv = weight[((o * channels + c) * KERNEL + ky) * KERNEL + kx];
                    let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    for y in y_lo..y_hi {
                        let src_row = (y + ky - 1) * w;
                        let dst = &mut out_plane[y * w + x_lo..y * w + x_hi];
                        let src = &in_plane[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    channels: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    d_out: &[f64],
    d_weight: &mut [f64],
    d_bias: &mut [f64],
    mut d_input: Option<&mut [f64]>,
) {
    let plane = h * w;
    for (o, g_plane) in d_out.chunks_exact(plane).enumerate() {
        d_bias[o] += g_plane.iter().sum::<f64>();
        for c in 0..channels {
            let in_plane = &input[c * plane..(c + 1) * plane];
            for ky in 0..KERNEL {
                let (y_lo, y_hi) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
                for kx in 0..KERNEL {
                    let wi = ((o * channels + c) * KERNEL + ky) * KERNEL + kx;
                    let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let src_row = (y + ky - 1) * w;
                        let g = &g_plane[y * w + x_lo..y * w + x_hi];
                        let src = &in_plane[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d_weight[wi] += acc;
                    if let Some(d_in) = d_input.as_deref_mut() {
                        let wv = weight[wi];
                        let d_in_plane = &mut d_in[c * plane..(c + 1) * plane];
                        for y in y_lo..y_hi {
                            let src_row = (y + ky - 1) * w;
                            let g = &g_plane[y * w + x_lo..y * w + x_hi];
                            let dst = &mut d_in_plane[src_row + x_lo + kx - 1..src_row + x_hi + kx - 1];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2×2 max pool. Returns pooled values and the flat input index of each max
/// (first maximum wins on ties).
fn maxpool2(input: &[f64], channels: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let base = c * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn unpool(grad: &[f64], arg: &[u32], input_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; input_len];
    for (g, &i) in grad.iter().zip(arg) {
        out[i as usize] += g;
    }
    out
}

fn relu_backward(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

impl EmbeddingNet {
    /// He-normal weights (variance 2/fan_in) and zero biases.
    pub fn init(spec: NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut params = Params::zeros(&spec);
        let fan_ins = [KERNEL * KERNEL, spec.conv1_filters * KERNEL * KERNEL, spec.dense_inputs()];
        let weights = [&mut params.conv1_w, &mut params.conv2_w, &mut params.dense_w];
        for (tensor, fan_in) in weights.into_iter().zip(fan_ins) {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for w in tensor.data_mut() {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            spec,
            params,
            init_seed: seed,
        })
    }

    /// Embeds one `H×W` slice.
    pub fn forward(&self, slice: &Tensor) -> Result<(Tensor, ForwardCache)> {
        if slice.shape() != [self.spec.input_h, self.spec.input_w] {
            return Err(Error::dims(
                format!("[{}, {}]", self.spec.input_h, self.spec.input_w),
                format!("{:?}", slice.shape()),
            ));
        }
        Ok(self.forward_slice(slice.data()))
    }

    pub(crate) fn forward_slice(&self, input: &[f64]) -> (Tensor, ForwardCache) {
        let s = &self.spec;
        let p = &self.params;
        let (h, w) = (s.input_h, s.input_w);

        let mut conv1 = conv3x3_forward(input, 1, h, w, p.conv1_w.data(), p.conv1_b.data());
        relu_in_place(&mut conv1);
        let (pool1, pool1_arg) = maxpool2(&conv1, s.conv1_filters, h, w);

        let (h2, w2) = (h / 2, w / 2);
        let mut conv2 = conv3x3_forward(&pool1, s.conv1_filters, h2, w2, p.conv2_w.data(), p.conv2_b.data());
        relu_in_place(&mut conv2);
        let (pool2, pool2_arg) = maxpool2(&conv2, s.conv2_filters, h2, w2);

        let n_in = pool2.len();
        let dense_w = p.dense_w.data();
        let embedding: Vec<f64> = p
            .dense_b
            .data()
            .iter()
            .enumerate()
            .map(|(d, b)| {
                b + dense_w[d * n_in..(d + 1) * n_in]
                    .iter()
                    .zip(&pool2)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
            })
            .collect();

        let cache = ForwardCache {
            spec: *s,
            input: input.to_vec(),
            conv1,
            pool1,
            pool1_arg,
            conv2,
            pool2,
            pool2_arg,
        };
        (Tensor::vector(embedding), cache)
    }

    /// Gradients of `⟨d_embedding, embedding⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_embedding: &Tensor) -> Result<ParamGrads> {
        let mut grads = ParamGrads::zeros(&self.spec);
        self.backward_into(cache, d_embedding, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but accumulates into `grads`.
    pub fn backward_into(&self, cache: &ForwardCache, d_embedding: &Tensor, grads: &mut ParamGrads) -> Result<()> {
        let s = &self.spec;
        if cache.spec != *s {
            return Err(Error::dims(format!("cache for {s:?}"), format!("cache for {:?}", cache.spec)));
        }
        if d_embedding.len() != s.embed_dim {
            return Err(Error::dims(s.embed_dim, d_embedding.len()));
        }
        if !self.params.is_congruent(&grads.0) {
            return Err(Error::dims("gradient buffer congruent with the net", "a different layout"));
        }
        let p = &self.params;
        let g = &mut grads.0;
        let dy = d_embedding.data();
        let (h, w) = (s.input_h, s.input_w);
        let (h2, w2) = (h / 2, w / 2);

        // dense
        let n_in = cache.pool2.len();
        let dense_w = p.dense_w.data();
        let mut d_pool2 = vec![0.0; n_in];
        {
            let gw = g.dense_w.data_mut();
            for (d, &gy) in dy.iter().enumerate() {
                if gy == 0.0 {
                    continue;
                }
                let row = &mut gw[d * n_in..(d + 1) * n_in];
                for (gw, x) in row.iter_mut().zip(&cache.pool2) {
                    *gw += gy * x;
                }
                for (dx, wv) in d_pool2.iter_mut().zip(&dense_w[d * n_in..(d + 1) * n_in]) {
                    *dx += wv * gy;
                }
            }
            for (gb, gy) in g.dense_b.data_mut().iter_mut().zip(dy) {
                *gb += gy;
            }
        }

        // pool2 + relu2 + conv2
        let mut d_conv2 = unpool(&d_pool2, &cache.pool2_arg, cache.conv2.len());
        relu_backward(&mut d_conv2, &cache.conv2);
        let mut d_pool1 = vec![0.0; cache.pool1.len()];
        conv3x3_backward(
            &cache.pool1,
            s.conv1_filters,
            h2,
            w2,
            p.conv2_w.data(),
            &d_conv2,
            g.conv2_w.data_mut(),
            g.conv2_b.data_mut(),
            Some(&mut d_pool1),
        );

        // pool1 + relu1 + conv1
        let mut d_conv1 = unpool(&d_pool1, &cache.pool1_arg, cache.conv1.len());
        relu_backward(&mut d_conv1, &cache.conv1);
        conv3x3_backward(
            &cache.input,
            1,
            h,
            w,
            p.conv1_w.data(),
            &d_conv1,
            g.conv1_w.data_mut(),
            g.conv1_b.data_mut(),
            None,
        );
        Ok(())
    }

    fn check_volume(&self, v: &Volume) -> Result<()> {
        if v.height() != self.spec.input_h || v.width() != self.spec.input_w {
            return Err(Error::dims(
                format!("{}x{} slices", self.spec.input_h, self.spec.input_w),
                format!("{}x{} slices in '{}'", v.height(), v.width(), v.id()),
            ));
        }
        Ok(())
    }

    /// Reduces a preprocessed volume to one embedding.
    pub fn embed_volume(&self, v: &Volume, pooling: Pooling) -> Result<Tensor> {
        self.check_volume(v)?;
        Ok(match pooling {
            Pooling::MidSlice => self.forward_slice(v.slice(v.depth() / 2)).0,
            Pooling::MeanSlices => {
                let mut acc = vec![0.0; self.spec.embed_dim];
                for slice in v.slices() {
                    let (e, _) = self.forward_slice(slice);
                    for (a, x) in acc.iter_mut().zip(e.data()) {
                        *a += x;
                    }
                }
                let n = v.depth() as f64;
                Tensor::vector(acc.into_iter().map(|a| a / n).collect())
            }
        })
    }

    /// Embeds a volume and keeps what is needed to backpropagate through the pooling.
    pub fn embed_volume_for_training(&self, v: &Volume, pooling: Pooling) -> Result<VolumeTrace> {
        self.check_volume(v)?;
        let (embedding, caches, weight) = match pooling {
            Pooling::MidSlice => {
                let (e, c) = self.forward_slice(v.slice(v.depth() / 2));
                (e, vec![c], 1.0)
            }
            Pooling::MeanSlices => {
                let mut acc = vec![0.0; self.spec.embed_dim];
                let mut caches = Vec::with_capacity(v.depth());
                for slice in v.slices() {
                    let (e, c) = self.forward_slice(slice);
                    for (a, x) in acc.iter_mut().zip(e.data()) {
                        *a += x;
                    }
                    caches.push(c);
                }
                let n = v.depth() as f64;
                (Tensor::vector(acc.into_iter().map(|a| a / n).collect()), caches, 1.0 / n)
            }
        };
        Ok(VolumeTrace {
            embedding,
            caches,
            slice_weight: weight,
        })
    }

    /// Backpropagates a volume-embedding gradient through every contributing slice.
    pub fn backward_volume(&self, trace: &VolumeTrace, d_embedding: &Tensor) -> Result<ParamGrads> {
        let scaled = Tensor::vector(d_embedding.data().iter().map(|g| g * trace.slice_weight).collect());
        let mut grads = ParamGrads::zeros(&self.spec);
        for cache in &trace.caches {
            self.backward_into(cache, &scaled, &mut grads)?;
        }
        Ok(grads)
    }
}

/// A volume embedding together with its per-slice caches.
#[derive(Debug, Clone)]
pub struct VolumeTrace {
    pub embedding: Tensor,
    caches: Vec<ForwardCache>,
    slice_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !self.momentum.is_finite() {
            return Err(Error::InvalidArgument("momentum must be finite".into()));
        }
        Ok(())
    }
}

/// SGD with optional heavy-ball momentum: `v ← μv + g; w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Option<Params>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, velocity: None })
    }

    pub fn step(&mut self, net: &mut EmbeddingNet, grads: &ParamGrads) -> Result<()> {
        if !net.params.is_congruent(&grads.0) {
            return Err(Error::dims("gradients congruent with the net", "a different layout"));
        }
        if !grads.0.is_finite() {
            return Err(Error::NonFinite("gradient rejected by SGD step".into()));
        }
        let lr = self.cfg.learning_rate;
        if self.cfg.momentum == 0.0 {
            for (w, g) in net.params.tensors_mut().into_iter().zip(grads.0.tensors()) {
                for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= lr * gv;
                }
            }
            return Ok(());
        }
        let velocity = self.velocity.get_or_insert_with(|| Params::zeros(&net.spec));
        let mu = self.cfg.momentum;
        for ((w, v), g) in net
            .params
            .tensors_mut()
            .into_iter()
            .zip(velocity.tensors_mut())
            .zip(grads.0.tensors())
        {
            for ((wv, vv), gv) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv + gv;
                *wv -= lr * *vv;
            }
        }
        Ok(())
    }
}

/// One stateless SGD update (fresh velocity).
pub fn sgd_step(net: &mut EmbeddingNet, grads: &ParamGrads, cfg: SgdConfig) -> Result<()> {
    Sgd::new(cfg)?.step(net, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_slice(spec: &NetSpec, seed: u64) -> Tensor {
        let mut rng = seed::rng(seed);
        let data = (0..spec.input_h * spec.input_w).map(|_| rng.gen::<f64>()).collect();
        Tensor::new(vec![spec.input_h, spec.input_w], data).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetSpec::with_input(16, 16);
        let a = EmbeddingNet::init(spec, 3).unwrap();
        let b = EmbeddingNet::init(spec, 3).unwrap();
        assert_eq!(a, b);
        for t in [&a.params.conv1_b, &a.params.conv2_b, &a.params.dense_b] {
            assert!(t.data().iter().all(|&x| x == 0.0));
        }
        assert_ne!(a.params, EmbeddingNet::init(spec, 4).unwrap().params);
    }

    #[test]
    fn he_init_variance() {
        let net = EmbeddingNet::init(NetSpec::default(), 21).unwrap();
        // conv1 (fan_in 9) and conv2 (fan_in 72) normalised by their target variance.
        let mut normalised = Vec::new();
        normalised.extend(net.params.conv1_w.data().iter().map(|w| w / (2.0f64 / 9.0).sqrt()));
        normalised.extend(net.params.conv2_w.data().iter().map(|w| w / (2.0f64 / 72.0).sqrt()));
        assert!(normalised.len() >= 1000);
        let n = normalised.len() as f64;
        let var = normalised.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.2, "normalised variance {var}");

        let dense = net.params.dense_w.data();
        let target = 2.0 / net.spec.dense_inputs() as f64;
        let var = dense.iter().map(|x| x * x).sum::<f64>() / dense.len() as f64;
        assert!((var / target - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_params_or_zero_input_give_zero_embedding() {
        let spec = NetSpec::with_input(8, 8);
        let mut net = EmbeddingNet::init(spec, 1).unwrap();
        let zero_input = Tensor::zeros(vec![8, 8]);
        let (e, _) = net.forward(&zero_input).unwrap();
        assert!(e.data().iter().all(|&x| x == 0.0));

        net.params = Params::zeros(&spec);
        let (e, _) = net.forward(&random_slice(&spec, 2)).unwrap();
        assert!(e.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_shape() {
        let net = EmbeddingNet::init(NetSpec::with_input(8, 8), 1).unwrap();
        assert!(net.forward(&Tensor::zeros(vec![8, 12])).is_err());
        assert!(NetSpec::with_input(10, 8).validate().is_err());
    }

    #[test]
    fn cached_activations_are_non_negative() {
        let spec = NetSpec::with_input(16, 16);
        let net = EmbeddingNet::init(spec, 5).unwrap();
        let (_, cache) = net.forward(&random_slice(&spec, 6)).unwrap();
        for buf in [&cache.conv1, &cache.pool1, &cache.conv2, &cache.pool2] {
            assert!(buf.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn backward_identities() {
        let spec = NetSpec::with_input(8, 8);
        let net = EmbeddingNet::init(spec, 7).unwrap();
        let (_, cache) = net.forward(&random_slice(&spec, 8)).unwrap();

        let zero = net.backward(&cache, &Tensor::zeros(vec![spec.embed_dim])).unwrap();
        assert!(zero.0.tensors().iter().all(|t| t.data().iter().all(|&x| x == 0.0)));

        let dy = Tensor::vector((0..spec.embed_dim).map(|i| i as f64 - 3.5).collect());
        let g = net.backward(&cache, &dy).unwrap();
        assert_eq!(g.0.dense_b.data(), dy.data());

        let other = EmbeddingNet::init(NetSpec::with_input(16, 16), 7).unwrap();
        assert!(other.backward(&cache, &dy).is_err());
    }

    #[test]
    fn sgd_updates() {
        let spec = NetSpec::with_input(8, 8);
        let mut net = EmbeddingNet::init(spec, 1).unwrap();
        net.params.dense_b.data_mut()[0] = 1.0;
        let mut g = ParamGrads::zeros(&spec);
        g.0.dense_b.data_mut()[0] = 0.5;
        sgd_step(&mut net, &g, SgdConfig { learning_rate: 0.1, momentum: 0.0 }).unwrap();
        assert_eq!(net.params.dense_b.data()[0], 0.95);

        let before = net.clone();
        sgd_step(&mut net, &ParamGrads::zeros(&spec), SgdConfig::default()).unwrap();
        assert_eq!(before, net);

        let mut bad = ParamGrads::zeros(&spec);
        bad.0.conv1_w.data_mut()[3] = f64::NAN;
        assert!(matches!(sgd_step(&mut net, &bad, SgdConfig::default()), Err(Error::NonFinite(_))));
        assert_eq!(before, net);
        assert!(sgd_step(&mut net, &g, SgdConfig { learning_rate: 0.0, momentum: 0.0 }).is_err());
    }

    #[test]
    fn sgd_two_small_steps_equal_one_big_step() {
        let spec = NetSpec::with_input(8, 8);
        let base = EmbeddingNet::init(spec, 2).unwrap();
        let mut g = ParamGrads::zeros(&spec);
        for (i, t) in g.0.tensors_mut().into_iter().enumerate() {
            t.fill(0.25 * (i as f64 + 1.0));
        }
        let mut twice = base.clone();
        let small = SgdConfig { learning_rate: 0.5, momentum: 0.0 };
        sgd_step(&mut twice, &g, small).unwrap();
        sgd_step(&mut twice, &g, small).unwrap();
        let mut once = base.clone();
        sgd_step(&mut once, &g, SgdConfig { learning_rate: 1.0, momentum: 0.0 }).unwrap();
        for (a, b) in twice.params.tensors().iter().zip(once.params.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let spec = NetSpec::with_input(8, 8);
        let mut net = EmbeddingNet::init(spec, 2).unwrap();
        net.params.dense_b.data_mut()[0] = 0.0;
        let mut g = ParamGrads::zeros(&spec);
        g.0.dense_b.data_mut()[0] = 1.0;
        let mut opt = Sgd::new(SgdConfig { learning_rate: 0.1, momentum: 0.5 }).unwrap();
        opt.step(&mut net, &g).unwrap();
        opt.step(&mut net, &g).unwrap();
        // v1 = 1, v2 = 1.5 → w = -0.1 - 0.15
        assert!((net.params.dense_b.data()[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn volume_pooling() {
        let spec = NetSpec::with_input(8, 8);
        let net = EmbeddingNet::init(spec, 9).unwrap();
        let slice = random_slice(&spec, 10);
        let (single, _) = net.forward(&slice).unwrap();

        let mut data = Vec::new();
        for _ in 0..3 {
            data.extend_from_slice(slice.data());
        }
        let v = Volume::new("v", 3, 8, 8, data).unwrap();
        for pooling in [Pooling::MeanSlices, Pooling::MidSlice] {
            let e = net.embed_volume(&v, pooling).unwrap();
            for (a, b) in e.data().iter().zip(single.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        let slices: Vec<Tensor> = (0..3).map(|i| random_slice(&spec, 20 + i)).collect();
        let build = |order: [usize; 3]| {
            let data = order.iter().flat_map(|&i| slices[i].data().to_vec()).collect();
            Volume::new("p", 3, 8, 8, data).unwrap()
        };
        let a = net.embed_volume(&build([0, 1, 2]), Pooling::MeanSlices).unwrap();
        let b = net.embed_volume(&build([2, 0, 1]), Pooling::MeanSlices).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let mid = net.embed_volume(&build([0, 1, 2]), Pooling::MidSlice).unwrap();
        assert_eq!(mid, net.forward(&slices[1]).unwrap().0);

        let wrong = Volume::filled("w", 2, 16, 16, 0.5).unwrap();
        assert!(net.embed_volume(&wrong, Pooling::MeanSlices).is_err());
    }

    #[test]
    fn volume_trace_matches_inference() {
        let spec = NetSpec::with_input(8, 8);
        let net = EmbeddingNet::init(spec, 11).unwrap();
        let data = (0..3).flat_map(|i| random_slice(&spec, 30 + i).into_data()).collect();
        let v = Volume::new("t", 3, 8, 8, data).unwrap();
        for pooling in [Pooling::MeanSlices, Pooling::MidSlice] {
            let trace = net.embed_volume_for_training(&v, pooling).unwrap();
            assert_eq!(trace.embedding, net.embed_volume(&v, pooling).unwrap());
        }
    }

    #[test]
    fn evaluation_order_does_not_matter() {
        let spec = NetSpec::with_input(8, 8);
        let net = EmbeddingNet::init(spec, 12).unwrap();
        let (a, b) = (random_slice(&spec, 1), random_slice(&spec, 2));
        let ab = (net.forward(&a).unwrap().0, net.forward(&b).unwrap().0);
        let ba = (net.forward(&b).unwrap().0, net.forward(&a).unwrap().0);
        assert_eq!(ab.0, ba.1);
        assert_eq!(ab.1, ba.0);
    }
}
