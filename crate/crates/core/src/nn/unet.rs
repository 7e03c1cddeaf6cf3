use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{col2im, gemm, im2col, Real, KERNEL};
use crate::error::{Error, Result};
use crate::grid::{FlowField, GridSpec, InputTensor};

/// Widest block; widths double from `base_width` up to this cap.
pub const MAX_WIDTH: usize = 512;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const TAPS: usize = KERNEL * KERNEL;
/// Output channels: u, v, p.
const OUT_CHANNELS: usize = 3;

fn default_bias() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Nodes per side of the square input.
    pub input_size: usize,
    pub in_channels: usize,
    /// Filters in the first encoder block.
    pub base_width: usize,
    /// Multipliers applied after the final `tanh`, per output channel.
    pub channel_scales: [f64; 3],
    pub seed: u64,
    /// Whether convolutions carry a bias term.
    #[serde(default = "default_bias")]
    pub bias: bool,
}

impl ModelConfig {
    pub fn new(input_size: usize, in_channels: usize) -> Self {
        ModelConfig {
            input_size,
            in_channels,
            base_width: 64,
            channel_scales: [1.0, 1.0, 2.0],
            seed: 0,
            bias: true,
        }
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.input_size;
        if !a.is_power_of_two() || a < 8 {
            return Err(Error::InvalidConfig(format!(
                "input size must be a power of two >= 8, got {a}"
            )));
        }
        if !(3..=4).contains(&self.in_channels) {
            return Err(Error::InvalidConfig(format!(
                "in_channels must be 3 or 4, got {}",
                self.in_channels
            )));
        }
        if self.base_width == 0 || self.base_width > MAX_WIDTH {
            return Err(Error::InvalidConfig(format!(
                "base_width must be in 1..={MAX_WIDTH}, got {}",
                self.base_width
            )));
        }
        if self.channel_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "channel scales must be finite and > 0: {:?}",
                self.channel_scales
            )));
        }
        Ok(())
    }

    /// Blocks per side of the network, `log2(input_size)`.
    pub fn depth(&self) -> usize {
        self.input_size.trailing_zeros() as usize
    }

    /// Output width of encoder block `i`.
    pub fn width(&self, i: usize) -> usize {
        self.base_width
            .saturating_mul(1usize << i.min(32))
            .min(MAX_WIDTH)
    }

    /// Trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let (enc, dec) = block_shapes(self);
        enc.iter()
            .chain(&dec)
            .map(|b| {
                let bias = if self.bias { b.cout } else { 0 };
                let norm = if b.norm { 2 * b.cout } else { 0 };
                b.cin * b.cout * TAPS + bias + norm
            })
            .sum()
    }
}

struct Shape {
    cin: usize,
    cout: usize,
    in_size: usize,
    norm: bool,
}

fn block_shapes(c: &ModelConfig) -> (Vec<Shape>, Vec<Shape>) {
    let d = c.depth();
    let a = c.input_size;
    let enc = (0..d)
        .map(|i| Shape {
            cin: if i == 0 { c.in_channels } else { c.width(i - 1) },
            cout: c.width(i),
            in_size: a >> i,
            norm: i > 0,
        })
        .collect();
    let mut dec = Vec::with_capacity(d);
    let mut prev = 0;
    for k in 0..d {
        let skip = c.width(d - 1 - k);
        let cin = if k == 0 { skip } else { prev + skip };
        let cout = if k == d - 1 { OUT_CHANNELS } else { c.width(d - 2 - k) };
        dec.push(Shape {
            cin,
            cout,
            in_size: 1 << k,
            norm: k + 1 < d,
        });
        prev = cout;
    }
    (enc, dec)
}

/// One named parameter or running-statistics buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    /// False for normalization running statistics.
    pub trainable: bool,
}

/// Static description of one convolution block; fields index into the
/// model's parameter list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub cin: usize,
    pub cout: usize,
    pub transposed: bool,
    /// Spatial side of the block input.
    pub in_size: usize,
    pub weight: usize,
    pub bias: Option<usize>,
    /// Index of `gamma`; `beta`, `running_mean`, `running_var` follow.
    pub norm: Option<usize>,
    pub tanh: bool,
}

impl Block {
    pub fn out_size(&self) -> usize {
        if self.transposed {
            self.in_size * 2
        } else {
            self.in_size / 2
        }
    }

    /// Indices of every parameter owned by the block.
    pub fn param_indices(&self) -> Vec<usize> {
        let mut v = vec![self.weight];
        v.extend(self.bias);
        if let Some(g) = self.norm {
            v.extend(g..g + 4);
        }
        v
    }
}

/// Encoder-decoder with skip connections mapping `[C, N, a, a]` inputs to
/// scaled `(u, v, p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    config: ModelConfig,
    params: Vec<Param<T>>,
    encoder: Vec<Block>,
    decoder: Vec<Block>,
}

struct BlockCache<T> {
    /// Patch matrix for a convolution, block input for a transposed one.
    operand: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mean: Vec<T>,
    var: Vec<T>,
    out: Vec<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    n: usize,
    train: bool,
    encoder: Vec<BlockCache<T>>,
    decoder: Vec<BlockCache<T>>,
    /// Scaled output `[3, N, a, a]`.
    pub output: Vec<T>,
}

impl<T> ForwardCache<T> {
    pub fn batch(&self) -> usize {
        self.n
    }
}

impl<T: Real> UNet<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let (enc, dec) = block_shapes(&config);
        let mut params = Vec::new();
        let push = |params: &mut Vec<Param<T>>, name: String, shape: Vec<usize>, data: Vec<T>, trainable| {
            params.push(Param { name, shape, data, trainable });
            params.len() - 1
        };
        let mut build = |params: &mut Vec<Param<T>>, prefix: &str, s: &Shape, transposed: bool, last: bool| {
            let len = s.cin * s.cout * TAPS;
            // Inputs feeding one output: all taps for a convolution, a
            // quarter of them for a stride-2 transposed convolution.
            let fan_in = if transposed { s.cin * TAPS / 4 } else { s.cin * TAPS };
            let normal = Normal::new(0.0, gain / (fan_in as f64).sqrt()).expect("finite std");
            let w: Vec<T> = (0..len).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
            let shape = if transposed {
                vec![s.cin, s.cout, KERNEL, KERNEL]
            } else {
                vec![s.cout, s.cin, KERNEL, KERNEL]
            };
            let weight = push(params, format!("{prefix}.weight"), shape, w, true);
            let bias = config
                .bias
                .then(|| push(params, format!("{prefix}.bias"), vec![s.cout], vec![T::zero(); s.cout], true));
            let norm = s.norm.then(|| {
                let c = s.cout;
                let g = push(params, format!("{prefix}.norm.gamma"), vec![c], vec![T::one(); c], true);
                push(params, format!("{prefix}.norm.beta"), vec![c], vec![T::zero(); c], true);
                push(params, format!("{prefix}.norm.running_mean"), vec![c], vec![T::zero(); c], false);
                push(params, format!("{prefix}.norm.running_var"), vec![c], vec![T::one(); c], false);
                g
            });
            Block {
                cin: s.cin,
                cout: s.cout,
                transposed,
                in_size: s.in_size,
                weight,
                bias,
                norm,
                tanh: last,
            }
        };
        let encoder: Vec<Block> = enc
            .iter()
            .enumerate()
            .map(|(i, s)| build(&mut params, &format!("enc{i}"), s, false, false))
            .collect();
        let d = dec.len();
        let decoder: Vec<Block> = dec
            .iter()
            .enumerate()
            .map(|(k, s)| build(&mut params, &format!("dec{k}"), s, true, k + 1 == d))
            .collect();
        Ok(UNet {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn encoder(&self) -> &[Block] {
        &self.encoder
    }

    pub fn decoder(&self) -> &[Block] {
        &self.decoder
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.data.len()).sum()
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> UNet<U> {
        UNet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
                    trainable: p.trainable,
                })
                .collect(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
        }
    }

    /// Replaces every parameter buffer; names, shapes and order must match.
    pub fn load_params(&mut self, params: Vec<Param<T>>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::shape(
                format!("{} parameter tensors", self.params.len()),
                params.len().to_string(),
            ));
        }
        for (want, got) in self.params.iter().zip(&params) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::shape(
                    format!("{} {:?}", want.name, want.shape),
                    format!("{} {:?} ({} values)", got.name, got.shape, got.data.len()),
                ));
            }
        }
        for (dst, src) in self.params.iter_mut().zip(params) {
            dst.data = src.data;
            dst.trainable = src.trainable;
        }
        Ok(())
    }

    fn check_input(&self, x: &[T], n: usize) -> Result<()> {
        let a = self.config.input_size;
        let want = self.config.in_channels * n * a * a;
        if n == 0 || x.len() != want {
            return Err(Error::shape(
                format!("[{}, {n}, {a}, {a}] input", self.config.in_channels),
                format!("{} values", x.len()),
            ));
        }
        Ok(())
    }

    /// Inference-mode forward using running statistics; returns the scaled
    /// raw output `[3, N, a, a]`.
    pub fn forward(&self, x: &[T], n: usize) -> Result<Vec<T>> {
        self.check_input(x, n)?;
        Ok(self.run(x, n, false).output)
    }

    /// Training-mode forward using batch statistics.
    pub fn forward_train(&self, x: &[T], n: usize) -> Result<ForwardCache<T>> {
        self.check_input(x, n)?;
        Ok(self.run(x, n, true))
    }

    fn run(&self, x: &[T], n: usize, train: bool) -> ForwardCache<T> {
        let mut encoder: Vec<BlockCache<T>> = Vec::with_capacity(self.encoder.len());
        for (i, b) in self.encoder.iter().enumerate() {
            let input = if i == 0 { x } else { &encoder[i - 1].out };
            let c = self.block_forward(b, input.to_vec(), n, train);
            encoder.push(c);
        }
        let d = self.decoder.len();
        let mut decoder: Vec<BlockCache<T>> = Vec::with_capacity(d);
        for (k, b) in self.decoder.iter().enumerate() {
            let skip = &encoder[d - 1 - k].out;
            let input = if k == 0 {
                skip.clone()
            } else {
                let prev = &decoder[k - 1].out;
                let mut v = Vec::with_capacity(prev.len() + skip.len());
                v.extend_from_slice(prev);
                v.extend_from_slice(skip);
                v
            };
            let c = self.block_forward(b, input, n, train);
            decoder.push(c);
        }
        let t = &decoder[d - 1].out;
        let plane = t.len() / OUT_CHANNELS;
        let mut output = t.clone();
        for (ch, chunk) in output.chunks_mut(plane).enumerate() {
            let s = T::from_f64(self.config.channel_scales[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * s);
        }
        ForwardCache {
            n,
            train,
            encoder,
            decoder,
            output,
        }
    }

    fn block_forward(&self, b: &Block, input: Vec<T>, n: usize, train: bool) -> BlockCache<T> {
        let (si, so) = (b.in_size, b.out_size());
        let w = &self.params[b.weight].data;
        let np_out = n * so * so;
        let mut z = vec![T::zero(); b.cout * np_out];
        let operand = if b.transposed {
            let np_in = n * si * si;
            let mut cols = vec![T::zero(); b.cout * TAPS * np_in];
            gemm(true, false, b.cout * TAPS, np_in, b.cin, T::one(), w, &input, T::zero(), &mut cols);
            col2im(&cols, b.cout, n, so, so, &mut z);
            input
        } else {
            let mut cols = vec![T::zero(); b.cin * TAPS * np_out];
            im2col(&input, b.cin, n, si, si, &mut cols);
            gemm(false, false, b.cout, np_out, b.cin * TAPS, T::one(), w, &cols, T::zero(), &mut z);
            cols
        };
        if let Some(bi) = b.bias {
            for (chunk, &bv) in z.chunks_mut(np_out).zip(&self.params[bi].data) {
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
        let mut cache = BlockCache {
            operand,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            mean: Vec::new(),
            var: Vec::new(),
            out: Vec::new(),
        };
        if let Some(g) = b.norm {
            let gamma = &self.params[g].data;
            let beta = &self.params[g + 1].data;
            let eps = T::from_f64(BN_EPS);
            let m = T::from_f64(np_out as f64);
            if train {
                cache.xhat = vec![T::zero(); z.len()];
                for (c, (zc, xc)) in z.chunks_mut(np_out).zip(cache.xhat.chunks_mut(np_out)).enumerate() {
                    let mean = zc.iter().copied().sum::<T>() / m;
                    let var = zc.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
                    let inv = T::one() / (var + eps).sqrt();
                    for (zv, xv) in zc.iter_mut().zip(xc.iter_mut()) {
                        *xv = (*zv - mean) * inv;
                        *zv = gamma[c] * *xv + beta[c];
                    }
                    cache.inv_std.push(inv);
                    cache.mean.push(mean);
                    cache.var.push(var);
                }
            } else {
                let rm = &self.params[g + 2].data;
                let rv = &self.params[g + 3].data;
                for (c, zc) in z.chunks_mut(np_out).enumerate() {
                    let inv = T::one() / (rv[c] + eps).sqrt();
                    let (scale, shift) = (gamma[c] * inv, beta[c] - gamma[c] * inv * rm[c]);
                    zc.iter_mut().for_each(|v| *v = *v * scale + shift);
                }
            }
        }
        if b.tanh {
            z.iter_mut().for_each(|v| *v = v.tanh());
        } else {
            let slope = T::from_f64(LEAKY_SLOPE);
            z.iter_mut().for_each(|v| {
                if *v <= T::zero() {
                    *v = *v * slope
                }
            });
        }
        cache.out = z;
        cache
    }

    /// Gradients with respect to every parameter given `d loss / d output`.
    /// Buffers get empty vectors. Requires a training-mode cache.
    pub fn backward(&self, cache: &ForwardCache<T>, d_output: &[T]) -> Result<Vec<Vec<T>>> {
        if !cache.train {
            return Err(Error::Training("backward needs a training-mode forward".into()));
        }
        if d_output.len() != cache.output.len() {
            return Err(Error::shape(
                format!("{} output gradients", cache.output.len()),
                d_output.len().to_string(),
            ));
        }
        let n = cache.n;
        let mut grads: Vec<Vec<T>> = self
            .params
            .iter()
            .map(|p| if p.trainable { vec![T::zero(); p.data.len()] } else { Vec::new() })
            .collect();
        let plane = d_output.len() / OUT_CHANNELS;
        let mut dy = d_output.to_vec();
        for (ch, chunk) in dy.chunks_mut(plane).enumerate() {
            let s = T::from_f64(self.config.channel_scales[ch]);
            chunk.iter_mut().for_each(|v| *v = *v * s);
        }
        let d = self.decoder.len();
        let mut d_enc: Vec<Vec<T>> = cache.encoder.iter().map(|c| vec![T::zero(); c.out.len()]).collect();
        for k in (0..d).rev() {
            let dx = self
                .block_backward(&self.decoder[k], &cache.decoder[k], dy, n, &mut grads, true)
                .expect("decoder input gradient");
            let skip = &mut d_enc[d - 1 - k];
            if k == 0 {
                add_into(skip, &dx);
                dy = Vec::new();
            } else {
                let split = dx.len() - skip.len();
                add_into(skip, &dx[split..]);
                dy = dx[..split].to_vec();
            }
        }
        for i in (0..self.encoder.len()).rev() {
            let dout = std::mem::take(&mut d_enc[i]);
            let dx = self.block_backward(&self.encoder[i], &cache.encoder[i], dout, n, &mut grads, i > 0);
            if let Some(dx) = dx {
                add_into(&mut d_enc[i - 1], &dx);
            }
        }
        Ok(grads)
    }

    fn block_backward(
        &self,
        b: &Block,
        c: &BlockCache<T>,
        mut dz: Vec<T>,
        n: usize,
        grads: &mut [Vec<T>],
        need_input: bool,
    ) -> Option<Vec<T>> {
        let (si, so) = (b.in_size, b.out_size());
        let np_out = n * so * so;
        if b.tanh {
            for (g, &y) in dz.iter_mut().zip(&c.out) {
                *g = *g * (T::one() - y * y);
            }
        } else {
            let slope = T::from_f64(LEAKY_SLOPE);
            for (g, &y) in dz.iter_mut().zip(&c.out) {
                if y <= T::zero() {
                    *g = *g * slope;
                }
            }
        }
        if let Some(gi) = b.norm {
            let m = T::from_f64(np_out as f64);
            let gamma = &self.params[gi].data;
            let (mut dgamma, mut dbeta) = (vec![T::zero(); b.cout], vec![T::zero(); b.cout]);
            for (ch, (g, xh)) in dz.chunks_mut(np_out).zip(c.xhat.chunks(np_out)).enumerate() {
                let sum_g = g.iter().copied().sum::<T>();
                let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                let k = gamma[ch] * c.inv_std[ch] / m;
                for (gv, &xv) in g.iter_mut().zip(xh) {
                    *gv = k * (m * *gv - sum_g - xv * sum_gx);
                }
            }
            add_into(&mut grads[gi], &dgamma);
            add_into(&mut grads[gi + 1], &dbeta);
        }
        if let Some(bi) = b.bias {
            for (gb, chunk) in grads[bi].iter_mut().zip(dz.chunks(np_out)) {
                *gb = *gb + chunk.iter().copied().sum::<T>();
            }
        }
        let w = &self.params[b.weight].data;
        if b.transposed {
            let np_in = n * si * si;
            let mut dcols = vec![T::zero(); b.cout * TAPS * np_in];
            im2col(&dz, b.cout, n, so, so, &mut dcols);
            gemm(
                false,
                true,
                b.cin,
                b.cout * TAPS,
                np_in,
                T::one(),
                &c.operand,
                &dcols,
                T::one(),
                &mut grads[b.weight],
            );
            need_input.then(|| {
                let mut dx = vec![T::zero(); b.cin * np_in];
                gemm(false, false, b.cin, np_in, b.cout * TAPS, T::one(), w, &dcols, T::zero(), &mut dx);
                dx
            })
        } else {
            let k = b.cin * TAPS;
            gemm(false, true, b.cout, k, np_out, T::one(), &dz, &c.operand, T::one(), &mut grads[b.weight]);
            need_input.then(|| {
                let mut dcols = vec![T::zero(); k * np_out];
                gemm(true, false, k, np_out, b.cout, T::one(), w, &dz, T::zero(), &mut dcols);
                let mut dx = vec![T::zero(); b.cin * n * si * si];
                col2im(&dcols, b.cin, n, si, si, &mut dx);
                dx
            })
        }
    }

    /// Folds the batch statistics of a training forward into the running
    /// statistics (unbiased variance, momentum [`BN_MOMENTUM`]).
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let mom = T::from_f64(BN_MOMENTUM);
        let blocks: Vec<(Block, &BlockCache<T>)> = self
            .encoder
            .iter()
            .copied()
            .zip(&cache.encoder)
            .chain(self.decoder.iter().copied().zip(&cache.decoder))
            .collect();
        for (b, c) in blocks {
            let Some(g) = b.norm else { continue };
            if c.mean.is_empty() {
                continue;
            }
            let m = cache.n * b.out_size() * b.out_size();
            let unbias = if m > 1 { T::from_f64(m as f64 / (m - 1) as f64) } else { T::one() };
            for ch in 0..b.cout {
                let rm = &mut self.params[g + 2].data[ch];
                *rm = (T::one() - mom) * *rm + mom * c.mean[ch];
                let rv = &mut self.params[g + 3].data[ch];
                *rv = (T::one() - mom) * *rv + mom * c.var[ch] * unbias;
            }
        }
    }

    /// Sign of every LeakyReLU input in a forward pass. Two passes with equal
    /// patterns lie on the same smooth piece of the network.
    pub fn activation_signs(&self, cache: &ForwardCache<T>) -> Vec<bool> {
        self.encoder
            .iter()
            .zip(&cache.encoder)
            .chain(self.decoder.iter().zip(&cache.decoder))
            .filter(|(b, _)| !b.tanh)
            .flat_map(|(_, c)| c.out.iter().map(|&v| v > T::zero()))
            .collect()
    }

    /// Splits a `[3, N, a, a]` output into per-sample fields.
    pub fn to_fields(&self, output: &[T], n: usize) -> Result<Vec<FlowField>> {
        let a = self.config.input_size;
        let grid = GridSpec::square(a)?;
        if output.len() != OUT_CHANNELS * n * a * a {
            return Err(Error::shape(
                format!("[3, {n}, {a}, {a}] output"),
                format!("{} values", output.len()),
            ));
        }
        let plane = a * a;
        Ok((0..n)
            .map(|s| {
                let ch = |c: usize| {
                    let off = (c * n + s) * plane;
                    ndarray::Array2::from_shape_fn((a, a), |(j, i)| output[off + j * a + i].to_f64())
                };
                FlowField {
                    u: ch(0),
                    v: ch(1),
                    p: ch(2),
                    grid,
                }
            })
            .collect())
    }

    /// Inverse of [`UNet::to_fields`] for gradients.
    pub fn from_fields(&self, fields: &[FlowField]) -> Vec<T> {
        let n = fields.len();
        let plane = self.config.input_size * self.config.input_size;
        let mut out = vec![T::zero(); OUT_CHANNELS * n * plane];
        for (s, f) in fields.iter().enumerate() {
            for (c, a) in [&f.u, &f.v, &f.p].into_iter().enumerate() {
                let dst = &mut out[(c * n + s) * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(a.iter()) {
                    *d = T::from_f64(v);
                }
            }
        }
        out
    }

    /// Inference on one input; the returned field carries the input's
    /// imposed boundary values.
    pub fn predict(&self, input: &InputTensor) -> Result<FlowField> {
        let (x, n) = pack_inputs::<T>(&[input], &self.config)?;
        let out = self.forward(&x, n)?;
        let mut f = self.to_fields(&out, n)?.pop().expect("one sample");
        input.bc.resolve(&input.grid, input.mask.as_ref())?.impose_dirichlet(&mut f);
        Ok(f)
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Packs inputs into a `[C, N, a, a]` buffer.
pub fn pack_inputs<T: Real>(inputs: &[&InputTensor], config: &ModelConfig) -> Result<(Vec<T>, usize)> {
    let a = config.input_size;
    let c = config.in_channels;
    let n = inputs.len();
    let plane = a * a;
    let mut x = vec![T::zero(); c * n * plane];
    for (s, input) in inputs.iter().enumerate() {
        if input.in_channels() != c || input.grid.shape() != (a, a) {
            return Err(Error::shape(
                format!("{c} channels of {a}x{a}"),
                format!(
                    "{} channels of {}x{}",
                    input.in_channels(),
                    input.grid.ny,
                    input.grid.nx
                ),
            ));
        }
        for (ci, ch) in input.channels.iter().enumerate() {
            let dst = &mut x[(ci * n + s) * plane..][..plane];
            for (d, &v) in dst.iter_mut().zip(ch.iter()) {
                *d = T::from_f64(v);
            }
        }
    }
    Ok((x, n))
}
