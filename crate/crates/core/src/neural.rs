//! Coefficient networks: a fully connected net for 1D meshes and a
//! convolutional encoder-decoder for 2D meshes, with hand-written reverse
//! passes and the AdamW update.
//!
//! Activations are stored channel-major: a `c × (n·h·w)` row-major matrix
//! for a batch of `n` samples. The public interface is sample-major, with
//! the features of one sample ordered `(y, x, channel)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.9;

/// `C = beta C + op(A) op(B)` on row-major slices, `op(A)` is `m × k` and
/// `op(B)` is `k × n`. With `ta` the slice holds `Aᵀ`, likewise `tb`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every access implied by the strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// One stage of a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Linear { n_in: usize, n_out: usize },
    Conv { c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize },
    /// Transposed convolution with stride equal to the kernel size.
    ConvTranspose { c_in: usize, c_out: usize, k: usize },
    BatchNorm { c: usize },
    Relu,
    Tanh,
}

impl Layer {
    fn n_params(&self) -> usize {
        match *self {
            Layer::Linear { n_in, n_out } => n_out * n_in + n_out,
            Layer::Conv { c_in, c_out, k, .. } | Layer::ConvTranspose { c_in, c_out, k } => c_out * c_in * k * k + c_out,
            Layer::BatchNorm { c } => 2 * c,
            Layer::Relu | Layer::Tanh => 0,
        }
    }

    fn n_buffers(&self) -> usize {
        match *self {
            Layer::BatchNorm { c } => 2 * c,
            _ => 0,
        }
    }

    /// Output shape `[c, h, w]` for an input shape.
    fn out_shape(&self, s: [usize; 3]) -> Result<[usize; 3]> {
        let bad = || Err(Error::Config(format!("layer {self:?} cannot take input of shape {s:?}")));
        match *self {
            Layer::Linear { n_in, n_out } => {
                if s != [n_in, 1, 1] {
                    return bad();
                }
                Ok([n_out, 1, 1])
            }
            Layer::Conv { c_in, c_out, k, stride, pad } => {
                if s[0] != c_in || s[1] + 2 * pad < k || s[2] + 2 * pad < k || stride == 0 {
                    return bad();
                }
                Ok([c_out, (s[1] + 2 * pad - k) / stride + 1, (s[2] + 2 * pad - k) / stride + 1])
            }
            Layer::ConvTranspose { c_in, c_out, k } => {
                if s[0] != c_in || k == 0 {
                    return bad();
                }
                Ok([c_out, s[1] * k, s[2] * k])
            }
            Layer::BatchNorm { c } => {
                if s[0] != c {
                    return bad();
                }
                Ok(s)
            }
            Layer::Relu | Layer::Tanh => Ok(s),
        }
    }

    /// Inputs feeding one output unit, for the uniform initialization bound.
    fn fan_in(&self) -> usize {
        match *self {
            Layer::Linear { n_in, .. } => n_in,
            Layer::Conv { c_in, k, .. } => c_in * k * k,
            Layer::ConvTranspose { c_in, .. } => c_in,
            _ => 1,
        }
    }
}

/// Architecture of a coefficient network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetSpec {
    /// Fully connected, rectifier on hidden layers and identity output.
    Mlp { sizes: Vec<usize> },
    /// Encoder of stride-2 convolutions down to `1 × 1`, then a decoder of
    /// (transposed conv, conv) pairs back to `grid × grid` and a final conv
    /// with tanh.
    Cnn { grid: usize, encoder: Vec<usize>, decoder: Vec<usize>, out_channels: usize },
}

impl NetSpec {
    /// Four hidden layers of 64 units.
    pub fn mlp(n_in: usize, n_out: usize) -> Self {
        NetSpec::Mlp { sizes: vec![n_in, 64, 64, 64, 64, n_out] }
    }

    pub fn cnn(grid: usize, out_channels: usize) -> Self {
        NetSpec::Cnn { grid, encoder: vec![16, 32, 64, 256], decoder: vec![64, 64, 32, 32], out_channels }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            NetSpec::Mlp { sizes } => [sizes.first().copied().unwrap_or(0), 1, 1],
            NetSpec::Cnn { grid, .. } => [1, *grid, *grid],
        }
    }

    pub fn layers(&self) -> Result<Vec<Layer>> {
        match self {
            NetSpec::Mlp { sizes } => {
                if sizes.len() < 2 || sizes.contains(&0) {
                    return Err(Error::Config(format!("bad layer sizes {sizes:?}")));
                }
                let mut out = Vec::new();
                for (i, w) in sizes.windows(2).enumerate() {
                    out.push(Layer::Linear { n_in: w[0], n_out: w[1] });
                    if i + 2 < sizes.len() {
                        out.push(Layer::Relu);
                    }
                }
                Ok(out)
            }
            NetSpec::Cnn { grid, encoder, decoder, out_channels } => {
                if encoder.is_empty() || decoder.is_empty() || decoder.len() % 2 != 0 {
                    return Err(Error::Config("encoder needs channels and decoder an even number of them".into()));
                }
                let mut out = Vec::new();
                let mut c = 1;
                for &e in encoder {
                    out.push(Layer::Conv { c_in: c, c_out: e, k: 3, stride: 2, pad: 1 });
                    out.extend([Layer::BatchNorm { c: e }, Layer::Relu]);
                    c = e;
                }
                let side = encoder.iter().fold(*grid, |s, _| s.div_ceil(2));
                if side != 1 {
                    return Err(Error::Config(format!("encoder leaves a {side}×{side} latent for a {grid}×{grid} grid")));
                }
                let stages = decoder.len() / 2;
                let factor = (*grid as f64).powf(1.0 / stages as f64).round() as usize;
                if factor.pow(stages as u32) != *grid {
                    return Err(Error::Config(format!("grid {grid} is not a power reachable in {stages} upsampling stages")));
                }
                for pair in decoder.chunks(2) {
                    out.push(Layer::ConvTranspose { c_in: c, c_out: pair[0], k: factor });
                    out.extend([Layer::BatchNorm { c: pair[0] }, Layer::Relu]);
                    out.push(Layer::Conv { c_in: pair[0], c_out: pair[1], k: 3, stride: 1, pad: 1 });
                    out.extend([Layer::BatchNorm { c: pair[1] }, Layer::Relu]);
                    c = pair[1];
                }
                out.push(Layer::Conv { c_in: c, c_out: *out_channels, k: 3, stride: 1, pad: 1 });
                out.extend([Layer::BatchNorm { c: *out_channels }, Layer::Tanh]);
                Ok(out)
            }
        }
    }
}

/// Per-layer values kept from the forward pass.
#[derive(Debug, Clone)]
enum Saved {
    Input(Vec<f64>),
    Cols(Vec<f64>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Output(Vec<f64>),
}

/// Activations of one forward pass, tied to the parameter version it saw.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    saved: Vec<Saved>,
}

/// Network parameters, normalization statistics and layer layout.
#[derive(Debug, Clone)]
pub struct Network {
    pub spec: NetSpec,
    layers: Vec<Layer>,
    shapes: Vec<[usize; 3]>,
    offsets: Vec<usize>,
    buffer_offsets: Vec<usize>,
    params: Vec<f64>,
    /// Running mean and variance of every normalization layer.
    pub buffers: Vec<f64>,
    version: u64,
}

impl Network {
    /// Uniform initialization in `±1/√fan_in`, drawn layer by layer.
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let layers = spec.layers()?;
        let mut shapes = vec![spec.input_shape()];
        let (mut offsets, mut buffer_offsets) = (Vec::new(), Vec::new());
        let (mut np, mut nb) = (0, 0);
        for l in &layers {
            shapes.push(l.out_shape(*shapes.last().expect("nonempty"))?);
            offsets.push(np);
            buffer_offsets.push(nb);
            np += l.n_params();
            nb += l.n_buffers();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(np);
        let mut buffers = Vec::with_capacity(nb);
        for l in &layers {
            match *l {
                Layer::BatchNorm { c } => {
                    params.extend(std::iter::repeat_n(1.0, c).chain(std::iter::repeat_n(0.0, c)));
                    buffers.extend(std::iter::repeat_n(0.0, c).chain(std::iter::repeat_n(1.0, c)));
                }
                _ => {
                    let bound = 1.0 / (l.fan_in() as f64).sqrt();
                    params.extend((0..l.n_params()).map(|_| rng.random_range(-bound..=bound)));
                }
            }
        }
        Ok(Network { spec, layers, shapes, offsets, buffer_offsets, params, buffers, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_inputs(&self) -> usize {
        let s = self.shapes[0];
        s[0] * s[1] * s[2]
    }

    pub fn n_outputs(&self) -> usize {
        let s = self.shapes[self.shapes.len() - 1];
        s[0] * s[1] * s[2]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::ShapeMismatch { expected: self.params.len(), got: p.len() });
        }
        self.params_mut().copy_from_slice(p);
        Ok(())
    }

    /// Forward pass in training mode: batch statistics, running statistics
    /// updated. Returns sample-major outputs.
    pub fn forward_train(&mut self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        let mut buffers = std::mem::take(&mut self.buffers);
        let out = self.run(x, batch, Some(&mut buffers));
        self.buffers = buffers;
        out
    }

    /// Forward pass in evaluation mode (running statistics).
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        self.run(x, batch, None)
    }

    pub fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(x, batch)?.0)
    }

    fn run(&self, x: &[f64], n: usize, mut train: Option<&mut Vec<f64>>) -> Result<(Vec<f64>, ForwardCache)> {
        if n == 0 || x.len() != n * self.n_inputs() {
            return Err(Error::ShapeMismatch { expected: n.max(1) * self.n_inputs(), got: x.len() });
        }
        let mut act = to_channel_major(x, n, self.shapes[0]);
        let mut saved = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let (si, so) = (self.shapes[li], self.shapes[li + 1]);
            let p = &self.params[self.offsets[li]..self.offsets[li] + layer.n_params()];
            let (next, keep) = match *layer {
                Layer::Linear { n_in, n_out } => {
                    let (w, b) = p.split_at(n_out * n_in);
                    let mut y = bias_rows(b, n);
                    gemm(n_out, n_in, n, w, false, &act, false, &mut y, 1.0);
                    (y, Saved::Input(act))
                }
                Layer::Conv { c_in, c_out, k, stride, pad } => {
                    let cols = im2col(&act, n, si, so, k, stride, pad);
                    let po = n * so[1] * so[2];
                    let (w, b) = p.split_at(c_out * c_in * k * k);
                    let mut y = bias_rows(b, po);
                    gemm(c_out, c_in * k * k, po, w, false, &cols, false, &mut y, 1.0);
                    (y, Saved::Cols(cols))
                }
                Layer::ConvTranspose { c_in, c_out, k } => {
                    let pi = n * si[1] * si[2];
                    let (w, b) = p.split_at(c_out * k * k * c_in);
                    let mut tmp = vec![0.0; c_out * k * k * pi];
                    gemm(c_out * k * k, c_in, pi, w, false, &act, false, &mut tmp, 0.0);
                    let mut y = vec![0.0; c_out * n * so[1] * so[2]];
                    for (t, o) in upsample_pairs(n, si, so, k) {
                        y[o] = tmp[t];
                    }
                    for co in 0..c_out {
                        let len = n * so[1] * so[2];
                        y[co * len..(co + 1) * len].iter_mut().for_each(|v| *v += b[co]);
                    }
                    (y, Saved::Input(act))
                }
                Layer::BatchNorm { c } => {
                    let len = act.len() / c;
                    let (gamma, beta) = p.split_at(c);
                    let mut xhat = vec![0.0; act.len()];
                    let mut inv_std = vec![0.0; c];
                    let mut y = vec![0.0; act.len()];
                    let bo = self.buffer_offsets[li];
                    for ch in 0..c {
                        let row = &act[ch * len..(ch + 1) * len];
                        let (mean, var) = match train.as_deref_mut() {
                            Some(buf) => {
                                let mean = row.iter().sum::<f64>() / len as f64;
                                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
                                let unbiased = if len > 1 { var * len as f64 / (len - 1) as f64 } else { var };
                                buf[bo + ch] = BN_MOMENTUM * buf[bo + ch] + (1.0 - BN_MOMENTUM) * mean;
                                buf[bo + c + ch] = BN_MOMENTUM * buf[bo + c + ch] + (1.0 - BN_MOMENTUM) * unbiased;
                                (mean, var)
                            }
                            None => (self.buffers[bo + ch], self.buffers[bo + c + ch]),
                        };
                        let is = 1.0 / (var + BN_EPS).sqrt();
                        inv_std[ch] = is;
                        for (i, v) in row.iter().enumerate() {
                            let xh = (v - mean) * is;
                            xhat[ch * len + i] = xh;
                            y[ch * len + i] = gamma[ch] * xh + beta[ch];
                        }
                    }
                    (y, Saved::Norm { xhat, inv_std, train: train.is_some() })
                }
                Layer::Relu => {
                    let y: Vec<f64> = act.iter().map(|&v| v.max(0.0)).collect();
                    (y.clone(), Saved::Output(y))
                }
                Layer::Tanh => {
                    let y: Vec<f64> = act.iter().map(|&v| v.tanh()).collect();
                    (y.clone(), Saved::Output(y))
                }
            };
            saved.push(keep);
            act = next;
        }
        let out = to_sample_major(&act, n, self.shapes[self.layers.len()]);
        Ok((out, ForwardCache { version: self.version, batch: n, saved }))
    }

    /// Parameter gradient for a sample-major output gradient.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        if cache.version != self.version || cache.saved.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let n = cache.batch;
        if grad_out.len() != n * self.n_outputs() {
            return Err(Error::ShapeMismatch { expected: n * self.n_outputs(), got: grad_out.len() });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut g = to_channel_major(grad_out, n, self.shapes[self.layers.len()]);
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let (si, so) = (self.shapes[li], self.shapes[li + 1]);
            let off = self.offsets[li];
            let p = &self.params[off..off + layer.n_params()];
            let gp = &mut grads[off..off + layer.n_params()];
            let first = li == 0;
            g = match (*layer, &cache.saved[li]) {
                (Layer::Linear { n_in, n_out }, Saved::Input(x)) => {
                    let (gw, gb) = gp.split_at_mut(n_out * n_in);
                    gemm(n_out, n, n_in, &g, false, x, true, gw, 0.0);
                    row_sums(&g, n_out, gb);
                    if first {
                        break;
                    }
                    let mut gx = vec![0.0; n_in * n];
                    gemm(n_in, n_out, n, &p[..n_out * n_in], true, &g, false, &mut gx, 0.0);
                    gx
                }
                (Layer::Conv { c_in, c_out, k, stride, pad }, Saved::Cols(cols)) => {
                    let po = n * so[1] * so[2];
                    let ck = c_in * k * k;
                    let (gw, gb) = gp.split_at_mut(c_out * ck);
                    gemm(c_out, po, ck, &g, false, cols, true, gw, 0.0);
                    row_sums(&g, c_out, gb);
                    if first {
                        break;
                    }
                    let mut gcols = vec![0.0; ck * po];
                    gemm(ck, c_out, po, &p[..c_out * ck], true, &g, false, &mut gcols, 0.0);
                    col2im(&gcols, n, si, so, k, stride, pad)
                }
                (Layer::ConvTranspose { c_in, c_out, k }, Saved::Input(x)) => {
                    let pi = n * si[1] * si[2];
                    let ck = c_out * k * k;
                    let mut gt = vec![0.0; ck * pi];
                    for (t, o) in upsample_pairs(n, si, so, k) {
                        gt[t] = g[o];
                    }
                    let (gw, gb) = gp.split_at_mut(ck * c_in);
                    gemm(ck, pi, c_in, &gt, false, x, true, gw, 0.0);
                    row_sums(&g, c_out, gb);
                    if first {
                        break;
                    }
                    let mut gx = vec![0.0; c_in * pi];
                    gemm(c_in, ck, pi, &p[..ck * c_in], true, &gt, false, &mut gx, 0.0);
                    gx
                }
                (Layer::BatchNorm { c }, Saved::Norm { xhat, inv_std, train }) => {
                    let len = g.len() / c;
                    let gamma = &p[..c];
                    let mut gx = vec![0.0; g.len()];
                    for ch in 0..c {
                        let dy = &g[ch * len..(ch + 1) * len];
                        let xh = &xhat[ch * len..(ch + 1) * len];
                        let sum_dy: f64 = dy.iter().sum();
                        let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
                        gp[ch] = sum_dy_xh;
                        gp[c + ch] = sum_dy;
                        let scale = gamma[ch] * inv_std[ch];
                        let out = &mut gx[ch * len..(ch + 1) * len];
                        if *train {
                            let m = len as f64;
                            for i in 0..len {
                                out[i] = scale * (dy[i] - sum_dy / m - xh[i] * sum_dy_xh / m);
                            }
                        } else {
                            for i in 0..len {
                                out[i] = scale * dy[i];
                            }
                        }
                    }
                    gx
                }
                (Layer::Relu, Saved::Output(y)) => g.iter().zip(y).map(|(d, &y)| if y > 0.0 { *d } else { 0.0 }).collect(),
                (Layer::Tanh, Saved::Output(y)) => g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect(),
                _ => return Err(Error::StaleCache),
            };
        }
        Ok(grads)
    }
}

fn bias_rows(b: &[f64], len: usize) -> Vec<f64> {
    b.iter().flat_map(|&v| std::iter::repeat_n(v, len)).collect()
}

fn row_sums(g: &[f64], rows: usize, out: &mut [f64]) {
    let len = g.len() / rows;
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        *o = g[r * len..(r + 1) * len].iter().sum();
    }
}

/// Sample-major `(s, y, x, c)` to channel-major `(c, s, y, x)`.
fn to_channel_major(x: &[f64], n: usize, s: [usize; 3]) -> Vec<f64> {
    let [c, h, w] = s;
    let hw = h * w;
    let mut out = vec![0.0; x.len()];
    for si in 0..n {
        for p in 0..hw {
            for ch in 0..c {
                out[(ch * n + si) * hw + p] = x[(si * hw + p) * c + ch];
            }
        }
    }
    out
}

fn to_sample_major(a: &[f64], n: usize, s: [usize; 3]) -> Vec<f64> {
    let [c, h, w] = s;
    let hw = h * w;
    let mut out = vec![0.0; a.len()];
    for si in 0..n {
        for p in 0..hw {
            for ch in 0..c {
                out[(si * hw + p) * c + ch] = a[(ch * n + si) * hw + p];
            }
        }
    }
    out
}

/// Rows `(ci, ky, kx)`, columns `(s, oy, ox)`.
fn im2col(x: &[f64], n: usize, si: [usize; 3], so: [usize; 3], k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let [c_in, h, w] = si;
    let (ho, wo) = (so[1], so[2]);
    let po = n * ho * wo;
    let mut cols = vec![0.0; c_in * k * k * po];
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * po..][..po];
                for s in 0..n {
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                row[(s * ho + oy) * wo + ox] = x[((ci * n + s) * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im(cols: &[f64], n: usize, si: [usize; 3], so: [usize; 3], k: usize, stride: usize, pad: usize) -> Vec<f64> {
    let [c_in, h, w] = si;
    let (ho, wo) = (so[1], so[2]);
    let po = n * ho * wo;
    let mut x = vec![0.0; c_in * n * h * w];
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * po..][..po];
                for s in 0..n {
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                x[((ci * n + s) * h + iy as usize) * w + ix as usize] += row[(s * ho + oy) * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// Pairs `(t, o)` linking entry `t` of the transposed-conv product (rows
/// `(co, ky, kx)`, columns `(s, y, x)`) with output pixel
/// `o = (co, s, y k + ky, x k + kx)`.
fn upsample_pairs(n: usize, si: [usize; 3], so: [usize; 3], k: usize) -> impl Iterator<Item = (usize, usize)> {
    let (h, w) = (si[1], si[2]);
    let (ho, wo) = (so[1], so[2]);
    let pi = n * h * w;
    (0..so[0] * k * k).flat_map(move |r| {
        let (co, ky, kx) = (r / (k * k), r / k % k, r % k);
        (0..pi).map(move |col| {
            let (s, y, x) = (col / (h * w), col / w % h, col % w);
            (r * pi + col, ((co * n + s) * ho + y * k + ky) * wo + x * k + kx)
        })
    })
}

/// Affine map from raw network outputs to coefficients, `c = shift + scale·y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputMap {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
    /// Width of the diagonal blocks of `mix`; 0 means no mixing.
    pub block: usize,
    /// Row-major blocks of a block-diagonal matrix applied after `scale`.
    pub mix: Vec<f64>,
}

impl OutputMap {
    pub fn identity(n: usize) -> Self {
        OutputMap { shift: vec![0.0; n], scale: vec![1.0; n], block: 0, mix: Vec::new() }
    }

    /// Centers each coefficient's range over `rows` and maps it into
    /// `±1/margin`.
    pub fn fit(rows: &[Vec<f64>], margin: f64) -> Result<Self> {
        let n = check_rows(rows)?;
        let mut map = OutputMap::identity(n);
        for j in 0..n {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[j]), hi.max(r[j])));
            map.shift[j] = 0.5 * (lo + hi);
            let half = 0.5 * (hi - lo);
            map.scale[j] = if half > 0.0 && half.is_finite() { margin * half } else { 1.0 };
        }
        Ok(map)
    }

    /// Like `fit`, but in the coordinates `z` with `c = T z`, where `T` is
    /// block diagonal with the given square row-major blocks.
    pub fn fit_in_basis(rows: &[Vec<f64>], blocks: &[Vec<f64>], margin: f64) -> Result<Self> {
        let n = check_rows(rows)?;
        let block = (blocks.first().map_or(0, Vec::len) as f64).sqrt() as usize;
        if block == 0 || blocks.iter().any(|b| b.len() != block * block) || block * blocks.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: block * blocks.len() });
        }
        let lus: Vec<_> = blocks.iter().map(|b| nalgebra::DMatrix::from_row_slice(block, block, b).lu()).collect();
        let mut z_rows = Vec::with_capacity(rows.len());
        for r in rows {
            let mut z = Vec::with_capacity(n);
            for (k, lu) in lus.iter().enumerate() {
                let rhs = nalgebra::DVector::from_column_slice(&r[k * block..(k + 1) * block]);
                let sol = lu.solve(&rhs).ok_or(Error::SingularSystem)?;
                z.extend(sol.iter());
            }
            z_rows.push(z);
        }
        let z_map = OutputMap::fit(&z_rows, margin)?;
        let mut map = OutputMap { shift: Vec::new(), scale: z_map.scale, block, mix: blocks.concat() };
        map.shift = map.mixed(&z_map.shift);
        Ok(map)
    }

    /// `[blocks, block, block]`, all zero without mixing.
    pub fn mix_shape(&self) -> Vec<usize> {
        if self.block == 0 {
            return vec![0, 0, 0];
        }
        vec![self.mix.len() / (self.block * self.block), self.block, self.block]
    }

    fn mixed(&self, z: &[f64]) -> Vec<f64> {
        if self.block == 0 {
            return z.to_vec();
        }
        let b = self.block;
        z.chunks(b)
            .enumerate()
            .flat_map(|(k, zb)| {
                let m = &self.mix[k * b * b..(k + 1) * b * b];
                (0..b).map(move |i| dot(&m[i * b..(i + 1) * b], zb))
            })
            .collect()
    }

    fn mixed_transpose(&self, g: &[f64]) -> Vec<f64> {
        if self.block == 0 {
            return g.to_vec();
        }
        let b = self.block;
        g.chunks(b)
            .enumerate()
            .flat_map(|(k, gb)| {
                let m = &self.mix[k * b * b..(k + 1) * b * b];
                (0..b).map(move |j| (0..b).map(|i| m[i * b + j] * gb[i]).sum::<f64>())
            })
            .collect()
    }

    /// Applies the map to a sample-major batch.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        let n = self.shift.len();
        let z: Vec<f64> = y.iter().enumerate().map(|(i, v)| v * self.scale[i % n]).collect();
        let mut out = if self.block == n {
            let mut c = vec![0.0; y.len()];
            gemm(y.len() / n, n, n, &z, false, &self.mix, true, &mut c, 0.0);
            c
        } else {
            z.chunks(n).flat_map(|row| self.mixed(row)).collect()
        };
        for (i, v) in out.iter_mut().enumerate() {
            *v += self.shift[i % n];
        }
        out
    }

    /// Gradient with respect to the raw outputs.
    pub fn pull_back(&self, grad: &[f64]) -> Vec<f64> {
        let n = self.scale.len();
        let mut g = if self.block == n {
            let mut g = vec![0.0; grad.len()];
            gemm(grad.len() / n, n, n, grad, false, &self.mix, false, &mut g, 0.0);
            g
        } else {
            grad.chunks(n).flat_map(|g| self.mixed_transpose(g)).collect()
        };
        for (i, v) in g.iter_mut().enumerate() {
            *v *= self.scale[i % n];
        }
        g
    }
}

fn check_rows(rows: &[Vec<f64>]) -> Result<usize> {
    let n = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::ShapeMismatch { expected: n, got: rows.iter().map(Vec::len).find(|&l| l != n).unwrap_or(0) });
    }
    Ok(n)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// AdamW hyperparameters with an exponentially decaying learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Learning-rate factor applied after every step.
    pub decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, decay: 0.9995 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.decay > 0.0
            && self.decay <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment estimates and step count of AdamW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(n: usize, config: OptimizerConfig) -> Self {
        AdamW { config, step: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    /// `lr₀ · decay^t`
    pub fn learning_rate(&self, t: u64) -> f64 {
        self.config.lr * self.config.decay.powf(t as f64)
    }

    /// One decoupled-weight-decay step with bias-corrected moments, using
    /// the learning rate of the current step count.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: if params.len() != n { params.len() } else { grads.len() } });
        }
        let c = self.config;
        let lr = self.learning_rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for i in 0..n {
            let g = grads[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let (mh, vh) = (self.m[i] / bc1, self.v[i] / bc2);
            params[i] -= lr * (c.weight_decay * params[i] + mh / (vh.sqrt() + c.eps));
        }
        Ok(())
    }

    /// Updates a network's parameters in place.
    pub fn step(&mut self, net: &mut Network, grads: &[f64]) -> Result<()> {
        self.update(net.params_mut(), grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Loss `Σ t·y` with a fixed random `t`, so its output gradient is `t`.
    fn check_gradient(net: &mut Network, batch: usize, train: bool) {
        let x = rand_vec(batch * net.n_inputs(), 1);
        let t = rand_vec(batch * net.n_outputs(), 2);
        let loss = |net: &mut Network| {
            let y = if train { net.forward_train(&x, batch).unwrap().0 } else { net.predict(&x, batch).unwrap() };
            y.iter().zip(&t).map(|(a, b)| a * b).sum::<f64>()
        };
        let saved_buffers = net.buffers.clone();
        let cache = if train { net.forward_train(&x, batch).unwrap().1 } else { net.forward(&x, batch).unwrap().1 };
        let g = net.backward(&cache, &t).unwrap();
        let p0 = net.params().to_vec();
        for dir in 0..5 {
            let d = rand_vec(p0.len(), 10 + dir);
            let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let h = 1e-6;
            let shifted = |s: f64| p0.iter().zip(&d).map(|(p, d)| p + s * d).collect::<Vec<_>>();
            net.set_params(&shifted(h)).unwrap();
            let lp = loss(net);
            net.set_params(&shifted(-h)).unwrap();
            let lm = loss(net);
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
            assert!(rel < 1e-5, "direction {dir}: fd {fd} analytic {analytic}");
        }
        net.set_params(&p0).unwrap();
        net.buffers = saved_buffers;
    }

    #[test]
    fn mlp_shapes_and_zero_weights() {
        let mut net = Network::new(NetSpec::mlp(32, 64), 0).unwrap();
        assert_eq!((net.n_inputs(), net.n_outputs()), (32, 64));
        net.params_mut().iter_mut().for_each(|p| *p = 0.0);
        assert!(net.predict(&rand_vec(96, 3), 3).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(net.predict(&[0.0; 31], 1), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn single_linear_layer_identity() {
        let mut net = Network::new(NetSpec::Mlp { sizes: vec![3, 3] }, 0).unwrap();
        let mut p = vec![0.0; 12];
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        net.set_params(&p).unwrap();
        let v = [0.5, -2.0, 7.0, 1.0, 2.0, 3.0];
        assert_eq!(net.predict(&v, 2).unwrap(), v);
    }

    #[test]
    fn linear_net_matches_least_squares_gradient() {
        let net = Network::new(NetSpec::Mlp { sizes: vec![4, 3] }, 9).unwrap();
        let (n, x, target) = (5, rand_vec(20, 4), rand_vec(15, 5));
        let (y, cache) = net.forward(&x, n).unwrap();
        let r: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
        let g = net.backward(&cache, &r).unwrap();
        let w = &net.params()[..12];
        for o in 0..3 {
            for i in 0..4 {
                let want: f64 = (0..n).map(|s| {
                    let pred: f64 = (0..4).map(|k| w[o * 4 + k] * x[s * 4 + k]).sum::<f64>() + net.params()[12 + o];
                    2.0 * (pred - target[s * 3 + o]) * x[s * 4 + i]
                }).sum();
                assert!((g[o * 4 + i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero() {
        let net = Network::new(NetSpec::mlp(8, 6), 1).unwrap();
        let (_, cache) = net.forward(&rand_vec(16, 0), 2).unwrap();
        assert!(net.backward(&cache, &[0.0; 12]).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut net = Network::new(NetSpec::mlp(6, 4), 3).unwrap();
        check_gradient(&mut net, 3, false);
    }

    #[test]
    fn cnn_gradient_matches_finite_differences() {
        let spec = NetSpec::Cnn { grid: 4, encoder: vec![3, 5], decoder: vec![4, 3, 3, 2], out_channels: 2 };
        let mut net = Network::new(spec, 4).unwrap();
        assert_eq!(net.n_outputs(), 32);
        check_gradient(&mut net, 3, true);
        check_gradient(&mut net, 2, false);
    }

    #[test]
    fn full_size_cnn_shapes() {
        let net = Network::new(NetSpec::cnn(16, 4), 0).unwrap();
        assert_eq!(net.shapes[4 * 3], [256, 1, 1]);
        assert_eq!(*net.shapes.last().unwrap(), [4, 16, 16]);
        assert_eq!(net.n_outputs(), 1024);
        assert!(Network::new(NetSpec::Cnn { grid: 32, encoder: vec![8, 8], decoder: vec![4, 4], out_channels: 4 }, 0).is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Network::new(NetSpec::mlp(4, 2), 0).unwrap();
        let (_, cache) = net.forward(&[0.1; 4], 1).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn batch_norm_tracks_running_statistics() {
        let mut net = Network::new(NetSpec::Cnn { grid: 2, encoder: vec![1], decoder: vec![1, 1], out_channels: 1 }, 0).unwrap();
        net.forward_train(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], 2).unwrap();
        assert!(net.buffers.iter().all(|v| v.is_finite()));
        assert!(net.buffers[0] != 0.0 || net.buffers[1] != 1.0);
    }

    #[test]
    fn adamw_examples() {
        let mut opt = AdamW::new(1, OptimizerConfig::default());
        let mut w = [1.0];
        opt.update(&mut w, &[0.0]).unwrap();
        assert!((w[0] - (1.0 - 1e-8)).abs() < 1e-15);

        let mut opt = AdamW::new(1, OptimizerConfig { weight_decay: 0.0, ..Default::default() });
        let mut w = [0.0];
        opt.update(&mut w, &[0.5]).unwrap();
        assert!((w[0] + 1e-4).abs() < 1e-11);

        assert!((opt.learning_rate(1000) - 6.0645e-5).abs() < 1e-8);
        assert!(matches!(opt.update(&mut [0.0, 0.0], &[0.0]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn output_map_round_trip() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 10.0]];
        let m = OutputMap::fit(&rows, 1.25).unwrap();
        assert_eq!(m.shift, vec![2.0, 10.0]);
        assert_eq!(m.scale, vec![1.25, 1.0]);
        assert_eq!(m.apply(&[0.0, 1.0]), vec![2.0, 11.0]);
        assert_eq!(m.pull_back(&[1.0, 1.0]), vec![1.25, 1.0]);
    }

    #[test]
    fn mixed_output_map_is_affine_with_adjoint_pull_back() {
        let rows = vec![vec![1.0, 0.0, 2.0, 1.0], vec![0.0, 1.0, -1.0, 3.0], vec![2.0, 2.0, 0.0, 0.0]];
        let dense = vec![2.0, 1.0, 0.0, 0.5, 0.0, 1.0, 3.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 2.0, 0.0, 1.0];
        let blocks = vec![vec![1.0, 2.0, 0.0, 1.0], vec![3.0, 0.0, 1.0, 1.0]];
        for map in [OutputMap::fit_in_basis(&rows, &[dense], 1.0).unwrap(), OutputMap::fit_in_basis(&rows, &blocks, 1.0).unwrap()] {
            let y = [0.3, -0.7, 1.1, 0.2, -0.4, 0.9, 0.0, 0.5];
            let g = [1.0, -2.0, 0.5, 0.25, 0.0, 1.5, -1.0, 2.0];
            let zero = map.apply(&[0.0; 8]);
            let lin: Vec<f64> = map.apply(&y).iter().zip(&zero).map(|(a, b)| a - b).collect();
            let lhs: f64 = lin.iter().zip(&g).map(|(a, b)| a * b).sum();
            let rhs: f64 = map.pull_back(&g).iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
            assert_eq!(map.mix_shape().iter().product::<usize>(), map.mix.len());
        }
        assert!(OutputMap::fit_in_basis(&rows, &[vec![1.0; 9]], 1.0).is_err());
    }
}
