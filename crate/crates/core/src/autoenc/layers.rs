//! Layers with explicit forward caches and hand-written backward passes.
//!
//! `forward` takes `&self` and returns the activation together with what
//! `backward` needs, so a frozen model can run inference concurrently.
//! Batch work is split per sample; per-sample weight gradients are summed
//! in sample order, which keeps results independent of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::Tensor;
use super::AutoencError;
use crate::Scalar;

/// Trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<S>,
    pub grad: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: String, shape: Vec<usize>, value: Vec<S>) -> Self {
        let n = value.len();
        assert_eq!(shape.iter().product::<usize>(), n);
        Self { name, shape, value, grad: vec![S::zero(); n] }
    }

    pub fn uniform(name: String, shape: Vec<usize>, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
        Self::new(name, shape, value)
    }

    pub fn filled(name: String, shape: Vec<usize>, v: f64) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![S::lit(v); n])
    }
}

/// Rows `c*k*k`, columns `h*w`; zero padding `k / 2`, stride 1.
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, cols: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(S::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    out[..x0.min(w)].fill(S::zero());
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                    out[x1.max(x0).min(w)..].fill(S::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, dx: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dxo = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dxo).max(0) as usize;
                    let x1 = (w as isize - dxo).min(w as isize).max(0) as usize;
                    if x1 <= x0 {
                        continue;
                    }
                    let src = &row[y * w + x0..y * w + x1];
                    let s0 = (x0 as isize + dxo) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, &v) in dst.iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution, odd kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<S> {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
}

impl<S: Scalar> Conv2d<S> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, bias: bool, gain: f64, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "convolution kernel must be odd");
        let fan_in = (cin * k * k) as f64;
        let weight = Param::uniform(format!("{name}.weight"), vec![cout, cin, k, k], (gain / fan_in).sqrt(), rng);
        let bias = bias.then(|| Param::uniform(format!("{name}.bias"), vec![cout], 1.0 / fan_in.sqrt(), rng));
        Self { cin, cout, k, weight, bias }
    }

    fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, _, h, w] = x.shape;
        let hw = h * w;
        let ck = self.cin * self.k * self.k;
        let mut out = Tensor::zeros([n, self.cout, h, w]);
        out.data.par_chunks_mut(self.cout * hw).zip(x.data.par_chunks(self.cin * hw)).for_each(|(o, xi)| {
            let owned;
            let cols: &[S] = if self.k == 1 {
                xi
            } else {
                let mut c = vec![S::zero(); ck * hw];
                im2col(xi, self.cin, h, w, self.k, &mut c);
                owned = c;
                &owned
            };
            S::gemm(self.cout, ck, hw, S::one(), &self.weight.value, (ck as isize, 1), cols, (hw as isize, 1), S::zero(), o, (hw as isize, 1));
            if let Some(b) = &self.bias {
                for (co, row) in o.chunks_mut(hw).enumerate() {
                    let bv = b.value[co];
                    row.iter_mut().for_each(|v| *v += bv);
                }
            }
        });
        out
    }

    fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, _, h, w] = x.shape;
        let hw = h * w;
        let ck = self.cin * self.k * self.k;
        let mut dx = Tensor::zeros(x.shape);
        let wt = &self.weight.value;
        let (cin, cout, k) = (self.cin, self.cout, self.k);
        let per_sample: Vec<Vec<S>> = dx
            .data
            .par_chunks_mut(cin * hw)
            .enumerate()
            .map(|(i, dxi)| {
                let xi = x.sample(i);
                let dyi = dy.sample(i);
                let mut dw = vec![S::zero(); cout * ck];
                if k == 1 {
                    S::gemm(cout, hw, ck, S::one(), dyi, (hw as isize, 1), xi, (1, hw as isize), S::zero(), &mut dw, (ck as isize, 1));
                    S::gemm(ck, cout, hw, S::one(), wt, (1, ck as isize), dyi, (hw as isize, 1), S::zero(), dxi, (hw as isize, 1));
                } else {
                    let mut cols = vec![S::zero(); ck * hw];
                    im2col(xi, cin, h, w, k, &mut cols);
                    S::gemm(cout, hw, ck, S::one(), dyi, (hw as isize, 1), &cols, (1, hw as isize), S::zero(), &mut dw, (ck as isize, 1));
                    S::gemm(ck, cout, hw, S::one(), wt, (1, ck as isize), dyi, (hw as isize, 1), S::zero(), &mut cols, (hw as isize, 1));
                    col2im(&cols, cin, h, w, k, dxi);
                }
                dw
            })
            .collect();
        for dw in &per_sample {
            for (g, &v) in self.weight.grad.iter_mut().zip(dw) {
                *g += v;
            }
        }
        if let Some(b) = &mut self.bias {
            for i in 0..n {
                for (co, row) in dy.sample(i).chunks(hw).enumerate() {
                    b.grad[co] += row.iter().copied().sum::<S>();
                }
            }
        }
        dx
    }
}

/// Per-channel batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<S> {
    pub channels: usize,
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: Vec<S>,
    pub running_var: Vec<S>,
    pub momentum: f64,
    pub eps: f64,
}

impl<S: Scalar> BatchNorm2d<S> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], 1.0),
            beta: Param::filled(format!("{name}.beta"), vec![channels], 0.0),
            running_mean: vec![S::zero(); channels],
            running_var: vec![S::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Returns output, normalized input, per-channel `1/sigma`, batch mean
    /// and unbiased batch variance.
    #[allow(clippy::type_complexity)]
    fn forward_train(&self, x: &Tensor<S>) -> (Tensor<S>, Tensor<S>, Vec<S>, Vec<S>, Vec<S>) {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut mean = vec![S::zero(); c];
        let mut var_u = vec![S::zero(); c];
        let mut inv_std = vec![S::zero(); c];
        for ch in 0..c {
            let mut s = 0f64;
            for i in 0..n {
                s += x.data[(i * c + ch) * hw..][..hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mu = s / m;
            let mut ss = 0f64;
            for i in 0..n {
                ss += x.data[(i * c + ch) * hw..][..hw].iter().map(|v| (v.as_f64() - mu).powi(2)).sum::<f64>();
            }
            let var = ss / m;
            mean[ch] = S::lit(mu);
            var_u[ch] = S::lit(if m > 1.0 { ss / (m - 1.0) } else { var });
            inv_std[ch] = S::lit(1.0 / (var + self.eps).sqrt());
        }
        let mut xhat = Tensor::zeros(x.shape);
        let mut y = Tensor::zeros(x.shape);
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let (mu, is, g, b) = (mean[ch], inv_std[ch], self.gamma.value[ch], self.beta.value[ch]);
                for j in off..off + hw {
                    let xh = (x.data[j] - mu) * is;
                    xhat.data[j] = xh;
                    y.data[j] = g * xh + b;
                }
            }
        }
        (y, xhat, inv_std, mean, var_u)
    }

    fn forward_eval(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = x.shape;
        let hw = h * w;
        let mut y = Tensor::zeros(x.shape);
        for ch in 0..c {
            let is = S::one() / (self.running_var[ch] + S::lit(self.eps)).sqrt();
            let scale = self.gamma.value[ch] * is;
            let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    y.data[j] = x.data[j] * scale + shift;
                }
            }
        }
        y
    }

    fn update_running(&mut self, mean: &[S], var_u: &[S]) {
        let m = S::lit(self.momentum);
        for ch in 0..self.channels {
            self.running_mean[ch] = (S::one() - m) * self.running_mean[ch] + m * mean[ch];
            self.running_var[ch] = (S::one() - m) * self.running_var[ch] + m * var_u[ch];
        }
    }

    fn backward(&mut self, xhat: &Tensor<S>, inv_std: &[S], dy: &Tensor<S>) -> Tensor<S> {
        let [n, c, h, w] = dy.shape;
        let hw = h * w;
        let m = S::lit((n * hw) as f64);
        let mut dx = Tensor::zeros(dy.shape);
        for ch in 0..c {
            let mut sum_dy = S::zero();
            let mut sum_dy_xh = S::zero();
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    sum_dy += dy.data[j];
                    sum_dy_xh += dy.data[j] * xhat.data[j];
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let k = self.gamma.value[ch] * inv_std[ch] / m;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    dx.data[j] = k * (m * dy.data[j] - sum_dy - xhat.data[j] * sum_dy_xh);
                }
            }
        }
        dx
    }
}

/// 2x2 stride-2 transposed convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2x2<S> {
    pub cin: usize,
    pub cout: usize,
    /// Shape `[cin, cout, 2, 2]`.
    pub weight: Param<S>,
    pub bias: Param<S>,
}

impl<S: Scalar> ConvTranspose2x2<S> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = cin as f64;
        Self {
            cin,
            cout,
            weight: Param::uniform(format!("{name}.weight"), vec![cin, cout, 2, 2], (3.0 / fan_in).sqrt(), rng),
            bias: Param::uniform(format!("{name}.bias"), vec![cout], 1.0 / fan_in.sqrt(), rng),
        }
    }

    fn forward(&self, x: &Tensor<S>) -> Tensor<S> {
        let [n, _, h, w] = x.shape;
        let (hw, c4) = (h * w, self.cout * 4);
        let mut out = Tensor::zeros([n, self.cout, 2 * h, 2 * w]);
        out.data.par_chunks_mut(self.cout * 4 * hw).zip(x.data.par_chunks(self.cin * hw)).for_each(|(o, xi)| {
            let mut tmp = vec![S::zero(); c4 * hw];
            S::gemm(c4, self.cin, hw, S::one(), &self.weight.value, (1, c4 as isize), xi, (hw as isize, 1), S::zero(), &mut tmp, (hw as isize, 1));
            let w2 = 2 * w;
            for co in 0..self.cout {
                let b = self.bias.value[co];
                for ky in 0..2 {
                    for kx in 0..2 {
                        let row = &tmp[(co * 4 + ky * 2 + kx) * hw..][..hw];
                        for y in 0..h {
                            let dst = &mut o[co * 4 * hw + (2 * y + ky) * w2..];
                            for x in 0..w {
                                dst[2 * x + kx] = row[y * w + x] + b;
                            }
                        }
                    }
                }
            }
        });
        out
    }

    fn backward(&mut self, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
        let [n, _, h, w] = x.shape;
        let (hw, c4, w2) = (h * w, self.cout * 4, 2 * w);
        let (cin, cout) = (self.cin, self.cout);
        let wt = &self.weight.value;
        let mut dx = Tensor::zeros(x.shape);
        let per_sample: Vec<(Vec<S>, Vec<S>)> = dx
            .data
            .par_chunks_mut(cin * hw)
            .enumerate()
            .map(|(i, dxi)| {
                let dyi = dy.sample(i);
                let mut tmp = vec![S::zero(); c4 * hw];
                let mut db = vec![S::zero(); cout];
                for co in 0..cout {
                    for ky in 0..2 {
                        for kx in 0..2 {
                            let row = &mut tmp[(co * 4 + ky * 2 + kx) * hw..][..hw];
                            for y in 0..h {
                                let src = &dyi[co * 4 * hw + (2 * y + ky) * w2..];
                                for x in 0..w {
                                    row[y * w + x] = src[2 * x + kx];
                                }
                            }
                            db[co] += row.iter().copied().sum::<S>();
                        }
                    }
                }
                let mut dw = vec![S::zero(); cin * c4];
                S::gemm(cin, hw, c4, S::one(), x.sample(i), (hw as isize, 1), &tmp, (1, hw as isize), S::zero(), &mut dw, (c4 as isize, 1));
                S::gemm(cin, c4, hw, S::one(), wt, (c4 as isize, 1), &tmp, (hw as isize, 1), S::zero(), dxi, (hw as isize, 1));
                (dw, db)
            })
            .collect();
        for (dw, db) in &per_sample {
            for (g, &v) in self.weight.grad.iter_mut().zip(dw) {
                *g += v;
            }
            for (g, &v) in self.bias.grad.iter_mut().zip(db) {
                *g += v;
            }
        }
        let _ = n;
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<S> {
    Conv(Conv2d<S>),
    BatchNorm(BatchNorm2d<S>),
    Relu,
    MaxPool2,
    UpConv(ConvTranspose2x2<S>),
}

/// What a layer keeps from forward for its backward pass.
pub enum Cache<S> {
    Input(Tensor<S>),
    BatchNorm { xhat: Tensor<S>, inv_std: Vec<S> },
    Relu(Tensor<S>),
    MaxPool { argmax: Vec<u32>, in_shape: [usize; 4] },
    None,
}

impl<S: Scalar> Layer<S> {
    pub fn params(&self) -> Vec<&Param<S>> {
        match self {
            Layer::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            Layer::UpConv(u) => vec![&u.weight, &u.bias],
            Layer::Relu | Layer::MaxPool2 => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        match self {
            Layer::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            Layer::UpConv(u) => vec![&mut u.weight, &mut u.bias],
            Layer::Relu | Layer::MaxPool2 => Vec::new(),
        }
    }

    pub fn output_shape(&self, s: [usize; 4]) -> Result<[usize; 4], AutoencError> {
        match self {
            Layer::Conv(c) => {
                if s[1] != c.cin {
                    return Err(AutoencError::ShapeMismatch(format!("conv expects {} channels, got {}", c.cin, s[1])));
                }
                Ok([s[0], c.cout, s[2], s[3]])
            }
            Layer::BatchNorm(b) => {
                if s[1] != b.channels {
                    return Err(AutoencError::ShapeMismatch(format!("batch norm expects {} channels, got {}", b.channels, s[1])));
                }
                Ok(s)
            }
            Layer::Relu => Ok(s),
            Layer::MaxPool2 => {
                if s[2] % 2 != 0 || s[3] % 2 != 0 {
                    return Err(AutoencError::ShapeMismatch(format!("max pool needs even spatial dims, got {}x{}", s[2], s[3])));
                }
                Ok([s[0], s[1], s[2] / 2, s[3] / 2])
            }
            Layer::UpConv(u) => {
                if s[1] != u.cin {
                    return Err(AutoencError::ShapeMismatch(format!("up-conv expects {} channels, got {}", u.cin, s[1])));
                }
                Ok([s[0], u.cout, s[2] * 2, s[3] * 2])
            }
        }
    }

    /// Forward pass. In training mode batch norm uses batch statistics and
    /// returns them for the running-average update.
    #[allow(clippy::type_complexity)]
    pub fn forward(&self, x: Tensor<S>, train: bool) -> (Tensor<S>, Cache<S>, Option<(Vec<S>, Vec<S>)>) {
        match self {
            Layer::Conv(c) => {
                let y = c.forward(&x);
                (y, if train { Cache::Input(x) } else { Cache::None }, None)
            }
            Layer::BatchNorm(b) => {
                if train {
                    let (y, xhat, inv_std, mean, var) = b.forward_train(&x);
                    (y, Cache::BatchNorm { xhat, inv_std }, Some((mean, var)))
                } else {
                    (b.forward_eval(&x), Cache::None, None)
                }
            }
            Layer::Relu => {
                let mut y = x;
                y.data.iter_mut().for_each(|v| {
                    if !(*v > S::zero()) {
                        *v = S::zero();
                    }
                });
                let cache = if train { Cache::Relu(y.clone()) } else { Cache::None };
                (y, cache, None)
            }
            Layer::MaxPool2 => {
                let [n, c, h, w] = x.shape;
                let (ho, wo) = (h / 2, w / 2);
                let mut y = Tensor::zeros([n, c, ho, wo]);
                let mut argmax = if train { vec![0u32; n * c * ho * wo] } else { Vec::new() };
                for p in 0..n * c {
                    let plane = &x.data[p * h * w..(p + 1) * h * w];
                    for r in 0..ho {
                        for col in 0..wo {
                            let mut best = 2 * r * w + 2 * col;
                            for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                                let idx = (2 * r + dr) * w + 2 * col + dc;
                                if plane[idx] > plane[best] {
                                    best = idx;
                                }
                            }
                            let o = p * ho * wo + r * wo + col;
                            y.data[o] = plane[best];
                            if train {
                                argmax[o] = best as u32;
                            }
                        }
                    }
                }
                let cache = if train { Cache::MaxPool { argmax, in_shape: x.shape } } else { Cache::None };
                (y, cache, None)
            }
            Layer::UpConv(u) => {
                let y = u.forward(&x);
                (y, if train { Cache::Input(x) } else { Cache::None }, None)
            }
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &Cache<S>, dy: Tensor<S>) -> Tensor<S> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => c.backward(x, &dy),
            (Layer::BatchNorm(b), Cache::BatchNorm { xhat, inv_std }) => b.backward(xhat, inv_std, &dy),
            (Layer::Relu, Cache::Relu(y)) => {
                let mut dx = dy;
                for (d, &o) in dx.data.iter_mut().zip(&y.data) {
                    if !(o > S::zero()) {
                        *d = S::zero();
                    }
                }
                dx
            }
            (Layer::MaxPool2, Cache::MaxPool { argmax, in_shape }) => {
                let [_, _, h, w] = *in_shape;
                let plane_out = (h / 2) * (w / 2);
                let mut dx = Tensor::zeros(*in_shape);
                for (o, (&a, &g)) in argmax.iter().zip(&dy.data).enumerate() {
                    let p = o / plane_out;
                    dx.data[p * h * w + a as usize] += g;
                }
                dx
            }
            (Layer::UpConv(u), Cache::Input(x)) => u.backward(x, &dy),
            _ => panic!("backward called with a cache from a different layer or an inference pass"),
        }
    }

    pub fn update_running(&mut self, stats: &(Vec<S>, Vec<S>)) {
        if let Layer::BatchNorm(b) = self {
            b.update_running(&stats.0, &stats.1);
        }
    }
}
