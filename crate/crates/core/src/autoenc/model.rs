//! The no-skip UNet autoencoder: encoder of double-conv blocks with max
//! pooling, a bottleneck double conv, and a mirrored decoder with
//! transposed-convolution upsampling and no skip concatenation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm2d, Cache, Conv2d, ConvTranspose2x2, Layer, Param};
use super::loss::{loss_and_logit_grad, LossParts};
use super::tensor::Tensor;
use super::AutoencError;
use crate::seed;
use crate::voxform::MipStack;
use crate::Scalar;

/// Layer widths and input geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    pub input_channels: usize,
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub bottleneck_channels: usize,
    pub batch_norm: bool,
}

impl ArchitectureDescriptor {
    /// UNet widths `[64, 128, 256, 512, 1024]` divided by 8, at 256x256.
    pub fn reference() -> Self {
        Self::with_size(256)
    }

    /// Reference widths at another input size (64/128 for desk-scale runs).
    pub fn with_size(input_size: usize) -> Self {
        Self {
            input_channels: 3,
            input_size,
            encoder_channels: vec![8, 16, 32, 64],
            bottleneck_channels: 128,
            batch_norm: true,
        }
    }

    /// One level, four channels, 8x8 input: the gradient-check network.
    pub fn tiny() -> Self {
        Self { input_channels: 3, input_size: 8, encoder_channels: vec![4], bottleneck_channels: 8, batch_norm: true }
    }

    pub fn levels(&self) -> usize {
        self.encoder_channels.len()
    }

    /// `[channels, h, w]` of the bottleneck activation.
    pub fn bottleneck_shape(&self) -> [usize; 3] {
        let s = self.input_size >> self.levels();
        [self.bottleneck_channels, s, s]
    }

    pub fn bottleneck_len(&self) -> usize {
        self.bottleneck_shape().iter().product()
    }

    pub fn validate(&self) -> Result<(), AutoencError> {
        let div = 1usize << self.levels();
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(AutoencError::ShapeMismatch(format!(
                "input size {} not divisible by 2^{}",
                self.input_size,
                self.levels()
            )));
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) || self.bottleneck_channels == 0 {
            return Err(AutoencError::ShapeMismatch("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Flattened bottleneck activation of one subject.
#[derive(Clone, Debug, PartialEq)]
pub struct BottleneckFeature<S> {
    pub subject_id: String,
    pub shape: [usize; 3],
    pub values: Vec<S>,
}

pub struct ForwardOutput<S> {
    /// Sigmoid probabilities, same shape as the input.
    pub recon: Tensor<S>,
    pub bottleneck: Tensor<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<S> {
    pub arch: ArchitectureDescriptor,
    pub layers: Vec<Layer<S>>,
    /// Index of the layer whose output is the bottleneck feature.
    pub bottleneck_layer: usize,
    pub init_seed: u64,
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Autoencoder<S> {
    /// Builds the network with seeded fan-in scaled uniform weights.
    pub fn new(arch: ArchitectureDescriptor, init_seed: u64) -> Result<Self, AutoencError> {
        arch.validate()?;
        let mut rng = seed::rng(init_seed);
        let bn = arch.batch_norm;
        let mut layers = Vec::new();
        let push_block = |layers: &mut Vec<Layer<S>>, name: &str, cin: usize, cout: usize, rng: &mut _| {
            for (j, ci) in [(1, cin), (2, cout)] {
                let n = format!("{name}.conv{j}");
                layers.push(Layer::Conv(Conv2d::new(&n, ci, cout, 3, !bn, 6.0, rng)));
                if bn {
                    layers.push(Layer::BatchNorm(BatchNorm2d::new(&format!("{name}.bn{j}"), cout)));
                }
                layers.push(Layer::Relu);
            }
        };
        let mut c = arch.input_channels;
        for (i, &w) in arch.encoder_channels.iter().enumerate() {
            push_block(&mut layers, &format!("enc{i}"), c, w, &mut rng);
            layers.push(Layer::MaxPool2);
            c = w;
        }
        push_block(&mut layers, "bottleneck", c, arch.bottleneck_channels, &mut rng);
        let bottleneck_layer = layers.len() - 1;
        c = arch.bottleneck_channels;
        for (i, &w) in arch.encoder_channels.iter().enumerate().rev() {
            layers.push(Layer::UpConv(ConvTranspose2x2::new(&format!("dec{i}.up"), c, w, &mut rng)));
            push_block(&mut layers, &format!("dec{i}"), w, w, &mut rng);
            c = w;
        }
        layers.push(Layer::Conv(Conv2d::new("head", c, arch.input_channels, 1, true, 3.0, &mut rng)));
        Ok(Self { arch, layers, bottleneck_layer, init_seed })
    }

    pub fn params(&self) -> Vec<&Param<S>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<S> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<S> {
        self.params().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[S]) {
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Batch-norm running statistics, in layer order.
    pub fn running_stats(&self) -> Vec<(&[S], &[S])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(b) => Some((b.running_mean.as_slice(), b.running_var.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn set_running_stats(&mut self, stats: &[(Vec<S>, Vec<S>)]) {
        let mut it = stats.iter();
        for l in &mut self.layers {
            if let Layer::BatchNorm(b) = l {
                let (m, v) = it.next().expect("running stats for every batch norm layer");
                b.running_mean.clone_from(m);
                b.running_var.clone_from(v);
            }
        }
    }

    fn check_input(&self, batch: &Tensor<S>) -> Result<(), AutoencError> {
        let a = &self.arch;
        if batch.shape[1..] != [a.input_channels, a.input_size, a.input_size] {
            return Err(AutoencError::ShapeMismatch(format!(
                "expected Bx{}x{}x{}, got {:?}",
                a.input_channels, a.input_size, a.input_size, batch.shape
            )));
        }
        if batch.n() == 0 {
            return Err(AutoencError::ShapeMismatch("empty batch".into()));
        }
        if !batch.is_finite() {
            return Err(AutoencError::NonFinite("input batch"));
        }
        if batch.data.iter().any(|&v| v < S::zero() || v > S::one()) {
            return Err(AutoencError::InvalidInput("input values must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Inference pass (batch norm uses running statistics).
    pub fn forward(&self, batch: &Tensor<S>) -> Result<ForwardOutput<S>, AutoencError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        let mut bottleneck = None;
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(x, false).0;
            if i == self.bottleneck_layer {
                bottleneck = Some(x.clone());
            }
        }
        let recon = x.map(sigmoid);
        Ok(ForwardOutput { recon, bottleneck: bottleneck.expect("bottleneck layer inside the network") })
    }

    /// Bottleneck activations only; stops after the encoder.
    pub fn encode_batch(&self, batch: &Tensor<S>) -> Result<Tensor<S>, AutoencError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for l in &self.layers[..=self.bottleneck_layer] {
            x = l.forward(x, false).0;
        }
        Ok(x)
    }

    pub fn encode(&self, stack: &MipStack) -> Result<BottleneckFeature<S>, AutoencError> {
        let t = stacks_to_tensor(&[stack])?;
        let b = self.encode_batch(&t)?;
        if !b.is_finite() {
            return Err(AutoencError::NonFinite("bottleneck"));
        }
        Ok(BottleneckFeature { subject_id: stack.subject_id.clone(), shape: self.arch.bottleneck_shape(), values: b.data })
    }

    /// Training-mode forward and backward. Gradients are written into the
    /// parameters (previous values discarded) and batch-norm running
    /// statistics are updated when `update_stats` is set.
    pub fn loss_and_grad(&mut self, batch: &Tensor<S>, target: &Tensor<S>, update_stats: bool) -> Result<LossParts, AutoencError> {
        self.check_input(batch)?;
        if target.shape != batch.shape {
            return Err(AutoencError::ShapeMismatch(format!("target {:?} vs batch {:?}", target.shape, batch.shape)));
        }
        self.zero_grads();
        let mut caches: Vec<Cache<S>> = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::new();
        let mut x = batch.clone();
        for (i, l) in self.layers.iter().enumerate() {
            let (y, cache, st) = l.forward(x, true);
            caches.push(cache);
            if let Some(st) = st {
                stats.push((i, st));
            }
            x = y;
        }
        let recon = x.map(sigmoid);
        let (parts, g) = loss_and_logit_grad(&recon.data, &target.data)?;
        let mut dy = Tensor::from_vec(recon.shape, g);
        for (l, cache) in self.layers.iter_mut().zip(&caches).rev() {
            dy = l.backward(cache, dy);
        }
        if self.params().iter().any(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(AutoencError::NonFinite("gradient"));
        }
        if update_stats {
            for (i, st) in &stats {
                self.layers[*i].update_running(st);
            }
        }
        Ok(parts)
    }

    /// Loss in training mode without touching gradients or statistics.
    pub fn train_mode_loss(&self, batch: &Tensor<S>, target: &Tensor<S>) -> Result<LossParts, AutoencError> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for l in &self.layers {
            x = l.forward(x, true).0;
        }
        super::loss::loss(&x.map(sigmoid).data, &target.data)
    }

    /// Per-layer table with output shapes and parameter counts.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mut shape = [1, self.arch.input_channels, self.arch.input_size, self.arch.input_size];
        let _ = writeln!(s, "{:<4} {:<28} {:<22} {:>10}", "#", "layer", "output", "params");
        for (i, l) in self.layers.iter().enumerate() {
            shape = l.output_shape(shape).expect("architecture is self-consistent");
            let name = match l {
                Layer::Conv(c) => format!("{} {}x{}", c.weight.name.trim_end_matches(".weight"), c.k, c.k),
                Layer::BatchNorm(b) => b.gamma.name.trim_end_matches(".gamma").to_string(),
                Layer::Relu => "relu".into(),
                Layer::MaxPool2 => "maxpool 2x2".into(),
                Layer::UpConv(u) => format!("{} 2x2/2", u.weight.name.trim_end_matches(".weight")),
            };
            let mark = if i == self.bottleneck_layer { " <- bottleneck" } else { "" };
            let n: usize = l.params().iter().map(|p| p.value.len()).sum();
            let _ = writeln!(s, "{:<4} {:<28} {:<22} {:>10}{}", i, name, format!("{}x{}x{}", shape[1], shape[2], shape[3]), n, mark);
        }
        let [c, h, w] = self.arch.bottleneck_shape();
        let _ = writeln!(s, "bottleneck: {c}x{h}x{w} ({} values)", c * h * w);
        let _ = writeln!(s, "trainable parameters: {}", self.parameter_count());
        s
    }
}

/// Stacks MIP stacks into a `B x 3 x H x W` tensor.
pub fn stacks_to_tensor<S: Scalar>(stacks: &[&MipStack]) -> Result<Tensor<S>, AutoencError> {
    let first = stacks.first().ok_or_else(|| AutoencError::ShapeMismatch("no stacks".into()))?;
    let size = first.size;
    let mut data = Vec::with_capacity(stacks.len() * 3 * size * size);
    for s in stacks {
        if s.size != size {
            return Err(AutoencError::ShapeMismatch(format!("stack {} has size {}, expected {size}", s.subject_id, s.size)));
        }
        data.extend(s.data.iter().map(|&v| S::lit(v as f64)));
    }
    Ok(Tensor::from_vec([stacks.len(), 3, size, size], data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_shapes() {
        let m = Autoencoder::<f64>::new(ArchitectureDescriptor::tiny(), 1).unwrap();
        let x = Tensor::from_vec([2, 3, 8, 8], (0..384).map(|i| (i % 7) as f64 / 7.0).collect());
        let out = m.forward(&x).unwrap();
        assert_eq!(out.recon.shape, x.shape);
        assert_eq!(out.bottleneck.shape, [2, 8, 4, 4]);
        assert!(out.recon.data.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn wrong_input_dims() {
        let m = Autoencoder::<f32>::new(ArchitectureDescriptor::tiny(), 1).unwrap();
        let x = Tensor::<f32>::zeros([1, 3, 16, 16]);
        assert!(matches!(m.forward(&x), Err(AutoencError::ShapeMismatch(_))));
        let x = Tensor::<f32>::zeros([1, 2, 8, 8]);
        assert!(matches!(m.forward(&x), Err(AutoencError::ShapeMismatch(_))));
        assert!(ArchitectureDescriptor::with_size(100).validate().is_err());
    }

    #[test]
    fn zero_weights_give_half() {
        let mut m = Autoencoder::<f64>::new(ArchitectureDescriptor::tiny(), 1).unwrap();
        let n = m.parameter_count();
        m.set_flat_params(&vec![0.0; n]);
        let out = m.forward(&Tensor::zeros([1, 3, 8, 8])).unwrap();
        assert!(out.recon.data.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn summary_reports_count() {
        let m = Autoencoder::<f32>::new(ArchitectureDescriptor::with_size(64), 0).unwrap();
        let s = m.summary();
        assert!(s.contains(&format!("trainable parameters: {}", m.parameter_count())));
        assert!(s.contains("bottleneck: 128x4x4"));
    }
}
