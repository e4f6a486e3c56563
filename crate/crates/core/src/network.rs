//! The full model: one convolution layer, one max-pooling layer, then a stack
//! of dense layers, trained with plain gradient descent on cross-entropy.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activations::Activation;
use crate::dataio::Dataset;
use crate::error::{shape_err, Error, Result};
use crate::layers::{
    conv_backward, conv_forward, dense_backward_with, dense_forward, maxpool_backward_with,
    maxpool_forward, ConvGeometry, ConvGrads, ConvTrace, DenseLayer, DenseTrace, Fault, KernelBank,
    PoolGeometry, PoolTrace,
};
use crate::losses::{ce_grad, Loss};
use crate::tensor::{flatten, unflatten, Tensor};

/// Activation after the convolution.
pub const CONV_ACTIVATION: Activation = Activation::Relu;

/// Everything needed to build a network before any weights exist.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub conv_kernels: usize,
    pub conv_size: usize,
    pub conv_stride: usize,
    pub conv_pad: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    /// Output width of each dense layer; the last one is the class count.
    pub dense_widths: Vec<usize>,
}

impl Architecture {
    pub fn conv_geometry(&self) -> ConvGeometry {
        ConvGeometry {
            in_c: self.in_c,
            in_h: self.in_h,
            in_w: self.in_w,
            k_h: self.conv_size,
            k_w: self.conv_size,
            n_kernels: self.conv_kernels,
            stride: self.conv_stride,
            pad: self.conv_pad,
        }
    }

    pub fn pool_geometry(&self) -> PoolGeometry {
        PoolGeometry {
            window: self.pool_window,
            stride: self.pool_stride,
        }
    }

    /// Length of the flattened pooled volume.
    pub fn flat_len(&self) -> Result<usize> {
        let (h1, w1, d1) = self.conv_geometry().output_dims()?;
        let (h2, w2, d2) = crate::layers::pool_output_dims(h1, w1, d1, &self.pool_geometry())?;
        Ok(h2 * w2 * d2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    conv: KernelBank,
    pool: PoolGeometry,
    dense: Vec<DenseLayer>,
}

/// Per-layer caches from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Traces {
    pub conv: ConvTrace,
    pub pool: PoolTrace,
    pub dense: Vec<DenseTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParamGrads {
    pub weights: Tensor,
    pub biases: Tensor,
}

/// Loss gradients shaped exactly like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub conv: ConvGrads,
    pub dense: Vec<DenseParamGrads>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            conv: ConvGrads {
                kernels: vec![0.0; net.conv.kernels().len()],
                biases: vec![0.0; net.conv.biases().len()],
            },
            dense: net
                .dense
                .iter()
                .map(|l| DenseParamGrads {
                    weights: Tensor::zeros(l.weights().shape()).expect("valid layer shape"),
                    biases: Tensor::zeros(l.biases().shape()).expect("valid layer shape"),
                })
                .collect(),
        }
    }

    /// Named flat views in the canonical group order shared with [`Network::param_groups_mut`].
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("conv.kernels".to_string(), &self.conv.kernels[..]),
            ("conv.biases".to_string(), &self.conv.biases[..]),
        ];
        for (l, g) in self.dense.iter().enumerate() {
            out.push((format!("dense{l}.weights"), g.weights.data()));
            out.push((format!("dense{l}.biases"), g.biases.data()));
        }
        out
    }

    fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.conv.kernels[..], &mut self.conv.biases[..]];
        for g in &mut self.dense {
            out.push(g.weights.data_mut());
            out.push(g.biases.data_mut());
        }
        out
    }

    fn accumulate(&mut self, other: &GradientSet) {
        for (dst, src) in self.groups_mut().into_iter().zip(other.groups()) {
            for (d, s) in dst.iter_mut().zip(src.1) {
                *d += s;
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        for group in self.groups_mut() {
            for v in group {
                *v *= factor;
            }
        }
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.groups()
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Domain(format!(
                "learning rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Domain(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Training-set metrics recorded after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mean_loss: f64,
    pub accuracy: f64,
}

impl Network {
    /// Assembles a network, checking that the extents chain from the
    /// convolution through pooling into every dense layer.
    pub fn new(conv: KernelBank, pool: PoolGeometry, dense: Vec<DenseLayer>) -> Result<Self> {
        let (h1, w1, d1) = conv.geometry().output_dims()?;
        let (h2, w2, d2) = crate::layers::pool_output_dims(h1, w1, d1, &pool)?;
        if dense.is_empty() {
            return Err(Error::Geometry(
                "at least one dense layer is required".into(),
            ));
        }
        let mut width = h2 * w2 * d2;
        for (l, layer) in dense.iter().enumerate() {
            if layer.n_in() != width {
                return Err(Error::Geometry(format!(
                    "dense layer {l} takes {} inputs but receives {width}",
                    layer.n_in()
                )));
            }
            width = layer.n_out();
        }
        Ok(Self { conv, pool, dense })
    }

    /// Random weights, uniform in `±1/sqrt(fan_in)`, and zero biases.
    /// ReLU hidden layers and a sigmoid output layer.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        let geometry = arch.conv_geometry();
        geometry.output_dims()?;
        let flat = arch.flat_len()?;
        if arch.dense_widths.is_empty() || arch.dense_widths.contains(&0) {
            return Err(Error::Geometry(format!(
                "dense widths must be non-empty and positive, got {:?}",
                arch.dense_widths
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |n: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
        };
        let kernels = uniform(geometry.kernel_len(), geometry.fan_in());
        let conv = KernelBank::new(geometry, kernels, vec![0.0; geometry.n_kernels])?;

        let mut dense = Vec::with_capacity(arch.dense_widths.len());
        let mut n_in = flat;
        for (l, &n_out) in arch.dense_widths.iter().enumerate() {
            let activation = if l + 1 == arch.dense_widths.len() {
                Activation::Sigmoid
            } else {
                Activation::Relu
            };
            let weights = Tensor::from_vec(&[n_out, n_in], uniform(n_out * n_in, n_in))?;
            dense.push(DenseLayer::new(
                weights,
                Tensor::zeros(&[n_out])?,
                activation,
            )?);
            n_in = n_out;
        }
        Self::new(conv, arch.pool_geometry(), dense)
    }

    pub fn conv(&self) -> &KernelBank {
        &self.conv
    }

    pub fn pool(&self) -> &PoolGeometry {
        &self.pool
    }

    pub fn dense(&self) -> &[DenseLayer] {
        &self.dense
    }

    pub fn input_shape(&self) -> [usize; 3] {
        let g = self.conv.geometry();
        [g.in_c, g.in_h, g.in_w]
    }

    pub fn class_count(&self) -> usize {
        self.dense.last().map_or(0, DenseLayer::n_out)
    }

    /// Flat mutable views of every parameter group, in the order used by
    /// [`GradientSet::groups`].
    pub fn param_groups_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let (kernels, biases) = self.conv.params_mut();
        let mut out = vec![
            ("conv.kernels".to_string(), kernels),
            ("conv.biases".to_string(), biases),
        ];
        for (l, layer) in self.dense.iter_mut().enumerate() {
            let (weights, biases) = layer.params_mut();
            out.push((format!("dense{l}.weights"), weights));
            out.push((format!("dense{l}.biases"), biases));
        }
        out
    }

    pub fn forward(&self, image: &Tensor) -> Result<(Tensor, Traces)> {
        let (_, act, conv) = conv_forward(image, &self.conv, CONV_ACTIVATION)?;
        let (pooled, pool) = maxpool_forward(&act, &self.pool)?;
        let mut a = flatten(&pooled);
        let mut dense = Vec::with_capacity(self.dense.len());
        for layer in &self.dense {
            let (_, out, trace) = dense_forward(&a, layer)?;
            dense.push(trace);
            a = out;
        }
        Ok((a, Traces { conv, pool, dense }))
    }

    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        self.forward(image).map(|(yhat, _)| yhat)
    }

    /// Cross-entropy of one sample.
    pub fn sample_loss(&self, image: &Tensor, label: &Tensor) -> Result<f64> {
        Loss::CrossEntropy.eval(&self.predict(image)?, label)
    }

    /// Gradient of the single-sample cross-entropy loss.
    pub fn backward(&self, traces: &Traces, y: &Tensor) -> Result<GradientSet> {
        self.backward_with(traces, y, None)
    }

    /// [`Network::backward`] with an optional injected defect.
    pub fn backward_with(
        &self,
        traces: &Traces,
        y: &Tensor,
        fault: Option<Fault>,
    ) -> Result<GradientSet> {
        if traces.dense.len() != self.dense.len() {
            return Err(shape_err(format!(
                "{} dense traces for {} dense layers",
                traces.dense.len(),
                self.dense.len()
            )));
        }
        let last = self.dense.len() - 1;
        let yhat = self.dense[last]
            .activation()
            .apply(&traces.dense[last].preact)?;
        if y.shape() != yhat.shape() {
            return Err(shape_err(format!(
                "label {:?} does not match output {:?}",
                y.shape(),
                yhat.shape()
            )));
        }
        let mut grad_a = ce_grad(&yhat, y)?;
        let mut dense = Vec::with_capacity(self.dense.len());
        for (layer, trace) in self.dense.iter().zip(&traces.dense).rev() {
            let g = dense_backward_with(&grad_a, layer, trace, fault)?;
            grad_a = g.input;
            dense.push(DenseParamGrads {
                weights: g.weights,
                biases: g.biases,
            });
        }
        dense.reverse();

        let grad_pooled = unflatten(&grad_a, &traces.pool.output_shape)?;
        let grad_act = maxpool_backward_with(&grad_pooled, &traces.pool, fault)?;
        let grad_preact = grad_act.mul(&CONV_ACTIVATION.derivative(&traces.conv.preact)?)?;
        let image = self.unpad(&traces.conv.padded_input)?;
        let conv = conv_backward(&grad_preact, &image, &self.conv)?;
        Ok(GradientSet { conv, dense })
    }

    fn unpad(&self, padded: &Tensor) -> Result<Tensor> {
        let g = self.conv.geometry();
        if g.pad == 0 {
            return Ok(padded.clone());
        }
        let (c, hp, wp) = padded.dims3()?;
        let mut out = Vec::with_capacity(c * g.in_h * g.in_w);
        for ch in 0..c {
            for i in 0..g.in_h {
                let start = (ch * hp + i + g.pad) * wp + g.pad;
                out.extend_from_slice(&padded.data()[start..start + g.in_w]);
            }
        }
        Tensor::from_vec(&[c, g.in_h, g.in_w], out)
    }

    /// Mean gradient and mean loss over a batch of `(image, label)` pairs.
    pub fn batch_gradient(&self, batch: &[(&Tensor, &Tensor)]) -> Result<(GradientSet, f64)> {
        self.batch_gradient_with(batch, None)
    }

    pub fn batch_gradient_with(
        &self,
        batch: &[(&Tensor, &Tensor)],
        fault: Option<Fault>,
    ) -> Result<(GradientSet, f64)> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let mut total = GradientSet::zeros_like(self);
        let mut loss = 0.0;
        for (image, label) in batch {
            let (yhat, traces) = self.forward(image)?;
            loss += Loss::CrossEntropy.eval(&yhat, label)?;
            total.accumulate(&self.backward_with(&traces, label, fault)?);
        }
        let t = batch.len() as f64;
        total.scale(1.0 / t);
        Ok((total, loss / t))
    }

    /// `θ ← θ − α·∂L/∂θ` for every parameter.
    pub fn sgd_step(&mut self, grads: &GradientSet, alpha: f64) -> Result<()> {
        let shapes_match = grads.groups().len() == 2 + 2 * self.dense.len()
            && self
                .param_groups_mut()
                .iter()
                .zip(grads.groups())
                .all(|((_, p), (_, g))| p.len() == g.len());
        if !shapes_match {
            return Err(shape_err("gradient set does not mirror the network"));
        }
        for ((_, params), (_, g)) in self.param_groups_mut().into_iter().zip(grads.groups()) {
            for (p, d) in params.iter_mut().zip(g) {
                *p -= alpha * d;
            }
        }
        Ok(())
    }

    /// Mini-batch gradient descent. The sample order is reshuffled every
    /// epoch from `cfg.seed`; history holds training-set metrics after each epoch.
    pub fn train(&mut self, data: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochRecord>> {
        self.train_with(data, cfg, |_| {})
    }

    /// [`Network::train`] with a callback invoked after every epoch.
    pub fn train_with(
        &mut self,
        data: &Dataset,
        cfg: &TrainConfig,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::Domain("cannot train on an empty dataset".into()));
        }
        let mut history = Vec::with_capacity(cfg.epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 1..=cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&Tensor, &Tensor)> = chunk
                    .iter()
                    .map(|&i| (&data.images()[i], &data.labels()[i]))
                    .collect();
                let (grads, _) = self.batch_gradient(&batch)?;
                self.sgd_step(&grads, cfg.learning_rate)?;
            }
            let m = self.evaluate(data)?;
            let record = EpochRecord {
                epoch,
                mean_loss: m.mean_loss,
                accuracy: m.accuracy,
            };
            on_epoch(&record);
            history.push(record);
        }
        Ok(history)
    }

    /// Mean cross-entropy and argmax accuracy (ties to the lowest index).
    pub fn evaluate(&self, data: &Dataset) -> Result<Metrics> {
        if data.is_empty() {
            return Err(Error::Domain("cannot evaluate on an empty dataset".into()));
        }
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (image, label) in data.images().iter().zip(data.labels()) {
            let yhat = self.predict(image)?;
            loss += Loss::CrossEntropy.eval(&yhat, label)?;
            if yhat.argmax() == label.argmax() {
                correct += 1;
            }
        }
        let n = data.len() as f64;
        Ok(Metrics {
            mean_loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::sigmoid;
    use crate::dataio::{one_hot, synth_bars};
    use crate::layers::{dense_forward, maxpool_forward};

    fn fixture_arch(widths: &[usize]) -> Architecture {
        Architecture {
            in_c: 1,
            in_h: 8,
            in_w: 8,
            conv_kernels: 2,
            conv_size: 3,
            conv_stride: 1,
            conv_pad: 0,
            pool_window: 2,
            pool_stride: 2,
            dense_widths: widths.to_vec(),
        }
    }

    fn zeroed(mut net: Network) -> Network {
        for (_, group) in net.param_groups_mut() {
            group.fill(0.0);
        }
        net
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let arch = fixture_arch(&[8, 2]);
        let a = Network::init(&arch, 9).unwrap();
        assert_eq!(a, Network::init(&arch, 9).unwrap());
        assert_ne!(a, Network::init(&arch, 10).unwrap());
        assert!(a.conv().biases().iter().all(|&b| b == 0.0));
        assert!(a
            .dense()
            .iter()
            .all(|l| l.biases().data().iter().all(|&b| b == 0.0)));
        let bound = 1.0 / 9f64.sqrt();
        assert!(a.conv().kernels().iter().all(|w| w.abs() <= bound));
        assert_eq!(a.dense()[0].activation(), Activation::Relu);
        assert_eq!(a.dense()[1].activation(), Activation::Sigmoid);
        assert_eq!(a.class_count(), 2);
    }

    #[test]
    fn init_weights_follow_the_uniform_law() {
        let net = Network::init(&fixture_arch(&[600, 2]), 1).unwrap();
        let w = net.dense()[0].weights().data();
        assert!(w.len() >= 10_000);
        let bound = 1.0 / 18f64.sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sigma = bound / 3f64.sqrt() / (w.len() as f64).sqrt();
        assert!(mean.abs() <= 3.0 * sigma, "mean {mean}, sigma {sigma}");
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - bound * bound / 3.0).abs() < 0.05 * bound * bound / 3.0);
    }

    #[test]
    fn init_rejects_broken_chains() {
        let mut arch = fixture_arch(&[8, 2]);
        arch.conv_size = 4; // 8 - 4 + 1 = 5, not poolable by 2/2
        assert!(matches!(Network::init(&arch, 0), Err(Error::Geometry(_))));
        assert!(Network::init(&fixture_arch(&[]), 0).is_err());
        let net = Network::init(&fixture_arch(&[8, 2]), 0).unwrap();
        let mut dense = net.dense().to_vec();
        dense.swap(0, 1);
        assert!(Network::new(net.conv().clone(), *net.pool(), dense).is_err());
    }

    #[test]
    fn zero_network_predicts_one_half() {
        let net = zeroed(Network::init(&fixture_arch(&[8, 3]), 0).unwrap());
        let image = synth_bars(2, 8, 8, 0).unwrap().images()[0].clone();
        assert_eq!(net.predict(&image).unwrap().data(), &[0.5; 3]);
    }

    #[test]
    fn forward_is_the_composition_of_layers() {
        let net = Network::init(&fixture_arch(&[8, 4, 2]), 5).unwrap();
        let image = synth_bars(2, 8, 8, 5).unwrap().images()[1].clone();
        let (yhat, _) = net.forward(&image).unwrap();
        assert_eq!(yhat, net.forward(&image).unwrap().0);
        let (_, act, _) = conv_forward(&image, net.conv(), Activation::Relu).unwrap();
        let (pooled, _) = maxpool_forward(&act, net.pool()).unwrap();
        let mut a = flatten(&pooled);
        for layer in net.dense() {
            a = dense_forward(&a, layer).unwrap().1;
        }
        assert_eq!(yhat, a);
        assert!(yhat.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert!(net.forward(&Tensor::zeros(&[1, 9, 8]).unwrap()).is_err());
    }

    #[test]
    fn zero_error_signal_gives_zero_gradients() {
        // zero weights and saturated output biases: yhat matches the label to ~1e-22
        let mut net = zeroed(Network::init(&fixture_arch(&[8, 2]), 0).unwrap());
        net.dense[1].biases_mut().copy_from_slice(&[-50.0, 50.0]);
        let image = synth_bars(2, 8, 8, 0).unwrap().images()[0].clone();
        let y = one_hot(1, 2).unwrap();
        let (_, traces) = net.forward(&image).unwrap();
        let grads = net.backward(&traces, &y).unwrap();
        assert!(grads
            .groups()
            .iter()
            .all(|(_, g)| g.iter().all(|v| v.abs() <= 1e-9)));
    }

    #[test]
    fn backward_rejects_mismatched_labels() {
        let net = Network::init(&fixture_arch(&[8, 2]), 0).unwrap();
        let image = synth_bars(2, 8, 8, 0).unwrap().images()[0].clone();
        let (_, traces) = net.forward(&image).unwrap();
        assert!(matches!(
            net.backward(&traces, &Tensor::vector(&[0.0, 0.0, 1.0])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn duplicated_sample_leaves_mean_gradient_unchanged() {
        let net = Network::init(&fixture_arch(&[8, 2]), 3).unwrap();
        let data = synth_bars(2, 8, 8, 3).unwrap();
        let (x, y) = (&data.images()[0], &data.labels()[0]);
        let (single, _) = net.batch_gradient(&[(x, y)]).unwrap();
        let (double, _) = net.batch_gradient(&[(x, y), (x, y)]).unwrap();
        for ((_, a), (_, b)) in single.groups().iter().zip(double.groups()) {
            assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12));
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let mut net = zeroed(Network::init(&fixture_arch(&[8, 2]), 0).unwrap());
        net.dense[1].biases_mut()[0] = 1.0;
        let mut grads = GradientSet::zeros_like(&net);
        grads.dense[1].biases.data_mut()[0] = 2.0;
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.dense()[1].biases().data()[0] - 0.8).abs() < 1e-15);

        let before = Network::init(&fixture_arch(&[8, 2]), 4).unwrap();
        let mut after = before.clone();
        after
            .sgd_step(&GradientSet::zeros_like(&before), 0.5)
            .unwrap();
        assert_eq!(model_bits(&before), model_bits(&after));

        let other = Network::init(&fixture_arch(&[8, 3]), 0).unwrap();
        assert!(after
            .sgd_step(&GradientSet::zeros_like(&other), 0.1)
            .is_err());
    }

    fn model_bits(net: &Network) -> Vec<u64> {
        let mut net = net.clone();
        net.param_groups_mut()
            .into_iter()
            .flat_map(|(_, g)| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    }

    #[test]
    fn quadratic_surrogate_decays_geometrically() {
        // L(θ) = c/2 (θ - θ*)², so θ_n - θ* = (1 - αc)^n (θ_0 - θ*)
        let (c, target, alpha) = (4.0, 0.3, 0.2);
        let mut net = zeroed(Network::init(&fixture_arch(&[8, 2]), 0).unwrap());
        net.conv.kernels_mut()[4] = 2.0;
        for n in 1..=25 {
            let theta = net.conv().kernels()[4];
            let mut grads = GradientSet::zeros_like(&net);
            grads.conv.kernels[4] = c * (theta - target);
            net.sgd_step(&grads, alpha).unwrap();
            let expected = target + (1.0 - alpha * c).powi(n) * (2.0 - target);
            assert!((net.conv().kernels()[4] - expected).abs() <= 1e-12);
        }
        assert!((net.conv().kernels()[4] - target).abs() < 1e-8);
    }

    #[test]
    fn small_steps_descend() {
        let data = synth_bars(8, 8, 8, 77).unwrap();
        let batch: Vec<(&Tensor, &Tensor)> = data.images().iter().zip(data.labels()).collect();
        for seed in 0..20 {
            let mut net = Network::init(&fixture_arch(&[8, 2]), seed).unwrap();
            let (grads, before) = net.batch_gradient(&batch).unwrap();
            if grads.norm() <= 1e-8 {
                continue;
            }
            net.sgd_step(&grads, 1e-4).unwrap();
            let (_, after) = net.batch_gradient(&batch).unwrap();
            assert!(after < before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = synth_bars(10, 8, 8, 1).unwrap();
        let start = Network::init(&fixture_arch(&[8, 2]), 1).unwrap();
        let mut net = start.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 4,
            seed: 1,
        };
        let history = net.train(&data, &cfg).unwrap();
        assert_eq!(net, start);
        assert!(history.windows(2).all(|w| w[0].mean_loss == w[1].mean_loss));
        assert_eq!(
            history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_bars(20, 8, 8, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            epochs: 3,
            batch_size: 6,
            seed: 8,
        };
        let run = || {
            let mut net = Network::init(&fixture_arch(&[8, 2]), 8).unwrap();
            let h = net.train(&data, &cfg).unwrap();
            (net, h)
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(model_bits(&a), model_bits(&b));
        assert_eq!(ha, hb);
        let mut other = Network::init(&fixture_arch(&[8, 2]), 8).unwrap();
        other.train(&data, &TrainConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(model_bits(&a), model_bits(&other));
    }

    #[test]
    fn empty_data_is_rejected() {
        let empty = Dataset::new(vec![], vec![], 2).unwrap();
        let mut net = Network::init(&fixture_arch(&[8, 2]), 0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 1,
            seed: 0,
        };
        assert!(matches!(net.train(&empty, &cfg), Err(Error::Domain(_))));
        assert!(matches!(net.evaluate(&empty), Err(Error::Domain(_))));
        let data = synth_bars(2, 8, 8, 0).unwrap();
        assert!(net
            .train(
                &data,
                &TrainConfig {
                    batch_size: 0,
                    ..cfg
                }
            )
            .is_err());
    }

    #[test]
    fn zero_network_accuracy_on_balanced_data() {
        let net = zeroed(Network::init(&fixture_arch(&[8, 2]), 0).unwrap());
        let data = synth_bars(10, 8, 8, 4).unwrap();
        let m = net.evaluate(&data).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.mean_loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn singleton_evaluation_is_the_sample_loss() {
        let net = Network::init(&fixture_arch(&[8, 2]), 2).unwrap();
        let data = synth_bars(2, 8, 8, 2).unwrap().take(1);
        let m = net.evaluate(&data).unwrap();
        let direct = Loss::CrossEntropy
            .eval(&net.predict(&data.images()[0]).unwrap(), &data.labels()[0])
            .unwrap();
        assert_eq!(m.mean_loss, direct);
    }

    #[test]
    fn hand_built_network_accuracy() {
        // 1x1 identity kernel, 4x4 max pool, then z = [m - 0.5, 0.5 - m]
        let g = ConvGeometry {
            in_c: 1,
            in_h: 4,
            in_w: 4,
            k_h: 1,
            k_w: 1,
            n_kernels: 1,
            stride: 1,
            pad: 0,
        };
        let bank = KernelBank::new(g, vec![1.0], vec![0.0]).unwrap();
        let out = DenseLayer::new(
            Tensor::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap(),
            Tensor::vector(&[-0.5, 0.5]),
            Activation::Sigmoid,
        )
        .unwrap();
        let net = Network::new(
            bank,
            PoolGeometry {
                window: 4,
                stride: 4,
            },
            vec![out],
        )
        .unwrap();
        let image = |m: f64| {
            let mut v = vec![0.05; 16];
            v[6] = m;
            Tensor::from_vec(&[1, 4, 4], v).unwrap()
        };
        let samples = [(0.9, 0), (0.2, 1), (0.7, 1), (0.1, 0)];
        let data = Dataset::new(
            samples.iter().map(|&(m, _)| image(m)).collect(),
            samples
                .iter()
                .map(|&(_, c)| one_hot(c, 2).unwrap())
                .collect(),
            2,
        )
        .unwrap();
        let m = net.evaluate(&data).unwrap();
        assert_eq!(m.accuracy, 0.5);
        let expected =
            -(sigmoid(0.4).ln() + sigmoid(0.3).ln() + sigmoid(-0.2).ln() + sigmoid(-0.4).ln())
                / 4.0;
        assert!((m.mean_loss - expected).abs() < 1e-12);
    }
}
