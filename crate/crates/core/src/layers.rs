//! Convolution, max pooling and fully connected layers.
//!
//! Convolution follows the cross-correlation convention:
//!
//! ```text
//! preact[p][i][j] = sum_c sum_u sum_v K[p][c][u][v] * Ipad[c][i*S + u][j*S + v] + b[p]
//! ```
//!
//! where `Ipad` is the input with `pad` rows/columns of zeros on every side.
//! Each forward function returns a trace holding exactly what the matching
//! backward function needs.

use crate::activations::Activation;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{matvec, rot180, Tensor};

/// Shape of a convolution layer: input extents, kernel extents, stride and padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub n_kernels: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// `(H1, W1, D1)` of the feature-map volume.
    pub fn output_dims(&self) -> Result<(usize, usize, usize)> {
        if [
            self.in_c,
            self.in_h,
            self.in_w,
            self.k_h,
            self.k_w,
            self.n_kernels,
        ]
        .contains(&0)
        {
            return Err(Error::Geometry(format!("zero extent in {self:?}")));
        }
        let h = window_count(
            self.in_h + 2 * self.pad,
            self.k_h,
            self.stride,
            "conv height",
        )?;
        let w = window_count(
            self.in_w + 2 * self.pad,
            self.k_w,
            self.stride,
            "conv width",
        )?;
        Ok((h, w, self.n_kernels))
    }

    pub fn fan_in(&self) -> usize {
        self.in_c * self.k_h * self.k_w
    }

    pub fn kernel_len(&self) -> usize {
        self.n_kernels * self.fan_in()
    }
}

pub fn conv_output_dims(g: &ConvGeometry) -> Result<(usize, usize, usize)> {
    g.output_dims()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeometry {
    pub window: usize,
    pub stride: usize,
}

/// `(H2, W2, D2)` after pooling a `h1 × w1 × d1` volume; depth is preserved.
pub fn pool_output_dims(
    h1: usize,
    w1: usize,
    d1: usize,
    g: &PoolGeometry,
) -> Result<(usize, usize, usize)> {
    if g.window == 0 || d1 == 0 {
        return Err(Error::Geometry(format!(
            "zero extent in pool {g:?} over depth {d1}"
        )));
    }
    let h = window_count(h1, g.window, g.stride, "pool height")?;
    let w = window_count(w1, g.window, g.stride, "pool width")?;
    Ok((h, w, d1))
}

/// Number of positions a `k`-wide window takes over `n` cells at `stride`.
fn window_count(n: usize, k: usize, stride: usize, what: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Geometry(format!(
            "{what}: stride must be at least 1"
        )));
    }
    if k > n {
        return Err(Error::Geometry(format!(
            "{what}: window {k} exceeds extent {n}"
        )));
    }
    if !(n - k).is_multiple_of(stride) {
        return Err(Error::Geometry(format!(
            "{what}: ({n} - {k}) is not divisible by stride {stride}"
        )));
    }
    Ok((n - k) / stride + 1)
}

/// Convolution filters and their per-filter biases.
///
/// Weights are stored filter-major: `kernels[((p * C + c) * k_h + u) * k_w + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    geometry: ConvGeometry,
    kernels: Vec<f64>,
    biases: Vec<f64>,
}

impl KernelBank {
    pub fn new(geometry: ConvGeometry, kernels: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        geometry.output_dims()?;
        if kernels.len() != geometry.kernel_len() || biases.len() != geometry.n_kernels {
            return Err(shape_err(format!(
                "kernel bank needs {} weights and {} biases, got {} and {}",
                geometry.kernel_len(),
                geometry.n_kernels,
                kernels.len(),
                biases.len()
            )));
        }
        Ok(Self {
            geometry,
            kernels,
            biases,
        })
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geometry
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn kernels_mut(&mut self) -> &mut [f64] {
        &mut self.kernels
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    /// Kernels and biases, mutably, at the same time.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.kernels, &mut self.biases)
    }

    pub fn weight(&self, p: usize, c: usize, u: usize, v: usize) -> f64 {
        let g = &self.geometry;
        self.kernels[((p * g.in_c + c) * g.k_h + u) * g.k_w + v]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    biases: Tensor,
    activation: Activation,
}

impl DenseLayer {
    /// `weights` is `n_out × n_in`, so the layer computes `W · a + b`.
    pub fn new(weights: Tensor, biases: Tensor, activation: Activation) -> Result<Self> {
        let (n_out, _) = weights.dims2()?;
        if biases.shape() != [n_out] {
            return Err(shape_err(format!(
                "dense weights {:?} need {n_out} biases, got {:?}",
                weights.shape(),
                biases.shape()
            )));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn n_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn biases(&self) -> &Tensor {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        self.weights.data_mut()
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        self.biases.data_mut()
    }

    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (self.weights.data_mut(), self.biases.data_mut())
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvTrace {
    /// Zero-padded input volume.
    pub padded_input: Tensor,
    pub preact: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrace {
    pub geometry: PoolGeometry,
    pub input_shape: [usize; 3],
    pub output_shape: [usize; 3],
    /// For each pooled element, the flat index of its winner in the input volume.
    pub winners: Vec<usize>,
    /// Smallest gap between a window's maximum and its runner-up.
    pub min_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrace {
    pub input: Tensor,
    pub preact: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub biases: Tensor,
    pub input: Tensor,
}

/// Deliberate backward-pass defects, used to confirm that gradient checking catches them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Fault {
    /// Dense layers skip the activation-derivative factor.
    DropActivationDerivative,
    /// Dense layers propagate to their inputs through the weights read with swapped strides.
    TransposedPropagation,
    /// Pooling sends every window's gradient to the window's top-left cell.
    UnroutedPoolGradient,
}

impl Fault {
    pub const ALL: [Fault; 3] = [
        Fault::DropActivationDerivative,
        Fault::TransposedPropagation,
        Fault::UnroutedPoolGradient,
    ];
}

pub fn zero_pad(image: &Tensor, pad: usize) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if pad == 0 {
        return Ok(image.clone());
    }
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[c, hp, wp])?;
    let dst = out.data_mut();
    for ch in 0..c {
        for i in 0..h {
            let src = &image.data()[(ch * h + i) * w..(ch * h + i + 1) * w];
            let start = (ch * hp + i + pad) * wp + pad;
            dst[start..start + w].copy_from_slice(src);
        }
    }
    Ok(out)
}

pub fn conv_forward(
    image: &Tensor,
    bank: &KernelBank,
    activation: Activation,
) -> Result<(Tensor, Tensor, ConvTrace)> {
    let g = bank.geometry();
    if image.shape() != [g.in_c, g.in_h, g.in_w] {
        return Err(shape_err(format!(
            "convolution expects a {}x{}x{} input, got {:?}",
            g.in_c,
            g.in_h,
            g.in_w,
            image.shape()
        )));
    }
    let (oh, ow, od) = g.output_dims()?;
    let padded = zero_pad(image, g.pad)?;
    let (_, hp, wp) = padded.dims3()?;
    let x = padded.data();
    let mut out = Vec::with_capacity(od * oh * ow);
    for p in 0..od {
        let bias = bank.biases[p];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for c in 0..g.in_c {
                    for u in 0..g.k_h {
                        let row = (c * hp + i * g.stride + u) * wp + j * g.stride;
                        let krow = ((p * g.in_c + c) * g.k_h + u) * g.k_w;
                        for v in 0..g.k_w {
                            acc += bank.kernels[krow + v] * x[row + v];
                        }
                    }
                }
                out.push(acc + bias);
            }
        }
    }
    let preact = Tensor::from_vec(&[od, oh, ow], out)?;
    let act = activation.apply(&preact)?;
    let trace = ConvTrace {
        padded_input: padded,
        preact: preact.clone(),
    };
    Ok((preact, act, trace))
}

/// Kernel and bias gradients from the gradient at the pre-activations.
///
/// `dK[p][c][u][v] = sum_i sum_j G[p][i][j] * Ipad[c][i + u][j + v]`, `db[p] = sum G[p]`.
pub fn conv_backward(grad_preact: &Tensor, image: &Tensor, bank: &KernelBank) -> Result<ConvGrads> {
    let (g, oh, ow, padded) = conv_backward_inputs(grad_preact, image, bank)?;
    let (_, hp, wp) = padded.dims3()?;
    let x = padded.data();
    let gd = grad_preact.data();
    let mut kernels = vec![0.0; g.kernel_len()];
    let mut biases = vec![0.0; g.n_kernels];
    for p in 0..g.n_kernels {
        let gp = &gd[p * oh * ow..(p + 1) * oh * ow];
        biases[p] = gp.iter().sum();
        for c in 0..g.in_c {
            for u in 0..g.k_h {
                for v in 0..g.k_w {
                    let mut acc = 0.0;
                    for i in 0..oh {
                        let row = (c * hp + i + u) * wp + v;
                        for j in 0..ow {
                            acc += gp[i * ow + j] * x[row + j];
                        }
                    }
                    kernels[((p * g.in_c + c) * g.k_h + u) * g.k_w + v] = acc;
                }
            }
        }
    }
    Ok(ConvGrads { kernels, biases })
}

/// The kernel gradient computed as `rot180(rot180(Ipad) * G)` with `*` a true
/// (flipped-kernel) valid convolution. Agrees with [`conv_backward`] up to
/// summation-order rounding.
pub fn kernel_grad_rot180(
    grad_preact: &Tensor,
    image: &Tensor,
    bank: &KernelBank,
) -> Result<Vec<f64>> {
    let (g, _, _, padded) = conv_backward_inputs(grad_preact, image, bank)?;
    let mut out = Vec::with_capacity(g.kernel_len());
    for p in 0..g.n_kernels {
        let gp = grad_preact.channel(p)?;
        for c in 0..g.in_c {
            let rotated = rot180(&padded.channel(c)?)?;
            let full = convolve_valid(&rotated, &gp)?;
            out.extend_from_slice(rot180(&full)?.data());
        }
    }
    Ok(out)
}

/// Valid-mode true convolution: `out[m][n] = sum_i sum_j a[m + fh-1-i][n + fw-1-j] * f[i][j]`.
pub fn convolve_valid(a: &Tensor, f: &Tensor) -> Result<Tensor> {
    let (ah, aw) = a.dims2()?;
    let (fh, fw) = f.dims2()?;
    if fh > ah || fw > aw {
        return Err(shape_err(format!(
            "filter {:?} larger than input {:?}",
            f.shape(),
            a.shape()
        )));
    }
    let (oh, ow) = (ah - fh + 1, aw - fw + 1);
    let mut out = Vec::with_capacity(oh * ow);
    for m in 0..oh {
        for n in 0..ow {
            let mut acc = 0.0;
            for i in 0..fh {
                for j in 0..fw {
                    acc += a.at2(m + fh - 1 - i, n + fw - 1 - j) * f.at2(i, j);
                }
            }
            out.push(acc);
        }
    }
    Tensor::from_vec(&[oh, ow], out)
}

fn conv_backward_inputs(
    grad_preact: &Tensor,
    image: &Tensor,
    bank: &KernelBank,
) -> Result<(ConvGeometry, usize, usize, Tensor)> {
    let g = *bank.geometry();
    if g.stride != 1 {
        return Err(Error::Unsupported(format!(
            "convolution backward requires stride 1, got {}",
            g.stride
        )));
    }
    if image.shape() != [g.in_c, g.in_h, g.in_w] {
        return Err(shape_err(format!(
            "convolution backward: input {:?} does not match geometry",
            image.shape()
        )));
    }
    let (oh, ow, od) = g.output_dims()?;
    if grad_preact.shape() != [od, oh, ow] {
        return Err(shape_err(format!(
            "convolution backward: gradient {:?}, expected [{od}, {oh}, {ow}]",
            grad_preact.shape()
        )));
    }
    Ok((g, oh, ow, zero_pad(image, g.pad)?))
}

/// Per-channel max pooling. Ties go to the first cell in row-major window order.
pub fn maxpool_forward(act: &Tensor, g: &PoolGeometry) -> Result<(Tensor, PoolTrace)> {
    let (c, h, w) = act.dims3()?;
    let (oh, ow, _) = pool_output_dims(h, w, c, g)?;
    let x = act.data();
    let mut pooled = Vec::with_capacity(c * oh * ow);
    let mut winners = Vec::with_capacity(c * oh * ow);
    let mut min_margin = f64::INFINITY;
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = usize::MAX;
                let mut best_val = f64::NEG_INFINITY;
                let mut runner_up = f64::NEG_INFINITY;
                for u in 0..g.window {
                    for v in 0..g.window {
                        let idx = (ch * h + i * g.stride + u) * w + j * g.stride + v;
                        let val = x[idx];
                        if best == usize::MAX || val > best_val {
                            runner_up = best_val;
                            best = idx;
                            best_val = val;
                        } else if val > runner_up {
                            runner_up = val;
                        }
                    }
                }
                pooled.push(best_val);
                winners.push(best);
                min_margin = min_margin.min(best_val - runner_up);
            }
        }
    }
    let trace = PoolTrace {
        geometry: *g,
        input_shape: [c, h, w],
        output_shape: [c, oh, ow],
        winners,
        min_margin,
    };
    Ok((Tensor::from_vec(&[c, oh, ow], pooled)?, trace))
}

/// Routes each pooled gradient back to its window's winner; every other cell gets 0.
pub fn maxpool_backward(grad_pooled: &Tensor, trace: &PoolTrace) -> Result<Tensor> {
    maxpool_backward_with(grad_pooled, trace, None)
}

pub(crate) fn maxpool_backward_with(
    grad_pooled: &Tensor,
    trace: &PoolTrace,
    fault: Option<Fault>,
) -> Result<Tensor> {
    if grad_pooled.shape() != trace.output_shape {
        return Err(shape_err(format!(
            "pool backward: gradient {:?}, expected {:?}",
            grad_pooled.shape(),
            trace.output_shape
        )));
    }
    let mut out = Tensor::zeros(&trace.input_shape)?;
    let dst = out.data_mut();
    for (k, (&g, &winner)) in grad_pooled.data().iter().zip(&trace.winners).enumerate() {
        let target = if fault == Some(Fault::UnroutedPoolGradient) {
            window_origin(trace, k)
        } else {
            winner
        };
        dst[target] += g;
    }
    Ok(out)
}

/// Flat input index of the top-left cell of pooled element `k`'s window.
fn window_origin(trace: &PoolTrace, k: usize) -> usize {
    let [_, h, w] = trace.input_shape;
    let [_, oh, ow] = trace.output_shape;
    let (ch, rest) = (k / (oh * ow), k % (oh * ow));
    let (i, j) = (rest / ow, rest % ow);
    let s = trace.geometry.stride;
    (ch * h + i * s) * w + j * s
}

pub fn dense_forward(a_prev: &Tensor, layer: &DenseLayer) -> Result<(Tensor, Tensor, DenseTrace)> {
    if a_prev.shape() != [layer.n_in()] {
        return Err(shape_err(format!(
            "dense layer expects {} inputs, got {:?}",
            layer.n_in(),
            a_prev.shape()
        )));
    }
    let z = matvec(&layer.weights, a_prev)?.add(&layer.biases)?;
    let a = layer.activation.apply(&z)?;
    let trace = DenseTrace {
        input: a_prev.clone(),
        preact: z.clone(),
    };
    Ok((z, a, trace))
}

/// With `delta = grad_a ⊙ f'(z)`: `dW = delta ⊗ a_prev`, `db = delta`, `da_prev = Wᵀ delta`.
pub fn dense_backward(
    grad_a: &Tensor,
    layer: &DenseLayer,
    trace: &DenseTrace,
) -> Result<DenseGrads> {
    dense_backward_with(grad_a, layer, trace, None)
}

pub(crate) fn dense_backward_with(
    grad_a: &Tensor,
    layer: &DenseLayer,
    trace: &DenseTrace,
    fault: Option<Fault>,
) -> Result<DenseGrads> {
    let (n_out, n_in) = (layer.n_out(), layer.n_in());
    if grad_a.shape() != [n_out] || trace.preact.shape() != [n_out] || trace.input.shape() != [n_in]
    {
        return Err(shape_err(format!(
            "dense backward: gradient {:?} and trace {:?}/{:?} do not fit a {n_out}x{n_in} layer",
            grad_a.shape(),
            trace.input.shape(),
            trace.preact.shape()
        )));
    }
    let slope = layer.activation.derivative(&trace.preact)?;
    let delta = if fault == Some(Fault::DropActivationDerivative) {
        grad_a.clone()
    } else {
        grad_a.mul(&slope)?
    };
    let d = delta.data();
    let a = trace.input.data();
    let w = layer.weights.data();

    let mut grad_w = Vec::with_capacity(n_out * n_in);
    for &di in d {
        grad_w.extend(a.iter().map(|&aj| di * aj));
    }
    let transposed = fault == Some(Fault::TransposedPropagation);
    let mut grad_in = vec![0.0; n_in];
    for (j, gj) in grad_in.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (i, &di) in d.iter().enumerate() {
            let wij = if transposed {
                w[j * n_out + i]
            } else {
                w[i * n_in + j]
            };
            acc += wij * di;
        }
        *gj = acc;
    }
    Ok(DenseGrads {
        weights: Tensor::from_vec(&[n_out, n_in], grad_w)?,
        biases: delta,
        input: Tensor::from_vec(&[n_in], grad_in)?,
    })
}
