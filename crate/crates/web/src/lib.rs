//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Everything here also builds natively; errors surface in JavaScript as
//! thrown strings.

use convnet::dataio::synth_bars;
use convnet::gradcheck::{check_network_with, DEFAULT_H_REL, DEFAULT_THRESHOLD};
use convnet::layers::{conv_forward, maxpool_forward};
use convnet::network::{Architecture, CONV_ACTIVATION};
use convnet::{Dataset, Fault, Network, Tensor, TrainConfig};
use wasm_bindgen::prelude::*;

/// Side of the square input images.
pub const SIDE: usize = 8;
const TRAIN_SAMPLES: usize = 200;
const HELDOUT_SAMPLES: usize = 100;

fn arch(kernels: usize, hidden: usize) -> Architecture {
    Architecture {
        in_c: 1,
        in_h: SIDE,
        in_w: SIDE,
        conv_kernels: kernels,
        conv_size: 3,
        conv_stride: 1,
        conv_pad: 0,
        pool_window: 2,
        pool_stride: 2,
        dense_widths: vec![hidden, 2],
    }
}

fn image(pixels: &[f64]) -> Result<Tensor, String> {
    if pixels.len() != SIDE * SIDE {
        return Err(format!(
            "expected {} pixels, got {}",
            SIDE * SIDE,
            pixels.len()
        ));
    }
    Tensor::from_vec(&[1, SIDE, SIDE], pixels.to_vec()).map_err(|e| e.to_string())
}

/// A bars image: a bright horizontal (class 0) or vertical (class 1) line on faint noise.
#[wasm_bindgen]
pub fn bar_image(seed: u32, vertical: bool) -> Vec<f64> {
    let data = synth_bars(2, SIDE, SIDE, u64::from(seed)).expect("fixed extents are valid");
    data.images()[usize::from(vertical)].data().to_vec()
}

/// Full-batch training on the bars task, advanced a few epochs at a time.
#[wasm_bindgen]
pub struct Session {
    net: Network,
    train: Dataset,
    heldout: Dataset,
    alpha: f64,
    seed: u64,
    losses: Vec<f64>,
    accuracies: Vec<f64>,
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, alpha: f64, kernels: u32, hidden: u32) -> Result<Session, String> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(format!("learning rate must be positive, got {alpha}"));
        }
        let seed = u64::from(seed);
        let net = Network::init(&arch(kernels as usize, hidden as usize), seed)
            .map_err(|e| e.to_string())?;
        let train = synth_bars(TRAIN_SAMPLES, SIDE, SIDE, seed).map_err(|e| e.to_string())?;
        let heldout =
            synth_bars(HELDOUT_SAMPLES, SIDE, SIDE, seed + 1).map_err(|e| e.to_string())?;
        Ok(Session {
            net,
            train,
            heldout,
            alpha,
            seed,
            losses: Vec::new(),
            accuracies: Vec::new(),
        })
    }

    /// Runs `epochs` more epochs and returns the latest training loss.
    pub fn step(&mut self, epochs: u32) -> Result<f64, String> {
        let cfg = TrainConfig {
            learning_rate: self.alpha,
            epochs: epochs.max(1) as usize,
            batch_size: TRAIN_SAMPLES,
            seed: self.seed,
        };
        let history = self
            .net
            .train(&self.train, &cfg)
            .map_err(|e| e.to_string())?;
        for r in &history {
            self.losses.push(r.mean_loss);
            self.accuracies.push(r.accuracy);
        }
        Ok(self.losses[self.losses.len() - 1])
    }

    pub fn epoch(&self) -> u32 {
        self.losses.len() as u32
    }

    /// Training loss after each epoch so far.
    pub fn losses(&self) -> Vec<f64> {
        self.losses.clone()
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.accuracies.clone()
    }

    pub fn heldout_accuracy(&self) -> Result<f64, String> {
        self.net
            .evaluate(&self.heldout)
            .map(|m| m.accuracy)
            .map_err(|e| e.to_string())
    }

    /// Sigmoid output per class for a row-major 8x8 image.
    pub fn predict(&self, pixels: &[f64]) -> Result<Vec<f64>, String> {
        let y = self
            .net
            .predict(&image(pixels)?)
            .map_err(|e| e.to_string())?;
        Ok(y.into_data())
    }

    pub fn feature_maps(&self, pixels: &[f64]) -> Result<FeatureMaps, String> {
        let x = image(pixels)?;
        let (_, act, _) =
            conv_forward(&x, self.net.conv(), CONV_ACTIVATION).map_err(|e| e.to_string())?;
        let (pooled, _) = maxpool_forward(&act, self.net.pool()).map_err(|e| e.to_string())?;
        let (count, conv_side, _) = act.dims3().map_err(|e| e.to_string())?;
        let (_, pool_side, _) = pooled.dims3().map_err(|e| e.to_string())?;
        Ok(FeatureMaps {
            count: count as u32,
            conv_side: conv_side as u32,
            pool_side: pool_side as u32,
            conv: act.into_data(),
            pooled: pooled.into_data(),
        })
    }

    /// Kernel weights, filter-major, each 3x3.
    pub fn kernels(&self) -> Vec<f64> {
        self.net.conv().kernels().to_vec()
    }
}

/// Convolution activations and pooled maps for one image, channel-major.
#[wasm_bindgen]
pub struct FeatureMaps {
    count: u32,
    conv_side: u32,
    pool_side: u32,
    conv: Vec<f64>,
    pooled: Vec<f64>,
}

#[wasm_bindgen]
impl FeatureMaps {
    #[wasm_bindgen(getter)]
    pub fn count(&self) -> u32 {
        self.count
    }

    #[wasm_bindgen(getter)]
    pub fn conv_side(&self) -> u32 {
        self.conv_side
    }

    #[wasm_bindgen(getter)]
    pub fn pool_side(&self) -> u32 {
        self.pool_side
    }

    pub fn conv(&self) -> Vec<f64> {
        self.conv.clone()
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.pooled.clone()
    }
}

fn parse_fault(name: &str) -> Result<Option<Fault>, String> {
    match name {
        "" | "none" => Ok(None),
        "drop-derivative" => Ok(Some(Fault::DropActivationDerivative)),
        "transposed" => Ok(Some(Fault::TransposedPropagation)),
        "unrouted-pool" => Ok(Some(Fault::UnroutedPoolGradient)),
        other => Err(format!("unknown fault `{other}`")),
    }
}

/// Gradient check of a small network (2 kernels, dense 18-8-2) on one bars
/// sample, optionally with a deliberate backward-pass bug. Returns the report table.
#[wasm_bindgen]
pub fn gradient_check(seed: u32, fault: &str) -> Result<String, String> {
    let fault = parse_fault(fault)?;
    let net = Network::init(&arch(2, 8), u64::from(seed)).map_err(|e| e.to_string())?;
    let data = synth_bars(2, SIDE, SIDE, u64::from(seed)).map_err(|e| e.to_string())?;
    let i = seed as usize % 2;
    let report = check_network_with(
        &net,
        &data.images()[i],
        &data.labels()[i],
        DEFAULT_THRESHOLD,
        DEFAULT_H_REL,
        fault,
    )
    .map_err(|e| e.to_string())?;
    Ok(report.to_string())
}
