//! Command implementations behind the `convnet` binary.
//!
//! Every command writes its report to the supplied sink and returns a
//! [`CliError`] whose [`CliError::exit_code`] is the process status.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use convnet::activations::softmax;
use convnet::dataio::{load_idx_images, load_idx_labels, load_pgm, normalize, synth_bars};
use convnet::gradcheck::{check_network, DEFAULT_H_REL};
use convnet::model;
use convnet::network::{Architecture, EpochRecord};
use convnet::{Dataset, Network};

pub mod config;

use config::{ArchSpec, DataSource, RawConfig};

pub const CSV_HEADER: &str = "epoch,mean_loss,accuracy";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::Data(m)
            | CliError::CheckFailed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

fn data_err(context: impl std::fmt::Display) -> impl FnOnce(convnet::Error) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

fn emit(out: &mut impl Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot open `{}`: {e}", path.display())))
}

pub fn load_data(source: &DataSource, class_count: usize) -> Result<Dataset, CliError> {
    match source {
        DataSource::Bars { n, h, w, seed } => {
            let data = synth_bars(*n, *h, *w, *seed)
                .map_err(|e| CliError::Config(format!("data.source: {e}")))?;
            if class_count != data.class_count() {
                return Err(CliError::Data(format!(
                    "bars data has {} classes but the network outputs {class_count}",
                    data.class_count()
                )));
            }
            Ok(data)
        }
        DataSource::Idx { images, labels } => {
            let raw = load_idx_images(open(images)?).map_err(data_err(images.display()))?;
            let classes = load_idx_labels(open(labels)?).map_err(data_err(labels.display()))?;
            Dataset::from_raw(&raw, &classes, class_count).map_err(data_err("idx data"))
        }
    }
}

pub fn load_model(path: &Path) -> Result<Network, CliError> {
    model::read_model(open(path)?).map_err(data_err(path.display()))
}

fn shape_str(shape: &[usize]) -> String {
    shape
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("x")
}

fn check_extents(net: &Network, data: &Dataset) -> Result<(), CliError> {
    let expected = net.input_shape();
    match data.image_shape() {
        Some(found) if found != expected => Err(CliError::Data(format!(
            "extent mismatch: model expects {} input, data has {}",
            shape_str(&expected),
            shape_str(found)
        ))),
        None => Err(CliError::Data("dataset is empty".into())),
        _ if data.class_count() != net.class_count() => Err(CliError::Data(format!(
            "class mismatch: model outputs {} classes, data has {}",
            net.class_count(),
            data.class_count()
        ))),
        _ => Ok(()),
    }
}

pub fn architecture(spec: &ArchSpec, image_shape: &[usize]) -> Architecture {
    Architecture {
        in_c: image_shape[0],
        in_h: image_shape[1],
        in_w: image_shape[2],
        conv_kernels: spec.kernels,
        conv_size: spec.size,
        conv_stride: spec.stride,
        conv_pad: spec.pad,
        pool_window: spec.pool_window,
        pool_stride: spec.pool_stride,
        dense_widths: spec.dense_widths.clone(),
    }
}

fn build(cfg: &RawConfig) -> Result<(Network, Dataset), CliError> {
    let spec = cfg.arch()?;
    if spec.stride != 1 {
        return Err(CliError::Config(format!(
            "conv.stride must be 1 for training and gradient checks, got {}",
            spec.stride
        )));
    }
    let seed = cfg.seed()?;
    let source = cfg.data()?;
    let classes = *spec.dense_widths.last().expect("widths are nonempty");
    let data = load_data(&source, classes)?;
    let shape = data
        .image_shape()
        .ok_or_else(|| CliError::Data("dataset is empty".into()))?
        .to_vec();
    let net = Network::init(&architecture(&spec, &shape), seed)
        .map_err(|e| CliError::Config(format!("architecture: {e}")))?;
    Ok((net, data))
}

pub fn metrics_csv(history: &[EpochRecord]) -> String {
    let mut csv = format!("{CSV_HEADER}\n");
    for r in history {
        writeln!(csv, "{},{:.6},{:.6}", r.epoch, r.mean_loss, r.accuracy).expect("string write");
    }
    csv
}

/// Writes every file to a sibling temporary and renames only once all of
/// them are on disk, so a failed run leaves no partial outputs behind.
pub fn write_outputs(files: &[(&Path, &[u8])]) -> Result<(), CliError> {
    let temps: Vec<PathBuf> = files
        .iter()
        .map(|(p, _)| {
            let mut name = p.file_name().unwrap_or_default().to_os_string();
            name.push(format!(".tmp{}", std::process::id()));
            p.with_file_name(name)
        })
        .collect();
    let cleanup = |temps: &[PathBuf]| temps.iter().for_each(|t| drop(std::fs::remove_file(t)));
    for ((path, bytes), tmp) in files.iter().zip(&temps) {
        if let Err(e) = std::fs::write(tmp, bytes) {
            cleanup(&temps);
            return Err(CliError::Data(format!(
                "cannot write `{}`: {e}",
                path.display()
            )));
        }
    }
    for ((path, _), tmp) in files.iter().zip(&temps) {
        if let Err(e) = std::fs::rename(tmp, path) {
            cleanup(&temps);
            return Err(CliError::Data(format!(
                "cannot write `{}`: {e}",
                path.display()
            )));
        }
    }
    Ok(())
}

pub fn cmd_train(config: &Path, out: &mut impl Write) -> Result<(), CliError> {
    let cfg = RawConfig::load(config)?;
    // validate everything before touching data
    cfg.arch()?;
    let train = cfg.train()?;
    let (model_path, csv_path) = cfg.outputs()?;
    let (mut net, data) = build(&cfg)?;
    let mut log = Ok(());
    let history = net
        .train_with(&data, &train, |r| {
            if log.is_ok() {
                log = emit(
                    out,
                    &format!(
                        "epoch={} loss={:.6} accuracy={:.6}\n",
                        r.epoch, r.mean_loss, r.accuracy
                    ),
                );
            }
        })
        .map_err(data_err("training"))?;
    log?;
    let bytes = model::to_bytes(&net);
    write_outputs(&[
        (&model_path, &bytes),
        (&csv_path, metrics_csv(&history).as_bytes()),
    ])
}

pub fn cmd_eval(model_path: &Path, config: &Path, out: &mut impl Write) -> Result<(), CliError> {
    let cfg = RawConfig::load(config)?;
    let source = cfg.data()?;
    let net = load_model(model_path)?;
    let data = load_data(&source, net.class_count())?;
    check_extents(&net, &data)?;
    let m = net.evaluate(&data).map_err(data_err("evaluation"))?;
    emit(
        out,
        &format!("loss={:.6} accuracy={:.6}\n", m.mean_loss, m.accuracy),
    )
}

pub fn cmd_gradcheck(config: &Path, threshold: f64, out: &mut impl Write) -> Result<(), CliError> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(CliError::Usage(format!(
            "--threshold must be positive, got {threshold}"
        )));
    }
    let cfg = RawConfig::load(config)?;
    let (net, data) = build(&cfg)?;
    let report = check_network(
        &net,
        &data.images()[0],
        &data.labels()[0],
        threshold,
        DEFAULT_H_REL,
    )
    .map_err(data_err("gradient check"))?;
    emit(out, &format!("{report}\n"))?;
    if report.pass() {
        Ok(())
    } else {
        let worst = report.worst().expect("report has groups");
        Err(CliError::CheckFailed(format!(
            "gradient check failed: {} max_rel_err {:.6e} exceeds {:.6e}",
            worst.name, worst.max_rel_err, threshold
        )))
    }
}

pub fn cmd_predict(
    model_path: &Path,
    image: &Path,
    use_softmax: bool,
    out: &mut impl Write,
) -> Result<(), CliError> {
    let net = load_model(model_path)?;
    let raw = load_pgm(open(image)?).map_err(data_err(image.display()))?;
    let x = normalize(&raw);
    if x.shape() != net.input_shape() {
        return Err(CliError::Data(format!(
            "extent mismatch: model expects {} input, `{}` is {}",
            shape_str(&net.input_shape()),
            image.display(),
            shape_str(x.shape())
        )));
    }
    let mut y = net.predict(&x).map_err(data_err("prediction"))?;
    if use_softmax {
        y = softmax(&y).map_err(data_err("softmax"))?;
    }
    let values: Vec<String> = y.data().iter().map(|v| format!("{v:.6}")).collect();
    emit(
        out,
        &format!("{}\nclass={}\n", values.join(" "), y.argmax()),
    )
}
