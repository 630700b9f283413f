//! Command implementations behind the `qrelu-lab` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use qrelu_core::data::{ingest_image_dir, load_mnist_idx, split, write_idx, IngestConfig, LabeledDataset};
use qrelu_core::diagnostics::{gradcheck_network, gradcheck_scalar, tiny_config, GradCheckReport, STANDARD_PROBES};
use qrelu_core::metrics::{build_report_with, reports_to_csv, EvalReport, Timings, DEFAULT_LEVEL};
use qrelu_core::network::{ModelConfig, Network};
use qrelu_core::training::{predict, train, TrainHistory};
use qrelu_core::{ActivationKind, ActivationParams, Error, Result};

pub use config::{DataConfig, DataSource, ReportConfig, ReportFormat, RunConfig};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

pub const CHECKPOINT_FILE: &str = "checkpoint.qckpt";
pub const HISTORY_FILE: &str = "history.json";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Shape(_) => EXIT_DATA,
        Error::Numeric(_) => EXIT_NUMERIC,
        e if e.is_data_error() => EXIT_DATA,
        e if e.is_checkpoint_error() => EXIT_CHECKPOINT,
        _ => EXIT_FAILURE,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Output files use a plain failure code, unlike input data.
fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::InvalidArgument(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable value");
    s.push('\n');
    s
}

/// Sidecar holding class names for IDX pairs written by [`cmd_ingest`].
pub fn classes_sidecar(labels_path: &Path) -> PathBuf {
    let mut name = labels_path.as_os_str().to_owned();
    name.push(".classes.json");
    PathBuf::from(name)
}

fn load_idx_pair(paths: &[PathBuf]) -> Result<LabeledDataset> {
    let ds = load_mnist_idx(&paths[0], &paths[1])?;
    let sidecar = classes_sidecar(&paths[1]);
    if !sidecar.exists() {
        return Ok(ds);
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| io_err(&sidecar, e))?;
    let names: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", sidecar.display())))?;
    LabeledDataset::new(ds.images().clone(), ds.labels().to_vec(), names)
}

fn load_source(source: DataSource, paths: &[PathBuf], ingest: &IngestConfig) -> Result<LabeledDataset> {
    match source {
        DataSource::MnistIdx => load_idx_pair(paths),
        DataSource::ImageDir => ingest_image_dir(&paths[0], ingest),
    }
}

fn limit(ds: LabeledDataset, n: Option<usize>) -> Result<LabeledDataset> {
    match n {
        Some(n) if n < ds.len() => ds.take(n),
        _ => Ok(ds),
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_data(config: &RunConfig) -> Result<Splits> {
    let d = &config.data;
    let full = load_source(d.source, &d.train_paths, &d.ingest)?;
    let (train, test) = if d.test_paths.is_empty() {
        split(&full, d.test_fraction, config.seed)?
    } else {
        let test = load_source(d.source, &d.test_paths, &d.ingest)?;
        full.check_compatible(&test)?;
        (full, test)
    };
    Ok(Splits {
        train: limit(train, d.train_limit)?,
        test: limit(test, d.test_limit)?,
    })
}

/// Input dims and class count come from the data.
pub fn model_for(config: &RunConfig, kind: ActivationKind, data: &LabeledDataset) -> Result<ModelConfig> {
    let [h, w, c] = data.image_dims();
    let model = ModelConfig {
        input_h: h,
        input_w: w,
        input_c: c,
        num_classes: data.num_classes(),
        ..config.model.clone().with_activation(kind)
    };
    if model.num_classes != config.model.num_classes {
        log::info!("num_classes set to {} from the data", model.num_classes);
    }
    model.resolve()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub history: TrainHistory,
}

/// Trains the first configured activation; writes the checkpoint and the
/// history JSON into `out_dir`.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let data = load_data(config)?;
    let kind = config.activations[0];
    let mut net = Network::<f32>::build(model_for(config, kind, &data.train)?, config.seed)?;
    let history = train(&mut net, &data.train, &config.train)?;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    write_file(&checkpoint, net.to_checkpoint_bytes()?)?;
    write_file(&out_dir.join(HISTORY_FILE), to_json(&history))?;
    Ok(TrainOutcome { checkpoint, history })
}

fn evaluate_net(net: &Network<f32>, config: &RunConfig, test: &LabeledDataset, train_seconds: f64) -> Result<EvalReport> {
    let (pred, eval_seconds) = predict(net, test, config.report.eval_batch_size)?;
    build_report_with(
        net.config().activation.name(),
        test.labels(),
        &pred,
        net.config().num_classes,
        Timings {
            train_seconds,
            eval_seconds,
        },
        config.seed,
        config.report.bootstrap_resamples,
        DEFAULT_LEVEL,
    )
}

/// Evaluates a checkpoint on the configured test data.
pub fn cmd_evaluate(config: &RunConfig, checkpoint: &Path) -> Result<EvalReport> {
    let net = Network::<f32>::load(checkpoint).map_err(|e| match e {
        Error::Io { path, source } => Error::CorruptCheckpoint(format!("cannot read {}: {source}", path.display())),
        other => other,
    })?;
    let data = load_data(config)?;
    if data.test.num_classes() > net.config().num_classes {
        return Err(Error::Dataset(format!(
            "test data has {} classes, checkpoint predicts {}",
            data.test.num_classes(),
            net.config().num_classes
        )));
    }
    evaluate_net(&net, config, &data.test, 0.0)
}

/// Fresh seeded init, training and evaluation for one activation.
pub fn run_activation(config: &RunConfig, kind: ActivationKind, data: &Splits) -> Result<(EvalReport, Network<f32>)> {
    let mut net = Network::<f32>::build(model_for(config, kind, &data.train)?, config.seed)?;
    let history = train(&mut net, &data.train, &config.train)?;
    let report = evaluate_net(&net, config, &data.test, history.total_seconds)?;
    Ok((report, net))
}

pub fn checkpoint_path(config: &RunConfig, kind: ActivationKind) -> PathBuf {
    let base = &config.report.output_path;
    let mut name = base.file_name().map(|n| n.to_owned()).unwrap_or_default();
    name.push(format!("-{}.qckpt", kind.name()));
    base.with_file_name(name)
}

pub fn report_paths(config: &RunConfig) -> Vec<(ReportFormat, PathBuf)> {
    config
        .report
        .formats
        .iter()
        .map(|&f| {
            let ext = match f {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
            };
            (f, config.report.output_path.with_extension(ext))
        })
        .collect()
}

type Slot = Mutex<Option<(EvalReport, Option<Error>)>>;

/// The activation sweep. Each activation starts from the same seed. A
/// failing activation yields a row carrying its error; the sweep only fails
/// when every activation does.
pub fn cmd_benchmark(config: &RunConfig, parallel: bool) -> Result<Vec<EvalReport>> {
    let data = load_data(config)?;
    let run = |kind: ActivationKind| -> (EvalReport, Option<Error>) {
        log::info!("benchmark: {kind}");
        match run_activation(config, kind, &data) {
            Ok((report, net)) => {
                if config.report.checkpoints {
                    if let Err(e) = net
                        .to_checkpoint_bytes()
                        .and_then(|b| write_file(&checkpoint_path(config, kind), b))
                    {
                        return (EvalReport::failed(kind.name(), e.to_string()), Some(e));
                    }
                }
                (report, None)
            }
            Err(e) => {
                log::warn!("{kind} failed: {e}");
                (EvalReport::failed(kind.name(), e.to_string()), Some(e))
            }
        }
    };
    let results: Vec<(EvalReport, Option<Error>)> = if parallel {
        log::warn!("parallel sweep: timings are not comparable across activations");
        let slots: Vec<Slot> = config.activations.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for (slot, &kind) in slots.iter().zip(&config.activations) {
                let run = &run;
                s.spawn(move || *slot.lock().expect("unpoisoned") = Some(run(kind)));
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("unpoisoned").expect("thread finished"))
            .collect()
    } else {
        config.activations.iter().map(|&k| run(k)).collect()
    };
    let reports: Vec<EvalReport> = results.iter().map(|(r, _)| r.clone()).collect();
    for (format, path) in report_paths(config) {
        match format {
            ReportFormat::Csv => write_file(&path, reports_to_csv(&reports))?,
            ReportFormat::Json => write_file(&path, to_json(&reports))?,
        }
    }
    if results.iter().all(|(_, e)| e.is_some()) {
        let first = results.into_iter().find_map(|(_, e)| e).expect("at least one activation");
        return Err(first);
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub scalar: Vec<GradCheckReport>,
    pub network: Vec<GradCheckReport>,
}

impl GradCheckSummary {
    pub fn pass(&self) -> bool {
        self.scalar.iter().chain(&self.network).all(|r| r.pass)
    }
}

/// Scalar and tiny-network gradient checks for each kind.
pub fn cmd_gradcheck(kinds: &[ActivationKind], params: &ActivationParams, seed: u64) -> Result<GradCheckSummary> {
    let mut scalar = Vec::new();
    let mut network = Vec::new();
    for &kind in kinds {
        scalar.push(gradcheck_scalar(kind, params, &STANDARD_PROBES, 1e-6)?);
        let cfg = ModelConfig {
            activation_params: *params,
            ..tiny_config(kind)
        };
        network.push(gradcheck_network::<f64>(&cfg, seed, 50, 1e-4)?);
    }
    Ok(GradCheckSummary { scalar, network })
}

/// IDX pair paths for an ingest output prefix.
pub fn ingest_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let with = |suffix: &str| {
        let mut s = prefix.as_os_str().to_owned();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with("-images-idx3-ubyte"), with("-labels-idx1-ubyte"))
}

/// Ingests an image directory and writes it as an IDX pair plus a class
/// name sidecar.
pub fn cmd_ingest(src: &Path, ingest: &IngestConfig, out_prefix: &Path) -> Result<(PathBuf, PathBuf)> {
    let ds = ingest_image_dir(src, ingest)?;
    let (images, labels) = ingest_paths(out_prefix);
    if let Some(parent) = images.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    write_idx(&ds, &images, &labels)?;
    write_file(&classes_sidecar(&labels), to_json(&ds.class_names()))?;
    log::info!("ingested {} images in {} classes", ds.len(), ds.num_classes());
    Ok((images, labels))
}

/// Drops the wall-clock fields from a serialised report or history so runs
/// can be compared.
pub fn strip_timings(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("seconds"));
            map.values_mut().for_each(strip_timings);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}
