use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use qrelu_core::data::IngestConfig;
use qrelu_core::network::ModelConfig;
use qrelu_core::training::TrainConfig;
use qrelu_core::{ActivationKind, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    MnistIdx,
    ImageDir,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// `mnist_idx`: `[images, labels]`; `image_dir`: `[root]`.
    pub train_paths: Vec<PathBuf>,
    /// Same layout as `train_paths`. Empty for `image_dir` means a
    /// stratified split of the training root.
    pub test_paths: Vec<PathBuf>,
    pub ingest: IngestConfig,
    /// Fraction held out when `test_paths` is empty.
    pub test_fraction: f64,
    /// Use only the first N training / test samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::MnistIdx,
            train_paths: vec![
                "data/mnist/train-images-idx3-ubyte".into(),
                "data/mnist/train-labels-idx1-ubyte".into(),
            ],
            test_paths: vec![
                "data/mnist/t10k-images-idx3-ubyte".into(),
                "data/mnist/t10k-labels-idx1-ubyte".into(),
            ],
            ingest: IngestConfig::default(),
            test_fraction: 0.2,
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Base path; `.csv` / `.json` are appended per format.
    pub output_path: PathBuf,
    pub formats: Vec<ReportFormat>,
    /// Also write one checkpoint per swept activation next to the report.
    pub checkpoints: bool,
    pub bootstrap_resamples: usize,
    pub eval_batch_size: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            output_path: "reports/benchmark".into(),
            formats: vec![ReportFormat::Csv, ReportFormat::Json],
            checkpoints: false,
            bootstrap_resamples: qrelu_core::metrics::DEFAULT_RESAMPLES,
            eval_batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialisation and bootstrap resampling.
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub activations: Vec<ActivationKind>,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            activations: vec![
                ActivationKind::Relu,
                ActivationKind::LeakyRelu,
                ActivationKind::QRelu,
                ActivationKind::MQRelu,
            ],
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    /// Loads a JSON config (or defaults when `path` is `None`), applies
    /// `key.path=value` overrides, and resolves relative data paths against
    /// the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self> {
        let (mut value, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                (v, p.parent().map(Path::to_path_buf))
            }
            None => (serde_json::to_value(RunConfig::default()).expect("serialisable defaults"), None),
        };
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        if let Some(seed) = seed {
            value["seed"] = seed.into();
            set_path(&mut value, &["train", "seed"], seed.into())?;
        }
        let mut config: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base.filter(|b| !b.as_os_str().is_empty()) {
            for p in config.data.train_paths.iter_mut().chain(config.data.test_paths.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if config.report.output_path.is_relative() {
                config.report.output_path = base.join(&config.report.output_path);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.activations.is_empty() {
            return Err(Error::Config("at least one activation is required".into()));
        }
        if self.report.formats.is_empty() {
            return Err(Error::Config("report.formats is empty".into()));
        }
        if self.report.bootstrap_resamples == 0 || self.report.eval_batch_size == 0 {
            return Err(Error::Config("bootstrap_resamples and eval_batch_size must be >= 1".into()));
        }
        self.train.validate()?;
        self.data.ingest.validate()?;
        let want = match self.data.source {
            DataSource::MnistIdx => 2,
            DataSource::ImageDir => 1,
        };
        if self.data.train_paths.len() != want || !(self.data.test_paths.is_empty() || self.data.test_paths.len() == want) {
            return Err(Error::Config(format!(
                "{:?} source needs {want} train path(s) and 0 or {want} test path(s)",
                self.data.source
            )));
        }
        if self.data.source == DataSource::MnistIdx && self.data.test_paths.is_empty() {
            return Err(Error::Config("mnist_idx source needs test_paths".into()));
        }
        for kind in &self.activations {
            self.model.clone().with_activation(*kind).resolve()?;
        }
        Ok(())
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let path: Vec<&str> = key.split('.').collect();
    set_path(root, &path, value)
}

fn set_path(root: &mut Value, path: &[&str], value: Value) -> Result<()> {
    let mut cur = root;
    for (i, part) in path.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path {:?} crosses a non-object", path[..i].join("."))))?;
        if i + 1 == path.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}
