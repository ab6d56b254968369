//! Flat `key = value` experiment files.
//!
//! Blank lines and lines starting with `#` are ignored, as is anything after
//! a `#` that follows whitespace. Every key is optional; see
//! [`ExperimentSpec::default`] for the defaults. [`ExperimentSpec::render`]
//! writes every key in a fixed order and parses back to an
//! equal spec.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use gradlex::data::{AugmentConfig, DataSource, Dataset, SyntheticKind, SyntheticSpec};
use gradlex::evolution::{parity_generations, plus_one_generations, RunConfig};
use gradlex::nn::Architecture;
use gradlex::optim::MomentumPolicy;
use gradlex::selection::{LexicaseMode, Strategy};

/// A problem with the experiment description (exit code 2).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            key: None,
            line: None,
            message: message.into(),
        }
    }

    fn for_key(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: Some(key.to_string()),
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "{key}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    /// `epochs * p` generations: the selected lineage gets as many steps as
    /// an `epochs`-epoch baseline.
    Parity,
    /// `epochs * (p + 1)` generations.
    PlusOne,
}

impl Budget {
    fn as_str(&self) -> &'static str {
        match self {
            Budget::Parity => "parity",
            Budget::PlusOne => "plus-one",
        }
    }
}

impl FromStr for Budget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "parity" => Ok(Budget::Parity),
            "plus-one" => Ok(Budget::PlusOne),
            other => Err(format!("unknown budget {other:?} (expected parity or plus-one)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Synthetic,
    Idx,
    Cifar10,
    Csv,
}

impl DatasetKind {
    fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Synthetic => "synthetic",
            DatasetKind::Idx => "idx",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Csv => "csv",
        }
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "synthetic" => Ok(DatasetKind::Synthetic),
            "idx" => Ok(DatasetKind::Idx),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "csv" => Ok(DatasetKind::Csv),
            other => Err(format!(
                "unknown dataset {other:?} (expected synthetic, idx, cifar10 or csv)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    MlpSmall,
    ConvSmall,
}

impl ModelKind {
    fn as_str(&self) -> &'static str {
        match self {
            ModelKind::MlpSmall => "mlp-small",
            ModelKind::ConvSmall => "conv-small",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mlp-small" => Ok(ModelKind::MlpSmall),
            "conv-small" => Ok(ModelKind::ConvSmall),
            other => Err(format!("unknown model {other:?} (expected mlp-small or conv-small)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub synthetic_kind: SyntheticKind,
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    pub classes: usize,
    pub side: usize,
    pub data_seed: u64,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub train_files: Vec<PathBuf>,
    pub test_files: Vec<PathBuf>,
    pub train_csv: PathBuf,
    pub test_csv: PathBuf,
    pub csv_shape: Option<[usize; 3]>,
    /// Keep only the first `n` samples; 0 keeps everything.
    pub train_limit: usize,
    pub test_limit: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            synthetic_kind: SyntheticKind::TwoMoons,
            n_train: 1000,
            n_test: 1000,
            noise: 0.2,
            classes: 2,
            side: 8,
            data_seed: 0,
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            train_files: Vec::new(),
            test_files: Vec::new(),
            train_csv: PathBuf::new(),
            test_csv: PathBuf::new(),
            csv_shape: None,
            train_limit: 0,
            test_limit: 0,
        }
    }
}

impl DataConfig {
    fn sources(&self) -> (DataSource, DataSource) {
        match self.kind {
            DatasetKind::Synthetic => {
                let spec = SyntheticSpec {
                    kind: self.synthetic_kind,
                    n: self.n_train,
                    seed: self.data_seed,
                    split: 0,
                    classes: self.classes,
                    noise: self.noise,
                    side: self.side,
                };
                let test = SyntheticSpec {
                    n: self.n_test,
                    split: 1,
                    ..spec.clone()
                };
                (DataSource::Synthetic(spec), DataSource::Synthetic(test))
            }
            DatasetKind::Idx => (
                DataSource::Idx {
                    images: self.train_images.clone(),
                    labels: self.train_labels.clone(),
                },
                DataSource::Idx {
                    images: self.test_images.clone(),
                    labels: self.test_labels.clone(),
                },
            ),
            DatasetKind::Cifar10 => (
                DataSource::Cifar10 {
                    paths: self.train_files.clone(),
                },
                DataSource::Cifar10 {
                    paths: self.test_files.clone(),
                },
            ),
            DatasetKind::Csv => (
                DataSource::Csv {
                    path: self.train_csv.clone(),
                    shape: self.csv_shape,
                },
                DataSource::Csv {
                    path: self.test_csv.clone(),
                    shape: self.csv_shape,
                },
            ),
        }
    }

    /// Loads both splits. The test split is normalized with the training
    /// means and shares the training class count.
    pub fn load(&self) -> gradlex::Result<(Dataset, Dataset)> {
        let (train_src, test_src) = self.sources();
        let mut train = gradlex::data::load_dataset(&train_src)?;
        if self.train_limit > 0 {
            train = train.truncated(self.train_limit)?;
        }
        let mut test = gradlex::data::load_dataset(&test_src)?;
        if self.test_limit > 0 {
            test = test.truncated(self.test_limit)?;
        }
        let classes = train.num_classes().max(test.num_classes());
        let train = train.with_num_classes(classes)?;
        let test = test
            .with_num_classes(classes)?
            .with_means(train.means().to_vec())?;
        Ok((train, test))
    }
}

/// Everything a command needs: data, model, run settings, replicate seeds
/// and the output directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataConfig,
    pub model: ModelKind,
    /// Hidden width of `mlp-small`.
    pub hidden: usize,
    /// First-block channels of `conv-small`.
    pub channels: usize,
    pub strategy: Strategy,
    pub population: usize,
    pub epochs: u64,
    pub budget: Budget,
    /// Explicit generation count; overrides `epochs` and `budget`.
    pub generations: Option<u64>,
    pub momentum_policy: MomentumPolicy,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub lr_min: f64,
    pub lr_horizon: Option<u64>,
    pub batch_size: usize,
    pub selection_mode: LexicaseMode,
    pub selection_window: usize,
    pub selection_cases: usize,
    pub augment: AugmentConfig,
    pub record_accuracy: bool,
    pub trace_cap: usize,
    pub workers: usize,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub sizes: Vec<usize>,
    pub profile_samples: usize,
    pub bins: usize,
    pub out: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelKind::MlpSmall,
            hidden: 32,
            channels: 8,
            strategy: Strategy::Lexicase,
            population: 4,
            epochs: 10,
            budget: Budget::Parity,
            generations: None,
            momentum_policy: MomentumPolicy::ResetEachGeneration,
            momentum: 0.9,
            weight_decay: 0.0,
            lr: 0.1,
            lr_min: 0.0,
            lr_horizon: None,
            batch_size: 128,
            selection_mode: LexicaseMode::Modified,
            selection_window: 32,
            selection_cases: 0,
            augment: AugmentConfig::disabled(),
            record_accuracy: true,
            trace_cap: 64,
            workers: 1,
            seeds: vec![0, 1, 2],
            strategies: Strategy::ALL.to_vec(),
            sizes: vec![2, 4, 6, 8],
            profile_samples: 100,
            bins: 50,
            out: PathBuf::from("runs"),
        }
    }
}

const KEYS: &[&str] = &[
    "dataset",
    "synthetic_kind",
    "n_train",
    "n_test",
    "noise",
    "classes",
    "side",
    "data_seed",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_files",
    "test_files",
    "train_csv",
    "test_csv",
    "csv_shape",
    "train_limit",
    "test_limit",
    "model",
    "hidden",
    "channels",
    "strategy",
    "population",
    "epochs",
    "budget",
    "generations",
    "momentum_policy",
    "momentum",
    "weight_decay",
    "lr",
    "lr_min",
    "lr_horizon",
    "batch_size",
    "selection_mode",
    "selection_window",
    "selection_cases",
    "augment",
    "crop_padding",
    "hflip_prob",
    "record_accuracy",
    "trace_cap",
    "workers",
    "seeds",
    "strategies",
    "sizes",
    "profile_samples",
    "bins",
    "out",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| ConfigError::for_key(key, format!("invalid value {raw:?}: {e}")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| value(key, s.trim())).collect()
}

fn auto(key: &str, raw: &str) -> Result<Option<u64>, ConfigError> {
    if raw == "auto" {
        Ok(None)
    } else {
        value(key, raw).map(Some)
    }
}

fn boolean(key: &str, raw: &str) -> Result<bool, ConfigError> {
    match raw {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::for_key(key, format!("expected true or false, got {raw:?}"))),
    }
}

fn shape(key: &str, raw: &str) -> Result<Option<[usize; 3]>, ConfigError> {
    if raw == "auto" {
        return Ok(None);
    }
    let dims: Vec<usize> = raw
        .split('x')
        .map(|d| value(key, d.trim()))
        .collect::<Result<_, _>>()?;
    match dims.as_slice() {
        &[c, h, w] => Ok(Some([c, h, w])),
        _ => Err(ConfigError::for_key(key, format!("expected CxHxW, got {raw:?}"))),
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn strip_comment(line: &str) -> &str {
    let trimmed = line.trim_start();
    if trimmed.starts_with('#') {
        return "";
    }
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && i > 0 && bytes[i - 1].is_ascii_whitespace() {
            return &line[..i];
        }
    }
    line
}

impl ExperimentSpec {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut spec = Self::default();
        let mut augment_set = false;
        let mut seen = HashSet::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = strip_comment(raw_line).trim();
            if line.is_empty() {
                continue;
            }
            let with_line = |mut e: ConfigError| {
                e.line = Some(i + 1);
                e
            };
            let (key, val) = line.split_once('=').ok_or_else(|| {
                with_line(ConfigError::new(format!("expected key = value, got {line:?}")))
            })?;
            let (key, val) = (key.trim(), val.trim());
            if !seen.insert(key.to_string()) {
                return Err(with_line(ConfigError::for_key(key, "key given twice")));
            }
            spec.set(key, val).map_err(with_line)?;
            augment_set |= key == "augment";
        }
        if !augment_set {
            spec.augment.enabled = spec.data.kind != DatasetKind::Synthetic;
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let d = &mut self.data;
        match key {
            "dataset" => d.kind = value(key, raw)?,
            "synthetic_kind" => {
                d.synthetic_kind = raw
                    .parse()
                    .map_err(|e: gradlex::Error| ConfigError::for_key(key, e.to_string()))?
            }
            "n_train" => d.n_train = value(key, raw)?,
            "n_test" => d.n_test = value(key, raw)?,
            "noise" => d.noise = value(key, raw)?,
            "classes" => d.classes = value(key, raw)?,
            "side" => d.side = value(key, raw)?,
            "data_seed" => d.data_seed = value(key, raw)?,
            "train_images" => d.train_images = raw.into(),
            "train_labels" => d.train_labels = raw.into(),
            "test_images" => d.test_images = raw.into(),
            "test_labels" => d.test_labels = raw.into(),
            "train_files" => d.train_files = list(key, raw)?,
            "test_files" => d.test_files = list(key, raw)?,
            "train_csv" => d.train_csv = raw.into(),
            "test_csv" => d.test_csv = raw.into(),
            "csv_shape" => d.csv_shape = shape(key, raw)?,
            "train_limit" => d.train_limit = value(key, raw)?,
            "test_limit" => d.test_limit = value(key, raw)?,
            "model" => self.model = value(key, raw)?,
            "hidden" => self.hidden = value(key, raw)?,
            "channels" => self.channels = value(key, raw)?,
            "strategy" => self.strategy = value(key, raw)?,
            "population" => self.population = value(key, raw)?,
            "epochs" => self.epochs = value(key, raw)?,
            "budget" => self.budget = value(key, raw)?,
            "generations" => self.generations = auto(key, raw)?,
            "momentum_policy" => self.momentum_policy = value(key, raw)?,
            "momentum" => self.momentum = value(key, raw)?,
            "weight_decay" => self.weight_decay = value(key, raw)?,
            "lr" => self.lr = value(key, raw)?,
            "lr_min" => self.lr_min = value(key, raw)?,
            "lr_horizon" => self.lr_horizon = auto(key, raw)?,
            "batch_size" => self.batch_size = value(key, raw)?,
            "selection_mode" => self.selection_mode = value(key, raw)?,
            "selection_window" => self.selection_window = value(key, raw)?,
            "selection_cases" => self.selection_cases = value(key, raw)?,
            "augment" => self.augment.enabled = boolean(key, raw)?,
            "crop_padding" => self.augment.crop_padding = value(key, raw)?,
            "hflip_prob" => self.augment.hflip_prob = value(key, raw)?,
            "record_accuracy" => self.record_accuracy = boolean(key, raw)?,
            "trace_cap" => self.trace_cap = value(key, raw)?,
            "workers" => self.workers = value(key, raw)?,
            "seeds" => self.seeds = list(key, raw)?,
            "seed" => self.seeds = vec![value(key, raw)?],
            "strategies" => self.strategies = list(key, raw)?,
            "sizes" => self.sizes = list(key, raw)?,
            "profile_samples" => self.profile_samples = value(key, raw)?,
            "bins" => self.bins = value(key, raw)?,
            "out" => self.out = raw.into(),
            other => return Err(ConfigError::for_key(other, "unknown config key")),
        }
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn architecture(&self) -> Architecture {
        match self.model {
            ModelKind::MlpSmall => Architecture::MlpSmall {
                hidden: self.hidden,
            },
            ModelKind::ConvSmall => Architecture::ConvSmall {
                channels: self.channels,
            },
        }
    }

    /// Generation count for `strategy` at population `population`. The SGD
    /// baseline always runs `epochs` generations.
    pub fn generations_for(&self, strategy: Strategy, population: usize) -> u64 {
        if let Some(g) = self.generations {
            return g;
        }
        if strategy == Strategy::SgdBaseline {
            return self.epochs;
        }
        match self.budget {
            Budget::Parity => parity_generations(self.epochs, population),
            Budget::PlusOne => plus_one_generations(self.epochs, population),
        }
    }

    pub fn run_config(&self, strategy: Strategy, population: usize, seed: u64) -> RunConfig {
        RunConfig {
            population,
            generations: self.generations_for(strategy, population),
            strategy,
            momentum_policy: self.momentum_policy,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            lr_max: self.lr,
            lr_min: self.lr_min,
            lr_horizon: self.lr_horizon,
            batch_size: self.batch_size,
            seed,
            selection_mode: self.selection_mode,
            selection_window: self.selection_window,
            selection_cases: self.selection_cases,
            augment: self.augment,
            workers: self.workers,
            record_accuracy: self.record_accuracy,
            trace_cap: self.trace_cap,
            model: self.architecture(),
        }
    }

    /// Run configuration of the primary run: `strategy`, `population` and
    /// the first seed.
    pub fn primary_run(&self) -> RunConfig {
        self.run_config(self.strategy, self.population, self.seeds[0])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::for_key("seeds", "at least one seed is required"));
        }
        if self.strategies.is_empty() {
            return Err(ConfigError::for_key("strategies", "at least one strategy is required"));
        }
        if self.sizes.iter().any(|&p| p == 0) {
            return Err(ConfigError::for_key("sizes", "population sizes must be >= 1"));
        }
        if self.profile_samples == 0 {
            return Err(ConfigError::for_key("profile_samples", "must be >= 1"));
        }
        if self.bins == 0 {
            return Err(ConfigError::for_key("bins", "must be >= 1"));
        }
        if self.hidden == 0 || self.channels == 0 {
            return Err(ConfigError::for_key("model", "hidden and channels must be >= 1"));
        }
        let d = &self.data;
        if d.kind == DatasetKind::Synthetic && (d.n_train == 0 || d.n_test == 0) {
            return Err(ConfigError::for_key("n_train", "synthetic splits need >= 1 sample"));
        }
        let missing = |key: &str, empty: bool| {
            if empty {
                Err(ConfigError::for_key(key, format!("required for dataset {}", d.kind.as_str())))
            } else {
                Ok(())
            }
        };
        match d.kind {
            DatasetKind::Synthetic => {}
            DatasetKind::Idx => {
                missing("train_images", d.train_images.as_os_str().is_empty())?;
                missing("train_labels", d.train_labels.as_os_str().is_empty())?;
                missing("test_images", d.test_images.as_os_str().is_empty())?;
                missing("test_labels", d.test_labels.as_os_str().is_empty())?;
            }
            DatasetKind::Cifar10 => {
                missing("train_files", d.train_files.is_empty())?;
                missing("test_files", d.test_files.is_empty())?;
            }
            DatasetKind::Csv => {
                missing("train_csv", d.train_csv.as_os_str().is_empty())?;
                missing("test_csv", d.test_csv.as_os_str().is_empty())?;
            }
        }
        self.primary_run()
            .validate()
            .map_err(|e| ConfigError::new(e.to_string()))
    }

    /// Canonical text form: every key, one per line, in a fixed order.
    pub fn render(&self) -> String {
        let d = &self.data;
        let path = |p: &PathBuf| p.display().to_string();
        let paths = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let opt = |v: Option<u64>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        let values: Vec<(&str, String)> = vec![
            ("dataset", d.kind.as_str().into()),
            ("synthetic_kind", d.synthetic_kind.as_str().into()),
            ("n_train", d.n_train.to_string()),
            ("n_test", d.n_test.to_string()),
            ("noise", format!("{:?}", d.noise)),
            ("classes", d.classes.to_string()),
            ("side", d.side.to_string()),
            ("data_seed", d.data_seed.to_string()),
            ("train_images", path(&d.train_images)),
            ("train_labels", path(&d.train_labels)),
            ("test_images", path(&d.test_images)),
            ("test_labels", path(&d.test_labels)),
            ("train_files", paths(&d.train_files)),
            ("test_files", paths(&d.test_files)),
            ("train_csv", path(&d.train_csv)),
            ("test_csv", path(&d.test_csv)),
            (
                "csv_shape",
                d.csv_shape
                    .map_or_else(|| "auto".into(), |[c, h, w]| format!("{c}x{h}x{w}")),
            ),
            ("train_limit", d.train_limit.to_string()),
            ("test_limit", d.test_limit.to_string()),
            ("model", self.model.as_str().into()),
            ("hidden", self.hidden.to_string()),
            ("channels", self.channels.to_string()),
            ("strategy", self.strategy.as_str().into()),
            ("population", self.population.to_string()),
            ("epochs", self.epochs.to_string()),
            ("budget", self.budget.as_str().into()),
            ("generations", opt(self.generations)),
            ("momentum_policy", self.momentum_policy.as_str().into()),
            ("momentum", format!("{:?}", self.momentum)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("lr", format!("{:?}", self.lr)),
            ("lr_min", format!("{:?}", self.lr_min)),
            ("lr_horizon", opt(self.lr_horizon)),
            ("batch_size", self.batch_size.to_string()),
            ("selection_mode", self.selection_mode.as_str().into()),
            ("selection_window", self.selection_window.to_string()),
            ("selection_cases", self.selection_cases.to_string()),
            ("augment", self.augment.enabled.to_string()),
            ("crop_padding", self.augment.crop_padding.to_string()),
            ("hflip_prob", format!("{:?}", self.augment.hflip_prob)),
            ("record_accuracy", self.record_accuracy.to_string()),
            ("trace_cap", self.trace_cap.to_string()),
            ("workers", self.workers.to_string()),
            ("seeds", join(&self.seeds)),
            (
                "strategies",
                self.strategies.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(","),
            ),
            ("sizes", join(&self.sizes)),
            ("profile_samples", self.profile_samples.to_string()),
            ("bins", self.bins.to_string()),
            ("out", path(&self.out)),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut text = String::new();
        for (key, v) in values {
            let _ = writeln!(text, "{key} = {v}");
        }
        text
    }
}
