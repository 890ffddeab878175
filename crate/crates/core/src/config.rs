//! Run configuration: a TOML file of dotted keys, built-in presets and
//! `key=value` overrides.
//!
//! ```toml
//! arch.dims = [784, 256, 128, 64, 16]
//! train.epochs_per_layer = 10
//! sync.termination = "first_layer_done"
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Value;

use crate::rbm::CdHyperparams;
use crate::unit::UnitKind;

/// Environment variable naming the directory relative data paths resolve in.
pub const DATA_DIR_ENV: &str = "LAYERWISE_DATA_DIR";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}{}: unknown key `{key}`", line_suffix(*.line))]
    UnknownKey {
        origin: String,
        key: String,
        line: Option<usize>,
    },
    #[error("{origin}{}: key `{key}`: {message}", line_suffix(*.line))]
    Invalid {
        origin: String,
        key: String,
        line: Option<usize>,
        message: String,
    },
    #[error("unknown preset `{0}` (expected `paper` or `desk`)")]
    UnknownPreset(String),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(":{l}")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyncMode {
    /// One OS thread per layer, scheduled by the platform.
    FreeRunning,
    /// Lock-step rounds on the calling thread; reproducible.
    DeterministicRounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Stop when every worker has finished its stipulated epochs and no
    /// unconsumed input remains.
    AllStipulated,
    /// Stop as soon as the first worker finishes its stipulated epochs; its
    /// last publication is not consumed.
    FirstLayerDone,
}

/// How `extra_epochs` bounds post-stipulation work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtraMode {
    /// `extra_epochs[l]` is a total budget spent `wake_epochs` per wake-up.
    Total,
    /// Every input update runs `extra_epochs[l]` epochs, without limit.
    PerUpdate,
}

/// When each synchronized worker trains.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSchedule {
    pub stipulated_epochs: Vec<usize>,
    pub wake_epochs: usize,
    pub extra_epochs: Vec<usize>,
    pub extra_mode: ExtraMode,
    pub termination: Termination,
}

impl WorkerSchedule {
    /// `(epochs per wake-up, total post-stipulation budget)` for a layer.
    pub fn wake_plan(&self, layer: usize) -> (usize, usize) {
        let extra = self.extra_epochs.get(layer).copied().unwrap_or(0);
        match self.extra_mode {
            ExtraMode::Total => (self.wake_epochs, extra),
            ExtraMode::PerUpdate => (extra, if extra == 0 { 0 } else { usize::MAX }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub per_class_valid: usize,
    pub split_seed: u64,
    /// Keep only the first `n` examples of the training file.
    pub max_train: Option<usize>,
    /// Keep only the first `n` examples of the test file.
    pub max_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub arch: Vec<usize>,
    pub cd: CdHyperparams,
    pub backprop_learning_rate: f64,
    pub batch_size: usize,
    /// Epochs per layer for greedy pre-training.
    pub epochs_per_layer: Vec<usize>,
    pub finetune_epochs: usize,
    pub seed: u64,
    pub unit: UnitKind,
    pub ae_learning_rate: f64,
    pub schedule: WorkerSchedule,
    pub mode: SyncMode,
    pub pin_workers: bool,
    pub watchdog_secs: f64,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

const FULL_PRESET: &str = r#"
arch.dims = [784, 1000, 500, 250, 30]
data.images = "train-images-idx3-ubyte.gz"
data.labels = "train-labels-idx1-ubyte.gz"
data.test_images = "t10k-images-idx3-ubyte.gz"
data.test_labels = "t10k-labels-idx1-ubyte.gz"
data.per_class_valid = 1000
data.split_seed = 1
train.batch_size = 100
train.epochs_per_layer = 20
train.finetune_epochs = 10
train.seed = 1
cd.learning_rate = 0.1
cd.momentum = [[0, 0.5], [5, 0.9]]
cd.steps = 1
cd.sample_hidden = true
backprop.learning_rate = 0.001
pretrain.unit = "rbm"
sync.mode = "free_running"
sync.termination = "first_layer_done"
sync.stipulated_epochs = [20, 20, 20, 20]
sync.wake_epochs = 1
sync.extra_epochs = [0, 5, 20, 40]
sync.extra_mode = "total"
"#;

const DESK_OVERRIDES: &str = r#"
arch.dims = [784, 256, 128, 64, 16]
data.images = "train-images-idx3-ubyte.gz"
data.labels = "train-labels-idx1-ubyte.gz"
data.max_train = 6000
data.max_test = 1000
data.per_class_valid = 100
train.epochs_per_layer = 10
train.finetune_epochs = 5
sync.stipulated_epochs = [10, 10, 10, 10]
"#;

/// Every accepted key with its default (`None`: required or derived).
fn defaults() -> BTreeMap<&'static str, Option<Value>> {
    let mut m = BTreeMap::new();
    let parsed = parse_flat("<defaults>", FULL_PRESET).expect("paper preset parses");
    for key in KNOWN_KEYS {
        m.insert(*key, parsed.get(*key).map(|(v, _)| v.clone()));
    }
    m.insert("sync.stipulated_epochs", None);
    m.insert("pretrain.ae_learning_rate", Some(Value::Float(0.1)));
    m.insert("workers.pin", Some(Value::Boolean(false)));
    m.insert("sync.watchdog_secs", Some(Value::Float(300.0)));
    m.insert("output.dir", Some(Value::String("out".into())));
    m
}

const KNOWN_KEYS: &[&str] = &[
    "arch.dims",
    "data.images",
    "data.labels",
    "data.test_images",
    "data.test_labels",
    "data.per_class_valid",
    "data.split_seed",
    "data.max_train",
    "data.max_test",
    "train.batch_size",
    "train.epochs_per_layer",
    "train.finetune_epochs",
    "train.seed",
    "cd.learning_rate",
    "cd.momentum",
    "cd.steps",
    "cd.sample_hidden",
    "backprop.learning_rate",
    "pretrain.unit",
    "pretrain.ae_learning_rate",
    "sync.mode",
    "sync.termination",
    "sync.stipulated_epochs",
    "sync.wake_epochs",
    "sync.extra_epochs",
    "sync.extra_mode",
    "sync.watchdog_secs",
    "workers.pin",
    "output.dir",
];

type Flat = BTreeMap<String, (Value, Origin)>;

#[derive(Debug, Clone, PartialEq)]
struct Origin {
    source: String,
    line: Option<usize>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Best-effort line lookup of a dotted key in TOML source.
fn find_line(text: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    let section = key.rsplit_once('.').map(|(s, _)| s);
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs: String = lhs.split('.').map(str::trim).collect::<Vec<_>>().join(".");
        let full = if current.is_empty() {
            lhs.clone()
        } else {
            format!("{current}.{lhs}")
        };
        if full == key || (lhs == leaf && section.map_or(current.is_empty(), |s| s == current)) {
            return Some(i + 1);
        }
    }
    None
}

fn parse_flat(source: &str, text: &str) -> Result<Flat, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        origin: source.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    Ok(flat
        .into_iter()
        .map(|(k, v)| {
            let line = find_line(text, &k);
            (
                k,
                (
                    v,
                    Origin {
                        source: source.to_string(),
                        line,
                    },
                ),
            )
        })
        .collect())
}

/// Layered key/value settings, later layers overriding earlier ones.
#[derive(Debug, Clone, Default)]
pub struct ConfigBuilder {
    values: Flat,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let mut b = Self::new();
        match name {
            "paper" => {
                b.merge_str("<preset paper>", FULL_PRESET)?;
            }
            "desk" => {
                b.merge_str("<preset desk>", FULL_PRESET)?;
                b.merge_str("<preset desk>", DESK_OVERRIDES)?;
            }
            other => return Err(ConfigError::UnknownPreset(other.to_string())),
        }
        Ok(b)
    }

    pub fn merge_str(&mut self, source: &str, text: &str) -> Result<&mut Self, ConfigError> {
        let flat = parse_flat(source, text)?;
        for (k, (v, origin)) in flat {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(ConfigError::UnknownKey {
                    origin: origin.source,
                    key: k,
                    line: origin.line,
                });
            }
            self.values.insert(k, (v, origin));
        }
        Ok(self)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<&mut Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse {
            origin: path.display().to_string(),
            message: e.to_string(),
        })?;
        self.merge_str(&path.display().to_string(), &text)
    }

    /// Applies a `key=value` override; the value is TOML (bare words are
    /// taken as strings).
    pub fn set(&mut self, assignment: &str) -> Result<&mut Self, ConfigError> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(ConfigError::Parse {
                origin: "<override>".into(),
                message: format!("expected key=value, got `{assignment}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let text = format!("{key} = {value}");
        let result = self.merge_str("<override>", &text).map(|_| ());
        match result {
            Ok(()) => Ok(self),
            Err(ConfigError::Parse { .. }) => {
                let quoted = format!("{key} = {}", Value::String(value.to_string()));
                self.merge_str("<override>", &quoted)
            }
            Err(e) => Err(e),
        }
    }

    /// Resolves every key, applying defaults and validating values. Relative
    /// data paths are resolved against `data_dir`.
    pub fn build(&self, data_dir: Option<&Path>) -> Result<TrainingConfig, ConfigError> {
        Resolver {
            values: &self.values,
            defaults: defaults(),
        }
        .build(data_dir)
    }

    /// Every resolved key and value as TOML, sufficient to reproduce a run.
    pub fn echo(&self) -> String {
        let defaults = defaults();
        let mut out = String::new();
        for key in KNOWN_KEYS {
            let v = self
                .values
                .get(*key)
                .map(|(v, _)| v.clone())
                .or_else(|| defaults.get(key).cloned().flatten());
            if let Some(v) = v {
                out.push_str(&format!("{key} = {v}\n"));
            }
        }
        out
    }
}

struct Resolver<'a> {
    values: &'a Flat,
    defaults: BTreeMap<&'static str, Option<Value>>,
}

impl Resolver<'_> {
    fn origin(&self, key: &str) -> (String, Option<usize>) {
        self.values
            .get(key)
            .map(|(_, o)| (o.source.clone(), o.line))
            .unwrap_or_else(|| ("<defaults>".into(), None))
    }

    fn invalid(&self, key: &str, message: impl fmt::Display) -> ConfigError {
        let (origin, line) = self.origin(key);
        ConfigError::Invalid {
            origin,
            key: key.to_string(),
            line,
            message: message.to_string(),
        }
    }

    fn get(&self, key: &str) -> Option<Value> {
        self.values
            .get(key)
            .map(|(v, _)| v.clone())
            .or_else(|| self.defaults.get(key).cloned().flatten())
    }

    fn required(&self, key: &str) -> Result<Value, ConfigError> {
        self.get(key).ok_or_else(|| self.invalid(key, "missing value"))
    }

    fn uint(&self, key: &str) -> Result<usize, ConfigError> {
        match self.required(key)? {
            Value::Integer(i) if i >= 0 => Ok(i as usize),
            other => Err(self.invalid(key, format!("expected a non-negative integer, got {other}"))),
        }
    }

    fn opt_uint(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(key).map(|_| self.uint(key)).transpose()
    }

    fn float(&self, key: &str) -> Result<f64, ConfigError> {
        match self.required(key)? {
            Value::Float(f) => Ok(f),
            Value::Integer(i) => Ok(i as f64),
            other => Err(self.invalid(key, format!("expected a number, got {other}"))),
        }
    }

    fn boolean(&self, key: &str) -> Result<bool, ConfigError> {
        match self.required(key)? {
            Value::Boolean(b) => Ok(b),
            other => Err(self.invalid(key, format!("expected true or false, got {other}"))),
        }
    }

    fn string(&self, key: &str) -> Result<String, ConfigError> {
        match self.required(key)? {
            Value::String(s) => Ok(s),
            other => Err(self.invalid(key, format!("expected a string, got {other}"))),
        }
    }

    /// An integer list, or a single integer broadcast to `len` entries.
    fn uint_list(&self, key: &str, len: Option<usize>) -> Result<Vec<usize>, ConfigError> {
        let v = self.required(key)?;
        let list = match v {
            Value::Integer(i) if i >= 0 => match len {
                Some(n) => vec![i as usize; n],
                None => vec![i as usize],
            },
            Value::Array(items) => items
                .iter()
                .map(|item| match item {
                    Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                    other => Err(self.invalid(key, format!("expected non-negative integers, got {other}"))),
                })
                .collect::<Result<_, _>>()?,
            other => return Err(self.invalid(key, format!("expected an integer list, got {other}"))),
        };
        if let Some(n) = len {
            if list.len() != n {
                return Err(self.invalid(key, format!("expected {n} entries (one per layer), got {}", list.len())));
            }
        }
        Ok(list)
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)]) -> Result<T, ConfigError> {
        let s = self.string(key)?;
        options
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, v)| *v)
            .ok_or_else(|| {
                let names: Vec<_> = options.iter().map(|(n, _)| *n).collect();
                self.invalid(key, format!("`{s}` is not one of {}", names.join(", ")))
            })
    }

    fn path(&self, key: &str, data_dir: Option<&Path>) -> Result<PathBuf, ConfigError> {
        let p = PathBuf::from(self.string(key)?);
        Ok(match data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p,
        })
    }

    fn build(&self, data_dir: Option<&Path>) -> Result<TrainingConfig, ConfigError> {
        let arch = self.uint_list("arch.dims", None)?;
        if arch.len() < 2 || arch.contains(&0) {
            return Err(self.invalid("arch.dims", "need at least two positive layer sizes"));
        }
        let layers = arch.len() - 1;

        let momentum_schedule = match self.required("cd.momentum")? {
            Value::Float(m) => vec![(0, m)],
            Value::Array(items) => items
                .iter()
                .map(|item| match item {
                    Value::Array(pair) if pair.len() == 2 => match (&pair[0], &pair[1]) {
                        (Value::Integer(e), Value::Float(m)) if *e >= 0 => Ok((*e as usize, *m)),
                        (Value::Integer(e), Value::Integer(m)) if *e >= 0 => Ok((*e as usize, *m as f64)),
                        _ => Err(self.invalid("cd.momentum", "entries must be [epoch, momentum]")),
                    },
                    _ => Err(self.invalid("cd.momentum", "entries must be [epoch, momentum]")),
                })
                .collect::<Result<_, _>>()?,
            other => return Err(self.invalid("cd.momentum", format!("expected a list of [epoch, momentum], got {other}"))),
        };
        let cd = CdHyperparams {
            learning_rate: self.float("cd.learning_rate")?,
            momentum_schedule,
            cd_steps: self.uint("cd.steps")?,
            sample_hidden: self.boolean("cd.sample_hidden")?,
        };
        cd.validate().map_err(|m| self.invalid("cd.momentum", m))?;
        if cd.learning_rate <= 0.0 {
            return Err(self.invalid("cd.learning_rate", "must be positive"));
        }

        let epochs_per_layer = self.uint_list("train.epochs_per_layer", Some(layers))?;
        if epochs_per_layer.contains(&0) {
            return Err(self.invalid("train.epochs_per_layer", "every layer needs at least one epoch"));
        }
        let stipulated_epochs = if self.values.contains_key("sync.stipulated_epochs") {
            self.uint_list("sync.stipulated_epochs", Some(layers))?
        } else {
            epochs_per_layer.clone()
        };
        if stipulated_epochs.contains(&0) {
            return Err(self.invalid("sync.stipulated_epochs", "every layer needs at least one epoch"));
        }
        let extra_epochs = match self.uint_list("sync.extra_epochs", None)? {
            list if list.len() == layers => list,
            list if list.len() == 1 => vec![list[0]; layers],
            _ => return Err(self.invalid("sync.extra_epochs", format!("expected {layers} entries (one per layer)"))),
        };
        let wake_epochs = self.uint("sync.wake_epochs")?;
        if wake_epochs == 0 {
            return Err(self.invalid("sync.wake_epochs", "must be at least 1"));
        }
        let schedule = WorkerSchedule {
            stipulated_epochs,
            wake_epochs,
            extra_epochs,
            extra_mode: self.choice("sync.extra_mode", &[("total", ExtraMode::Total), ("per_update", ExtraMode::PerUpdate)])?,
            termination: self.choice(
                "sync.termination",
                &[
                    ("all_stipulated", Termination::AllStipulated),
                    ("first_layer_done", Termination::FirstLayerDone),
                ],
            )?,
        };

        let batch_size = self.uint("train.batch_size")?;
        if batch_size == 0 {
            return Err(self.invalid("train.batch_size", "must be at least 1"));
        }
        let backprop_learning_rate = self.float("backprop.learning_rate")?;
        if !(backprop_learning_rate >= 0.0) {
            return Err(self.invalid("backprop.learning_rate", "must be non-negative"));
        }
        let watchdog_secs = self.float("sync.watchdog_secs")?;
        if !(watchdog_secs > 0.0) {
            return Err(self.invalid("sync.watchdog_secs", "must be positive"));
        }

        Ok(TrainingConfig {
            arch,
            cd,
            backprop_learning_rate,
            batch_size,
            epochs_per_layer,
            finetune_epochs: self.uint("train.finetune_epochs")?,
            seed: self.uint("train.seed")? as u64,
            unit: self.choice("pretrain.unit", &[("rbm", UnitKind::Rbm), ("autoencoder", UnitKind::Autoencoder)])?,
            ae_learning_rate: self.float("pretrain.ae_learning_rate")?,
            schedule,
            mode: self.choice(
                "sync.mode",
                &[
                    ("free_running", SyncMode::FreeRunning),
                    ("deterministic_rounds", SyncMode::DeterministicRounds),
                ],
            )?,
            pin_workers: self.boolean("workers.pin")?,
            watchdog_secs,
            data: DataConfig {
                images: self.path("data.images", data_dir)?,
                labels: self.path("data.labels", data_dir)?,
                test_images: self.path("data.test_images", data_dir)?,
                test_labels: self.path("data.test_labels", data_dir)?,
                per_class_valid: self.uint("data.per_class_valid")?,
                split_seed: self.uint("data.split_seed")? as u64,
                max_train: self.opt_uint("data.max_train")?,
                max_test: self.opt_uint("data.max_test")?,
            },
            output_dir: PathBuf::from(self.string("output.dir")?),
        })
    }
}

impl TrainingConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        ConfigBuilder::preset(name)?.build(None)
    }

    pub fn layers(&self) -> usize {
        self.arch.len() - 1
    }

    /// Stable digest of everything that influences training (not the output
    /// directory), used to check two reports are comparable.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(format!("{c:?}").as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Human-readable per-layer schedule.
    pub fn describe_schedule(&self) -> String {
        let mut out = String::from("layer  dims          greedy  stipulated  wake  extra\n");
        for l in 0..self.layers() {
            let (per_wake, budget) = self.schedule.wake_plan(l);
            let budget = if budget == usize::MAX {
                "unbounded".to_string()
            } else {
                budget.to_string()
            };
            out.push_str(&format!(
                "{:<6} {:<13} {:<7} {:<11} {:<5} {}\n",
                l + 1,
                format!("{}-{}", self.arch[l], self.arch[l + 1]),
                self.epochs_per_layer[l],
                self.schedule.stipulated_epochs[l],
                per_wake,
                budget
            ));
        }
        let mode = match self.mode {
            SyncMode::FreeRunning => "free_running",
            SyncMode::DeterministicRounds => "deterministic_rounds",
        };
        let term = match self.schedule.termination {
            Termination::AllStipulated => "all_stipulated",
            Termination::FirstLayerDone => "first_layer_done",
        };
        out.push_str(&format!("mode {mode}, termination {term}, finetune {} epochs\n", self.finetune_epochs));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_preset_values() {
        let c = TrainingConfig::preset("paper").unwrap();
        assert_eq!(c.arch, vec![784, 1000, 500, 250, 30]);
        assert_eq!(c.cd.learning_rate, 0.1);
        assert_eq!(c.cd.momentum(4), 0.5);
        assert_eq!(c.cd.momentum(5), 0.9);
        assert_eq!(c.backprop_learning_rate, 0.001);
        assert_eq!(c.batch_size, 100);
        assert_eq!(c.epochs_per_layer, vec![20; 4]);
        assert_eq!(c.finetune_epochs, 10);
        assert_eq!(c.data.per_class_valid, 1000);
        assert_eq!(c.schedule.extra_epochs, vec![0, 5, 20, 40]);
        assert_eq!(c.schedule.termination, Termination::FirstLayerDone);
    }

    #[test]
    fn desk_preset() {
        let c = TrainingConfig::preset("desk").unwrap();
        assert_eq!(c.arch, vec![784, 256, 128, 64, 16]);
        assert_eq!(c.data.max_train, Some(6000));
        assert_eq!(c.data.per_class_valid, 100);
        assert_eq!(c.data.max_test, Some(1000));
        assert_eq!(c.schedule.stipulated_epochs, vec![10; 4]);
        assert_eq!(c.finetune_epochs, 5);
        assert!(matches!(TrainingConfig::preset("nope"), Err(ConfigError::UnknownPreset(_))));
    }

    #[test]
    fn overrides_and_tables() {
        let mut b = ConfigBuilder::preset("desk").unwrap();
        b.merge_str("f", "[sync]\nmode = \"deterministic_rounds\"\n").unwrap();
        b.set("train.finetune_epochs=0").unwrap();
        b.set("output.dir=/tmp/x").unwrap();
        let c = b.build(Some(Path::new("/data"))).unwrap();
        assert_eq!(c.mode, SyncMode::DeterministicRounds);
        assert_eq!(c.finetune_epochs, 0);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.data.images, PathBuf::from("/data/train-images-idx3-ubyte.gz"));
    }

    #[test]
    fn errors_name_key_and_line() {
        let mut b = ConfigBuilder::preset("desk").unwrap();
        let err = b.merge_str("cfg", "# c\ntrain.bogus = 1\n").unwrap_err();
        assert_eq!(err.to_string(), "cfg:2: unknown key `train.bogus`");

        let mut b = ConfigBuilder::preset("desk").unwrap();
        b.merge_str("cfg", "\n\n[train]\nbatch_size = 0\n").unwrap();
        let err = b.build(None).unwrap_err();
        assert!(err.to_string().starts_with("cfg:4: key `train.batch_size`"), "{err}");

        let mut b = ConfigBuilder::preset("desk").unwrap();
        b.merge_str("cfg", "sync.extra_epochs = [1, 2]").unwrap();
        assert!(b.build(None).is_err());

        assert!(matches!(
            ConfigBuilder::new().merge_str("cfg", "arch.dims = ["),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn echo_reproduces_config() {
        let mut b = ConfigBuilder::preset("desk").unwrap();
        b.set("train.seed=42").unwrap();
        let c = b.build(None).unwrap();
        let mut again = ConfigBuilder::new();
        again.merge_str("echo", &b.echo()).unwrap();
        assert_eq!(again.build(None).unwrap(), c);
        assert_eq!(again.build(None).unwrap().hash(), c.hash());
    }

    #[test]
    fn stipulated_defaults_to_greedy_epochs() {
        let mut b = ConfigBuilder::new();
        b.merge_str("cfg", "arch.dims = [4, 3, 2]\ntrain.epochs_per_layer = 7\nsync.extra_epochs = [0, 0]")
            .unwrap();
        let c = b.build(None).unwrap();
        assert_eq!(c.schedule.stipulated_epochs, vec![7, 7]);
    }

    #[test]
    fn wake_plans() {
        let mut s = TrainingConfig::preset("paper").unwrap().schedule;
        assert_eq!(s.wake_plan(3), (1, 40));
        s.extra_mode = ExtraMode::PerUpdate;
        assert_eq!(s.wake_plan(0), (0, 0));
        assert_eq!(s.wake_plan(2), (20, usize::MAX));
    }
}
