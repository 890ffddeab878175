//! End-to-end runs: load and split data, pre-train, unfold, fine-tune, score.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::autoencoder::{unfold, PretrainedLayer, StackedAutoencoder};
use crate::checkpoint::{Checkpoint, Model};
use crate::config::{DataConfig, TrainingConfig};
use crate::dataset::{load_idx, stratified_split, LabeledDataset};
use crate::error::{Error, Result};
use crate::greedy::{greedy_pretrain, greedy_pretrain_ae_layers};
use crate::linalg::DataMatrix;
use crate::metrics::{
    evaluate, export_error_curves, export_trace, trace_span, FinetuneRecord, RunReport, TraceEvent,
    TraceSink,
};
use crate::rbm::RbmParams;
use crate::sync::{sync_pretrain, sync_pretrain_ae_layers};
use crate::unit::UnitKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Greedy,
    Sync,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Greedy => "greedy",
            Algorithm::Sync => "sync",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Algorithm::Greedy),
            "sync" => Ok(Algorithm::Sync),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm `{other}` (expected `greedy` or `sync`)"
            ))),
        }
    }
}

/// Train/validation/test splits ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub valid: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads the training and test files, applies the size caps and moves
/// `per_class_valid` examples of each digit into the validation set.
pub fn prepare_data(cfg: &DataConfig) -> Result<PreparedData> {
    let mut full = load_idx(&cfg.images, &cfg.labels)?;
    if let Some(n) = cfg.max_train {
        full = full.truncate(n);
    }
    let (train, valid) = stratified_split(&full, cfg.per_class_valid, cfg.split_seed)?;
    let mut test = load_idx(&cfg.test_images, &cfg.test_labels)?;
    if let Some(n) = cfg.max_test {
        test = test.truncate(n);
    }
    Ok(PreparedData { train, valid, test })
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub layers: Vec<PretrainedLayer>,
    /// The raw RBMs, when RBM units were used.
    pub rbms: Option<Vec<RbmParams>>,
    pub trace: Vec<TraceEvent>,
    /// Span of the trace: first event start to last event end.
    pub wall: Duration,
}

pub fn run_pretrain(
    cfg: &TrainingConfig,
    algorithm: Algorithm,
    train: &DataMatrix,
    valid: &DataMatrix,
) -> Result<PretrainOutput> {
    let trace = TraceSink::new();
    let (layers, rbms) = match (cfg.unit, algorithm) {
        (UnitKind::Rbm, alg) => {
            let rbms = match alg {
                Algorithm::Greedy => greedy_pretrain(cfg, train, valid, &trace)?,
                Algorithm::Sync => sync_pretrain(cfg, train, valid, &trace)?,
            };
            (rbms.iter().map(PretrainedLayer::from).collect(), Some(rbms))
        }
        (UnitKind::Autoencoder, Algorithm::Greedy) => (greedy_pretrain_ae_layers(cfg, train, valid, &trace)?, None),
        (UnitKind::Autoencoder, Algorithm::Sync) => (sync_pretrain_ae_layers(cfg, train, valid, &trace)?, None),
    };
    let events = trace.sorted_events();
    Ok(PretrainOutput {
        layers,
        rbms,
        wall: trace_span(&events),
        trace: events,
    })
}

/// Seed of the minibatch shuffle for fine-tuning epoch `epoch` (0-based).
/// Depends only on the run seed and the epoch, so a resumed run shuffles
/// exactly as an uninterrupted one would.
pub fn finetune_epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (epoch as u64 + 1).wrapping_mul(0xd1b5_4a32_d192_ed03)
}

/// Backpropagation epochs `start_epoch..start_epoch + epochs`, with a record
/// per epoch. `on_epoch` runs after each epoch (e.g. to checkpoint).
pub fn run_finetune(
    sae: &mut StackedAutoencoder,
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    start_epoch: usize,
    epochs: usize,
    mut on_epoch: impl FnMut(usize, &StackedAutoencoder) -> Result<()>,
) -> Result<Vec<FinetuneRecord>> {
    let origin = Instant::now();
    let ns = |t: Instant| t.duration_since(origin).as_nanos() as u64;
    let mut records = Vec::with_capacity(epochs);
    for epoch in start_epoch..start_epoch + epochs {
        let start = Instant::now();
        let train_err = sae.backprop_epoch(
            train,
            cfg.backprop_learning_rate,
            cfg.batch_size,
            finetune_epoch_seed(cfg.seed, epoch),
        )?;
        let valid_err = if valid.rows() > 0 { evaluate(sae, valid)? } else { f64::NAN };
        records.push(FinetuneRecord {
            epoch: epoch + 1,
            train_err,
            valid_err,
            t_start_ns: ns(start),
            t_end_ns: ns(Instant::now()),
        });
        on_epoch(epoch + 1, sae)?;
    }
    Ok(records)
}

/// Everything produced by one end-to-end run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub pretrain: PretrainOutput,
    pub finetune: Vec<FinetuneRecord>,
    pub model: StackedAutoencoder,
    /// Validation error of the unfolded network before fine-tuning.
    pub pre_finetune_valid_err: f64,
}

pub fn run_end_to_end(cfg: &TrainingConfig, algorithm: Algorithm, data: &PreparedData) -> Result<RunOutput> {
    let pretrain = run_pretrain(cfg, algorithm, &data.train.images, &data.valid.images)?;
    let mut model = unfold(&pretrain.layers)?;
    let pre_finetune_valid_err = evaluate(&model, &data.valid.images)?;

    let started = Instant::now();
    let mut finetune = run_finetune(
        &mut model,
        cfg,
        &data.train.images,
        &data.valid.images,
        0,
        cfg.finetune_epochs,
        |_, _| Ok(()),
    )?;
    let finetune_wall = started.elapsed();
    // finetune timestamps relative to the end of pre-training
    let offset = pretrain.trace.iter().map(|e| e.t_end_ns).max().unwrap_or(0);
    for r in &mut finetune {
        r.t_start_ns += offset;
        r.t_end_ns += offset;
    }

    let report = RunReport {
        algorithm: algorithm.to_string(),
        pretrain_wall_s: pretrain.wall.as_secs_f64(),
        finetune_wall_s: finetune_wall.as_secs_f64(),
        train_err: evaluate(&model, &data.train.images)?,
        valid_err: evaluate(&model, &data.valid.images)?,
        test_err: evaluate(&model, &data.test.images)?,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    Ok(RunOutput {
        report,
        pretrain,
        finetune,
        model,
        pre_finetune_valid_err,
    })
}

/// Writes a run's artefacts into `dir`:
/// `trace.csv`, `curves.csv`, `summary.toml`, `config.toml` and
/// `checkpoints/{pretrained,final}.ckpt`.
pub fn write_run(dir: &Path, cfg: &TrainingConfig, config_echo: &str, out: &RunOutput) -> Result<()> {
    let ckpt_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    export_trace(&out.pretrain.trace, &dir.join("trace.csv"))?;
    export_error_curves(&out.pretrain.trace, &out.finetune, &dir.join("curves.csv"))?;
    out.report.write(&dir.join("summary.toml"))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, config_echo).map_err(|e| Error::io(&cfg_path, e))?;
    pretrained_checkpoint(cfg, &out.pretrain).save(&ckpt_dir.join("pretrained.ckpt"))?;
    Checkpoint {
        seed: cfg.seed,
        epoch: out.finetune.last().map_or(0, |r| r.epoch as u64),
        model: Model::Autoencoder(out.model.clone()),
    }
    .save(&ckpt_dir.join("final.ckpt"))
}

/// Checkpoint of a pre-training result: the RBM stack (with velocities) when
/// available, otherwise the unfolded network.
pub fn pretrained_checkpoint(cfg: &TrainingConfig, pre: &PretrainOutput) -> Checkpoint {
    let model = match &pre.rbms {
        Some(rbms) => Model::RbmStack(rbms.clone()),
        None => Model::Autoencoder(unfold(&pre.layers).expect("pre-trained layers chain")),
    };
    Checkpoint {
        seed: cfg.seed,
        epoch: 0,
        model,
    }
}

/// The network to fine-tune from a checkpoint of either kind.
pub fn model_from_checkpoint(ck: &Checkpoint) -> Result<StackedAutoencoder> {
    match &ck.model {
        Model::RbmStack(rbms) => {
            let layers: Vec<PretrainedLayer> = rbms.iter().map(PretrainedLayer::from).collect();
            Ok(unfold(&layers)?)
        }
        Model::Autoencoder(sae) => Ok(sae.clone()),
    }
}
