//! Synchronized layer-wise pre-training: one worker per layer, all layers
//! training at once, each on the freshest output of the layer below.
//!
//! Worker `l` reads from buffer `l` and publishes to buffer `l + 1` after
//! every epoch. Buffer 0 holds the network input at version 0 and never
//! changes; the last worker publishes into a terminal buffer nobody reads.
//! Once a worker has run its stipulated epochs it sleeps, and every new
//! input version wakes it for a few more epochs (bounded by its extra-epoch
//! budget).

mod buffer;
mod rounds;
mod threaded;

use std::sync::Arc;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;

pub use buffer::{Payload, Snapshot, VersionedBuffer, WaitOutcome};
pub use rounds::run_deterministic_rounds;
pub use threaded::run_free_running;

pub use crate::config::{ExtraMode, SyncMode, Termination, WorkerSchedule};
use crate::autoencoder::{Layer, PretrainedLayer};
use crate::config::TrainingConfig;
use crate::error::{Error, PretrainError, Result};
use crate::greedy::{ae_units, check_input, rbm_units, run_epoch};
use crate::linalg::DataMatrix;
use crate::metrics::{EventKind, TraceEvent, TraceSink};
use crate::rbm::RbmParams;
use crate::unit::PretrainUnit;

/// Knobs of a synchronized run that do not concern the units themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSettings {
    pub batch_size: usize,
    pub schedule: WorkerSchedule,
    pub mode: SyncMode,
    pub watchdog: Duration,
    pub pin_workers: bool,
}

impl SyncSettings {
    pub fn from_config(cfg: &TrainingConfig) -> Self {
        SyncSettings {
            batch_size: cfg.batch_size,
            schedule: cfg.schedule.clone(),
            mode: cfg.mode,
            watchdog: Duration::from_secs_f64(cfg.watchdog_secs),
            pin_workers: cfg.pin_workers,
        }
    }
}

/// What one worker did during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerStats {
    pub epochs: usize,
    pub wakes: usize,
    /// Highest input version trained on; `None` if it never received input.
    pub last_input_version: Option<u64>,
}

#[derive(Debug)]
pub struct SyncOutcome<U> {
    pub units: Vec<U>,
    pub stats: Vec<WorkerStats>,
    /// Number of lock-step rounds, for deterministic runs.
    pub rounds: Option<usize>,
}

/// Synchronized RBM pre-training, dispatching on `cfg.mode`.
pub fn sync_pretrain(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<RbmParams>> {
    check_input(cfg, train, valid)?;
    let out = sync_pretrain_units(rbm_units(cfg), &SyncSettings::from_config(cfg), train, valid, trace)?;
    Ok(out.units.into_iter().map(PretrainUnit::into_output).collect())
}

/// Synchronized pre-training with autoencoder units.
pub fn sync_pretrain_ae(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<Layer>> {
    Ok(sync_pretrain_ae_layers(cfg, train, valid, trace)?
        .into_iter()
        .map(|p| p.encoder)
        .collect())
}

pub fn sync_pretrain_ae_layers(
    cfg: &TrainingConfig,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<Vec<PretrainedLayer>> {
    check_input(cfg, train, valid)?;
    let out = sync_pretrain_units(ae_units(cfg), &SyncSettings::from_config(cfg), train, valid, trace)?;
    Ok(out.units.iter().map(PretrainUnit::pretrained).collect())
}

/// Runs the synchronized schedule over arbitrary units.
pub fn sync_pretrain_units<U: PretrainUnit>(
    units: Vec<(U, ChaCha8Rng)>,
    settings: &SyncSettings,
    train: &DataMatrix,
    valid: &DataMatrix,
    trace: &TraceSink,
) -> Result<SyncOutcome<U>> {
    if units.is_empty() {
        return Err(Error::InvalidArgument("no layers to pre-train".into()));
    }
    if settings.schedule.stipulated_epochs.len() < units.len() {
        return Err(Error::InvalidArgument(format!(
            "{} stipulated epoch counts for {} layers",
            settings.schedule.stipulated_epochs.len(),
            units.len()
        )));
    }
    if settings.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let input = Payload::new(train.as_array().clone(), valid.as_array().clone());
    match settings.mode {
        SyncMode::FreeRunning => run_free_running(units, settings, input, trace),
        SyncMode::DeterministicRounds => run_deterministic_rounds(units, settings, input, trace),
    }
}

/// Per-layer state shared by both execution modes.
struct Worker<U> {
    unit: U,
    rng: ChaCha8Rng,
    /// 0-based layer index; trace rows use `index + 1`.
    index: usize,
    stipulated: usize,
    per_wake: usize,
    budget: usize,
    epochs: usize,
    wakes: usize,
    seen: Option<u64>,
    data: Option<Arc<Payload>>,
}

impl<U: PretrainUnit> Worker<U> {
    fn new(index: usize, unit: U, rng: ChaCha8Rng, schedule: &WorkerSchedule) -> Self {
        let (per_wake, budget) = schedule.wake_plan(index);
        Worker {
            unit,
            rng,
            index,
            stipulated: schedule.stipulated_epochs[index],
            per_wake,
            budget,
            epochs: 0,
            wakes: 0,
            seen: None,
            data: None,
        }
    }

    fn id(&self) -> usize {
        self.index + 1
    }

    fn in_stipulated(&self) -> bool {
        self.epochs < self.stipulated
    }

    fn has_newer(&self, version: u64) -> bool {
        self.seen.is_none_or(|s| version > s)
    }

    fn take(&mut self, snap: Snapshot) -> Result<()> {
        if !snap.payload.verify() {
            return Err(PretrainError::CorruptPayload {
                worker: self.id(),
                version: snap.version,
            }
            .into());
        }
        self.seen = Some(snap.version);
        self.data = Some(snap.payload);
        Ok(())
    }

    /// Consumes one wake-up: how many epochs to run for it.
    fn start_wake(&mut self) -> usize {
        let n = self.per_wake.min(self.budget);
        self.budget -= n;
        self.wakes += 1;
        n
    }

    /// Whether a sleeping worker could still be woken.
    fn can_wake(&self) -> bool {
        self.index > 0 && self.budget > 0 && self.per_wake > 0
    }

    /// One epoch on the current input, then the transformed output for the
    /// next layer. Returns the payload and when the transform began.
    fn train_epoch(&mut self, batch_size: usize, trace: &TraceSink) -> Result<(Payload, u64)> {
        let data = Arc::clone(self.data.as_ref().expect("worker trains only after receiving input"));
        let (id, version) = (self.id(), self.seen.unwrap_or(0));
        run_epoch(
            &mut self.unit,
            &mut self.rng,
            id,
            self.epochs,
            version,
            &data.train,
            &data.valid,
            batch_size,
            trace,
        )?;
        self.epochs += 1;
        let start = trace.now_ns();
        let train = self.unit.transform(data.train.view())?;
        let valid = self.unit.transform(data.valid.view())?;
        Ok((Payload::new(train, valid), start))
    }

    fn event(&self, kind: EventKind, t_start_ns: u64, t_end_ns: u64, trace: &TraceSink) {
        trace.record(TraceEvent {
            worker: self.id(),
            epoch: self.epochs,
            kind,
            input_version: self.seen.unwrap_or(0),
            train_err: None,
            valid_err: None,
            t_start_ns,
            t_end_ns,
        });
    }

    fn instant(&self, kind: EventKind, trace: &TraceSink) {
        let now = trace.now_ns();
        self.event(kind, now, now, trace);
    }

    fn stats(&self) -> WorkerStats {
        WorkerStats {
            epochs: self.epochs,
            wakes: self.wakes,
            last_input_version: self.seen,
        }
    }
}
