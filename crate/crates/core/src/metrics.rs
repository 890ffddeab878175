//! Trace events, run reports and the CSV files used to chart a run.
//!
//! Timestamps are nanoseconds on a monotonic clock, measured from the moment
//! the [`TraceSink`] was created.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autoencoder::StackedAutoencoder;
use crate::error::{Error, Result};
use crate::linalg::{DataMatrix, ShapeError};

/// Header of the trace CSV.
pub const TRACE_HEADER: &str = "worker,epoch,event,input_version,train_err,valid_err,t_start_ns,t_end_ns";
/// Header of the error-curve CSV.
pub const CURVES_HEADER: &str = "phase,worker,epoch,input_version,t_rel_s,train_err,valid_err";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    /// Blocked until the first input payload arrived.
    Wait,
    /// One training epoch.
    Epoch,
    /// Transforming and handing data to the next layer.
    Publish,
    /// Stipulated epochs done, waiting for new input.
    Sleep,
    /// Woken by a new input version.
    Wake,
    /// Worker finished.
    Done,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EventKind::Wait => "WAIT",
            EventKind::Epoch => "EPOCH",
            EventKind::Publish => "PUBLISH",
            EventKind::Sleep => "SLEEP",
            EventKind::Wake => "WAKE",
            EventKind::Done => "DONE",
        };
        f.write_str(s)
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "WAIT" => EventKind::Wait,
            "EPOCH" => EventKind::Epoch,
            "PUBLISH" => EventKind::Publish,
            "SLEEP" => EventKind::Sleep,
            "WAKE" => EventKind::Wake,
            "DONE" => EventKind::Done,
            other => return Err(format!("unknown event kind `{other}`")),
        })
    }
}

/// One row of the trace. Workers are numbered from 1 (worker `l` trains
/// layer `l`); `epoch` is the worker's epoch count, 1-based for `EPOCH` and
/// `PUBLISH` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub worker: usize,
    pub epoch: usize,
    #[serde(rename = "event")]
    pub kind: EventKind,
    pub input_version: u64,
    pub train_err: Option<f64>,
    pub valid_err: Option<f64>,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
}

impl TraceEvent {
    pub fn duration_ns(&self) -> u64 {
        self.t_end_ns.saturating_sub(self.t_start_ns)
    }

    /// Everything except the timestamps; equal for two runs of a schedule
    /// that does not depend on the wall clock.
    pub fn schedule_key(&self) -> (usize, usize, EventKind, u64, Option<u64>, Option<u64>) {
        (
            self.worker,
            self.epoch,
            self.kind,
            self.input_version,
            self.train_err.map(f64::to_bits),
            self.valid_err.map(f64::to_bits),
        )
    }
}

/// Concurrently appendable event log.
#[derive(Debug, Clone)]
pub struct TraceSink {
    origin: Instant,
    events: Arc<Mutex<Vec<TraceEvent>>>,
    heartbeat: Arc<AtomicU64>,
}

impl Default for TraceSink {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceSink {
    pub fn new() -> Self {
        TraceSink {
            origin: Instant::now(),
            events: Arc::new(Mutex::new(Vec::new())),
            heartbeat: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    pub fn record(&self, event: TraceEvent) {
        self.events.lock().unwrap().push(event);
        self.beat();
    }

    /// Signals progress without recording an event (used per minibatch).
    pub fn beat(&self) {
        self.heartbeat.fetch_add(1, Ordering::Relaxed);
    }

    pub fn heartbeat(&self) -> u64 {
        self.heartbeat.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Events in the order they were recorded.
    pub fn events(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap().clone()
    }

    /// Events in canonical `(t_start, worker)` order.
    pub fn sorted_events(&self) -> Vec<TraceEvent> {
        let mut events = self.events();
        sort_events(&mut events);
        events
    }
}

/// Stable sort by `(t_start_ns, worker)`.
pub fn sort_events(events: &mut [TraceEvent]) {
    events.sort_by_key(|e| (e.t_start_ns, e.worker));
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    worker: usize,
    epoch: usize,
    event: String,
    input_version: u64,
    train_err: Option<f64>,
    valid_err: Option<f64>,
    t_start_ns: u64,
    t_end_ns: u64,
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes events, canonically sorted, as trace CSV.
pub fn export_trace(events: &[TraceEvent], path: &Path) -> Result<()> {
    let mut sorted = events.to_vec();
    sort_events(&mut sorted);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(TRACE_HEADER.split(',')).map_err(csv_err(path))?;
    for e in &sorted {
        w.serialize(TraceRow {
            worker: e.worker,
            epoch: e.epoch,
            event: e.kind.to_string(),
            input_version: e.input_version,
            train_err: e.train_err,
            valid_err: e.valid_err,
            t_start_ns: e.t_start_ns,
            t_end_ns: e.t_end_ns,
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV written by [`export_trace`].
pub fn import_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != TRACE_HEADER {
        return Err(Error::MalformedTrace(format!(
            "{}: unexpected header `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut events = Vec::new();
    for row in r.deserialize::<TraceRow>() {
        let row = row.map_err(csv_err(path))?;
        let kind = row.event.parse().map_err(Error::MalformedTrace)?;
        events.push(TraceEvent {
            worker: row.worker,
            epoch: row.epoch,
            kind,
            input_version: row.input_version,
            train_err: row.train_err,
            valid_err: row.valid_err,
            t_start_ns: row.t_start_ns,
            t_end_ns: row.t_end_ns,
        });
    }
    Ok(events)
}

/// Reconstruction errors measured after one fine-tuning epoch (epoch 0 is the
/// unfolded network before any update).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub epoch: usize,
    pub train_err: f64,
    pub valid_err: f64,
    pub t_start_ns: u64,
    pub t_end_ns: u64,
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    phase: &'a str,
    worker: usize,
    epoch: usize,
    input_version: u64,
    t_rel_s: f64,
    train_err: Option<f64>,
    valid_err: Option<f64>,
}

/// Error curves: one row per pre-training epoch (from `EPOCH` events) and one
/// per fine-tuning epoch, with time in seconds relative to the first event.
/// Fine-tuning rows use worker 0.
pub fn export_error_curves(
    events: &[TraceEvent],
    finetune: &[FinetuneRecord],
    path: &Path,
) -> Result<()> {
    let origin = events
        .iter()
        .map(|e| e.t_start_ns)
        .chain(finetune.iter().map(|f| f.t_start_ns))
        .min()
        .unwrap_or(0);
    let rel = |t: u64| t.saturating_sub(origin) as f64 * 1e-9;
    let mut epochs: Vec<&TraceEvent> = events.iter().filter(|e| e.kind == EventKind::Epoch).collect();
    epochs.sort_by_key(|e| (e.t_end_ns, e.worker));
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(CURVES_HEADER.split(',')).map_err(csv_err(path))?;
    for e in epochs {
        w.serialize(CurveRow {
            phase: "pretrain",
            worker: e.worker,
            epoch: e.epoch,
            input_version: e.input_version,
            t_rel_s: rel(e.t_end_ns),
            train_err: e.train_err,
            valid_err: e.valid_err,
        })
        .map_err(csv_err(path))?;
    }
    for f in finetune {
        w.serialize(CurveRow {
            phase: "finetune",
            worker: 0,
            epoch: f.epoch,
            input_version: 0,
            t_rel_s: rel(f.t_end_ns),
            train_err: Some(f.train_err),
            valid_err: Some(f.valid_err),
        })
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// How one worker spent the pre-training span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkerTime {
    pub worker: usize,
    /// Training epochs and publications.
    pub busy: Duration,
    /// Blocked waiting for the first input payload.
    pub waiting: Duration,
    /// Everything else in the span (sleeping, finished, not yet started).
    pub idle: Duration,
}

impl WorkerTime {
    pub fn total(&self) -> Duration {
        self.busy + self.waiting + self.idle
    }
}

/// Partitions each worker's share of the overall span `[min t_start, max
/// t_end]` into busy, waiting and idle time.
pub fn idle_time_report(events: &[TraceEvent]) -> Result<Vec<WorkerTime>> {
    if let Some(bad) = events.iter().find(|e| e.t_end_ns < e.t_start_ns) {
        return Err(Error::MalformedTrace(format!(
            "worker {} {} event ends before it starts",
            bad.worker, bad.kind
        )));
    }
    let Some(start) = events.iter().map(|e| e.t_start_ns).min() else {
        return Ok(Vec::new());
    };
    let end = events.iter().map(|e| e.t_end_ns).max().unwrap();
    let span = end - start;
    let mut workers: Vec<usize> = events.iter().map(|e| e.worker).collect();
    workers.sort_unstable();
    workers.dedup();
    Ok(workers
        .into_iter()
        .map(|w| {
            let mine = events.iter().filter(|e| e.worker == w);
            let busy: u64 = mine
                .clone()
                .filter(|e| matches!(e.kind, EventKind::Epoch | EventKind::Publish))
                .map(TraceEvent::duration_ns)
                .sum();
            let waiting: u64 = mine
                .filter(|e| e.kind == EventKind::Wait)
                .map(TraceEvent::duration_ns)
                .sum();
            let busy = busy.min(span);
            let waiting = waiting.min(span - busy);
            WorkerTime {
                worker: w,
                busy: Duration::from_nanos(busy),
                waiting: Duration::from_nanos(waiting),
                idle: Duration::from_nanos(span - busy - waiting),
            }
        })
        .collect())
}

/// Sum over workers of every non-busy duration (idle plus waiting).
pub fn total_non_busy(report: &[WorkerTime]) -> Duration {
    report.iter().map(|w| w.idle + w.waiting).sum()
}

/// Wall-clock span covered by a trace.
pub fn trace_span(events: &[TraceEvent]) -> Duration {
    match (
        events.iter().map(|e| e.t_start_ns).min(),
        events.iter().map(|e| e.t_end_ns).max(),
    ) {
        (Some(s), Some(e)) => Duration::from_nanos(e.saturating_sub(s)),
        _ => Duration::ZERO,
    }
}

/// Reconstruction error per example of `data` under `sae`.
pub fn evaluate(sae: &StackedAutoencoder, data: &DataMatrix) -> Result<f64, ShapeError> {
    sae.loss(data)
}

/// Outcome of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub algorithm: String,
    pub pretrain_wall_s: f64,
    pub finetune_wall_s: f64,
    pub train_err: f64,
    pub valid_err: f64,
    pub test_err: f64,
    pub config_hash: String,
    pub seed: u64,
}

impl RunReport {
    pub fn total_wall_s(&self) -> f64 {
        self.pretrain_wall_s + self.finetune_wall_s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("report serialises");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }
}

/// Fractions of time saved by the synchronized run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Speedup {
    /// Relative to greedy pre-training time alone.
    pub pretrain: f64,
    /// Relative to greedy pre-training plus fine-tuning time.
    pub total: f64,
}

/// `(greedy − sync) / greedy`, for pre-training only and for the whole run.
/// Negative when the synchronized run is slower.
pub fn speedup(greedy: &RunReport, sync: &RunReport) -> Result<Speedup> {
    if greedy.config_hash != sync.config_hash || greedy.seed != sync.seed {
        return Err(Error::MismatchedReports {
            left: format!("{}/seed {}", greedy.config_hash, greedy.seed),
            right: format!("{}/seed {}", sync.config_hash, sync.seed),
        });
    }
    let frac = |g: f64, s: f64| if g > 0.0 { (g - s) / g } else { 0.0 };
    Ok(Speedup {
        pretrain: frac(greedy.pretrain_wall_s, sync.pretrain_wall_s),
        total: frac(greedy.total_wall_s(), sync.total_wall_s()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(worker: usize, kind: EventKind, start: u64, end: u64) -> TraceEvent {
        TraceEvent {
            worker,
            epoch: 1,
            kind,
            input_version: 0,
            train_err: Some(1.5),
            valid_err: None,
            t_start_ns: start,
            t_end_ns: end,
        }
    }

    fn report(pre: f64, fine: f64) -> RunReport {
        RunReport {
            algorithm: "x".into(),
            pretrain_wall_s: pre,
            finetune_wall_s: fine,
            train_err: 0.0,
            valid_err: 0.0,
            test_err: 0.0,
            config_hash: "h".into(),
            seed: 1,
        }
    }

    #[test]
    fn reference_speedups() {
        let hms = |h: f64, m: f64, s: f64| h * 3600.0 + m * 60.0 + s;
        let g = report(hms(3.0, 14.0, 43.0), hms(2.0, 16.0, 59.0));
        let s = report(hms(1.0, 49.0, 11.0), hms(2.0, 15.0, 42.0));
        let sp = speedup(&g, &s).unwrap();
        assert!((sp.pretrain - 0.4393).abs() < 1e-4, "{}", sp.pretrain);
        assert!((sp.total - 0.2617).abs() < 1e-4, "{}", sp.total);
    }

    #[test]
    fn speedup_sign_and_identity() {
        assert_eq!(speedup(&report(10.0, 5.0), &report(10.0, 5.0)).unwrap().pretrain, 0.0);
        assert!(speedup(&report(10.0, 5.0), &report(12.0, 5.0)).unwrap().pretrain < 0.0);
        let mut other = report(1.0, 1.0);
        other.config_hash = "different".into();
        assert!(speedup(&report(1.0, 1.0), &other).is_err());
    }

    #[test]
    fn empty_trace_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        export_trace(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{TRACE_HEADER}\n"));
        assert!(import_trace(&p).unwrap().is_empty());
        assert!(idle_time_report(&[]).unwrap().is_empty());
    }

    #[test]
    fn idle_report_partitions_span() {
        let events = vec![
            ev(1, EventKind::Epoch, 0, 10),
            ev(1, EventKind::Publish, 10, 12),
            ev(2, EventKind::Wait, 0, 10),
            ev(2, EventKind::Epoch, 12, 30),
        ];
        let r = idle_time_report(&events).unwrap();
        assert_eq!(r[0].busy, Duration::from_nanos(12));
        assert_eq!(r[0].idle, Duration::from_nanos(18));
        assert_eq!(r[1].waiting, Duration::from_nanos(10));
        assert_eq!(r[1].idle, Duration::from_nanos(2));
        assert!(r.iter().all(|w| w.total() == Duration::from_nanos(30)));
        assert!(idle_time_report(&[ev(1, EventKind::Epoch, 5, 2)]).is_err());
    }

    #[test]
    fn curves_file_has_pretrain_and_finetune_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.csv");
        let ft = vec![FinetuneRecord {
            epoch: 0,
            train_err: 2.0,
            valid_err: 3.0,
            t_start_ns: 40,
            t_end_ns: 50,
        }];
        export_error_curves(&[ev(1, EventKind::Epoch, 0, 10), ev(1, EventKind::Done, 10, 10)], &ft, &p)
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CURVES_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("pretrain,1,1,0,"));
        assert!(lines[2].starts_with("finetune,0,0,0,"));
    }

    fn arb_event() -> impl Strategy<Value = TraceEvent> {
        (
            1usize..5,
            0usize..50,
            prop_oneof![
                Just(EventKind::Wait),
                Just(EventKind::Epoch),
                Just(EventKind::Publish),
                Just(EventKind::Sleep),
                Just(EventKind::Wake),
                Just(EventKind::Done)
            ],
            0u64..100,
            proptest::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())),
            proptest::option::of(0.0f64..100.0),
            0u64..1_000_000,
            0u64..1000,
        )
            .prop_map(|(worker, epoch, kind, v, tr, va, start, len)| TraceEvent {
                worker,
                epoch,
                kind,
                input_version: v,
                train_err: tr,
                valid_err: va,
                t_start_ns: start,
                t_end_ns: start + len,
            })
    }

    proptest! {
        #[test]
        fn trace_round_trip(events in proptest::collection::vec(arb_event(), 0..30)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.csv");
            export_trace(&events, &p).unwrap();
            let back = import_trace(&p).unwrap();
            let mut expected = events.clone();
            sort_events(&mut expected);
            prop_assert_eq!(&back, &expected);
            prop_assert!(back.windows(2).all(|w| (w[0].t_start_ns, w[0].worker) <= (w[1].t_start_ns, w[1].worker)));
        }
    }
}
