//! Free-running execution: one OS thread per worker.

use std::any::Any;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand_chacha::ChaCha8Rng;

use super::buffer::{Payload, VersionedBuffer, WaitOutcome};
use super::{SyncOutcome, SyncSettings, Termination, Worker};
use crate::error::{PretrainError, Result};
use crate::metrics::{EventKind, TraceSink};
use crate::unit::PretrainUnit;

const POLL: Duration = Duration::from_millis(20);

/// Flags shared by every worker of a run.
struct Control {
    buffers: Vec<VersionedBuffer>,
    /// FIRST_LAYER_DONE fired.
    stop: AtomicBool,
    /// Some worker failed or the watchdog gave up.
    abort: AtomicBool,
}

impl Control {
    fn halted(&self) -> bool {
        self.stop.load(Ordering::SeqCst) || self.abort.load(Ordering::SeqCst)
    }

    fn raise(&self, flag: &AtomicBool) {
        flag.store(true, Ordering::SeqCst);
        self.buffers.iter().for_each(VersionedBuffer::interrupt);
    }
}

fn panic_message(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panicked".into())
}

/// Runs the synchronized schedule with one thread per layer.
///
/// Threads are detached rather than scoped: if the watchdog sees no progress
/// for `settings.watchdog` the run returns [`PretrainError::Deadlock`] and
/// any stuck thread is abandoned.
pub fn run_free_running<U: PretrainUnit>(
    units: Vec<(U, ChaCha8Rng)>,
    settings: &SyncSettings,
    input: Payload,
    trace: &TraceSink,
) -> Result<SyncOutcome<U>> {
    let k = units.len();
    let mut buffers = vec![VersionedBuffer::fixed(input)];
    buffers.extend((0..k).map(|_| VersionedBuffer::new()));
    let control = Arc::new(Control {
        buffers,
        stop: AtomicBool::new(false),
        abort: AtomicBool::new(false),
    });
    let cores = if settings.pin_workers {
        core_affinity::get_core_ids().unwrap_or_default()
    } else {
        Vec::new()
    };

    let (tx, rx) = mpsc::channel();
    for (l, (unit, rng)) in units.into_iter().enumerate() {
        let worker = Worker::new(l, unit, rng, &settings.schedule);
        let (control, trace, tx) = (Arc::clone(&control), trace.clone(), tx.clone());
        let settings = settings.clone();
        let core = (!cores.is_empty()).then(|| cores[l % cores.len()]);
        thread::Builder::new()
            .name(format!("layer-{}", l + 1))
            .spawn(move || {
                if let Some(core) = core {
                    core_affinity::set_for_current(core);
                }
                let res = catch_unwind(AssertUnwindSafe(|| worker_loop(worker, &control, &settings, &trace)))
                    .unwrap_or_else(|p| {
                        Err(PretrainError::WorkerFailed {
                            worker: l + 1,
                            message: panic_message(p),
                        }
                        .into())
                    });
                if res.is_err() {
                    control.raise(&control.abort);
                }
                control.buffers[l + 1].close();
                let _ = tx.send((l, res));
            })
            .map_err(|e| PretrainError::WorkerFailed {
                worker: l + 1,
                message: format!("cannot spawn thread: {e}"),
            })?;
    }
    drop(tx);

    let mut finished: Vec<Option<Worker<U>>> = (0..k).map(|_| None).collect();
    let mut remaining = k;
    let mut beat = trace.heartbeat();
    let mut last_progress = Instant::now();
    while remaining > 0 {
        match rx.recv_timeout(POLL.min(settings.watchdog)) {
            Ok((l, Ok(w))) => {
                finished[l] = Some(w);
                remaining -= 1;
            }
            Ok((_, Err(e))) => {
                control.raise(&control.abort);
                return Err(e);
            }
            Err(RecvTimeoutError::Timeout) => {
                let now = trace.heartbeat();
                if now != beat {
                    beat = now;
                    last_progress = Instant::now();
                } else if last_progress.elapsed() >= settings.watchdog {
                    control.raise(&control.abort);
                    return Err(PretrainError::Deadlock {
                        seconds: last_progress.elapsed().as_secs_f64(),
                    }
                    .into());
                }
            }
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }

    let mut units = Vec::with_capacity(k);
    let mut stats = Vec::with_capacity(k);
    for (l, w) in finished.into_iter().enumerate() {
        let w = w.ok_or_else(|| PretrainError::WorkerFailed {
            worker: l + 1,
            message: "exited without reporting".into(),
        })?;
        stats.push(w.stats());
        units.push(w.unit);
    }
    Ok(SyncOutcome {
        units,
        stats,
        rounds: None,
    })
}

fn worker_loop<U: PretrainUnit>(
    mut w: Worker<U>,
    control: &Control,
    settings: &SyncSettings,
    trace: &TraceSink,
) -> Result<Worker<U>> {
    let input = &control.buffers[w.index];
    let output = &control.buffers[w.index + 1];
    let halted = || control.halted();
    let first_layer_stops = w.index == 0 && settings.schedule.termination == Termination::FirstLayerDone;

    let t0 = trace.now_ns();
    match input.wait_newer(None, halted, POLL) {
        WaitOutcome::New(s) => {
            w.take(s)?;
            w.event(EventKind::Wait, t0, trace.now_ns(), trace);
        }
        WaitOutcome::Closed | WaitOutcome::Interrupted => {
            w.instant(EventKind::Done, trace);
            return Ok(w);
        }
    }

    while w.in_stipulated() && !control.halted() {
        if let Some(s) = input.latest_unless(halted) {
            if w.has_newer(s.version) {
                w.take(s)?;
            }
        }
        let (payload, start) = w.train_epoch(settings.batch_size, trace)?;
        if first_layer_stops && !w.in_stipulated() {
            control.raise(&control.stop);
        }
        output.publish(payload);
        w.event(EventKind::Publish, start, trace.now_ns(), trace);
    }

    while w.can_wake() && !control.halted() {
        let t = trace.now_ns();
        match input.wait_newer(w.seen, halted, POLL) {
            WaitOutcome::New(s) => {
                w.take(s)?;
                w.event(EventKind::Sleep, t, trace.now_ns(), trace);
                w.instant(EventKind::Wake, trace);
                for _ in 0..w.start_wake() {
                    if control.halted() {
                        break;
                    }
                    let (payload, start) = w.train_epoch(settings.batch_size, trace)?;
                    output.publish(payload);
                    w.event(EventKind::Publish, start, trace.now_ns(), trace);
                }
            }
            WaitOutcome::Closed | WaitOutcome::Interrupted => {
                w.event(EventKind::Sleep, t, trace.now_ns(), trace);
                break;
            }
        }
    }
    w.instant(EventKind::Done, trace);
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExtraMode, SyncMode, WorkerSchedule};
    use crate::error::Error;
    use crate::sync::test_units::Faulty;
    use crate::unit::layer_rng;
    use ndarray::Array2;

    fn settings(stipulated: Vec<usize>, extra: Vec<usize>, termination: Termination) -> SyncSettings {
        SyncSettings {
            batch_size: 2,
            schedule: WorkerSchedule {
                stipulated_epochs: stipulated,
                wake_epochs: 1,
                extra_epochs: extra,
                extra_mode: ExtraMode::Total,
                termination,
            },
            mode: SyncMode::FreeRunning,
            watchdog: Duration::from_millis(500),
            pin_workers: false,
        }
    }

    fn input() -> Payload {
        Payload::new(Array2::from_elem((4, 3), 0.5), Array2::from_elem((2, 3), 0.5))
    }

    fn units(faults: &[Faulty]) -> Vec<(Faulty, ChaCha8Rng)> {
        faults.iter().enumerate().map(|(l, f)| (f.clone(), layer_rng(1, l))).collect()
    }

    #[test]
    fn panicking_worker_is_reported() {
        let mut bad = Faulty::ok(3);
        bad.panic = true;
        let err = run_free_running(
            units(&[Faulty::ok(3), bad]),
            &settings(vec![2, 2], vec![0, 0], Termination::AllStipulated),
            input(),
            &TraceSink::new(),
        )
        .unwrap_err();
        match err {
            Error::Pretrain(PretrainError::WorkerFailed { worker, message }) => {
                assert_eq!(worker, 2);
                assert!(message.contains("exploded"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn hanging_worker_trips_watchdog() {
        let mut stuck = Faulty::ok(3);
        stuck.hang = true;
        let started = Instant::now();
        let err = run_free_running(
            units(&[stuck, Faulty::ok(3)]),
            &settings(vec![1, 1], vec![0, 0], Termination::AllStipulated),
            input(),
            &TraceSink::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Pretrain(PretrainError::Deadlock { .. })));
        assert!(started.elapsed() < Duration::from_secs(10));
    }

    #[test]
    fn all_stipulated_counts_epochs_and_wakes() {
        let out = run_free_running(
            units(&[Faulty::ok(3), Faulty::ok(3), Faulty::ok(3)]),
            &settings(vec![3, 2, 2], vec![0, 2, 50], Termination::AllStipulated),
            input(),
            &TraceSink::new(),
        )
        .unwrap();
        assert_eq!(out.stats[0].epochs, 3);
        assert_eq!(out.stats[0].wakes, 0);
        assert!(out.stats[1].epochs >= 2 && out.stats[1].epochs <= 4);
        assert_eq!(out.stats[1].epochs, 2 + out.stats[1].wakes);
        // the last layer eventually trains on its upstream's final output
        let up = &out.stats[1];
        let last_publish = up.epochs as u64;
        assert_eq!(out.stats[2].last_input_version, Some(last_publish));
    }

    #[test]
    fn first_layer_done_leaves_final_publication_unconsumed() {
        let trace = TraceSink::new();
        let out = run_free_running(
            units(&[Faulty::ok(3), Faulty::ok(3)]),
            &settings(vec![4, 1], vec![0, 100], Termination::FirstLayerDone),
            input(),
            &trace,
        )
        .unwrap();
        assert_eq!(out.stats[0].epochs, 4);
        assert!(out.stats[1].last_input_version.is_none_or(|v| v < 4));
        let done = trace.events().iter().filter(|e| e.kind == EventKind::Done).count();
        assert_eq!(done, 2);
    }
}
