//! Lock-step execution on the calling thread.
//!
//! Each round, every worker that has something to do runs at most one epoch
//! on the input visible at the start of the round. Publications made during
//! the round are held back and applied at the barrier, in layer order. The
//! resulting schedule, parameters and trace (timestamps aside) depend only on
//! the configuration and seed.

use std::panic::{catch_unwind, AssertUnwindSafe};

use rand_chacha::ChaCha8Rng;

use super::buffer::{Payload, VersionedBuffer};
use super::{SyncOutcome, SyncSettings, Termination, Worker};
use crate::error::{PretrainError, Result};
use crate::metrics::{EventKind, TraceSink};
use crate::unit::PretrainUnit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    /// No input received yet; waiting since the given time.
    Waiting(u64),
    Stipulated,
    /// Past the stipulated epochs, waiting for a newer input since the given time.
    Sleeping(u64),
    /// Woken, with this many epochs left for the current wake-up.
    Woken(usize),
    Done,
}

/// Runs the synchronized schedule in deterministic rounds.
pub fn run_deterministic_rounds<U: PretrainUnit>(
    units: Vec<(U, ChaCha8Rng)>,
    settings: &SyncSettings,
    input: Payload,
    trace: &TraceSink,
) -> Result<SyncOutcome<U>> {
    let k = units.len();
    let mut buffers = vec![VersionedBuffer::fixed(input)];
    buffers.extend((0..k).map(|_| VersionedBuffer::new()));
    let mut workers: Vec<Worker<U>> = units
        .into_iter()
        .enumerate()
        .map(|(l, (u, rng))| Worker::new(l, u, rng, &settings.schedule))
        .collect();
    let t0 = trace.now_ns();
    let mut states = vec![State::Waiting(t0); k];
    let first_layer_stops = settings.schedule.termination == Termination::FirstLayerDone;
    let mut rounds = 0;

    while states.iter().any(|s| *s != State::Done) {
        rounds += 1;
        let mut pending: Vec<(usize, Payload, u64)> = Vec::new();
        for l in 0..k {
            let step = catch_unwind(AssertUnwindSafe(|| {
                step(&mut workers[l], &mut states[l], &buffers[l], settings.batch_size, trace)
            }))
            .unwrap_or_else(|p| {
                let message = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "panicked".into());
                Err(PretrainError::WorkerFailed { worker: l + 1, message }.into())
            })?;
            if let Some((payload, start)) = step {
                pending.push((l, payload, start));
            }
        }

        // barrier
        let mut stop = false;
        for (l, payload, start) in pending {
            if l == 0 && first_layer_stops && !workers[0].in_stipulated() {
                stop = true;
            }
            buffers[l + 1].publish(payload);
            workers[l].event(EventKind::Publish, start, trace.now_ns(), trace);
        }
        for l in 0..k {
            let upstream_done = l > 0 && states[l - 1] == State::Done;
            let newer = buffers[l].latest().is_some_and(|s| workers[l].has_newer(s.version));
            let finish = match states[l] {
                State::Done => false,
                _ if stop => true,
                State::Stipulated => !workers[l].in_stipulated() && !workers[l].can_wake(),
                State::Sleeping(_) => upstream_done && !newer,
                State::Waiting(_) => upstream_done && !newer,
                State::Woken(_) => false,
            };
            if finish {
                if let State::Sleeping(since) = states[l] {
                    workers[l].event(EventKind::Sleep, since, trace.now_ns(), trace);
                }
                workers[l].instant(EventKind::Done, trace);
                states[l] = State::Done;
            }
        }
    }

    let stats = workers.iter().map(Worker::stats).collect();
    Ok(SyncOutcome {
        units: workers.into_iter().map(|w| w.unit).collect(),
        stats,
        rounds: Some(rounds),
    })
}

/// Advances one worker by at most one epoch. Returns the payload to publish
/// at the barrier, with the time its transform started.
fn step<U: PretrainUnit>(
    w: &mut Worker<U>,
    state: &mut State,
    input: &VersionedBuffer,
    batch_size: usize,
    trace: &TraceSink,
) -> Result<Option<(Payload, u64)>> {
    let latest = input.latest().filter(|s| w.has_newer(s.version));
    match *state {
        State::Done => return Ok(None),
        State::Waiting(since) => {
            let Some(s) = latest else { return Ok(None) };
            w.take(s)?;
            w.event(EventKind::Wait, since, trace.now_ns(), trace);
            *state = State::Stipulated;
        }
        State::Stipulated => {
            if let Some(s) = latest {
                w.take(s)?;
            }
        }
        State::Sleeping(since) => {
            let Some(s) = latest else { return Ok(None) };
            w.take(s)?;
            w.event(EventKind::Sleep, since, trace.now_ns(), trace);
            w.instant(EventKind::Wake, trace);
            let n = w.start_wake();
            if n == 0 {
                *state = State::Sleeping(trace.now_ns());
                return Ok(None);
            }
            *state = State::Woken(n);
        }
        State::Woken(_) => {}
    }

    let out = w.train_epoch(batch_size, trace)?;
    *state = match *state {
        State::Stipulated if !w.in_stipulated() && w.can_wake() => State::Sleeping(trace.now_ns()),
        State::Woken(1) if w.can_wake() => State::Sleeping(trace.now_ns()),
        State::Woken(1) => State::Done,
        State::Woken(n) => State::Woken(n - 1),
        s => s,
    };
    if *state == State::Done {
        w.instant(EventKind::Done, trace);
    }
    Ok(Some(out))
}
