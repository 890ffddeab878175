//! Latest-value hand-off of transformed data between neighbouring workers.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use ndarray::Array2;

/// Train/validation data for one layer, with a checksum taken at creation.
#[derive(Debug)]
pub struct Payload {
    pub train: Array2<f64>,
    pub valid: Array2<f64>,
    checksum: u64,
}

impl Payload {
    pub fn new(train: Array2<f64>, valid: Array2<f64>) -> Self {
        let checksum = checksum(&train, &valid);
        Payload {
            train,
            valid,
            checksum,
        }
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Recomputes the checksum and compares it with the stored one.
    pub fn verify(&self) -> bool {
        checksum(&self.train, &self.valid) == self.checksum
    }
}

/// Word-at-a-time multiplicative hash over both shapes and every value's
/// bit pattern. Cheap enough to run on every publication.
fn checksum(train: &Array2<f64>, valid: &Array2<f64>) -> u64 {
    const K: u64 = 0x517c_c1b7_2722_0a95;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| h = (h.rotate_left(5) ^ x).wrapping_mul(K);
    for m in [train, valid] {
        eat(m.nrows() as u64);
        eat(m.ncols() as u64);
        m.iter().for_each(|v| eat(v.to_bits()));
    }
    h
}

/// A payload together with the version it was published under.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub payload: Arc<Payload>,
    pub version: u64,
}

#[derive(Debug)]
struct Slot {
    payload: Option<Arc<Payload>>,
    version: u64,
    closed: bool,
}

/// Outcome of [`VersionedBuffer::wait_newer`].
#[derive(Debug)]
pub enum WaitOutcome {
    /// A version newer than the one asked about.
    New(Snapshot),
    /// The writer finished and nothing newer will arrive.
    Closed,
    /// The interrupt predicate fired.
    Interrupted,
}

/// Single-slot buffer holding the most recent `(payload, version)` pair.
///
/// A publication replaces whatever is stored, consumed or not, and bumps the
/// version by one. Readers clone the `Arc` under the lock, so a payload and
/// its version are always observed together.
#[derive(Debug)]
pub struct VersionedBuffer {
    slot: Mutex<Slot>,
    changed: Condvar,
}

impl Default for VersionedBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl VersionedBuffer {
    /// Empty buffer at version 0.
    pub fn new() -> Self {
        VersionedBuffer {
            slot: Mutex::new(Slot {
                payload: None,
                version: 0,
                closed: false,
            }),
            changed: Condvar::new(),
        }
    }

    /// Buffer holding `payload` at version 0 forever (the network input).
    pub fn fixed(payload: Payload) -> Self {
        VersionedBuffer {
            slot: Mutex::new(Slot {
                payload: Some(Arc::new(payload)),
                version: 0,
                closed: true,
            }),
            changed: Condvar::new(),
        }
    }

    /// Stores `payload` and returns its version.
    pub fn publish(&self, payload: Payload) -> u64 {
        let payload = Arc::new(payload);
        let mut slot = self.slot.lock().unwrap();
        slot.version += 1;
        slot.payload = Some(payload);
        let v = slot.version;
        drop(slot);
        self.changed.notify_all();
        v
    }

    pub fn version(&self) -> u64 {
        self.slot.lock().unwrap().version
    }

    pub fn latest(&self) -> Option<Snapshot> {
        let slot = self.slot.lock().unwrap();
        slot.payload.as_ref().map(|p| Snapshot {
            payload: Arc::clone(p),
            version: slot.version,
        })
    }

    /// The latest snapshot, unless `stop()` holds when checked under the
    /// buffer lock. A writer that raises the stop condition before publishing
    /// can therefore never have that publication consumed.
    pub fn latest_unless(&self, stop: impl Fn() -> bool) -> Option<Snapshot> {
        let slot = self.slot.lock().unwrap();
        if stop() {
            return None;
        }
        slot.payload.as_ref().map(|p| Snapshot {
            payload: Arc::clone(p),
            version: slot.version,
        })
    }

    /// Marks the writer as finished and wakes every waiter.
    pub fn close(&self) {
        self.slot.lock().unwrap().closed = true;
        self.changed.notify_all();
    }

    /// Wakes every waiter so it re-checks its interrupt predicate.
    pub fn interrupt(&self) {
        let _guard = self.slot.lock().unwrap();
        self.changed.notify_all();
    }

    /// Blocks until a payload newer than `seen` is available (any payload if
    /// `seen` is `None`), the buffer is closed, or `interrupted()` holds. The
    /// predicate is polled at least every `poll`.
    pub fn wait_newer(
        &self,
        seen: Option<u64>,
        interrupted: impl Fn() -> bool,
        poll: Duration,
    ) -> WaitOutcome {
        let mut slot = self.slot.lock().unwrap();
        loop {
            if interrupted() {
                return WaitOutcome::Interrupted;
            }
            if seen.is_none_or(|s| slot.version > s) {
                if let Some(p) = &slot.payload {
                    return WaitOutcome::New(Snapshot {
                        payload: Arc::clone(p),
                        version: slot.version,
                    });
                }
            }
            if slot.closed {
                return WaitOutcome::Closed;
            }
            slot = self.changed.wait_timeout(slot, poll).unwrap().0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::thread;

    fn payload(x: f64) -> Payload {
        Payload::new(Array2::from_elem((2, 3), x), Array2::from_elem((1, 3), -x))
    }

    #[test]
    fn versions_increase_and_latest_wins() {
        let b = VersionedBuffer::new();
        assert_eq!(b.version(), 0);
        assert!(b.latest().is_none());
        assert_eq!(b.publish(payload(1.0)), 1);
        assert_eq!(b.publish(payload(2.0)), 2);
        let s = b.latest().unwrap();
        assert_eq!(s.version, 2);
        assert_eq!(s.payload.train[[0, 0]], 2.0);
        assert!(s.payload.verify());
    }

    #[test]
    fn fixed_buffer_is_closed_at_version_zero() {
        let b = VersionedBuffer::fixed(payload(1.0));
        assert_eq!(b.latest().unwrap().version, 0);
        assert!(matches!(
            b.wait_newer(Some(0), || false, Duration::from_millis(1)),
            WaitOutcome::Closed
        ));
    }

    #[test]
    fn waiter_sees_publication_and_interrupt() {
        let b = Arc::new(VersionedBuffer::new());
        let reader = {
            let b = Arc::clone(&b);
            thread::spawn(move || b.wait_newer(None, || false, Duration::from_millis(50)))
        };
        thread::sleep(Duration::from_millis(10));
        b.publish(payload(3.0));
        assert!(matches!(reader.join().unwrap(), WaitOutcome::New(s) if s.version == 1));

        let stop = Arc::new(AtomicBool::new(false));
        let reader = {
            let (b, stop) = (Arc::clone(&b), Arc::clone(&stop));
            thread::spawn(move || b.wait_newer(Some(1), || stop.load(Ordering::SeqCst), Duration::from_secs(10)))
        };
        thread::sleep(Duration::from_millis(10));
        stop.store(true, Ordering::SeqCst);
        b.interrupt();
        assert!(matches!(reader.join().unwrap(), WaitOutcome::Interrupted));
    }

    #[test]
    fn stop_raised_before_publish_hides_publication() {
        let b = VersionedBuffer::new();
        b.publish(payload(1.0));
        let stop = AtomicBool::new(true);
        b.publish(payload(2.0));
        assert!(b.latest_unless(|| stop.load(Ordering::SeqCst)).is_none());
    }

    #[test]
    fn corrupted_payload_fails_verification() {
        let mut p = payload(1.0);
        p.train[[1, 1]] = 5.0;
        assert!(!p.verify());
    }
}
