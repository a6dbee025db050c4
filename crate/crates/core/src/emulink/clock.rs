use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

/// Sleeps until `deadline` with sub-millisecond accuracy: coarse sleeps while
/// far away, short sleeps and then spinning near the deadline. Returns early
/// (with `false`) once `abort` is raised.
pub(crate) fn sleep_until(deadline: Instant, abort: &AtomicBool) -> bool {
    loop {
        if abort.load(Ordering::Relaxed) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        let left = deadline - now;
        if left > Duration::from_millis(3) {
            // wake periodically so an abort is noticed
            thread::sleep((left - Duration::from_millis(1)).min(Duration::from_millis(20)));
        } else if left > Duration::from_micros(300) {
            thread::sleep(Duration::from_micros(100));
        } else {
            std::hint::spin_loop();
            thread::yield_now();
        }
    }
}

/// Counters shared between a relay's worker threads.
#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub up_units: AtomicU64,
    pub up_bytes: AtomicU64,
    pub down_units: AtomicU64,
    pub down_bytes: AtomicU64,
}

impl Counters {
    pub fn record(&self, up: bool, bytes: usize) {
        let (units, total) = if up {
            (&self.up_units, &self.up_bytes)
        } else {
            (&self.down_units, &self.down_bytes)
        };
        units.fetch_add(1, Ordering::Relaxed);
        total.fetch_add(bytes as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> super::RelayStats {
        super::RelayStats {
            up_units: self.up_units.load(Ordering::Relaxed),
            up_bytes: self.up_bytes.load(Ordering::Relaxed),
            down_units: self.down_units.load(Ordering::Relaxed),
            down_bytes: self.down_bytes.load(Ordering::Relaxed),
        }
    }
}
