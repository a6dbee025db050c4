use std::time::Duration;

use crate::scenario::{AccessProfile, Direction};

/// Release-time bookkeeping for one direction of an emulated link.
///
/// Units leave the sender's queue one after another at the link rate and are
/// then delayed by the one-way propagation delay:
///
/// ```text
/// departure_k = max(departure_{k-1}, arrival_k + hold_k) + len_k * 8 / rate
/// release_k   = departure_k + one_way_delay
/// ```
///
/// `hold_k` is zero except where the caller asks for it (the stream relay
/// holds a connection's first client flight for one extra RTT).
#[derive(Debug, Clone)]
pub struct DeliverySchedule {
    direction: Direction,
    rate_mbps: f64,
    one_way: Duration,
    last_departure: Duration,
}

fn ms(value: f64) -> Duration {
    Duration::from_secs_f64(value.max(0.0) / 1000.0)
}

impl DeliverySchedule {
    pub fn new(profile: &AccessProfile, direction: Direction) -> Self {
        Self {
            direction,
            rate_mbps: profile.rate_mbps(direction),
            one_way: ms(profile.one_way_delay_ms()),
            last_departure: Duration::ZERO,
        }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn serialization(&self, len: usize) -> Duration {
        ms(len as f64 * 8.0 / (self.rate_mbps * 1000.0))
    }

    /// Admits a unit that arrived at `arrival` (measured from the relay's
    /// epoch) and returns its release time on the same clock.
    pub fn admit(&mut self, arrival: Duration, len: usize, hold: Duration) -> Duration {
        let start = self.last_departure.max(arrival + hold);
        let departure = start + self.serialization(len);
        self.last_departure = departure;
        departure + self.one_way
    }
}
