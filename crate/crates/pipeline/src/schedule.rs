use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("interval must be positive, got {0}")]
    Interval(f64),
    #[error("jitter must be in [0, 1), got {0}")]
    Jitter(f64),
}

/// Fire times for one polled device. Firing `k` happens at
/// `start + k * interval + u * jitter * interval` with `u` uniform in [0, 1),
/// so the phase wanders without accumulating drift.
#[derive(Debug, Clone)]
pub struct PollSchedule {
    interval: f64,
    jitter: f64,
    start: f64,
    k: u64,
    rng: ChaCha8Rng,
}

impl PollSchedule {
    pub fn new(interval_secs: f64, jitter: f64, start: f64, seed: u64) -> Result<Self, ScheduleError> {
        if !(interval_secs.is_finite() && interval_secs > 0.0) {
            return Err(ScheduleError::Interval(interval_secs));
        }
        if !(0.0..1.0).contains(&jitter) {
            return Err(ScheduleError::Jitter(jitter));
        }
        Ok(PollSchedule {
            interval: interval_secs,
            jitter,
            start,
            k: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    /// Seconds (on the caller's clock) of the next firing.
    pub fn next_fire(&mut self) -> f64 {
        let offset = if self.jitter > 0.0 {
            self.rng.gen::<f64>() * self.jitter * self.interval
        } else {
            0.0
        };
        let t = self.start + self.k as f64 * self.interval + offset;
        self.k += 1;
        t
    }
}

impl Iterator for PollSchedule {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        Some(self.next_fire())
    }
}
