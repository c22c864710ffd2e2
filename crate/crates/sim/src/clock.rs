use std::time::{Duration, Instant};

use gateway_core::Timestamp;

/// Simulated time running `factor` times faster than the wall clock.
#[derive(Debug, Clone)]
pub struct SimClock {
    real_start: Instant,
    sim_start: Timestamp,
    factor: f64,
}

impl SimClock {
    pub fn new(sim_start: Timestamp, factor: f64) -> Self {
        assert!(factor.is_finite() && factor > 0.0, "time compression must be positive");
        SimClock { real_start: Instant::now(), sim_start, factor }
    }

    pub fn starting_now(factor: f64) -> Self {
        Self::new(Timestamp::now(), factor)
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn start(&self) -> Timestamp {
        self.sim_start
    }

    pub fn now(&self) -> Timestamp {
        let real = self.real_start.elapsed().as_secs_f64();
        self.sim_start.add_secs(real * self.factor)
    }

    /// Wall-clock instant at which simulated time reaches `at`.
    pub fn instant_of(&self, at: Timestamp) -> Instant {
        let sim = at.nanos_since(self.sim_start).max(0) as f64 / 1e9;
        self.real_start + Duration::from_secs_f64(sim / self.factor)
    }

    pub async fn sleep_until(&self, at: Timestamp) {
        tokio::time::sleep_until(self.instant_of(at).into()).await
    }
}
