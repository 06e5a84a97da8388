use std::time::{Duration, Instant};

/// Simulated time paced against the wall clock. `accel` is simulated
/// seconds per wall second; 0 or infinity runs unpaced.
#[derive(Debug, Clone)]
pub struct SimClock {
    accel: f64,
    origin_ms: i64,
    now_ms: i64,
    wall_origin: Instant,
}

impl SimClock {
    pub fn new(start_ms: i64, accel: f64) -> Self {
        Self {
            accel,
            origin_ms: start_ms,
            now_ms: start_ms,
            wall_origin: Instant::now(),
        }
    }

    pub fn unpaced(start_ms: i64) -> Self {
        Self::new(start_ms, 0.0)
    }

    pub fn now_ms(&self) -> i64 {
        self.now_ms
    }

    pub fn accel(&self) -> f64 {
        self.accel
    }

    /// Moves to `t_ms`, sleeping as needed. Never moves backwards.
    pub fn advance_to(&mut self, t_ms: i64) {
        if t_ms <= self.now_ms {
            return;
        }
        self.now_ms = t_ms;
        if self.accel > 0.0 && self.accel.is_finite() {
            let wall = (t_ms - self.origin_ms) as f64 / 1000.0 / self.accel;
            let target = self.wall_origin + Duration::from_secs_f64(wall);
            let now = Instant::now();
            if target > now {
                std::thread::sleep(target - now);
            }
        }
    }
}
