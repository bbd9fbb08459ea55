//! Timestamped ring buffer for boundary-input signals.
//!
//! Realizes the delayed arguments of the characteristics solution: the plant
//! reads `U(t - delay)` from here, with linear interpolation between stored
//! samples. Times before the first stored sample evaluate to zero (the
//! deviation history before the experiment starts), while times older than
//! the retention horizon are an error because data was actually discarded.

use std::collections::VecDeque;

use crate::error::{Result, SimError};

#[derive(Debug, Clone)]
pub struct InputHistory {
    samples: VecDeque<(f64, f64)>,
    horizon: f64,
    evicted: bool,
}

impl InputHistory {
    /// `horizon` is the retention window behind the newest sample; callers
    /// size it at twice the worst-case transport delay.
    pub fn new(horizon: f64) -> Self {
        assert!(horizon > 0.0, "horizon must be positive");
        Self { samples: VecDeque::new(), horizon, evicted: false }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.samples.back().map(|&(t, _)| t)
    }

    pub fn oldest_time(&self) -> Option<f64> {
        self.samples.front().map(|&(t, _)| t)
    }

    /// Appends a sample; timestamps must be strictly increasing.
    pub fn record(&mut self, t: f64, value: f64) {
        if let Some(&(last, _)) = self.samples.back() {
            assert!(t > last, "history timestamps must strictly increase ({t} after {last})");
        }
        self.samples.push_back((t, value));
        // Keep one sample at or beyond the horizon edge so interpolation at
        // exactly `t - horizon` stays defined.
        while self.samples.len() >= 2 && self.samples[1].0 <= t - self.horizon {
            self.samples.pop_front();
            self.evicted = true;
        }
    }

    /// Value at time `t`: linear interpolation inside the stored range, zero
    /// before recorded history begins, hold of the newest sample after it.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let Some(&(t_old, v_old)) = self.samples.front() else {
            return Ok(0.0);
        };
        if t < t_old {
            if self.evicted {
                return Err(SimError::HistoryUnderflow { requested: t, oldest: t_old });
            }
            return Ok(0.0);
        }
        let &(t_new, v_new) = self.samples.back().unwrap();
        if t >= t_new {
            return Ok(v_new);
        }
        if t == t_old {
            return Ok(v_old);
        }
        let idx = self.samples.partition_point(|&(ts, _)| ts <= t);
        let (t0, v0) = self.samples[idx - 1];
        let (t1, v1) = self.samples[idx];
        let theta = (t - t0) / (t1 - t0);
        Ok(v0 + theta * (v1 - v0))
    }

    /// Most recently recorded value, zero when nothing was recorded yet.
    pub fn last_value(&self) -> f64 {
        self.samples.back().map_or(0.0, |&(_, v)| v)
    }
}
