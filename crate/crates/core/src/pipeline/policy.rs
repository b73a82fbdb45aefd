//! Throughput monitoring and the deferred-update decision.

use std::fmt;

use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThroughputMonitor {
    /// Degradation threshold.
    pub tau: f64,
    th_base: Option<f64>,
    th_cur: Option<f64>,
}

impl Default for ThroughputMonitor {
    fn default() -> Self {
        Self::new(0.05)
    }
}

impl ThroughputMonitor {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            th_base: None,
            th_cur: None,
        }
    }

    /// Closes a window; returns its throughput in packets per time unit.
    pub fn record_window(&mut self, packets: u64, elapsed: f64) -> Result<f64, PipelineError> {
        if elapsed.is_nan() || elapsed <= 0.0 {
            return Err(PipelineError::ZeroElapsed);
        }
        let th = packets as f64 / elapsed;
        self.record_throughput(th);
        Ok(th)
    }

    /// Same as a window close with a known throughput.
    pub fn record_throughput(&mut self, th: f64) {
        self.th_cur = Some(th);
        if self.th_base.is_none() {
            self.th_base = Some(th);
        }
    }

    pub fn th_base(&self) -> Option<f64> {
        self.th_base
    }

    pub fn th_cur(&self) -> Option<f64> {
        self.th_cur
    }

    /// `1 - th_cur / th_base`, or zero before the first window.
    pub fn degradation(&self) -> f64 {
        match (self.th_base, self.th_cur) {
            (Some(b), Some(c)) if b > 0.0 => 1.0 - c / b,
            _ => 0.0,
        }
    }

    /// Forgets the baseline; the next window sets a new one.
    pub fn reset_base(&mut self) {
        self.th_base = None;
    }
}

/// How the mismatch count is compared against θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MismatchThreshold {
    /// Raw count of mismatched insertions.
    Absolute(u64),
    /// Mismatches divided by the current rule count.
    Proportional(f64),
}

impl Default for MismatchThreshold {
    fn default() -> Self {
        MismatchThreshold::Absolute(10_000)
    }
}

impl MismatchThreshold {
    pub fn exceeded(self, mismatches: u64, rules: usize) -> bool {
        match self {
            MismatchThreshold::Absolute(theta) => mismatches > theta,
            MismatchThreshold::Proportional(theta) => {
                rules > 0 && mismatches as f64 / rules as f64 > theta
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateDecision {
    #[default]
    None,
    Incremental,
    FullRetrain,
}

impl fmt::Display for UpdateDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateDecision::None => "none",
            UpdateDecision::Incremental => "incremental",
            UpdateDecision::FullRetrain => "full_retrain",
        })
    }
}

pub fn decide_update(
    monitor: &ThroughputMonitor,
    mismatch_count: u64,
    rule_count: usize,
    theta: MismatchThreshold,
) -> UpdateDecision {
    if monitor.degradation() <= monitor.tau {
        UpdateDecision::None
    } else if theta.exceeded(mismatch_count, rule_count) {
        UpdateDecision::FullRetrain
    } else {
        UpdateDecision::Incremental
    }
}
