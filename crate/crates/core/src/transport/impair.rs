//! Seeded link impairment: delay, jitter, loss and reordering.
//!
//! Delivery times are computed on a simulated clock anchored to each
//! frame's capture timestamp, so latency statistics are exact and test
//! runs never depend on wall-clock scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsp::EmgFrame;

#[derive(Debug, Error)]
pub enum ImpairError {
    #[error("invalid impairment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpairmentConfig {
    pub delay_ms: f64,
    /// Uniform jitter amplitude: each delivery shifts by U(-jitter, +jitter).
    pub jitter_ms: f64,
    pub drop_prob: f64,
    /// When false, delivery times are monotonized so frames never pass
    /// each other; when true, jitter may reorder them.
    pub reorder: bool,
    pub seed: u64,
}

impl Default for ImpairmentConfig {
    fn default() -> Self {
        Self {
            delay_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            reorder: false,
            seed: 1,
        }
    }
}

impl ImpairmentConfig {
    pub fn validate(&self) -> Result<(), ImpairError> {
        if !(self.delay_ms.is_finite() && self.delay_ms >= 0.0) {
            return Err(ImpairError::InvalidConfig(format!(
                "delay_ms must be nonnegative, got {}",
                self.delay_ms
            )));
        }
        if !(self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err(ImpairError::InvalidConfig(format!(
                "jitter_ms must be nonnegative, got {}",
                self.jitter_ms
            )));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(ImpairError::InvalidConfig(format!(
                "drop_prob must be in [0, 1), got {}",
                self.drop_prob
            )));
        }
        Ok(())
    }

    /// True when the link adds no impairment at all.
    pub fn is_transparent(&self) -> bool {
        self.delay_ms == 0.0 && self.jitter_ms == 0.0 && self.drop_prob == 0.0
    }
}

/// One frame that survived the link, with its simulated-clock times.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub frame: EmgFrame,
    pub sent_us: u64,
    pub delivered_us: u64,
}

impl Delivery {
    pub fn latency_us(&self) -> u64 {
        self.delivered_us - self.sent_us
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImpairmentStats {
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// Deterministic per-frame impairment. RNG consumption is fixed: one draw
/// decides the drop; a surviving frame draws jitter only when jitter is
/// configured. Replaying the draws with the same seed reproduces the
/// schedule exactly.
#[derive(Debug, Clone)]
pub struct ImpairmentSim {
    cfg: ImpairmentConfig,
    rng: ChaCha8Rng,
    last_delivery_us: u64,
    stats: ImpairmentStats,
}

impl ImpairmentSim {
    pub fn new(cfg: ImpairmentConfig) -> Result<Self, ImpairError> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            rng,
            last_delivery_us: 0,
            stats: ImpairmentStats::default(),
        })
    }

    pub fn config(&self) -> &ImpairmentConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &ImpairmentStats {
        &self.stats
    }

    /// Offer one frame to the link. Returns its delivery, or None if the
    /// link dropped it. The frame's capture timestamp is the send time.
    pub fn offer(&mut self, frame: EmgFrame) -> Option<Delivery> {
        self.stats.offered += 1;
        if self.rng.gen::<f64>() < self.cfg.drop_prob {
            self.stats.dropped += 1;
            return None;
        }
        let sent_us = frame.t_start_us;
        let jitter_us = if self.cfg.jitter_ms > 0.0 {
            (2.0 * self.rng.gen::<f64>() - 1.0) * self.cfg.jitter_ms * 1000.0
        } else {
            0.0
        };
        let raw = sent_us as f64 + self.cfg.delay_ms * 1000.0 + jitter_us;
        // A frame cannot arrive before it was sent.
        let mut delivered_us = raw.max(sent_us as f64).round() as u64;
        if !self.cfg.reorder {
            delivered_us = delivered_us.max(self.last_delivery_us);
            self.last_delivery_us = delivered_us;
        }
        self.stats.delivered += 1;
        Some(Delivery {
            frame,
            sent_us,
            delivered_us,
        })
    }

    /// Run a whole frame sequence through the link. With reordering
    /// enabled, deliveries come back sorted by delivery time (stable, so
    /// ties keep send order).
    pub fn schedule(&mut self, frames: Vec<EmgFrame>) -> Vec<Delivery> {
        let mut out: Vec<Delivery> = frames.into_iter().filter_map(|f| self.offer(f)).collect();
        if self.cfg.reorder {
            out.sort_by_key(|d| d.delivered_us);
        }
        out
    }
}

/// Mean/min/max one-way latency over a delivery set, in milliseconds.
pub fn latency_stats_ms(deliveries: &[Delivery]) -> Option<(f64, f64, f64)> {
    if deliveries.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for d in deliveries {
        let ms = d.latency_us() as f64 / 1000.0;
        sum += ms;
        lo = lo.min(ms);
        hi = hi.max(ms);
    }
    Some((sum / deliveries.len() as f64, lo, hi))
}
