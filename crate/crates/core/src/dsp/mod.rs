//! EMG envelope extraction.
//!
//! Raw multichannel EMG arrives as timestamped frames; the chain
//!
//! ```text
//! detrend -> bandpass -> rectify -> moving mean -> MVC normalize
//! ```
//!
//! turns each channel into a normalized activation envelope in [0, 1].
//! Every stage is causal, so the streaming pipeline produces bit-identical
//! output whether a recording is fed whole or in arbitrary chunks.

pub mod design;
pub mod io;

pub use design::{design_bandpass, BiquadCascade, BiquadSection};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid signal configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("stream integrity: channel {channel} missing seq {missing} (got {got})")]
    SequenceGap { channel: u8, missing: u64, got: u64 },
    #[error("csv ingestion: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Configuration and domain types
// ---------------------------------------------------------------------------

/// Parameters of the envelope-extraction chain for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalConfig {
    pub sample_rate_hz: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Lowpass prototype order; the bandpass realization has twice this
    /// many poles, i.e. `prototype_order` biquad sections. Must be even.
    pub prototype_order: u32,
    pub envelope_window_s: f64,
    /// Maximum voluntary contraction level, in the units of the rectified
    /// signal (millivolts here). Activation is the envelope divided by it.
    pub mvc_value: f64,
    /// Clamp activation into [0, 1] after normalization.
    pub activation_clamp: bool,
    /// Run mean removal after the bandpass instead of before it. Off by
    /// default: removing the DC offset first avoids filter startup
    /// transients, and the 10 Hz edge strips residual drift either way.
    pub detrend_after_filter: bool,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 2000.0,
            band_low_hz: 10.0,
            band_high_hz: 500.0,
            prototype_order: 4,
            envelope_window_s: 0.100,
            mvc_value: 1.0,
            activation_clamp: true,
            detrend_after_filter: false,
        }
    }
}

impl SignalConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(DspError::InvalidConfig(format!(
                "sample_rate_hz must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(self.band_low_hz > 0.0 && self.band_low_hz < self.band_high_hz) {
            return Err(DspError::InvalidConfig(format!(
                "band edges must satisfy 0 < low < high, got {}..{}",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if self.band_high_hz >= self.sample_rate_hz / 2.0 {
            return Err(DspError::InvalidConfig(format!(
                "band_high_hz {} must be below Nyquist {}",
                self.band_high_hz,
                self.sample_rate_hz / 2.0
            )));
        }
        if self.prototype_order == 0 || !self.prototype_order.is_multiple_of(2) {
            return Err(DspError::InvalidConfig(format!(
                "prototype_order must be a positive even integer, got {}",
                self.prototype_order
            )));
        }
        if self.envelope_window_s * self.sample_rate_hz < 1.0 {
            return Err(DspError::InvalidConfig(format!(
                "envelope window {} s is shorter than one sample period",
                self.envelope_window_s
            )));
        }
        if !(self.mvc_value.is_finite() && self.mvc_value > 0.0) {
            return Err(DspError::InvalidConfig(format!(
                "mvc_value must be positive, got {}",
                self.mvc_value
            )));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        ((self.envelope_window_s * self.sample_rate_hz).round() as usize).max(1)
    }
}

/// One wire/file unit of raw EMG: a timestamped batch of samples for a
/// single channel. Samples are f32, matching the sensor-realistic wire
/// precision; all downstream arithmetic is f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgFrame {
    pub channel_id: u8,
    pub seq: u64,
    pub t_start_us: u64,
    pub sample_rate_hz: f64,
    pub samples: Vec<f32>,
}

/// One normalized activation value: dimensionless fraction of MVC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSample {
    pub t_us: u64,
    pub value: f64,
}

// ---------------------------------------------------------------------------
// Batch operations
// ---------------------------------------------------------------------------

/// Subtract the arithmetic mean of the whole window.
pub fn detrend(x: &[f64]) -> Result<Vec<f64>, DspError> {
    if x.is_empty() {
        return Err(DspError::InvalidArgument("detrend of empty input".into()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    Ok(x.iter().map(|v| v - mean).collect())
}

/// Elementwise absolute value.
pub fn rectify(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.abs()).collect()
}

/// Causal trailing-window mean. For the first `window - 1` samples the
/// window grows over the available history, so output length equals input
/// length and there is no startup spike.
pub fn moving_mean(x: &[f64], window_samples: usize) -> Result<Vec<f64>, DspError> {
    if window_samples == 0 {
        return Err(DspError::InvalidArgument("moving_mean window of 0".into()));
    }
    let mut stage = MovingMeanState::new(window_samples);
    Ok(x.iter().map(|&v| stage.push(v)).collect())
}

/// Divide an envelope by MVC, clamping to [0, 1] when configured, and
/// attach timestamps derived from sample index and rate.
pub fn normalize_mvc(x: &[f64], cfg: &SignalConfig) -> Result<Vec<ActivationSample>, DspError> {
    normalize_mvc_at(x, cfg, 0)
}

/// As [`normalize_mvc`] with an explicit stream start time.
pub fn normalize_mvc_at(
    x: &[f64],
    cfg: &SignalConfig,
    t0_us: u64,
) -> Result<Vec<ActivationSample>, DspError> {
    cfg.validate()?;
    if let Some(bad) = x.iter().find(|v| **v < 0.0) {
        return Err(DspError::InvalidArgument(format!(
            "normalize_mvc expects a rectified envelope, got negative sample {bad}"
        )));
    }
    Ok(x.iter()
        .enumerate()
        .map(|(i, &v)| ActivationSample {
            t_us: t0_us + sample_offset_us(i as u64, cfg.sample_rate_hz),
            value: normalize_one(v, cfg),
        })
        .collect())
}

fn normalize_one(v: f64, cfg: &SignalConfig) -> f64 {
    let a = v / cfg.mvc_value;
    if cfg.activation_clamp {
        a.min(1.0)
    } else {
        a
    }
}

fn sample_offset_us(index: u64, rate_hz: f64) -> u64 {
    (index as f64 * 1.0e6 / rate_hz).round() as u64
}

// ---------------------------------------------------------------------------
// Streaming pipeline
// ---------------------------------------------------------------------------

/// Mean removal as a causal stage: subtracts the cumulative mean of all
/// samples seen so far. Unlike whole-window detrending this needs no
/// lookahead, so chunked and single-shot processing stay bit-identical;
/// the cumulative mean converges to the recording's DC offset.
#[derive(Debug, Clone, Default)]
struct RunningMeanDetrend {
    sum: f64,
    count: u64,
}

impl RunningMeanDetrend {
    #[inline]
    fn push(&mut self, x: f64) -> f64 {
        self.sum += x;
        self.count += 1;
        x - self.sum / self.count as f64
    }
}

/// Trailing moving mean with growing warm-up window.
#[derive(Debug, Clone)]
struct MovingMeanState {
    window: usize,
    buf: std::collections::VecDeque<f64>,
}

impl MovingMeanState {
    fn new(window: usize) -> Self {
        Self {
            window,
            buf: std::collections::VecDeque::with_capacity(window),
        }
    }

    #[inline]
    fn push(&mut self, x: f64) -> f64 {
        if self.buf.len() == self.window {
            self.buf.pop_front();
        }
        self.buf.push_back(x);
        // Recompute the sum each step and clamp to the window extrema, so
        // the mean can never drift outside [min, max] through rounding.
        let mut sum = 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.buf {
            sum += v;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (sum / self.buf.len() as f64).clamp(lo, hi)
    }
}

/// Single-owner streaming state machine turning raw samples of one channel
/// into activation samples. Feed it whole recordings or arbitrary chunks;
/// the output is identical either way.
#[derive(Debug, Clone)]
pub struct EnvelopePipeline {
    cfg: SignalConfig,
    detrend: RunningMeanDetrend,
    cascade: BiquadCascade,
    smoother: MovingMeanState,
    next_index: u64,
    t0_us: u64,
    expected_seq: Option<(u8, u64)>,
}

impl EnvelopePipeline {
    pub fn new(cfg: &SignalConfig) -> Result<Self, DspError> {
        let cascade = design_bandpass(cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            detrend: RunningMeanDetrend::default(),
            cascade,
            smoother: MovingMeanState::new(cfg.window_samples()),
            next_index: 0,
            t0_us: 0,
            expected_seq: None,
        })
    }

    pub fn config(&self) -> &SignalConfig {
        &self.cfg
    }

    /// Feed raw samples (millivolts) and get the activation samples they
    /// produce. Timestamps count from the stream start at the config rate.
    pub fn feed(&mut self, samples: &[f32]) -> Vec<ActivationSample> {
        samples
            .iter()
            .map(|&raw| {
                let x = f64::from(raw);
                let pre = if self.cfg.detrend_after_filter {
                    self.detrend.push(self.cascade.process_sample(x))
                } else {
                    self.cascade.process_sample(self.detrend.push(x))
                };
                let env = self.smoother.push(pre.abs());
                let sample = ActivationSample {
                    t_us: self.t0_us + sample_offset_us(self.next_index, self.cfg.sample_rate_hz),
                    value: normalize_one(env, &self.cfg),
                };
                self.next_index += 1;
                sample
            })
            .collect()
    }

    /// Feed one frame, enforcing per-channel seq continuity and timestamp
    /// consistency (the declared start time must match the sample count at
    /// the configured rate within one sample period). The first frame pins
    /// the channel, stream start time and expected seq base.
    pub fn feed_frame(&mut self, frame: &EmgFrame) -> Result<Vec<ActivationSample>, DspError> {
        if (frame.sample_rate_hz - self.cfg.sample_rate_hz).abs() > 1e-9 {
            return Err(DspError::InvalidArgument(format!(
                "frame rate {} Hz does not match pipeline rate {} Hz",
                frame.sample_rate_hz, self.cfg.sample_rate_hz
            )));
        }
        match self.expected_seq {
            None => {
                self.t0_us = frame.t_start_us;
                self.expected_seq = Some((frame.channel_id, frame.seq + 1));
            }
            Some((channel, expected)) => {
                if frame.channel_id != channel {
                    return Err(DspError::InvalidArgument(format!(
                        "pipeline bound to channel {channel}, got frame for {}",
                        frame.channel_id
                    )));
                }
                if frame.seq != expected {
                    return Err(DspError::SequenceGap {
                        channel,
                        missing: expected,
                        got: frame.seq,
                    });
                }
                self.expected_seq = Some((channel, frame.seq + 1));
                let period_us = (1.0e6 / self.cfg.sample_rate_hz).round() as u64;
                let expected_t =
                    self.t0_us + sample_offset_us(self.next_index, self.cfg.sample_rate_hz);
                if frame.t_start_us.abs_diff(expected_t) > period_us {
                    return Err(DspError::InvalidArgument(format!(
                        "frame seq {} starts at {} us, expected {} us from its seq and rate",
                        frame.seq, frame.t_start_us, expected_t
                    )));
                }
            }
        }
        Ok(self.feed(&frame.samples))
    }
}

/// Run the full chain over a complete single-channel recording.
pub fn process_pipeline(
    frames: &[EmgFrame],
    cfg: &SignalConfig,
) -> Result<Vec<ActivationSample>, DspError> {
    let mut pipeline = EnvelopePipeline::new(cfg)?;
    let mut out = Vec::new();
    for frame in frames {
        out.extend(pipeline.feed_frame(frame)?);
    }
    Ok(out)
}

/// Derive an MVC value from a calibration recording: the maximum of the
/// envelope before normalization.
pub fn calibrate_mvc(frames: &[EmgFrame], cfg: &SignalConfig) -> Result<f64, DspError> {
    let unit = SignalConfig {
        mvc_value: 1.0,
        activation_clamp: false,
        ..cfg.clone()
    };
    let env = process_pipeline(frames, &unit)?;
    env.iter()
        .map(|s| s.value)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |m| m.max(v))))
        .filter(|m| *m > 0.0)
        .ok_or_else(|| DspError::InvalidArgument("calibration recording has no signal".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn detrend_constant_goes_to_zero() {
        assert_eq!(detrend(&[5.0, 5.0, 5.0, 5.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn detrend_subtracts_mean() {
        assert_eq!(detrend(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn detrend_empty_is_an_error() {
        assert!(matches!(detrend(&[]), Err(DspError::InvalidArgument(_))));
    }

    #[test]
    fn detrend_random_output_mean_is_tiny() {
        let x: Vec<f64> = (0..503).map(|i| ((i * 7919 + 13) % 1009) as f64 - 200.0).collect();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let y = detrend(&x).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 1e-12 * scale);
    }

    #[test]
    fn rectify_basics() {
        assert_eq!(rectify(&[-3.0, 2.0, 0.0]), vec![3.0, 2.0, 0.0]);
        let x = vec![1.0, 4.0, 0.5];
        assert_eq!(rectify(&x), x);
    }

    #[test]
    fn moving_mean_hand_computed_warmup() {
        let y = moving_mean(&[0.0, 2.0, 4.0, 6.0], 2).unwrap();
        assert_eq!(y, vec![0.0, 1.0, 3.0, 5.0]);
    }

    #[test]
    fn moving_mean_window_one_is_identity() {
        let x = vec![3.0, -1.0, 7.5];
        assert_eq!(moving_mean(&x, 1).unwrap(), x);
    }

    #[test]
    fn moving_mean_zero_window_is_an_error() {
        assert!(matches!(moving_mean(&[1.0], 0), Err(DspError::InvalidArgument(_))));
    }

    #[test]
    fn normalize_clamp_semantics() {
        let cfg = SignalConfig {
            mvc_value: 2.0,
            ..SignalConfig::default()
        };
        let out = normalize_mvc(&[2.0, 0.0, 2.6], &cfg).unwrap();
        assert_eq!(out[0].value, 1.0);
        assert_eq!(out[1].value, 0.0);
        assert_eq!(out[2].value, 1.0);

        let unclamped = SignalConfig {
            activation_clamp: false,
            ..cfg
        };
        let out = normalize_mvc(&[2.6], &unclamped).unwrap();
        assert_relative_eq!(out[0].value, 1.3, max_relative = 1e-15);
    }

    #[test]
    fn normalize_rejects_negative_input() {
        let cfg = SignalConfig::default();
        assert!(matches!(
            normalize_mvc(&[0.5, -0.1], &cfg),
            Err(DspError::InvalidArgument(_))
        ));
    }

    #[test]
    fn zero_signal_yields_zero_activation() {
        let cfg = SignalConfig::default();
        let frames = vec![EmgFrame {
            channel_id: 0,
            seq: 0,
            t_start_us: 0,
            sample_rate_hz: cfg.sample_rate_hz,
            samples: vec![0.0; 4000],
        }];
        let out = process_pipeline(&frames, &cfg).unwrap();
        assert_eq!(out.len(), 4000);
        assert!(out.iter().all(|s| s.value == 0.0));
    }

    #[test]
    fn sequence_gap_names_first_missing_seq() {
        let cfg = SignalConfig::default();
        let mk = |seq: u64| EmgFrame {
            channel_id: 3,
            seq,
            t_start_us: seq * 32_000,
            sample_rate_hz: cfg.sample_rate_hz,
            samples: vec![0.0; 64],
        };
        let frames = vec![mk(0), mk(1), mk(4)];
        match process_pipeline(&frames, &cfg) {
            Err(DspError::SequenceGap { channel, missing, got }) => {
                assert_eq!((channel, missing, got), (3, 2, 4));
            }
            other => panic!("expected SequenceGap, got {other:?}"),
        }
    }

    #[test]
    fn activation_timestamps_follow_sample_rate() {
        let cfg = SignalConfig::default();
        let mut pipeline = EnvelopePipeline::new(&cfg).unwrap();
        let out = pipeline.feed(&[0.0, 0.0, 0.0]);
        let t: Vec<u64> = out.iter().map(|s| s.t_us).collect();
        assert_eq!(t, vec![0, 500, 1000]);
    }

    #[test]
    fn chunked_processing_matches_single_shot() {
        let cfg = SignalConfig::default();
        let raw: Vec<f32> = (0..6000)
            .map(|i| ((i as f32 * 0.37).sin() + 0.21 * (i as f32 * 1.7).cos()) * 0.8)
            .collect();

        let mut single = EnvelopePipeline::new(&cfg).unwrap();
        let whole = single.feed(&raw);

        for chunk_len in [1usize, 7, 64, 999] {
            let mut chunked = EnvelopePipeline::new(&cfg).unwrap();
            let mut got = Vec::new();
            for chunk in raw.chunks(chunk_len) {
                got.extend(chunked.feed(chunk));
            }
            assert_eq!(whole, got, "chunk size {chunk_len} diverged");
        }
    }

    #[test]
    fn envelope_recovers_modulation_depth_ordering() {
        // AM bursts of distinct commanded depths: the per-burst peaks of
        // the extracted envelope must rank in the same order. The
        // synthesized modulation envelope is the oracle.
        use rand::{Rng, SeedableRng};
        let cfg = SignalConfig::default();
        let fs = cfg.sample_rate_hz;
        let depths = [0.3f64, 0.8, 0.5, 1.0, 0.65];
        let burst = (1.0 * fs) as usize;
        let gap = (1.0 * fs) as usize;

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut carrier_filter = design_bandpass(&SignalConfig {
            band_low_hz: 20.0,
            band_high_hz: 450.0,
            ..cfg.clone()
        })
        .unwrap();
        let mut raw = Vec::new();
        let mut burst_spans = Vec::new();
        for &depth in &depths {
            let start = raw.len() + gap / 2;
            for i in 0..burst + gap {
                let env = if i < burst { depth } else { 0.0 };
                let white: f64 = rng.gen_range(-1.0..1.0);
                raw.push((carrier_filter.process_sample(white) * env) as f32);
            }
            burst_spans.push(start..start + burst);
        }

        let mut pipeline = EnvelopePipeline::new(&cfg).unwrap();
        let activation = pipeline.feed(&raw);
        let peaks: Vec<f64> = burst_spans
            .iter()
            .map(|span| {
                activation[span.clone()]
                    .iter()
                    .map(|s| s.value)
                    .fold(0.0, f64::max)
            })
            .collect();

        let mut expected_order: Vec<usize> = (0..depths.len()).collect();
        expected_order.sort_by(|&a, &b| depths[a].partial_cmp(&depths[b]).unwrap());
        let mut got_order: Vec<usize> = (0..peaks.len()).collect();
        got_order.sort_by(|&a, &b| peaks[a].partial_cmp(&peaks[b]).unwrap());
        assert_eq!(got_order, expected_order, "peaks {peaks:?} vs depths {depths:?}");
    }

    #[test]
    fn frame_timestamp_inconsistency_rejected() {
        let cfg = SignalConfig::default();
        let mut pipeline = EnvelopePipeline::new(&cfg).unwrap();
        let mk = |seq: u64, t_start_us: u64| EmgFrame {
            channel_id: 0,
            seq,
            t_start_us,
            sample_rate_hz: cfg.sample_rate_hz,
            samples: vec![0.0; 64],
        };
        pipeline.feed_frame(&mk(0, 0)).unwrap();
        // 64 samples at 2 kHz = 32 ms; a frame claiming 40 ms is off by
        // far more than one sample period.
        let err = pipeline.feed_frame(&mk(1, 40_000)).unwrap_err();
        assert!(matches!(err, DspError::InvalidArgument(_)));
    }

    #[test]
    fn calibrate_mvc_returns_envelope_peak() {
        let cfg = SignalConfig::default();
        let samples: Vec<f32> = (0..8000)
            .map(|i| 0.6 * (2.0 * std::f32::consts::PI * 80.0 * i as f32 / 2000.0).sin())
            .collect();
        let frames = vec![EmgFrame {
            channel_id: 0,
            seq: 0,
            t_start_us: 0,
            sample_rate_hz: cfg.sample_rate_hz,
            samples,
        }];
        let mvc = calibrate_mvc(&frames, &cfg).unwrap();
        // Rectified mean of a sine of amplitude ~0.6 is ~0.38; the bandpass
        // passes 80 Hz nearly unchanged.
        assert!(mvc > 0.2 && mvc < 0.7, "implausible mvc {mvc}");
    }

    proptest::proptest! {
        // Moving mean output stays within the input extrema.
        #[test]
        fn moving_mean_bounded_by_extrema(
            x in proptest::collection::vec(-1000.0f64..1000.0, 1..200),
            w in 1usize..32,
        ) {
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for v in moving_mean(&x, w).unwrap() {
                proptest::prop_assert!(v >= lo && v <= hi);
            }
        }

        // Rectification is idempotent.
        #[test]
        fn rectify_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 0..100)) {
            let once = rectify(&x);
            proptest::prop_assert_eq!(rectify(&once), once.clone());
            proptest::prop_assert!(once.iter().all(|v| *v >= 0.0));
        }

        // Activation bounds: always >= 0, <= 1 when clamped.
        #[test]
        fn activation_bounds_hold(
            raw in proptest::collection::vec(-3.0f32..3.0, 32..512),
        ) {
            let cfg = SignalConfig { mvc_value: 0.5, ..SignalConfig::default() };
            let mut p = EnvelopePipeline::new(&cfg).unwrap();
            for s in p.feed(&raw) {
                proptest::prop_assert!(s.value >= 0.0 && s.value <= 1.0);
            }
        }
    }
}
