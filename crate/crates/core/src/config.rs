//! Shared flat key-value configuration covering every pipeline stage.
//!
//! Format: one `key = value` per line, `#` comments, unknown keys
//! rejected. The same keys are accepted as `--set key=value` overrides,
//! and the effective config is echoed into every report for auditability.

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::PidGains;
use crate::dsp::SignalConfig;
use crate::harness::ProtocolSpec;
use crate::plant::PlantConfig;
use crate::render::{MappingShape, RenderConfig};
use crate::transport::ImpairmentConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// The full experiment bundle: one struct drives generation, processing,
/// control, the plant and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub signal: SignalConfig,
    pub render: RenderConfig,
    pub gains: PidGains,
    pub plant: PlantConfig,
    pub protocol: ProtocolSpec,
    pub impair: ImpairmentConfig,
    /// Route generated frames through the impairment layer before the
    /// envelope pipeline.
    pub impair_enabled: bool,
    pub control_rate_hz: f64,
    /// Probe indentation used to report rendered fingertip force.
    pub indentation_mm: f64,
    /// Cycle segmentation threshold as a fraction of the trace maximum.
    pub segment_threshold: f64,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            signal: SignalConfig::default(),
            render: RenderConfig::default(),
            gains: PidGains::default(),
            plant: PlantConfig::default(),
            protocol: ProtocolSpec::default(),
            impair: ImpairmentConfig::default(),
            impair_enabled: false,
            control_rate_hz: 100.0,
            indentation_mm: 1.0,
            segment_threshold: 0.10,
        }
    }
}

impl AppConfig {
    /// Near-ideal tracking preset: noise-free, delay-free plant, slower
    /// envelope smoothing and the gains tuned for that plant.
    pub fn ideal() -> Self {
        let mut cfg = Self::default();
        cfg.signal.envelope_window_s = 0.5;
        cfg.plant.noise_sigma_kpa = 0.0;
        cfg.plant.delay_s = 0.0;
        cfg.gains = crate::control::IDEAL_GAINS;
        cfg
    }

    pub fn validate(&self) -> Result<(), crate::Error> {
        self.signal.validate()?;
        self.render.validate()?;
        self.gains.validate()?;
        self.plant.validate()?;
        self.protocol.validate()?;
        self.impair.validate()?;
        if !(self.control_rate_hz.is_finite() && self.control_rate_hz > 0.0) {
            return Err(ConfigError::BadValue {
                key: "loop.rate_hz".into(),
                msg: format!("must be positive, got {}", self.control_rate_hz),
            }
            .into());
        }
        if !(self.indentation_mm.is_finite() && self.indentation_mm >= 0.0) {
            return Err(ConfigError::BadValue {
                key: "loop.indentation_mm".into(),
                msg: format!("must be nonnegative, got {}", self.indentation_mm),
            }
            .into());
        }
        if !(self.segment_threshold > 0.0 && self.segment_threshold < 1.0) {
            return Err(ConfigError::BadValue {
                key: "loop.segment_threshold".into(),
                msg: format!("must be in (0, 1), got {}", self.segment_threshold),
            }
            .into());
        }
        Ok(())
    }

    /// Derive all module seeds from one master seed.
    pub fn apply_master_seed(&mut self, seed: u64) {
        self.protocol.seed = seed;
        self.plant.seed = seed.wrapping_add(1);
        self.impair.seed = seed.wrapping_add(2);
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn merge(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
                line: i + 1,
                text: raw.trim().to_string(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply one override, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                msg: e.to_string(),
            })
        }
        fn flag(key: &str, v: &str) -> Result<bool, ConfigError> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                other => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    msg: format!("expected true/false, got `{other}`"),
                }),
            }
        }

        match key {
            "dsp.sample_rate_hz" => self.signal.sample_rate_hz = num(key, value)?,
            "dsp.band_low_hz" => self.signal.band_low_hz = num(key, value)?,
            "dsp.band_high_hz" => self.signal.band_high_hz = num(key, value)?,
            "dsp.prototype_order" => self.signal.prototype_order = num(key, value)?,
            "dsp.envelope_window_s" => self.signal.envelope_window_s = num(key, value)?,
            "dsp.mvc_value" => self.signal.mvc_value = num(key, value)?,
            "dsp.activation_clamp" => self.signal.activation_clamp = flag(key, value)?,
            "dsp.detrend_after_filter" => self.signal.detrend_after_filter = flag(key, value)?,
            "render.p_min_kpa" => self.render.p_min_kpa = num(key, value)?,
            "render.p_max_kpa" => self.render.p_max_kpa = num(key, value)?,
            "render.k_max_n_per_mm" => self.render.k_max_n_per_mm = num(key, value)?,
            "render.mapping_shape" => {
                self.render.mapping_shape = if value == "linear" {
                    MappingShape::Linear
                } else if let Some(g) = value.strip_prefix("gamma:") {
                    MappingShape::Gamma(num(key, g)?)
                } else {
                    return Err(ConfigError::BadValue {
                        key: key.to_string(),
                        msg: format!("expected `linear` or `gamma:<exp>`, got `{value}`"),
                    });
                }
            }
            "pid.kp" => self.gains.kp = num(key, value)?,
            "pid.ki" => self.gains.ki = num(key, value)?,
            "pid.kd" => self.gains.kd = num(key, value)?,
            "pid.u_min" => self.gains.u_min = num(key, value)?,
            "pid.u_max" => self.gains.u_max = num(key, value)?,
            "pid.integrator_limit" => self.gains.integrator_limit = num(key, value)?,
            "plant.tau_s" => self.plant.tau_s = num(key, value)?,
            "plant.delay_s" => self.plant.delay_s = num(key, value)?,
            "plant.slew_kpa_per_s" => self.plant.slew_kpa_per_s = num(key, value)?,
            "plant.noise_sigma_kpa" => self.plant.noise_sigma_kpa = num(key, value)?,
            "plant.p_floor_kpa" => self.plant.p_floor_kpa = num(key, value)?,
            "plant.p_ceil_kpa" => self.plant.p_ceil_kpa = num(key, value)?,
            "plant.seed" => self.plant.seed = num(key, value)?,
            "protocol.n_cycles" => self.protocol.n_cycles = num(key, value)?,
            "protocol.ramp_s" => self.protocol.ramp_s = num(key, value)?,
            "protocol.hold_s" => self.protocol.hold_s = num(key, value)?,
            "protocol.rest_s" => self.protocol.rest_s = num(key, value)?,
            "protocol.peak_activation" => self.protocol.peak_activation = num(key, value)?,
            "protocol.carrier_low_hz" => self.protocol.carrier_low_hz = num(key, value)?,
            "protocol.carrier_high_hz" => self.protocol.carrier_high_hz = num(key, value)?,
            "protocol.seed" => self.protocol.seed = num(key, value)?,
            "impair.enabled" => self.impair_enabled = flag(key, value)?,
            "impair.delay_ms" => self.impair.delay_ms = num(key, value)?,
            "impair.jitter_ms" => self.impair.jitter_ms = num(key, value)?,
            "impair.drop_prob" => self.impair.drop_prob = num(key, value)?,
            "impair.reorder" => self.impair.reorder = flag(key, value)?,
            "impair.seed" => self.impair.seed = num(key, value)?,
            "loop.rate_hz" => self.control_rate_hz = num(key, value)?,
            "loop.indentation_mm" => self.indentation_mm = num(key, value)?,
            "loop.segment_threshold" => self.segment_threshold = num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Canonical text form: fixed key order, parseable back via `parse`.
    pub fn to_text(&self) -> String {
        let shape = match self.render.mapping_shape {
            MappingShape::Linear => "linear".to_string(),
            MappingShape::Gamma(g) => format!("gamma:{g}"),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("dsp.sample_rate_hz", self.signal.sample_rate_hz.to_string());
        kv("dsp.band_low_hz", self.signal.band_low_hz.to_string());
        kv("dsp.band_high_hz", self.signal.band_high_hz.to_string());
        kv("dsp.prototype_order", self.signal.prototype_order.to_string());
        kv("dsp.envelope_window_s", self.signal.envelope_window_s.to_string());
        kv("dsp.mvc_value", self.signal.mvc_value.to_string());
        kv("dsp.activation_clamp", self.signal.activation_clamp.to_string());
        kv("dsp.detrend_after_filter", self.signal.detrend_after_filter.to_string());
        kv("render.p_min_kpa", self.render.p_min_kpa.to_string());
        kv("render.p_max_kpa", self.render.p_max_kpa.to_string());
        kv("render.k_max_n_per_mm", self.render.k_max_n_per_mm.to_string());
        kv("render.mapping_shape", shape);
        kv("pid.kp", self.gains.kp.to_string());
        kv("pid.ki", self.gains.ki.to_string());
        kv("pid.kd", self.gains.kd.to_string());
        kv("pid.u_min", self.gains.u_min.to_string());
        kv("pid.u_max", self.gains.u_max.to_string());
        kv("pid.integrator_limit", self.gains.integrator_limit.to_string());
        kv("plant.tau_s", self.plant.tau_s.to_string());
        kv("plant.delay_s", self.plant.delay_s.to_string());
        kv("plant.slew_kpa_per_s", self.plant.slew_kpa_per_s.to_string());
        kv("plant.noise_sigma_kpa", self.plant.noise_sigma_kpa.to_string());
        kv("plant.p_floor_kpa", self.plant.p_floor_kpa.to_string());
        kv("plant.p_ceil_kpa", self.plant.p_ceil_kpa.to_string());
        kv("plant.seed", self.plant.seed.to_string());
        kv("protocol.n_cycles", self.protocol.n_cycles.to_string());
        kv("protocol.ramp_s", self.protocol.ramp_s.to_string());
        kv("protocol.hold_s", self.protocol.hold_s.to_string());
        kv("protocol.rest_s", self.protocol.rest_s.to_string());
        kv("protocol.peak_activation", self.protocol.peak_activation.to_string());
        kv("protocol.carrier_low_hz", self.protocol.carrier_low_hz.to_string());
        kv("protocol.carrier_high_hz", self.protocol.carrier_high_hz.to_string());
        kv("protocol.seed", self.protocol.seed.to_string());
        kv("impair.enabled", self.impair_enabled.to_string());
        kv("impair.delay_ms", self.impair.delay_ms.to_string());
        kv("impair.jitter_ms", self.impair.jitter_ms.to_string());
        kv("impair.drop_prob", self.impair.drop_prob.to_string());
        kv("impair.reorder", self.impair.reorder.to_string());
        kv("impair.seed", self.impair.seed.to_string());
        kv("loop.rate_hz", self.control_rate_hz.to_string());
        kv("loop.indentation_mm", self.indentation_mm.to_string());
        kv("loop.segment_threshold", self.segment_threshold.to_string());
        s
    }

    /// Short hash of the canonical text, recorded in reports.
    pub fn sha(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = AppConfig::default();
        cfg.signal.envelope_window_s = 0.25;
        cfg.render.mapping_shape = MappingShape::Gamma(1.5);
        cfg.gains.kp = 3.5;
        cfg.impair_enabled = true;
        let parsed = AppConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = AppConfig::parse("dsp.sample_rate_hz = 2000\nbogus.key = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey(k) if k == "bogus.key"));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = AppConfig::parse("# comment\n\npid.kp = 4.25 # trailing\n").unwrap();
        assert_eq!(cfg.gains.kp, 4.25);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = AppConfig::parse("pid.kp = 1\nnot a pair\n").unwrap_err();
        assert!(matches!(err, ConfigError::Malformed { line: 2, .. }));
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = AppConfig::parse("plant.tau_s = fast\n").unwrap_err();
        assert!(matches!(err, ConfigError::BadValue { key, .. } if key == "plant.tau_s"));
    }

    #[test]
    fn sha_tracks_content() {
        let a = AppConfig::default();
        let mut b = AppConfig::default();
        assert_eq!(a.sha(), b.sha());
        b.gains.kp += 0.1;
        assert_ne!(a.sha(), b.sha());
    }

    #[test]
    fn master_seed_fans_out() {
        let mut cfg = AppConfig::default();
        cfg.apply_master_seed(7);
        assert_eq!(cfg.protocol.seed, 7);
        assert_eq!(cfg.plant.seed, 8);
        assert_eq!(cfg.impair.seed, 9);
    }

    #[test]
    fn ideal_preset_is_noise_and_delay_free() {
        let cfg = AppConfig::ideal();
        assert_eq!(cfg.plant.noise_sigma_kpa, 0.0);
        assert_eq!(cfg.plant.delay_s, 0.0);
        assert_eq!(cfg.signal.envelope_window_s, 0.5);
        cfg.validate().unwrap();
    }
}
