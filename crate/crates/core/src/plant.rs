//! Simulated pneumatic vacuum chamber and pump.
//!
//! First-order-plus-dead-time stand-in for the physical hardware: the
//! actuator command passes a transport delay and a slew limiter, then the
//! chamber pressure relaxes toward it with time constant tau. Readings add
//! seeded Gaussian sensor noise so runs are reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub tau_s: f64,
    pub delay_s: f64,
    pub slew_kpa_per_s: f64,
    pub noise_sigma_kpa: f64,
    pub p_floor_kpa: f64,
    pub p_ceil_kpa: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            tau_s: 0.050,
            delay_s: 0.010,
            slew_kpa_per_s: 400.0,
            noise_sigma_kpa: 0.05,
            p_floor_kpa: 0.0,
            // One standard atmosphere: a vacuum chamber cannot exceed it.
            p_ceil_kpa: 101.325,
            seed: 42,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.tau_s.is_finite() && self.tau_s > 0.0) {
            return Err(PlantError::InvalidConfig(format!(
                "tau_s must be positive, got {}",
                self.tau_s
            )));
        }
        if !(self.delay_s.is_finite() && self.delay_s >= 0.0) {
            return Err(PlantError::InvalidConfig(format!(
                "delay_s must be nonnegative, got {}",
                self.delay_s
            )));
        }
        if !(self.slew_kpa_per_s.is_finite() && self.slew_kpa_per_s > 0.0) {
            return Err(PlantError::InvalidConfig(format!(
                "slew must be positive, got {}",
                self.slew_kpa_per_s
            )));
        }
        if !(self.noise_sigma_kpa.is_finite() && self.noise_sigma_kpa >= 0.0) {
            return Err(PlantError::InvalidConfig(format!(
                "noise sigma must be nonnegative, got {}",
                self.noise_sigma_kpa
            )));
        }
        if !(self.p_floor_kpa.is_finite() && self.p_floor_kpa < self.p_ceil_kpa) {
            return Err(PlantError::InvalidConfig(format!(
                "require p_floor < p_ceil, got {}..{}",
                self.p_floor_kpa, self.p_ceil_kpa
            )));
        }
        Ok(())
    }
}

/// Simulated plant with internal state. Single-owner; step it from one
/// control loop only.
#[derive(Debug, Clone)]
pub struct Plant {
    cfg: PlantConfig,
    p_true_kpa: f64,
    /// Commands waiting out the transport delay: (release time, value).
    delay_line: VecDeque<(u64, f64)>,
    /// Last command released from the delay line (zero-order hold).
    released_cmd: f64,
    /// Last slew-limited drive actually applied.
    applied_drive: f64,
    t_now_us: u64,
    rng: ChaCha8Rng,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self, PlantError> {
        cfg.validate()?;
        let p0 = 0.0f64.clamp(cfg.p_floor_kpa, cfg.p_ceil_kpa);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            cfg,
            p_true_kpa: p0,
            delay_line: VecDeque::new(),
            released_cmd: p0,
            applied_drive: p0,
            t_now_us: 0,
            rng,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    /// True chamber pressure (what a noise-free sensor would read).
    pub fn pressure_kpa(&self) -> f64 {
        self.p_true_kpa
    }

    /// Apply actuator command `u` for one period of `dt_s` seconds and
    /// return the (noisy) pressure reading at the end of the period.
    pub fn step(&mut self, u: f64, dt_s: f64) -> Result<f64, PlantError> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(PlantError::InvalidArgument(format!(
                "dt must be positive, got {dt_s}"
            )));
        }

        let delay_us = (self.cfg.delay_s * 1.0e6).round() as u64;
        self.delay_line.push_back((self.t_now_us + delay_us, u));
        while let Some(&(release_us, cmd)) = self.delay_line.front() {
            if release_us <= self.t_now_us {
                self.released_cmd = cmd;
                self.delay_line.pop_front();
            } else {
                break;
            }
        }

        let max_delta = self.cfg.slew_kpa_per_s * dt_s;
        self.applied_drive = self
            .released_cmd
            .clamp(self.applied_drive - max_delta, self.applied_drive + max_delta);

        // Exact zero-order-hold discretization of dp/dt = (drive - p) / tau,
        // so the step response matches the analytic first-order curve at
        // any step size.
        let decay = (-dt_s / self.cfg.tau_s).exp();
        self.p_true_kpa = self.applied_drive + (self.p_true_kpa - self.applied_drive) * decay;
        self.p_true_kpa = self.p_true_kpa.clamp(self.cfg.p_floor_kpa, self.cfg.p_ceil_kpa);

        self.t_now_us += (dt_s * 1.0e6).round() as u64;

        let noise = if self.cfg.noise_sigma_kpa > 0.0 {
            let normal = Normal::new(0.0, self.cfg.noise_sigma_kpa)
                .expect("sigma validated nonnegative");
            normal.sample(&mut self.rng)
        } else {
            0.0
        };
        Ok(self.p_true_kpa + noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_cfg() -> PlantConfig {
        PlantConfig {
            noise_sigma_kpa: 0.0,
            delay_s: 0.0,
            slew_kpa_per_s: 1.0e9,
            ..PlantConfig::default()
        }
    }

    #[test]
    fn rest_state_stays_near_zero() {
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        let sigma = plant.config().noise_sigma_kpa;
        for _ in 0..500 {
            let p = plant.step(0.0, 0.01).unwrap();
            assert!(p.abs() <= 4.0 * sigma, "reading {p} beyond 4 sigma");
        }
    }

    #[test]
    fn step_response_matches_analytic_first_order_curve() {
        let cfg = ideal_cfg();
        let tau = cfg.tau_s;
        let c = 30.0;
        let dt = 0.01;
        let mut plant = Plant::new(cfg).unwrap();
        let mut t = 0.0;
        let mut readings = Vec::new();
        while t < 3.5 * tau {
            t += dt;
            readings.push((t, plant.step(c, dt).unwrap()));
        }
        for mult in [1.0, 2.0, 3.0] {
            let target_t = mult * tau;
            let (t_got, p_got) = readings
                .iter()
                .min_by(|a, b| {
                    (a.0 - target_t).abs().partial_cmp(&(b.0 - target_t).abs()).unwrap()
                })
                .copied()
                .unwrap();
            let expected = c * (1.0 - (-t_got / tau).exp());
            let rel = (p_got - expected).abs() / expected;
            assert!(rel < 0.01, "at t={t_got}: {p_got} vs analytic {expected}");
        }
    }

    #[test]
    fn transport_delay_holds_output_at_zero() {
        let cfg = PlantConfig {
            delay_s: 0.1,
            noise_sigma_kpa: 0.0,
            ..PlantConfig::default()
        };
        let mut plant = Plant::new(cfg).unwrap();
        for k in 0..30 {
            let p = plant.step(25.0, 0.01).unwrap();
            let t_after = (k + 1) as f64 * 0.01;
            if t_after <= 0.1 + 1e-9 {
                assert_eq!(p, 0.0, "moved at t={t_after}");
            }
        }
        // Well past the delay it must be moving.
        for _ in 0..20 {
            plant.step(25.0, 0.01).unwrap();
        }
        assert!(plant.pressure_kpa() > 1.0);
    }

    #[test]
    fn slew_limit_caps_rate_of_change() {
        let cfg = PlantConfig {
            delay_s: 0.0,
            noise_sigma_kpa: 0.0,
            slew_kpa_per_s: 100.0,
            ..PlantConfig::default()
        };
        let mut plant = Plant::new(cfg).unwrap();
        // After 0.1 s the drive can have reached at most 10 kPa.
        let mut last = 0.0;
        for _ in 0..10 {
            last = plant.step(101.0, 0.01).unwrap();
        }
        assert!(last <= 10.0 + 1e-9, "pressure {last} outran the slew limit");
    }

    #[test]
    fn same_seed_same_noise_sequence() {
        let run = || {
            let mut plant = Plant::new(PlantConfig::default()).unwrap();
            (0..100).map(|_| plant.step(10.0, 0.01).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn monotone_approach_without_noise() {
        let mut plant = Plant::new(ideal_cfg()).unwrap();
        let mut prev = 0.0;
        for _ in 0..200 {
            let p = plant.step(20.0, 0.01).unwrap();
            assert!(p >= prev - 1e-12, "overshoot or retreat: {prev} -> {p}");
            assert!(p <= 20.0 + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn nonpositive_dt_rejected() {
        let mut plant = Plant::new(PlantConfig::default()).unwrap();
        assert!(plant.step(0.0, 0.0).is_err());
    }

    proptest::proptest! {
        // True pressure never leaves the physical bounds, whatever the drive.
        #[test]
        fn pressure_respects_bounds(
            drives in proptest::collection::vec(-500.0f64..500.0, 1..200),
        ) {
            let cfg = PlantConfig { p_floor_kpa: 0.0, p_ceil_kpa: 60.0, ..PlantConfig::default() };
            let mut plant = Plant::new(cfg).unwrap();
            for u in drives {
                plant.step(u, 0.01).unwrap();
                let p = plant.pressure_kpa();
                proptest::prop_assert!((0.0..=60.0).contains(&p));
            }
        }
    }
}
