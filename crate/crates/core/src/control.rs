//! Discrete PID pressure controller.
//!
//! Tracks the desired vacuum pressure against the measured feedback
//! pressure. Derivative acts on the measurement (no kick on command
//! steps); the integrator uses conditional anti-windup: it does not
//! advance on a step where the output saturated and the error pushes
//! further into the same limit.

use thiserror::Error;

use crate::plant::{Plant, PlantError};
use crate::render::PressureCommand;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
    /// Derivative gain, s.
    pub kd: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub integrator_limit: f64,
}

/// Gains frozen from the offline grid-search tuner against the default
/// plant and the default synthetic scenario, constrained to meet the step
/// response contract (settle within 2 percent in 0.5 s, overshoot below
/// 10 percent on a 0 to 20 kPa step at 100 Hz).
pub const DEFAULT_GAINS: PidGains = PidGains {
    kp: 2.0,
    ki: 20.0,
    kd: 0.02,
    u_min: 0.0,
    u_max: 101.325,
    integrator_limit: 101.325,
};

/// Gains tuned the same way against the ideal (noise-free, delay-free)
/// plant for the near-ideal tracking scenario.
pub const IDEAL_GAINS: PidGains = PidGains {
    kp: 4.0,
    ki: 120.0,
    kd: 0.0,
    u_min: 0.0,
    u_max: 101.325,
    integrator_limit: 101.325,
};

impl Default for PidGains {
    fn default() -> Self {
        DEFAULT_GAINS
    }
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        if !(self.kp >= 0.0 && self.ki >= 0.0 && self.kd >= 0.0) {
            return Err(ControlError::InvalidGains(format!(
                "gains must be nonnegative, got kp={} ki={} kd={}",
                self.kp, self.ki, self.kd
            )));
        }
        if !(self.u_min.is_finite() && self.u_min < self.u_max) {
            return Err(ControlError::InvalidGains(format!(
                "require u_min < u_max, got {}..{}",
                self.u_min, self.u_max
            )));
        }
        if !(self.integrator_limit >= 0.0 && self.integrator_limit <= self.u_max - self.u_min) {
            return Err(ControlError::InvalidGains(format!(
                "integrator_limit {} outside [0, u_max - u_min = {}]",
                self.integrator_limit,
                self.u_max - self.u_min
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integrator: f64,
    pub prev_measurement: f64,
    pub initialized: bool,
}

/// One controller instance: gains plus mutable state. Single-owner; make
/// one per control loop.
#[derive(Debug, Clone)]
pub struct PidController {
    gains: PidGains,
    state: PidState,
}

impl PidController {
    pub fn new(gains: PidGains) -> Result<Self, ControlError> {
        gains.validate()?;
        Ok(Self {
            gains,
            state: PidState::default(),
        })
    }

    pub fn gains(&self) -> &PidGains {
        &self.gains
    }

    pub fn state(&self) -> &PidState {
        &self.state
    }

    /// Advance one control period: returns the saturated actuator command.
    pub fn step(&mut self, p_d_kpa: f64, p_h_kpa: f64, dt_s: f64) -> Result<f64, ControlError> {
        if !(dt_s.is_finite() && dt_s > 0.0) {
            return Err(ControlError::InvalidArgument(format!(
                "dt must be positive, got {dt_s}"
            )));
        }
        let g = &self.gains;
        let e = p_d_kpa - p_h_kpa;

        let derivative = if self.state.initialized {
            -g.kd * (p_h_kpa - self.state.prev_measurement) / dt_s
        } else {
            0.0
        };

        let advanced = (self.state.integrator + g.ki * e * dt_s)
            .clamp(-g.integrator_limit, g.integrator_limit);
        let unsat = g.kp * e + advanced + derivative;
        let mut u = unsat.clamp(g.u_min, g.u_max);

        let saturated_further = (unsat > g.u_max && e > 0.0) || (unsat < g.u_min && e < 0.0);
        if saturated_further {
            // Hold the integrator and recompute with it unchanged.
            u = (g.kp * e + self.state.integrator + derivative).clamp(g.u_min, g.u_max);
        } else {
            self.state.integrator = advanced;
        }

        self.state.prev_measurement = p_h_kpa;
        self.state.initialized = true;
        Ok(u)
    }
}

/// One synchronized sample of the closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t_us: u64,
    pub p_d_kpa: f64,
    pub p_h_kpa: f64,
    pub u: f64,
}

/// Run a fixed-rate closed loop over a command schedule against a plant.
///
/// The desired pressure is held between command timestamps (zero-order
/// hold). The loop runs from t = 0 through the last command timestamp and
/// emits one row per period.
pub fn run_loop(
    gains: PidGains,
    plant: &mut Plant,
    commands: &[PressureCommand],
    rate_hz: f64,
) -> Result<Vec<TraceRow>, ControlError> {
    if commands.is_empty() {
        return Err(ControlError::InvalidArgument(
            "empty command sequence".into(),
        ));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(ControlError::InvalidArgument(format!(
            "rate_hz must be positive, got {rate_hz}"
        )));
    }
    if commands.windows(2).any(|w| w[1].t_us < w[0].t_us) {
        return Err(ControlError::InvalidArgument(
            "commands must be sorted by timestamp".into(),
        ));
    }

    let dt_s = 1.0 / rate_hz;
    let dt_us = (1.0e6 / rate_hz).round() as u64;
    let t_end_us = commands.last().expect("nonempty").t_us;
    let steps = (t_end_us / dt_us) as usize + 1;

    let mut pid = PidController::new(gains)?;
    let mut trace = Vec::with_capacity(steps);
    let mut cmd_idx = 0usize;
    let mut p_d = commands[0].p_d_kpa;
    let mut p_meas = plant.pressure_kpa();

    for k in 0..steps {
        let t_us = k as u64 * dt_us;
        while cmd_idx + 1 < commands.len() && commands[cmd_idx + 1].t_us <= t_us {
            cmd_idx += 1;
        }
        if commands[cmd_idx].t_us <= t_us {
            p_d = commands[cmd_idx].p_d_kpa;
        }
        let u = pid.step(p_d, p_meas, dt_s)?;
        p_meas = plant.step(u, dt_s)?;
        trace.push(TraceRow {
            t_us,
            p_d_kpa: p_d,
            p_h_kpa: p_meas,
            u,
        });
    }
    Ok(trace)
}
