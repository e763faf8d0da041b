//! Activation-to-pressure mapping and stiffness/force rendering.
//!
//! Vacuum pressures are nonnegative magnitudes in kPa below ambient:
//! higher value means harder jamming, stiffer contact.

use thiserror::Error;

use crate::dsp::ActivationSample;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// How activation maps onto the pressure span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MappingShape {
    Linear,
    /// Power-law shaping: activation is raised to the exponent before the
    /// affine map, e.g. gamma > 1 softens low-effort response.
    Gamma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub p_min_kpa: f64,
    pub p_max_kpa: f64,
    pub k_max_n_per_mm: f64,
    pub mapping_shape: MappingShape,
}

/// Stiffness ceiling of the jamming structure under full vacuum.
pub const K_MAX_CEILING_N_PER_MM: f64 = 0.85;

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            p_min_kpa: 0.0,
            p_max_kpa: 40.0,
            k_max_n_per_mm: K_MAX_CEILING_N_PER_MM,
            mapping_shape: MappingShape::Linear,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.p_min_kpa >= 0.0 && self.p_min_kpa < self.p_max_kpa) {
            return Err(RenderError::InvalidConfig(format!(
                "pressure range must satisfy 0 <= p_min < p_max, got {}..{}",
                self.p_min_kpa, self.p_max_kpa
            )));
        }
        if !(self.k_max_n_per_mm > 0.0 && self.k_max_n_per_mm <= K_MAX_CEILING_N_PER_MM) {
            return Err(RenderError::InvalidConfig(format!(
                "k_max must be in (0, {K_MAX_CEILING_N_PER_MM}] N/mm, got {}",
                self.k_max_n_per_mm
            )));
        }
        if let MappingShape::Gamma(g) = self.mapping_shape {
            if !(g.is_finite() && g > 0.0) {
                return Err(RenderError::InvalidConfig(format!(
                    "gamma exponent must be positive, got {g}"
                )));
            }
        }
        Ok(())
    }
}

/// Desired vacuum pressure at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureCommand {
    pub t_us: u64,
    pub p_d_kpa: f64,
}

/// Force felt at the fingertip for a given indentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingertipForce {
    pub t_us: u64,
    pub indentation_mm: f64,
    pub force_n: f64,
}

/// Map one activation sample to a desired pressure. Monotone in the
/// activation and saturating at `p_max_kpa`.
pub fn map_activation(a: &ActivationSample, cfg: &RenderConfig) -> PressureCommand {
    let clamped = a.value.clamp(0.0, 1.0);
    let shaped = match cfg.mapping_shape {
        MappingShape::Linear => clamped,
        MappingShape::Gamma(g) => clamped.powf(g),
    };
    PressureCommand {
        t_us: a.t_us,
        p_d_kpa: cfg.p_min_kpa + (cfg.p_max_kpa - cfg.p_min_kpa) * shaped,
    }
}

/// Rendered stiffness at a chamber pressure, linear between the endpoints:
/// zero at `p_min_kpa`, `k_max_n_per_mm` at `p_max_kpa`.
pub fn stiffness_at(p_kpa: f64, cfg: &RenderConfig) -> Result<f64, RenderError> {
    if !(cfg.p_min_kpa..=cfg.p_max_kpa).contains(&p_kpa) {
        return Err(RenderError::InvalidArgument(format!(
            "pressure {p_kpa} kPa outside [{}, {}]",
            cfg.p_min_kpa, cfg.p_max_kpa
        )));
    }
    Ok(cfg.k_max_n_per_mm * (p_kpa - cfg.p_min_kpa) / (cfg.p_max_kpa - cfg.p_min_kpa))
}

/// Fingertip force for an indentation at the current pressure.
pub fn render_force(
    t_us: u64,
    p_kpa: f64,
    indentation_mm: f64,
    cfg: &RenderConfig,
) -> Result<FingertipForce, RenderError> {
    if !(indentation_mm.is_finite() && indentation_mm >= 0.0) {
        return Err(RenderError::InvalidArgument(format!(
            "indentation must be nonnegative, got {indentation_mm}"
        )));
    }
    Ok(FingertipForce {
        t_us,
        indentation_mm,
        force_n: stiffness_at(p_kpa, cfg)? * indentation_mm,
    })
}
