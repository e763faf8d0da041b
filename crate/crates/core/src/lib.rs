//! EMG-driven vacuum-pressure haptics pipeline.
//!
//! A deterministic desk-scale reimplementation of an EMG-to-stiffness
//! control stack: surface EMG is streamed (or read from file), reduced to
//! a normalized activation envelope, mapped to a desired vacuum pressure,
//! tracked by a PID-controlled simulated pneumatic plant, and rendered as
//! fingertip stiffness. A harness reproduces the RMSE / Pearson tracking
//! evaluation on synthetic effort protocols.
//!
//! Modules:
//! - [`dsp`]: filter design and the envelope extraction pipeline
//! - [`render`]: activation to pressure and stiffness/force rendering
//! - [`control`]: discrete PID and the fixed-rate closed loop
//! - [`plant`]: first-order-plus-dead-time vacuum chamber simulation
//! - [`transport`]: framed wire protocol with seeded link impairment
//! - [`harness`]: synthetic protocols, experiments, metrics, tuning
//! - [`config`]: the shared flat key-value configuration

pub mod config;
pub mod control;
pub mod dsp;
pub mod harness;
pub mod plant;
pub mod render;
pub mod transport;

use thiserror::Error;

/// Top-level error with stage attribution: every failure names the
/// pipeline stage it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dsp: {0}")]
    Dsp(#[from] dsp::DspError),
    #[error("render: {0}")]
    Render(#[from] render::RenderError),
    #[error("control: {0}")]
    Control(#[from] control::ControlError),
    #[error("plant: {0}")]
    Plant(#[from] plant::PlantError),
    #[error("transport: {0}")]
    Transport(#[from] transport::TransportError),
    #[error("codec: {0}")]
    Codec(#[from] transport::CodecError),
    #[error("impairment: {0}")]
    Impair(#[from] transport::ImpairError),
    #[error("harness: {0}")]
    Harness(#[from] harness::HarnessError),
    #[error("metrics: {0}")]
    Metrics(#[from] harness::MetricsError),
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
