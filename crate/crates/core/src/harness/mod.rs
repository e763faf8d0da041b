//! Synthetic protocol generation, experiment orchestration and the
//! RMSE / Pearson evaluation report.
//!
//! The synthetic protocol mimics cycles of slow effort: a trapezoidal
//! activation envelope (ramp, hold, ramp down, rest) amplitude-modulating
//! bandlimited noise. The experiment runs the full chain
//!
//! ```text
//! generate -> [impaired link] -> envelope -> pressure map -> PID + plant
//! ```
//!
//! then segments the commanded pressure into cycles and scores tracking
//! per cycle. Everything is seeded; identical configs give byte-identical
//! reports and traces.

pub mod metrics;

pub use metrics::{correlation_significant, mean, pearson, rmse, sample_std, MetricsError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::ops::Range;

use crate::config::AppConfig;
use crate::control::{run_loop, PidGains, TraceRow};
use crate::dsp::{design_bandpass, ActivationSample, EmgFrame, EnvelopePipeline, SignalConfig};
use crate::plant::Plant;
use crate::render::{map_activation, stiffness_at, PressureCommand};
use crate::transport::ImpairmentSim;
use crate::Error;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid search found no feasible gains")]
    NoFeasibleGains,
}

// ---------------------------------------------------------------------------
// Synthetic protocol
// ---------------------------------------------------------------------------

/// Timing and shape of the synthetic effort protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSpec {
    pub n_cycles: u32,
    pub ramp_s: f64,
    pub hold_s: f64,
    pub rest_s: f64,
    /// Peak of the activation envelope, fraction of MVC. Zero collapses
    /// the protocol to the rest-level noise floor.
    pub peak_activation: f64,
    pub carrier_low_hz: f64,
    pub carrier_high_hz: f64,
    pub seed: u64,
}

/// Baseline activation between efforts: resting EMG is never silent.
pub const REST_ACTIVATION: f64 = 0.02;

/// Samples per generated transport frame.
pub const GEN_FRAME_LEN: usize = 64;

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            n_cycles: 5,
            ramp_s: 1.5,
            hold_s: 2.0,
            rest_s: 2.0,
            peak_activation: 0.8,
            carrier_low_hz: 20.0,
            carrier_high_hz: 450.0,
            seed: 7,
        }
    }
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n_cycles == 0 {
            return Err(HarnessError::InvalidProtocol("n_cycles must be >= 1".into()));
        }
        for (name, v) in [("ramp_s", self.ramp_s), ("hold_s", self.hold_s), ("rest_s", self.rest_s)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(HarnessError::InvalidProtocol(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.peak_activation) {
            return Err(HarnessError::InvalidProtocol(format!(
                "peak_activation must be in [0, 1], got {}",
                self.peak_activation
            )));
        }
        if !(self.carrier_low_hz > 0.0 && self.carrier_low_hz < self.carrier_high_hz) {
            return Err(HarnessError::InvalidProtocol(format!(
                "carrier band must satisfy 0 < low < high, got {}..{}",
                self.carrier_low_hz, self.carrier_high_hz
            )));
        }
        Ok(())
    }

    pub fn cycle_s(&self) -> f64 {
        2.0 * self.ramp_s + self.hold_s + self.rest_s
    }

    pub fn total_s(&self) -> f64 {
        f64::from(self.n_cycles) * self.cycle_s()
    }

    /// Envelope value at time `t_s`: rest level outside efforts, linear
    /// ramps up to `peak_activation` with a flat hold in between.
    pub fn envelope_at(&self, t_s: f64) -> f64 {
        let amp = (self.peak_activation - REST_ACTIVATION).max(0.0);
        if amp == 0.0 || t_s < 0.0 || t_s >= self.total_s() {
            return REST_ACTIVATION;
        }
        let tc = t_s % self.cycle_s();
        let shape = if tc < self.ramp_s {
            tc / self.ramp_s
        } else if tc < self.ramp_s + self.hold_s {
            1.0
        } else if tc < 2.0 * self.ramp_s + self.hold_s {
            1.0 - (tc - self.ramp_s - self.hold_s) / self.ramp_s
        } else {
            0.0
        };
        REST_ACTIVATION + amp * shape
    }
}

/// Output of the generator: transport-ready frames plus the exact
/// modulation envelope used, the ground truth for oracle tests.
#[derive(Debug, Clone)]
pub struct GeneratedEmg {
    pub frames: Vec<EmgFrame>,
    pub ground_truth: Vec<f64>,
}

/// Synthesize a single-channel EMG recording for the protocol: seeded
/// Gaussian noise, bandpassed to the carrier band, scaled to unit
/// rectified mean, then amplitude-modulated by the envelope and MVC.
pub fn generate_emg(
    spec: &ProtocolSpec,
    rate_hz: f64,
    mvc_mv: f64,
) -> Result<GeneratedEmg, Error> {
    spec.validate()?;
    if spec.carrier_high_hz >= rate_hz / 2.0 {
        return Err(HarnessError::InvalidProtocol(format!(
            "carrier band {}..{} Hz exceeds Nyquist for {rate_hz} Hz",
            spec.carrier_low_hz, spec.carrier_high_hz
        ))
        .into());
    }

    let n = (spec.total_s() * rate_hz).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();

    let carrier_cfg = SignalConfig {
        sample_rate_hz: rate_hz,
        band_low_hz: spec.carrier_low_hz,
        band_high_hz: spec.carrier_high_hz,
        prototype_order: 4,
        ..SignalConfig::default()
    };
    let mut bandpass = design_bandpass(&carrier_cfg)?;
    let mut carrier = bandpass.process(&white);

    // Unit rectified mean, so the downstream envelope estimate recovers
    // the modulation envelope in MVC units.
    let mean_abs = carrier.iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    if !(mean_abs.is_finite() && mean_abs > 0.0) {
        return Err(HarnessError::InvalidProtocol("degenerate carrier".into()).into());
    }
    for v in &mut carrier {
        *v /= mean_abs;
    }

    let ground_truth: Vec<f64> = (0..n).map(|i| spec.envelope_at(i as f64 / rate_hz)).collect();
    let frames = carrier
        .iter()
        .zip(&ground_truth)
        .map(|(c, e)| (c * e * mvc_mv) as f32)
        .collect::<Vec<f32>>()
        .chunks(GEN_FRAME_LEN)
        .enumerate()
        .map(|(i, chunk)| EmgFrame {
            channel_id: 0,
            seq: i as u64,
            t_start_us: ((i * GEN_FRAME_LEN) as f64 * 1.0e6 / rate_hz).round() as u64,
            sample_rate_hz: rate_hz,
            samples: chunk.to_vec(),
        })
        .collect();

    Ok(GeneratedEmg {
        frames,
        ground_truth,
    })
}

// ---------------------------------------------------------------------------
// Cycle segmentation
// ---------------------------------------------------------------------------

/// Split a trace into effort cycles. A cycle starts at each upward
/// crossing of `threshold` x max(trace); re-arming requires the trace to
/// fall below half that level (hysteresis). Each cycle runs to the next
/// start, the last to the end of the trace. A trace that never crosses
/// yields no cycles.
pub fn segment_cycles(trace: &[f64], threshold: f64) -> Result<Vec<Range<usize>>, HarnessError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(HarnessError::InvalidArgument(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let max = trace.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_nan() || max <= 0.0 {
        return Ok(Vec::new());
    }
    let hi = threshold * max;
    let lo = 0.5 * hi;

    let mut starts = Vec::new();
    let mut armed = true;
    for (i, &v) in trace.iter().enumerate() {
        if armed && v >= hi {
            starts.push(i);
            armed = false;
        } else if !armed && v < lo {
            armed = true;
        }
    }
    Ok(starts
        .iter()
        .enumerate()
        .map(|(k, &s)| s..starts.get(k + 1).copied().unwrap_or(trace.len()))
        .collect())
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CycleStats {
    pub cycle_index: usize,
    pub rmse_kpa: f64,
    pub pearson_r: f64,
    /// Significance gate: p < 1e-4 via the t transform of r.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r_mean: f64,
    pub r_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_cycle: Vec<CycleStats>,
    /// Present when at least one cycle was found.
    pub aggregate: Option<Aggregate>,
    pub overall_rmse_kpa: f64,
    /// None when the correlation is undefined (constant trace).
    pub overall_r: Option<f64>,
    pub config_sha: String,
    pub seeds: ReportSeeds,
    pub build_rev: String,
    pub link: Option<LinkSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportSeeds {
    pub protocol: u64,
    pub plant: u64,
    pub impair: u64,
}

/// Impairment accounting for runs routed through the simulated link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSummary {
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub latency_mean_ms: f64,
}

impl EvalReport {
    /// Recompute aggregates from the per-cycle rows; must match exactly.
    pub fn recomputed_aggregate(&self) -> Option<Aggregate> {
        if self.per_cycle.is_empty() {
            return None;
        }
        let rmses: Vec<f64> = self.per_cycle.iter().map(|c| c.rmse_kpa).collect();
        let rs: Vec<f64> = self.per_cycle.iter().map(|c| c.pearson_r).collect();
        Some(Aggregate {
            rmse_mean: mean(&rmses),
            rmse_std: sample_std(&rmses),
            r_mean: mean(&rs),
            r_std: sample_std(&rs),
        })
    }

    /// Human-readable report with a machine-readable key-value block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("pressure tracking evaluation\n");
        s.push_str("============================\n");
        for c in &self.per_cycle {
            s.push_str(&format!(
                "cycle {}: rmse = {} kPa, r = {}, significant = {}\n",
                c.cycle_index, c.rmse_kpa, c.pearson_r, c.significant
            ));
        }
        if let Some(a) = &self.aggregate {
            s.push_str(&format!(
                "aggregate: rmse = {} +/- {} kPa, r = {} +/- {}\n",
                a.rmse_mean, a.rmse_std, a.r_mean, a.r_std
            ));
        } else {
            s.push_str("aggregate: no cycles detected\n");
        }
        s.push('\n');
        s.push_str(&format!("cycles = {}\n", self.per_cycle.len()));
        if let Some(a) = &self.aggregate {
            s.push_str(&format!("rmse_mean_kpa = {}\n", a.rmse_mean));
            s.push_str(&format!("rmse_std_kpa = {}\n", a.rmse_std));
            s.push_str(&format!("r_mean = {}\n", a.r_mean));
            s.push_str(&format!("r_std = {}\n", a.r_std));
            let all_sig = self.per_cycle.iter().all(|c| c.significant);
            s.push_str(&format!("all_significant = {all_sig}\n"));
        }
        s.push_str(&format!("overall_rmse_kpa = {}\n", self.overall_rmse_kpa));
        match self.overall_r {
            Some(r) => s.push_str(&format!("overall_r = {r}\n")),
            None => s.push_str("overall_r = undefined\n"),
        }
        if let Some(link) = &self.link {
            s.push_str(&format!("link_offered = {}\n", link.offered));
            s.push_str(&format!("link_delivered = {}\n", link.delivered));
            s.push_str(&format!("link_dropped = {}\n", link.dropped));
            s.push_str(&format!("link_latency_mean_ms = {}\n", link.latency_mean_ms));
        }
        s.push_str(&format!("config_sha = {}\n", self.config_sha));
        s.push_str(&format!(
            "seeds = protocol:{} plant:{} impair:{}\n",
            self.seeds.protocol, self.seeds.plant, self.seeds.impair
        ));
        s.push_str(&format!("build_rev = {}\n", self.build_rev));
        s
    }
}

/// `git describe` of the working tree, or "unknown" outside a repo.
pub fn build_rev() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

// ---------------------------------------------------------------------------
// Experiment orchestration
// ---------------------------------------------------------------------------

/// One synchronized row of the full experiment trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRow {
    pub t_us: u64,
    pub activation: f64,
    pub p_d_kpa: f64,
    pub p_h_kpa: f64,
    pub u: f64,
    pub force_n: f64,
}

pub const TRACE_CSV_HEADER: &str = "t_us,activation,p_d_kpa,p_h_kpa,u,force_n";

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: EvalReport,
    pub trace: Vec<ExperimentRow>,
}

pub fn write_trace_csv<W: std::io::Write>(
    out: &mut W,
    trace: &[ExperimentRow],
) -> std::io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.t_us, r.activation, r.p_d_kpa, r.p_h_kpa, r.u, r.force_n
        )?;
    }
    Ok(())
}

/// Run the full closed-loop experiment for a config bundle.
pub fn run_experiment(cfg: &AppConfig) -> Result<ExperimentRun, Error> {
    cfg.validate()?;
    let generated = generate_emg(&cfg.protocol, cfg.signal.sample_rate_hz, cfg.signal.mvc_value)?;

    // Receive-side envelope extraction, optionally behind the impaired
    // link. Activation timestamps follow delivery, so link latency shifts
    // the command timeline exactly as it would live.
    let mut link = None;
    let activation: Vec<ActivationSample> = if cfg.impair_enabled {
        let mut sim = ImpairmentSim::new(cfg.impair.clone())?;
        let deliveries = sim.schedule(generated.frames);
        let mut pipeline = EnvelopePipeline::new(&cfg.signal)?;
        let mut out = Vec::new();
        for d in &deliveries {
            for (i, a) in pipeline.feed(&d.frame.samples).into_iter().enumerate() {
                out.push(ActivationSample {
                    t_us: d.delivered_us
                        + (i as f64 * 1.0e6 / cfg.signal.sample_rate_hz).round() as u64,
                    value: a.value,
                });
            }
        }
        let stats = sim.stats();
        let mean_latency = crate::transport::impair::latency_stats_ms(&deliveries)
            .map(|(m, _, _)| m)
            .unwrap_or(0.0);
        link = Some(LinkSummary {
            offered: stats.offered,
            delivered: stats.delivered,
            dropped: stats.dropped,
            latency_mean_ms: mean_latency,
        });
        out
    } else {
        crate::dsp::process_pipeline(&generated.frames, &cfg.signal)?
    };
    if activation.is_empty() {
        return Err(HarnessError::InvalidProtocol("empty activation stream".into()).into());
    }

    let commands: Vec<PressureCommand> =
        activation.iter().map(|a| map_activation(a, &cfg.render)).collect();

    let mut plant = Plant::new(cfg.plant.clone())?;
    let loop_trace = run_loop(cfg.gains, &mut plant, &commands, cfg.control_rate_hz)?;

    let trace = merge_trace(&loop_trace, &activation, cfg)?;
    let report = evaluate_trace(&loop_trace, cfg, link)?;
    Ok(ExperimentRun { report, trace })
}

/// Join the control-rate loop trace with the activation stream (zero-order
/// hold) and attach the rendered fingertip force at the probe indentation.
fn merge_trace(
    loop_trace: &[TraceRow],
    activation: &[ActivationSample],
    cfg: &AppConfig,
) -> Result<Vec<ExperimentRow>, Error> {
    let mut rows = Vec::with_capacity(loop_trace.len());
    let mut cursor = 0usize;
    let mut held = 0.0f64;
    for row in loop_trace {
        while cursor < activation.len() && activation[cursor].t_us <= row.t_us {
            held = activation[cursor].value;
            cursor += 1;
        }
        let p_for_stiffness = row.p_h_kpa.clamp(cfg.render.p_min_kpa, cfg.render.p_max_kpa);
        let force = stiffness_at(p_for_stiffness, &cfg.render)? * cfg.indentation_mm;
        rows.push(ExperimentRow {
            t_us: row.t_us,
            activation: held,
            p_d_kpa: row.p_d_kpa,
            p_h_kpa: row.p_h_kpa,
            u: row.u,
            force_n: force,
        });
    }
    Ok(rows)
}

/// Segment the commanded pressure and score tracking per cycle.
fn evaluate_trace(
    loop_trace: &[TraceRow],
    cfg: &AppConfig,
    link: Option<LinkSummary>,
) -> Result<EvalReport, Error> {
    let p_d: Vec<f64> = loop_trace.iter().map(|r| r.p_d_kpa).collect();
    let p_h: Vec<f64> = loop_trace.iter().map(|r| r.p_h_kpa).collect();
    evaluate_pressure_traces(&p_d, &p_h, cfg, link)
}

/// Build the evaluation report for a commanded/measured pressure pair.
///
/// A trace that never crosses the segmentation threshold produces an
/// empty cycle list and no aggregate; the overall RMSE is still reported
/// and the overall correlation is None when undefined (constant trace).
pub fn evaluate_pressure_traces(
    p_d: &[f64],
    p_h: &[f64],
    cfg: &AppConfig,
    link: Option<LinkSummary>,
) -> Result<EvalReport, Error> {
    let cycles = segment_cycles(p_d, cfg.segment_threshold)?;
    let mut per_cycle = Vec::with_capacity(cycles.len());
    for (i, range) in cycles.iter().enumerate() {
        let x = &p_d[range.clone()];
        let y = &p_h[range.clone()];
        let r = pearson(x, y).map_err(HarnessError::from)?;
        per_cycle.push(CycleStats {
            cycle_index: i,
            rmse_kpa: rmse(x, y).map_err(HarnessError::from)?,
            pearson_r: r,
            significant: correlation_significant(r, x.len()),
        });
    }

    let overall_rmse_kpa = rmse(p_d, p_h).map_err(HarnessError::from)?;
    let overall_r = match pearson(p_d, p_h) {
        Ok(r) => Some(r),
        Err(MetricsError::ConstantInput(_) | MetricsError::TooShort { .. }) => None,
        Err(e) => return Err(HarnessError::from(e).into()),
    };

    let mut report = EvalReport {
        per_cycle,
        aggregate: None,
        overall_rmse_kpa,
        overall_r,
        config_sha: cfg.sha(),
        seeds: ReportSeeds {
            protocol: cfg.protocol.seed,
            plant: cfg.plant.seed,
            impair: cfg.impair.seed,
        },
        build_rev: build_rev(),
        link,
    };
    report.aggregate = report.recomputed_aggregate();
    Ok(report)
}

impl From<MetricsError> for HarnessError {
    fn from(e: MetricsError) -> Self {
        HarnessError::InvalidArgument(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Acceptance thresholds
// ---------------------------------------------------------------------------

/// Pass bounds for the default end-to-end scenario, bracketing the
/// hardware-scale tracking quality (about 1 kPa RMSE, r close to 1).
pub const DEFAULT_RMSE_BOUND_KPA: f64 = 1.5;
pub const DEFAULT_R_MEAN_BOUND: f64 = 0.96;
pub const DEFAULT_R_CYCLE_BOUND: f64 = 0.9;

/// Pass bounds for the near-ideal scenario (noise-free, delay-free plant,
/// slow envelope, generous gains).
pub const IDEAL_RMSE_BOUND_KPA: f64 = 0.2;
pub const IDEAL_R_MEAN_BOUND: f64 = 0.999;

/// Check a report against the default-scenario thresholds.
pub fn meets_default_thresholds(report: &EvalReport) -> bool {
    match &report.aggregate {
        Some(a) => {
            a.rmse_mean <= DEFAULT_RMSE_BOUND_KPA
                && a.r_mean >= DEFAULT_R_MEAN_BOUND
                && report
                    .per_cycle
                    .iter()
                    .all(|c| c.pearson_r > DEFAULT_R_CYCLE_BOUND && c.significant)
        }
        None => false,
    }
}

/// Check a report against the near-ideal thresholds.
pub fn meets_ideal_thresholds(report: &EvalReport) -> bool {
    match &report.aggregate {
        Some(a) => a.rmse_mean <= IDEAL_RMSE_BOUND_KPA && a.r_mean >= IDEAL_R_MEAN_BOUND,
        None => false,
    }
}

// ---------------------------------------------------------------------------
// PID tuning
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
}

impl TuneGrid {
    /// The grid the frozen defaults were picked from.
    pub fn default_grid() -> Self {
        Self {
            kp: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
            ki: vec![2.0, 5.0, 8.0, 12.0, 16.0, 20.0, 30.0],
            kd: vec![0.0, 0.005, 0.01, 0.02, 0.04],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.kp.is_empty() || self.ki.is_empty() || self.kd.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub gains: PidGains,
    pub objective_rmse: f64,
    pub evaluated: usize,
    pub feasible: usize,
}

/// Step-response contract the frozen defaults must honor: a 0 to 20 kPa
/// step into the plant settles within 2 percent in at most 0.5 s with
/// overshoot at most 10 percent.
pub fn step_response_ok(gains: PidGains, cfg: &AppConfig) -> Result<bool, Error> {
    let mut plant = Plant::new(cfg.plant.clone())?;
    let commands = [
        PressureCommand { t_us: 0, p_d_kpa: 20.0 },
        PressureCommand {
            t_us: 2_000_000,
            p_d_kpa: 20.0,
        },
    ];
    let trace = run_loop(gains, &mut plant, &commands, cfg.control_rate_hz)?;
    let peak = trace.iter().map(|r| r.p_h_kpa).fold(f64::MIN, f64::max);
    if peak > 22.0 {
        return Ok(false);
    }
    let settled = (0..trace.len()).find(|&k| {
        trace[k..].iter().all(|r| (r.p_h_kpa - 20.0).abs() <= 0.4)
    });
    Ok(match settled {
        Some(k) => trace[k].t_us <= 500_000,
        None => false,
    })
}

/// Exhaustive grid search minimizing the aggregate RMSE of the scenario in
/// `base`. Ties break toward the lexicographically first (kp, ki, kd).
/// With `step_constrained`, grid points failing [`step_response_ok`] are
/// skipped.
pub fn tune_pid(
    grid: &TuneGrid,
    base: &AppConfig,
    step_constrained: bool,
) -> Result<TuneOutcome, Error> {
    if grid.is_empty() {
        return Err(HarnessError::InvalidArgument("empty tuning grid".into()).into());
    }
    base.validate()?;

    // The command schedule is gain-independent; compute it once.
    let generated = generate_emg(&base.protocol, base.signal.sample_rate_hz, base.signal.mvc_value)?;
    let activation = crate::dsp::process_pipeline(&generated.frames, &base.signal)?;
    let commands: Vec<PressureCommand> =
        activation.iter().map(|a| map_activation(a, &base.render)).collect();

    let mut best: Option<(f64, PidGains)> = None;
    let mut evaluated = 0usize;
    let mut feasible = 0usize;
    for &kp in &grid.kp {
        for &ki in &grid.ki {
            for &kd in &grid.kd {
                let gains = PidGains {
                    kp,
                    ki,
                    kd,
                    ..base.gains
                };
                gains.validate()?;
                evaluated += 1;
                if step_constrained && !step_response_ok(gains, base)? {
                    continue;
                }
                feasible += 1;

                let mut plant = Plant::new(base.plant.clone())?;
                let trace = run_loop(gains, &mut plant, &commands, base.control_rate_hz)?;
                let p_d: Vec<f64> = trace.iter().map(|r| r.p_d_kpa).collect();
                let p_h: Vec<f64> = trace.iter().map(|r| r.p_h_kpa).collect();
                let cycles = segment_cycles(&p_d, base.segment_threshold)?;
                let objective = if cycles.is_empty() {
                    rmse(&p_d, &p_h).map_err(HarnessError::from)?
                } else {
                    let per: Vec<f64> = cycles
                        .iter()
                        .map(|r| rmse(&p_d[r.clone()], &p_h[r.clone()]))
                        .collect::<Result<_, _>>()
                        .map_err(HarnessError::from)?;
                    mean(&per)
                };
                if best.as_ref().is_none_or(|(obj, _)| objective < *obj) {
                    best = Some((objective, gains));
                }
            }
        }
    }
    match best {
        Some((objective_rmse, gains)) => Ok(TuneOutcome {
            gains,
            objective_rmse,
            evaluated,
            feasible,
        }),
        None => Err(HarnessError::NoFeasibleGains.into()),
    }
}
