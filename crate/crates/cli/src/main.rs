//! Single entry point exposing every pipeline stage as a subcommand.
//!
//! Exit codes: 0 success, 1 acceptance check failed, 2 usage/config
//! error, 3 transport error. Diagnostics go to stderr; data goes to
//! files under the output directory or to stdout.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use emgpress_core::config::AppConfig;
use emgpress_core::dsp::{self, design_bandpass, io as emg_io};
use emgpress_core::harness::{
    self, evaluate_pressure_traces, generate_emg, meets_default_thresholds,
    meets_ideal_thresholds, run_experiment, tune_pid, EvalReport, ExperimentRow, TuneGrid,
    TRACE_CSV_HEADER,
};
use emgpress_core::transport::{bind_listener, run_sender, serve_once, Pacing};
use emgpress_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "emgpress", version, about = "EMG-driven vacuum-pressure haptics pipeline")]
struct Cli {
    /// Flat key = value config file; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set pid.kp=2.5
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Master seed; fans out to protocol, plant and impairment seeds
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for output files (created if absent)
    #[arg(long, default_value = "out", global = true)]
    output_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the bandpass filter and print coefficients and band gains
    FilterDesign {
        /// Sample rate in Hz
        #[arg(long)]
        fs: f64,
        /// Passband as low:high in Hz, e.g. 10:500
        #[arg(long)]
        band: String,
        /// Lowpass prototype order (even)
        #[arg(long, default_value_t = 4)]
        order: u32,
    },
    /// Generate a synthetic effort-protocol EMG recording
    Gen {
        /// Recording CSV to write
        #[arg(long, default_value = "recording.csv")]
        out: PathBuf,
        /// Also write the exact modulation envelope
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Extract a normalized activation envelope from a recording
    Process {
        /// Input recording CSV (t_us,channel,value_mv)
        #[arg(long)]
        input: PathBuf,
        /// Activation CSV to write
        #[arg(long, default_value = "activation.csv")]
        out: PathBuf,
        /// Channel to process when the recording has several
        #[arg(long)]
        channel: Option<u8>,
        /// Derive MVC from a calibration recording instead of the config
        #[arg(long)]
        mvc_calibration: Option<PathBuf>,
    },
    /// Run the full closed-loop experiment; write report and trace
    Simulate {
        /// Exit 1 unless the tracking thresholds are met
        #[arg(long)]
        check: bool,
        /// Near-ideal preset: noise/delay-free plant, slow envelope,
        /// generous gains, tighter thresholds
        #[arg(long)]
        ideal: bool,
    },
    /// Score an existing trace CSV (per-cycle RMSE and Pearson r)
    Evaluate {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        check: bool,
        #[arg(long)]
        ideal: bool,
    },
    /// Stream a recording to a receiver endpoint
    Send {
        /// Receiver endpoint host:port
        #[arg(long)]
        to: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = PacingArg::Fast)]
        pacing: PacingArg,
        /// Samples per wire frame
        #[arg(long, default_value_t = 64)]
        frame_len: usize,
    },
    /// Receive one sender stream, apply link impairment, capture frames
    Receive {
        /// Listen endpoint host:port (EMGPRESS_LISTEN_ADDR overrides)
        #[arg(long, default_value = "127.0.0.1:7870")]
        listen: String,
        /// Capture CSV for delivered frames
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid-search PID gains on the configured scenario
    Tune {
        /// Skip the step-response feasibility filter
        #[arg(long)]
        unconstrained: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PacingArg {
    Realtime,
    Fast,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CoreError::Transport(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<AppConfig, CoreError> {
    let ideal = matches!(
        cli.command,
        Command::Simulate { ideal: true, .. } | Command::Evaluate { ideal: true, .. }
    );
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::parse(&fs::read_to_string(path)?).map_err(CoreError::Config)?,
        None if ideal => AppConfig::ideal(),
        None => AppConfig::default(),
    };
    for pair in &cli.overrides {
        let (key, value) =
            pair.split_once('=')
                .ok_or_else(|| emgpress_core::config::ConfigError::Malformed {
                    line: 0,
                    text: pair.clone(),
                })?;
        cfg.set(key.trim(), value.trim()).map_err(CoreError::Config)?;
    }
    if let Some(seed) = cli.seed {
        cfg.apply_master_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, CoreError> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::FilterDesign { fs, band, order } => {
            let (lo, hi) = band
                .split_once(':')
                .and_then(|(a, b)| Some((a.parse::<f64>().ok()?, b.parse::<f64>().ok()?)))
                .ok_or_else(|| emgpress_core::config::ConfigError::BadValue {
                    key: "--band".into(),
                    msg: format!("expected low:high, got `{band}`"),
                })?;
            let design_cfg = dsp::SignalConfig {
                sample_rate_hz: *fs,
                band_low_hz: lo,
                band_high_hz: hi,
                prototype_order: *order,
                ..cfg.signal
            };
            let cascade = design_bandpass(&design_cfg)?;
            println!("# biquad sections (b0 b1 b2 | a1 a2)");
            for (i, s) in cascade.sections().iter().enumerate() {
                println!("section {i}: {} {} {} | {} {}", s.b0, s.b1, s.b2, s.a1, s.a2);
            }
            println!("# magnitude response");
            let center = (lo * hi).sqrt();
            for (label, f) in [
                ("1 Hz", 1.0),
                ("band low", lo),
                ("geometric center", center),
                ("band high", hi),
                ("0.99 Nyquist", 0.99 * fs / 2.0),
            ] {
                println!("{label} ({f} Hz): {:.4} dB", cascade.magnitude_db(f));
            }
            println!("stable = {}", cascade.is_stable());
            Ok(ExitCode::SUCCESS)
        }

        Command::Gen { out, truth } => {
            fs::create_dir_all(&cli.output_dir)?;
            let generated =
                generate_emg(&cfg.protocol, cfg.signal.sample_rate_hz, cfg.signal.mvc_value)?;
            let rec = frames_to_recording(&generated.frames);
            let path = cli.output_dir.join(out);
            let mut file = fs::File::create(&path)?;
            emg_io::write_emg_csv(&mut file, std::slice::from_ref(&rec), cfg.signal.sample_rate_hz)?;
            eprintln!(
                "wrote {} samples ({} frames) to {}",
                rec.samples.len(),
                generated.frames.len(),
                path.display()
            );
            if let Some(truth_name) = truth {
                let path = cli.output_dir.join(truth_name);
                let mut file = fs::File::create(&path)?;
                writeln!(file, "t_us,envelope")?;
                for (i, e) in generated.ground_truth.iter().enumerate() {
                    let t = (i as f64 * 1.0e6 / cfg.signal.sample_rate_hz).round() as u64;
                    writeln!(file, "{t},{e}")?;
                }
                eprintln!("wrote ground-truth envelope to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Process {
            input,
            out,
            channel,
            mvc_calibration,
        } => {
            fs::create_dir_all(&cli.output_dir)?;
            let mut signal_cfg = cfg.signal.clone();
            let channels = emg_io::read_emg_csv_file(input)?;
            let rec = match channel {
                Some(id) => channels.iter().find(|c| c.channel_id == *id).ok_or_else(|| {
                    dsp::DspError::InvalidArgument(format!("channel {id} not in recording"))
                })?,
                None if channels.len() == 1 => &channels[0],
                None => {
                    return Err(dsp::DspError::InvalidArgument(format!(
                        "recording has {} channels; pick one with --channel",
                        channels.len()
                    ))
                    .into())
                }
            };
            if let Some(cal_path) = mvc_calibration {
                let cal = emg_io::read_emg_csv_file(cal_path)?;
                let cal_rec = cal
                    .iter()
                    .find(|c| c.channel_id == rec.channel_id)
                    .unwrap_or(&cal[0]);
                let frames = emg_io::frames_from_channel(cal_rec, signal_cfg.sample_rate_hz, 256);
                signal_cfg.mvc_value = dsp::calibrate_mvc(&frames, &signal_cfg)?;
                eprintln!("calibrated mvc_value = {}", signal_cfg.mvc_value);
            }
            let frames = emg_io::frames_from_channel(rec, signal_cfg.sample_rate_hz, 256);
            let activation = dsp::process_pipeline(&frames, &signal_cfg)?;
            let path = cli.output_dir.join(out);
            let mut file = fs::File::create(&path)?;
            emg_io::write_activation_csv(&mut file, &activation)?;
            eprintln!(
                "wrote {} activation samples to {}",
                activation.len(),
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Simulate { check, ideal } => {
            fs::create_dir_all(&cli.output_dir)?;
            let run = run_experiment(&cfg)?;
            let report_path = cli.output_dir.join("report.txt");
            fs::write(&report_path, run.report.to_text())?;
            let trace_path = cli.output_dir.join("trace.csv");
            let mut file = fs::File::create(&trace_path)?;
            harness::write_trace_csv(&mut file, &run.trace)?;
            let config_path = cli.output_dir.join("config.txt");
            fs::write(&config_path, cfg.to_text())?;
            print!("{}", run.report.to_text());
            eprintln!(
                "wrote {}, {}, {}",
                report_path.display(),
                trace_path.display(),
                config_path.display()
            );
            Ok(check_code(*check, *ideal, &run.report))
        }

        Command::Evaluate { trace, check, ideal } => {
            let rows = read_trace_csv(trace)?;
            let p_d: Vec<f64> = rows.iter().map(|r| r.p_d_kpa).collect();
            let p_h: Vec<f64> = rows.iter().map(|r| r.p_h_kpa).collect();
            let report = evaluate_pressure_traces(&p_d, &p_h, &cfg, None)?;
            print!("{}", report.to_text());
            Ok(check_code(*check, *ideal, &report))
        }

        Command::Send {
            to,
            input,
            pacing,
            frame_len,
        } => {
            let channels = emg_io::read_emg_csv_file(input)?;
            let mut frames = Vec::new();
            for rec in &channels {
                frames.extend(emg_io::frames_from_channel(
                    rec,
                    cfg.signal.sample_rate_hz,
                    *frame_len,
                ));
            }
            frames.sort_by_key(|f| (f.t_start_us, f.channel_id));
            let pacing = match pacing {
                PacingArg::Realtime => Pacing::RealTime,
                PacingArg::Fast => Pacing::AsFastAsPossible,
            };
            let report = run_sender(&frames, to, pacing)?;
            println!("frames_sent = {}", report.frames_sent);
            println!("bytes_sent = {}", report.bytes_sent);
            Ok(ExitCode::SUCCESS)
        }

        Command::Receive { listen, out } => {
            fs::create_dir_all(&cli.output_dir)?;
            let listener = bind_listener(listen)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let mut captured: Vec<dsp::EmgFrame> = Vec::new();
            let report = serve_once(&listener, &cfg.impair, |d| captured.push(d.frame.clone()))?;
            if let Some(out_name) = out {
                let path = cli.output_dir.join(out_name);
                let mut file = fs::File::create(&path)?;
                write_capture_csv(&mut file, &captured)?;
                eprintln!("captured {} frames to {}", captured.len(), path.display());
            }
            println!("frames_received = {}", report.frames_received);
            println!("malformed = {}", report.malformed);
            println!("gap_count = {}", report.gap_count);
            println!("delivered = {}", report.delivered);
            println!("dropped = {}", report.dropped);
            match (report.latency_mean_ms, report.latency_min_ms, report.latency_max_ms) {
                (Some(mean), Some(lo), Some(hi)) => {
                    println!("latency_mean_ms = {mean}");
                    println!("latency_min_ms = {lo}");
                    println!("latency_max_ms = {hi}");
                }
                _ => println!("latency_mean_ms = n/a"),
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Tune { unconstrained } => {
            let outcome = tune_pid(&TuneGrid::default_grid(), &cfg, !unconstrained)?;
            println!("pid.kp = {}", outcome.gains.kp);
            println!("pid.ki = {}", outcome.gains.ki);
            println!("pid.kd = {}", outcome.gains.kd);
            println!("objective_rmse_kpa = {}", outcome.objective_rmse);
            println!("evaluated = {}", outcome.evaluated);
            println!("feasible = {}", outcome.feasible);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn check_code(check: bool, ideal: bool, report: &EvalReport) -> ExitCode {
    if !check {
        return ExitCode::SUCCESS;
    }
    let pass = if ideal {
        meets_ideal_thresholds(report)
    } else {
        meets_default_thresholds(report)
    };
    if pass {
        eprintln!("check: PASS");
        ExitCode::SUCCESS
    } else {
        eprintln!("check: FAIL");
        ExitCode::from(1)
    }
}

fn frames_to_recording(frames: &[dsp::EmgFrame]) -> emg_io::ChannelRecording {
    emg_io::ChannelRecording {
        channel_id: frames.first().map_or(0, |f| f.channel_id),
        t0_us: frames.first().map_or(0, |f| f.t_start_us),
        samples: frames.iter().flat_map(|f| f.samples.iter().copied()).collect(),
    }
}

fn write_capture_csv(out: &mut impl Write, frames: &[dsp::EmgFrame]) -> Result<(), CoreError> {
    writeln!(out, "{}", emg_io::EMG_CSV_HEADER)?;
    for f in frames {
        for (i, v) in f.samples.iter().enumerate() {
            let t = f.t_start_us + (i as f64 * 1.0e6 / f.sample_rate_hz).round() as u64;
            writeln!(out, "{t},{},{v}", f.channel_id)?;
        }
    }
    Ok(())
}

fn read_trace_csv(path: &Path) -> Result<Vec<ExperimentRow>, CoreError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default().trim();
    if header != TRACE_CSV_HEADER {
        return Err(dsp::DspError::Csv(format!(
            "expected header `{TRACE_CSV_HEADER}`, got `{header}`"
        ))
        .into());
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 6 {
            return Err(
                dsp::DspError::Csv(format!("trace line {}: expected 6 fields", i + 2)).into(),
            );
        }
        let num = |s: &str| -> Result<f64, CoreError> {
            s.parse()
                .map_err(|e| dsp::DspError::Csv(format!("trace line {}: {e}", i + 2)).into())
        };
        rows.push(ExperimentRow {
            t_us: fields[0]
                .parse()
                .map_err(|e| dsp::DspError::Csv(format!("trace line {}: {e}", i + 2)))?,
            activation: num(fields[1])?,
            p_d_kpa: num(fields[2])?,
            p_h_kpa: num(fields[3])?,
            u: num(fields[4])?,
            force_n: num(fields[5])?,
        });
    }
    Ok(rows)
}
