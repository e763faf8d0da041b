//! Reliable stream transport: a sensor-side sender feeding a
//! rendering-side receiver over TCP with length-delimited frames.
//!
//! Drops and delays are never a property of the socket; they are injected
//! explicitly by the impairment layer on the receive side.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::time::{Duration, Instant};

use thiserror::Error;

use super::codec::{self, CodecError};
use super::impair::{Delivery, ImpairmentConfig, ImpairmentSim};
use crate::dsp::EmgFrame;

/// Environment variable overriding the receiver listen address.
pub const LISTEN_ADDR_ENV: &str = "EMGPRESS_LISTEN_ADDR";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connect to {endpoint}: {source}")]
    Connect {
        endpoint: String,
        source: std::io::Error,
    },
    #[error("bind {endpoint}: {source}")]
    Bind {
        endpoint: String,
        source: std::io::Error,
    },
    #[error("stream closed mid-frame after {frames_ok} frames")]
    TruncatedStream { frames_ok: u64 },
    #[error("send failed after {frames_sent} frames ({bytes_sent} bytes): {source}")]
    SendFailed {
        frames_sent: u64,
        bytes_sent: u64,
        source: std::io::Error,
    },
    #[error("oversized frame announced: {0} bytes")]
    OversizedAnnounce(u32),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// Sleep so frames go out on their capture-timestamp schedule.
    RealTime,
    AsFastAsPossible,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SendReport {
    pub frames_sent: u64,
    pub bytes_sent: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiveReport {
    pub frames_received: u64,
    pub malformed: u64,
    /// Missing seq numbers observed in the received stream, per channel.
    pub gap_count: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub latency_mean_ms: Option<f64>,
    pub latency_min_ms: Option<f64>,
    pub latency_max_ms: Option<f64>,
}

const MAX_WIRE_LEN: u32 = (codec::OVERHEAD_LEN + 4 * codec::MAX_SAMPLES) as u32;

/// Stream frames to a receiver. Frames go out in input order with a
/// 4-byte big-endian length prefix each.
pub fn run_sender(
    frames: &[EmgFrame],
    endpoint: &str,
    pacing: Pacing,
) -> Result<SendReport, TransportError> {
    let stream = TcpStream::connect(endpoint).map_err(|source| TransportError::Connect {
        endpoint: endpoint.to_string(),
        source,
    })?;
    stream.set_nodelay(true)?;
    let mut out = BufWriter::new(stream);
    let mut report = SendReport::default();

    let start = Instant::now();
    let t0_us = frames.first().map_or(0, |f| f.t_start_us);
    for frame in frames {
        if pacing == Pacing::RealTime {
            let due = Duration::from_micros(frame.t_start_us.saturating_sub(t0_us));
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
        let bytes = codec::encode_frame(frame)?;
        out.write_all(&(bytes.len() as u32).to_be_bytes())?;
        out.write_all(&bytes)?;
        report.frames_sent += 1;
        report.bytes_sent += 4 + bytes.len() as u64;
    }
    out.flush()?;
    Ok(report)
}

/// Bind a listener, honoring the env var override.
pub fn bind_listener(endpoint: &str) -> Result<TcpListener, TransportError> {
    let addr = std::env::var(LISTEN_ADDR_ENV).unwrap_or_else(|_| endpoint.to_string());
    TcpListener::bind(&addr).map_err(|source| TransportError::Bind {
        endpoint: addr,
        source,
    })
}

/// Accept one sender connection and consume its stream to EOF, applying
/// the impairment layer before handing each surviving frame to `sink`.
///
/// Malformed frames are counted and skipped; the length prefix keeps the
/// stream in sync. With reordering enabled, deliveries are flushed to the
/// sink in delivery-time order at end of stream.
pub fn serve_once(
    listener: &TcpListener,
    impair: &ImpairmentConfig,
    mut sink: impl FnMut(&Delivery),
) -> Result<ReceiveReport, TransportError> {
    let (stream, _peer) = listener.accept().map_err(TransportError::Io)?;
    let mut input = BufReader::new(stream);
    let mut sim = ImpairmentSim::new(impair.clone())
        .map_err(|e| std::io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;

    let mut report = ReceiveReport::default();
    let mut last_seq: Vec<(u8, u64)> = Vec::new();
    let mut deliveries: Vec<Delivery> = Vec::new();

    loop {
        let mut len_buf = [0u8; 4];
        match read_exact_or_eof(&mut input, &mut len_buf)? {
            ReadOutcome::Eof => break,
            ReadOutcome::Partial => {
                return Err(TransportError::TruncatedStream {
                    frames_ok: report.frames_received,
                })
            }
            ReadOutcome::Full => {}
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_WIRE_LEN {
            return Err(TransportError::OversizedAnnounce(len));
        }
        let mut payload = vec![0u8; len as usize];
        input.read_exact(&mut payload).map_err(|_| {
            TransportError::TruncatedStream {
                frames_ok: report.frames_received,
            }
        })?;

        let frame = match codec::decode_frame(&payload) {
            Ok(f) => f,
            Err(_) => {
                report.malformed += 1;
                continue;
            }
        };
        report.frames_received += 1;
        match last_seq.iter_mut().find(|(c, _)| *c == frame.channel_id) {
            Some((_, prev)) => {
                if frame.seq > *prev + 1 {
                    report.gap_count += frame.seq - *prev - 1;
                }
                *prev = frame.seq;
            }
            None => last_seq.push((frame.channel_id, frame.seq)),
        }

        if let Some(d) = sim.offer(frame) {
            if impair.reorder {
                deliveries.push(d);
            } else {
                sink(&d);
                deliveries.push(d);
            }
        }
    }

    if impair.reorder {
        deliveries.sort_by_key(|d| d.delivered_us);
        for d in &deliveries {
            sink(d);
        }
    }

    report.delivered = sim.stats().delivered;
    report.dropped = sim.stats().dropped;
    if let Some((mean, lo, hi)) = super::impair::latency_stats_ms(&deliveries) {
        report.latency_mean_ms = Some(mean);
        report.latency_min_ms = Some(lo);
        report.latency_max_ms = Some(hi);
    }
    Ok(report)
}

enum ReadOutcome {
    Full,
    Eof,
    Partial,
}

/// Read exactly `buf.len()` bytes, distinguishing a clean EOF at a frame
/// boundary from a mid-prefix truncation.
fn read_exact_or_eof(input: &mut impl Read, buf: &mut [u8]) -> Result<ReadOutcome, TransportError> {
    let mut filled = 0;
    while filled < buf.len() {
        match input.read(&mut buf[filled..]) {
            Ok(0) => {
                return Ok(if filled == 0 {
                    ReadOutcome::Eof
                } else {
                    ReadOutcome::Partial
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(TransportError::Io(e)),
        }
    }
    Ok(ReadOutcome::Full)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: u64) -> Vec<EmgFrame> {
        (0..n)
            .map(|seq| EmgFrame {
                channel_id: 1,
                seq,
                t_start_us: seq * 32_000,
                sample_rate_hz: 2000.0,
                samples: (0..64).map(|i| (seq as f32 + i as f32) * 0.01).collect(),
            })
            .collect()
    }

    fn loopback_run(
        frames_in: Vec<EmgFrame>,
        impair: ImpairmentConfig,
    ) -> (SendReport, ReceiveReport, Vec<EmgFrame>) {
        let listener = bind_listener("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let receiver = std::thread::spawn(move || {
            let mut got = Vec::new();
            let report = serve_once(&listener, &impair, |d| got.push(d.frame.clone())).unwrap();
            (report, got)
        });
        let send_report = run_sender(&frames_in, &addr, Pacing::AsFastAsPossible).unwrap();
        let (recv_report, got) = receiver.join().unwrap();
        (send_report, recv_report, got)
    }

    #[test]
    fn clean_loopback_preserves_every_frame() {
        let input = frames(1000);
        let (sent, recv, got) = loopback_run(input.clone(), ImpairmentConfig::default());
        assert_eq!(sent.frames_sent, 1000);
        assert_eq!(recv.frames_received, 1000);
        assert_eq!(recv.gap_count, 0);
        assert_eq!(recv.malformed, 0);
        assert_eq!(got, input);
    }

    #[test]
    fn empty_source_shuts_down_cleanly() {
        let (sent, recv, got) = loopback_run(vec![], ImpairmentConfig::default());
        assert_eq!(sent.frames_sent, 0);
        assert_eq!(recv.frames_received, 0);
        assert!(got.is_empty());
    }

    #[test]
    fn absent_receiver_is_a_connect_error() {
        // Bind and immediately drop to get a port nobody listens on.
        let port = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let err = run_sender(&frames(1), &format!("127.0.0.1:{port}"), Pacing::AsFastAsPossible);
        assert!(matches!(err, Err(TransportError::Connect { .. })));
    }

    #[test]
    fn corrupted_frame_is_skipped_and_counted() {
        let listener = bind_listener("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let impair = ImpairmentConfig::default();
        let receiver = std::thread::spawn(move || {
            let mut got = Vec::new();
            let report = serve_once(&listener, &impair, |d| got.push(d.frame.clone())).unwrap();
            (report, got)
        });

        let mut stream = TcpStream::connect(&addr).unwrap();
        let good = frames(3);
        for (i, frame) in good.iter().enumerate() {
            let mut bytes = codec::encode_frame(frame).unwrap();
            if i == 1 {
                bytes[10] ^= 0xFF;
            }
            stream.write_all(&(bytes.len() as u32).to_be_bytes()).unwrap();
            stream.write_all(&bytes).unwrap();
        }
        drop(stream);

        let (report, got) = receiver.join().unwrap();
        assert_eq!(report.frames_received, 2);
        assert_eq!(report.malformed, 1);
        assert_eq!(report.gap_count, 1);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn env_var_overrides_listen_address() {
        // Point the env override at a loopback ephemeral bind and confirm
        // the requested (bogus) endpoint is ignored.
        std::env::set_var(LISTEN_ADDR_ENV, "127.0.0.1:0");
        let listener = bind_listener("203.0.113.1:9").unwrap();
        assert!(listener.local_addr().unwrap().ip().is_loopback());
        std::env::remove_var(LISTEN_ADDR_ENV);
    }
}
