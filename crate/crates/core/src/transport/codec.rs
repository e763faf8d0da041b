//! Binary wire format for EMG frames.
//!
//! Layout (header integers big-endian, payload floats little-endian):
//!
//! ```text
//! offset size field
//!      0    4 magic "EMGP"
//!      4    1 version (= 1)
//!      5    1 channel_id
//!      6    2 flags (reserved, 0 in v1)
//!      8    8 seq
//!     16    8 t_start_us
//!     24    4 sample rate in millihertz
//!     28    2 n_samples
//!     30   4n payload: n_samples f32 little-endian
//! 30+4n    4 crc32 (IEEE) over all preceding bytes
//! ```
//!
//! Total length: 34 + 4 * n_samples bytes. Every decode failure is a
//! distinct error; a frame with any corrupted byte never decodes.

use thiserror::Error;

use crate::dsp::EmgFrame;

pub const MAGIC: [u8; 4] = *b"EMGP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
pub const OVERHEAD_LEN: usize = HEADER_LEN + 4;
pub const MAX_SAMPLES: usize = u16::MAX as usize;

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("frame too large: {0} samples exceeds {MAX_SAMPLES}")]
    Oversize(usize),
    #[error("sample rate {0} Hz not representable in millihertz")]
    UnencodableRate(f64),
    #[error("truncated: need at least {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("length mismatch: header declares {declared} samples ({expected} bytes), buffer has {got}")]
    LengthMismatch {
        declared: usize,
        expected: usize,
        got: usize,
    },
    #[error("crc mismatch: stored {stored:08x}, computed {computed:08x}")]
    CrcMismatch { stored: u32, computed: u32 },
}

pub fn encoded_len(n_samples: usize) -> usize {
    OVERHEAD_LEN + 4 * n_samples
}

/// Serialize a frame to the exact wire layout.
pub fn encode_frame(frame: &EmgFrame) -> Result<Vec<u8>, CodecError> {
    if frame.samples.len() > MAX_SAMPLES {
        return Err(CodecError::Oversize(frame.samples.len()));
    }
    let rate_mhz = frame.sample_rate_hz * 1000.0;
    let rate_bits = rate_mhz.round();
    if !(rate_bits >= 0.0 && rate_bits <= f64::from(u32::MAX)) || rate_bits / 1000.0 != frame.sample_rate_hz
    {
        return Err(CodecError::UnencodableRate(frame.sample_rate_hz));
    }

    let mut buf = Vec::with_capacity(encoded_len(frame.samples.len()));
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(frame.channel_id);
    buf.extend_from_slice(&0u16.to_be_bytes());
    buf.extend_from_slice(&frame.seq.to_be_bytes());
    buf.extend_from_slice(&frame.t_start_us.to_be_bytes());
    buf.extend_from_slice(&(rate_bits as u32).to_be_bytes());
    buf.extend_from_slice(&(frame.samples.len() as u16).to_be_bytes());
    for s in &frame.samples {
        buf.extend_from_slice(&s.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_be_bytes());
    Ok(buf)
}

/// Parse and validate one frame from an exact buffer.
pub fn decode_frame(bytes: &[u8]) -> Result<EmgFrame, CodecError> {
    if bytes.len() < OVERHEAD_LEN {
        return Err(CodecError::Truncated {
            needed: OVERHEAD_LEN,
            got: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("length checked");
    if magic != MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(CodecError::UnsupportedVersion(bytes[4]));
    }
    let n = u16::from_be_bytes(bytes[28..30].try_into().expect("length checked")) as usize;
    let expected = encoded_len(n);
    if bytes.len() != expected {
        return Err(CodecError::LengthMismatch {
            declared: n,
            expected,
            got: bytes.len(),
        });
    }
    let stored = u32::from_be_bytes(bytes[expected - 4..].try_into().expect("length checked"));
    let computed = crc32fast::hash(&bytes[..expected - 4]);
    if stored != computed {
        return Err(CodecError::CrcMismatch { stored, computed });
    }

    let seq = u64::from_be_bytes(bytes[8..16].try_into().expect("length checked"));
    let t_start_us = u64::from_be_bytes(bytes[16..24].try_into().expect("length checked"));
    let rate_mhz = u32::from_be_bytes(bytes[24..28].try_into().expect("length checked"));
    let samples = bytes[HEADER_LEN..HEADER_LEN + 4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunks of 4")))
        .collect();
    Ok(EmgFrame {
        channel_id: bytes[5],
        seq,
        t_start_us,
        sample_rate_hz: f64::from(rate_mhz) / 1000.0,
        samples,
    })
}
