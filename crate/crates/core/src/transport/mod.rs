//! Framed EMG transport: wire codec, link impairment, TCP sender/receiver.

pub mod codec;
pub mod impair;
pub mod net;

pub use codec::{decode_frame, encode_frame, CodecError};
pub use impair::{Delivery, ImpairError, ImpairmentConfig, ImpairmentSim};
pub use net::{
    bind_listener, run_sender, serve_once, Pacing, ReceiveReport, SendReport, TransportError,
    LISTEN_ADDR_ENV,
};
