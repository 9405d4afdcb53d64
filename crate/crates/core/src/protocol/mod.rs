//! The split-inference protocol: the client runs head and tail, the server
//! runs the middle, and hidden states cross the wire as truncated SVD factors.

mod client;
mod config;
mod packet;
mod server;
mod sim;
mod trace;
mod transport;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::model::ModelError;
use crate::shard::ShardError;

pub(crate) use client::expect_reply;
pub use client::{client_generate, pipeline_generate, reprivatize, PfidClient};
pub use config::PfidConfig;
pub use packet::{
    decode_packet, encode_dense, encode_error, encode_packet, packet_len, Packet, PacketError,
    PacketRole, Payload, HEADER_LEN, PACKET_MAGIC, PACKET_VERSION,
};
pub use server::{MiddleServer, ERR_INTERNAL, ERR_MALFORMED, ERR_ROLE, ERR_SHAPE};
pub use sim::{run_local_sim, SimOutcome};
pub(crate) use trace::{decode_loop, last_logits, StepOutput};
pub use trace::{CommLedger, CommRecord, GenerationTrace, StepRecord};
pub use transport::{
    read_frame, serve_middle, write_frame, CapturingTransport, InMemoryTransport, ServerHandle,
    TcpTransport, Transport, TransportError, MAX_FRAME,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("step {step}: transport failure: {source}")]
    Transport {
        step: usize,
        #[source]
        source: TransportError,
    },
    #[error("step {step}: malformed packet: {source}")]
    Packet {
        step: usize,
        #[source]
        source: PacketError,
    },
    #[error("step {step}: server error {code}: {message}")]
    Remote {
        step: usize,
        code: u32,
        message: String,
    },
    #[error("step {step}: stream out of sync: {detail}")]
    Desync { step: usize, detail: String },
    #[error("expected a {}x{} state, got {}x{}", expected.0, expected.1, found.0, found.1)]
    Shape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Shard(#[from] ShardError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}
