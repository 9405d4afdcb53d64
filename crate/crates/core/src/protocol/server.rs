use crate::linalg::{add_noise, ratio_to_rank, truncated_svd, Matrix};
use crate::shard::MiddleShard;

use super::config::{step_seed, CHANNEL_DOWN, CHANNEL_NOISE};
use super::packet::{decode_packet, encode_dense, encode_error, encode_packet, PacketRole};
use super::PfidConfig;

/// Error codes carried in error packets.
pub const ERR_MALFORMED: u32 = 1;
pub const ERR_ROLE: u32 = 2;
pub const ERR_SHAPE: u32 = 3;
pub const ERR_INTERNAL: u32 = 4;

/// The server side of the protocol: owns the middle shard and nothing else.
/// Stateless between requests, so one instance can serve many sessions.
#[derive(Debug)]
pub struct MiddleServer {
    shard: MiddleShard,
    config: PfidConfig,
}

impl MiddleServer {
    pub fn new(shard: MiddleShard, config: PfidConfig) -> Self {
        Self { shard, config }
    }

    pub fn config(&self) -> &PfidConfig {
        &self.config
    }

    /// Answers one request packet. Every failure becomes an error packet.
    pub fn handle(&self, request: &[u8]) -> Vec<u8> {
        let packet = match decode_packet(request) {
            Ok(p) => p,
            Err(e) => return encode_error(ERR_MALFORMED, &e.to_string(), 0),
        };
        let step = packet.step;
        if packet.role != PacketRole::ClientToServer {
            return encode_error(
                ERR_ROLE,
                &format!("expected a client packet, got {:?}", packet.role),
                step,
            );
        }
        let model = self.shard.config();
        let (d, n) = packet.state_shape().expect("role checked above");
        if d != model.d_model || n > model.max_seq {
            return encode_error(
                ERR_SHAPE,
                &format!(
                    "state is {d}x{n}; this server takes {} rows and at most {} columns",
                    model.d_model, model.max_seq
                ),
                step,
            );
        }
        let h = packet.reconstruct().expect("role checked above");
        match self.process(&h, step) {
            Ok(reply) => reply,
            Err(msg) => encode_error(ERR_INTERNAL, &msg, step),
        }
    }

    fn process(&self, h: &Matrix, step: u32) -> Result<Vec<u8>, String> {
        let cfg = &self.config;
        let seed = |channel| step_seed(cfg.seed, step as usize, channel);
        let h = add_noise(h, cfg.noise_sigma, seed(CHANNEL_NOISE)).map_err(|e| e.to_string())?;
        let mid = self.shard.forward(&h).map_err(|e| e.to_string())?;
        if cfg.ptail == 0.0 && cfg.bypass_svd_at_zero {
            return Ok(encode_dense(&mid, PacketRole::ServerToClient, step));
        }
        let (d, n) = mid.shape();
        let k = ratio_to_rank(cfg.ptail, d, n).map_err(|e| e.to_string())?;
        let f = truncated_svd(&mid, k, seed(CHANNEL_DOWN)).map_err(|e| e.to_string())?;
        Ok(encode_packet(&f, PacketRole::ServerToClient, step))
    }
}
