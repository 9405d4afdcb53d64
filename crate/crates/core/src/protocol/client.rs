use crate::linalg::{ratio_to_rank, truncated_svd, Matrix};
use crate::model::{TokenId, Tokenizer, TransformerModel};
use crate::shard::ClientShards;

use super::config::{step_seed, CHANNEL_UP};
use super::packet::{decode_packet, encode_dense, encode_packet, Packet, PacketRole, Payload};
use super::trace::{decode_loop, last_logits, CommRecord, StepOutput};
use super::{GenerationTrace, PfidConfig, ProtocolError, Transport};

/// `Ĥ_mid + Ω·H_head`. `Ω = 0` returns `Ĥ_mid` unchanged.
pub fn reprivatize(
    h_mid_hat: &Matrix,
    h_head: &Matrix,
    omega: f64,
) -> Result<Matrix, ProtocolError> {
    if h_mid_hat.shape() != h_head.shape() {
        return Err(ProtocolError::Shape {
            expected: h_mid_hat.shape(),
            found: h_head.shape(),
        });
    }
    if omega == 0.0 {
        return Ok(h_mid_hat.clone());
    }
    Ok(h_mid_hat.add_scaled(h_head, omega)?)
}

/// The client side: head and tail shards plus the protocol configuration.
pub struct PfidClient {
    shards: ClientShards,
    config: PfidConfig,
    tokenizer: Tokenizer,
}

impl PfidClient {
    pub fn new(
        shards: ClientShards,
        config: PfidConfig,
        tokenizer: Tokenizer,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        if config.spec != shards.spec {
            return Err(ProtocolError::Config(format!(
                "config layer range ({}, {}) does not match the shards' ({}, {})",
                config.spec.split_k, config.spec.split_n, shards.spec.split_k, shards.spec.split_n
            )));
        }
        Ok(Self {
            shards,
            config,
            tokenizer,
        })
    }

    pub fn config(&self) -> &PfidConfig {
        &self.config
    }

    pub fn shards(&self) -> &ClientShards {
        &self.shards
    }

    /// Encodes the head output for upload; returns the packet and its rank.
    pub fn upload_packet(
        &self,
        h_head: &Matrix,
        step: usize,
    ) -> Result<(Vec<u8>, usize), ProtocolError> {
        let cfg = &self.config;
        if cfg.phead == 0.0 && cfg.bypass_svd_at_zero {
            return Ok((
                encode_dense(h_head, PacketRole::ClientToServer, step as u32),
                0,
            ));
        }
        let (d, n) = h_head.shape();
        let k = ratio_to_rank(cfg.phead, d, n)?;
        let f = truncated_svd(h_head, k, step_seed(cfg.seed, step, CHANNEL_UP))?;
        Ok((
            encode_packet(&f, PacketRole::ClientToServer, step as u32),
            k,
        ))
    }

    /// One protocol round: head, upload, reply, re-privatization, tail.
    fn step(
        &self,
        transport: &mut dyn Transport,
        step: usize,
        tokens: &[TokenId],
    ) -> Result<StepOutput, ProtocolError> {
        let h_head = self.shards.head.forward(tokens)?;
        let (d, n) = h_head.shape();
        let (request, k_head) = self.upload_packet(&h_head, step)?;
        let reply = transport
            .exchange(&request)
            .map_err(|source| ProtocolError::Transport { step, source })?;
        let packet = expect_reply(&reply, step, (d, n))?;
        let h_mid = packet.reconstruct().expect("checked by expect_reply");
        let fused = reprivatize(&h_mid, &h_head, self.config.omega)?;
        let logits = last_logits(&self.shards.tail.forward(&fused)?);
        Ok(StepOutput {
            logits,
            k_head,
            k_tail: packet.rank(),
            bytes_up: request.len(),
            bytes_down: reply.len(),
            comm: Some(CommRecord {
                step,
                d,
                n,
                bytes_up: request.len(),
                bytes_down: reply.len(),
            }),
        })
    }

    pub fn generate(
        &self,
        transport: &mut dyn Transport,
        prompt: &str,
    ) -> Result<GenerationTrace, ProtocolError> {
        let max_seq = self.shards.config().max_seq;
        decode_loop(
            &self.tokenizer,
            prompt,
            &self.config,
            max_seq,
            |i, tokens| self.step(transport, i, tokens).map(Some),
        )
    }
}

/// Decodes a server reply and checks it answers `step` with a `d × n` state.
pub(crate) fn expect_reply(
    bytes: &[u8],
    step: usize,
    shape: (usize, usize),
) -> Result<Packet, ProtocolError> {
    let packet = decode_packet(bytes).map_err(|source| ProtocolError::Packet { step, source })?;
    if let Payload::Error { code, message } = packet.payload {
        return Err(ProtocolError::Remote {
            step,
            code,
            message,
        });
    }
    if packet.role != PacketRole::ServerToClient || packet.step as usize != step {
        return Err(ProtocolError::Desync {
            step,
            detail: format!("got a {:?} packet for step {}", packet.role, packet.step),
        });
    }
    let found = packet.state_shape().expect("not an error packet");
    if found != shape {
        return Err(ProtocolError::Shape {
            expected: shape,
            found,
        });
    }
    Ok(packet)
}

/// Runs the client protocol for one prompt.
pub fn client_generate(
    shards: &ClientShards,
    transport: &mut dyn Transport,
    config: &PfidConfig,
    tokenizer: &Tokenizer,
    prompt: &str,
) -> Result<GenerationTrace, ProtocolError> {
    PfidClient::new(shards.clone(), *config, tokenizer.clone())?.generate(transport, prompt)
}

/// The unsplit, untruncated model with the same sampling settings.
pub fn pipeline_generate(
    model: &TransformerModel,
    tokenizer: &Tokenizer,
    config: &PfidConfig,
    prompt: &str,
) -> Result<GenerationTrace, ProtocolError> {
    config.sampling.validate().map_err(ProtocolError::Config)?;
    decode_loop(
        tokenizer,
        prompt,
        config,
        model.config.max_seq,
        |_, tokens| {
            Ok(Some(StepOutput::plain(last_logits(
                &model.forward(tokens)?,
            ))))
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reprivatize_cases() {
        let mid = Matrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let head = Matrix::from_fn(3, 2, |i, j| 1.0 - (i + j) as f64);
        assert_eq!(reprivatize(&mid, &head, 0.0).unwrap(), mid);
        assert_eq!(reprivatize(&Matrix::zeros(3, 2), &head, 1.0).unwrap(), head);
        let out = reprivatize(&mid, &head, 0.5).unwrap();
        assert_eq!(out.sub(&mid).unwrap(), head.scale(0.5));
        assert!(reprivatize(&mid, &Matrix::zeros(2, 3), 1.0).is_err());
    }
}
