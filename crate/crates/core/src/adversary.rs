//! What an interceptor, or the withheld residual, reveals.
//!
//! The eavesdropper holds copies of the public head and tail, the sampling
//! settings and the seed: everything except the client's full head output.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::model::{SamplingParams, TokenId, Tokenizer};
use crate::protocol::{
    decode_loop, decode_packet, expect_reply, last_logits, read_frame, reprivatize, write_frame,
    GenerationTrace, PacketRole, Payload, PfidConfig, ProtocolError, StepOutput, TransportError,
};
use crate::shard::{ClientShards, ShardedModel};

/// One captured request and its reply.
pub type Exchange = (Vec<u8>, Vec<u8>);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryMode {
    /// Decode the downstream state with the public tail alone.
    TailOnly,
    /// Also add `Ω·Ĥ_head` from the intercepted upstream packet.
    TailPlusInterceptedHead,
}

impl AdversaryMode {
    pub const ALL: [AdversaryMode; 2] = [Self::TailOnly, Self::TailPlusInterceptedHead];
}

fn desync(step: usize, detail: impl Into<String>) -> ProtocolError {
    ProtocolError::Desync {
        step,
        detail: detail.into(),
    }
}

/// The state an upstream packet stands for, checked to belong to `step`.
fn intercepted_head(request: &[u8], step: usize) -> Result<Matrix, ProtocolError> {
    let p = decode_packet(request).map_err(|source| ProtocolError::Packet { step, source })?;
    if p.role != PacketRole::ClientToServer || p.step as usize != step {
        return Err(desync(
            step,
            format!(
                "expected the client packet for step {step}, got {:?} step {}",
                p.role, p.step
            ),
        ));
    }
    Ok(p.reconstruct().expect("client packets carry a state"))
}

/// Replays a captured session through the public tail. `prompt` only labels
/// the trace; decoding uses nothing but the packets.
pub fn eavesdrop_generate(
    public: &ClientShards,
    exchanges: &[Exchange],
    mode: AdversaryMode,
    config: &PfidConfig,
    tokenizer: &Tokenizer,
    prompt: &str,
) -> Result<GenerationTrace, ProtocolError> {
    // Without a token budget of its own, the eavesdropper decodes one token
    // per intercepted exchange.
    let max_seq = usize::MAX;
    decode_loop(tokenizer, prompt, config, max_seq, |i, _| {
        let Some((request, reply)) = exchanges.get(i) else {
            return Ok(None);
        };
        let h_head = intercepted_head(request, i)?;
        let down = expect_reply(reply, i, h_head.shape()).map_err(|e| match e {
            ProtocolError::Shape { .. } => desync(i, e.to_string()),
            other => other,
        })?;
        let h_mid = down.reconstruct().expect("checked by expect_reply");
        let state = match mode {
            AdversaryMode::TailOnly => h_mid,
            AdversaryMode::TailPlusInterceptedHead => reprivatize(&h_mid, &h_head, config.omega)?,
        };
        Ok(Some(StepOutput::plain(last_logits(
            &public.tail.forward(&state)?,
        ))))
    })
}

/// The residual `H_head − Ĥ_head` withheld at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualStep {
    pub residual: Matrix,
    /// Frobenius norm of the full head output, for scale.
    pub head_norm: f64,
}

/// Residuals of a client session: for each step, the client's full head
/// output on its own token prefix minus what the upload packet carried.
pub fn residual_stream(
    client: &ClientShards,
    tokenizer: &Tokenizer,
    local: &GenerationTrace,
    exchanges: &[Exchange],
) -> Result<Vec<ResidualStep>, ProtocolError> {
    let mut tokens: Vec<TokenId> = tokenizer.encode(&local.prompt)?;
    let generated = local.tokens();
    let mut out = Vec::with_capacity(exchanges.len());
    for (i, (request, _)) in exchanges.iter().enumerate() {
        let h = client.head.forward(&tokens)?;
        let sent = intercepted_head(request, i)?;
        if sent.shape() != h.shape() {
            return Err(desync(i, "upload packet does not match the local prefix"));
        }
        out.push(ResidualStep {
            residual: h.sub(&sent)?,
            head_norm: h.frobenius_norm(),
        });
        if let Some(&t) = generated.get(i) {
            tokens.push(t);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemnantOutput {
    pub trace: GenerationTrace,
    /// `‖R‖ / ‖H_head‖` per step.
    pub relative_norms: Vec<f64>,
    /// Every residual is numerically zero, so the text carries no signal.
    pub empty: bool,
}

/// Relative residual size below which a remnant counts as empty.
pub const EMPTY_REMNANT_TOL: f64 = 1e-6;

/// Feeds each residual through middle and tail with `Ω = 0` and decodes greedily.
pub fn remnant_generate(
    model: &ShardedModel,
    residuals: &[ResidualStep],
    config: &PfidConfig,
    tokenizer: &Tokenizer,
    prompt: &str,
) -> Result<RemnantOutput, ProtocolError> {
    let cfg = PfidConfig {
        omega: 0.0,
        sampling: SamplingParams {
            greedy: true,
            ..config.sampling
        },
        ..*config
    };
    let trace = decode_loop(tokenizer, prompt, &cfg, usize::MAX, |i, _| {
        let Some(r) = residuals.get(i) else {
            return Ok(None);
        };
        let mid = model.middle_forward(&r.residual)?;
        Ok(Some(StepOutput::plain(last_logits(
            &model.tail_forward(&mid)?,
        ))))
    })?;
    let relative_norms: Vec<f64> = residuals
        .iter()
        .map(|r| r.residual.frobenius_norm() / r.head_norm.max(f64::MIN_POSITIVE))
        .collect();
    let empty = relative_norms.iter().all(|&x| x <= EMPTY_REMNANT_TOL);
    Ok(RemnantOutput {
        trace,
        relative_norms,
        empty,
    })
}

/// Capture file: the packets of a session in order, request then reply,
/// each prefixed by its `u32` little-endian length.
pub fn write_capture(exchanges: &[Exchange]) -> Vec<u8> {
    let mut out = Vec::new();
    for (request, reply) in exchanges {
        write_frame(&mut out, request).expect("in-memory writes cannot fail");
        write_frame(&mut out, reply).expect("in-memory writes cannot fail");
    }
    out
}

pub fn read_capture(bytes: &[u8]) -> Result<Vec<Exchange>, TransportError> {
    let mut r = bytes;
    let mut out = Vec::new();
    while let Some(request) = read_frame(&mut r)? {
        let reply = read_frame(&mut r)?.ok_or(TransportError::Closed)?;
        out.push((request, reply));
    }
    Ok(out)
}

/// Whether a reply packet in a capture is an error report.
pub fn is_error_reply(reply: &[u8]) -> bool {
    matches!(decode_packet(reply), Ok(p) if matches!(p.payload, Payload::Error { .. }))
}
