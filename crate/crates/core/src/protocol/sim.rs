use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adversary::{
    eavesdrop_generate, remnant_generate, residual_stream, AdversaryMode, Exchange, RemnantOutput,
};
use crate::model::Tokenizer;
use crate::shard::ShardedModel;

use super::{
    pipeline_generate, CapturingTransport, GenerationTrace, InMemoryTransport, MiddleServer,
    PfidClient, PfidConfig, ProtocolError,
};

/// Every view of one prompt, from a single in-process session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub pipeline: GenerationTrace,
    pub local: GenerationTrace,
    pub eavesdropper_tail_only: GenerationTrace,
    pub eavesdropper_with_head: GenerationTrace,
    pub remnant: RemnantOutput,
    #[serde(skip)]
    pub exchanges: Vec<Exchange>,
}

impl SimOutcome {
    pub fn eavesdropper(&self, mode: AdversaryMode) -> &GenerationTrace {
        match mode {
            AdversaryMode::TailOnly => &self.eavesdropper_tail_only,
            AdversaryMode::TailPlusInterceptedHead => &self.eavesdropper_with_head,
        }
    }
}

/// Runs client and server in-process over a capturing in-memory transport,
/// then replays the capture for both eavesdroppers and the remnant decoder.
pub fn run_local_sim(
    model: &ShardedModel,
    config: &PfidConfig,
    tokenizer: &Tokenizer,
    prompt: &str,
) -> Result<SimOutcome, ProtocolError> {
    let server = Arc::new(MiddleServer::new(model.middle.clone(), *config));
    let client = PfidClient::new(model.client(), *config, tokenizer.clone())?;
    let mut transport = CapturingTransport::new(InMemoryTransport::new(server));
    let local = client.generate(&mut transport, prompt)?;
    let exchanges = transport.into_exchanges();

    let public = model.client();
    let eavesdrop = |mode| eavesdrop_generate(&public, &exchanges, mode, config, tokenizer, prompt);
    let eavesdropper_tail_only = eavesdrop(AdversaryMode::TailOnly)?;
    let eavesdropper_with_head = eavesdrop(AdversaryMode::TailPlusInterceptedHead)?;
    let residuals = residual_stream(&public, tokenizer, &local, &exchanges)?;
    let remnant = remnant_generate(model, &residuals, config, tokenizer, prompt)?;
    let pipeline = pipeline_generate(&model.to_model(), tokenizer, config, prompt)?;
    Ok(SimOutcome {
        pipeline,
        local,
        eavesdropper_tail_only,
        eavesdropper_with_head,
        remnant,
        exchanges,
    })
}
