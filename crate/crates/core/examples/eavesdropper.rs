//! What a network observer recovers. Both adversaries hold the public head
//! and tail weights and every packet; neither holds the client's residual.

mod common;

use pfid::adversary::{eavesdrop_generate, AdversaryMode};
use pfid::model::*;
use pfid::protocol::*;
use pfid::shard::{split, ShardSpec};
use std::sync::Arc;

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let cfg = PfidConfig {
        sampling: SamplingParams::greedy(30),
        ..PfidConfig::default()
    };
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let server = Arc::new(MiddleServer::new(sharded.middle.clone(), cfg));
    let client = PfidClient::new(sharded.client(), cfg, tok.clone()).unwrap();

    for case in common::cases(4) {
        let mut wire = CapturingTransport::new(InMemoryTransport::new(server.clone()));
        let local = client.generate(&mut wire, &case.prompt).unwrap();
        println!("prompt     {:?}", case.prompt);
        println!("  client   {:?}", local.text);
        for mode in AdversaryMode::ALL {
            let seen = eavesdrop_generate(
                &sharded.client(),
                wire.exchanges(),
                mode,
                &cfg,
                &tok,
                &case.prompt,
            )
            .unwrap();
            println!("  {mode:?}: {:?}", seen.text);
        }
    }
}
