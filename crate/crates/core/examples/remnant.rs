//! The remnant: the part of the head output the client never sends. Decoding
//! it alone shows how little of the continuation it carries by itself.

mod common;

use pfid::adversary::{remnant_generate, residual_stream};
use pfid::model::*;
use pfid::protocol::*;
use pfid::shard::{split, ShardSpec};
use std::sync::Arc;

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let prompt = "Omar Haddad is 70 years old. => ";
    for phead in [0.0, 0.35, 0.65, 0.9] {
        let cfg = PfidConfig {
            phead,
            sampling: SamplingParams::greedy(30),
            ..PfidConfig::default()
        };
        let server = Arc::new(MiddleServer::new(sharded.middle.clone(), cfg));
        let client = PfidClient::new(sharded.client(), cfg, tok.clone()).unwrap();
        let mut wire = CapturingTransport::new(InMemoryTransport::new(server));
        let local = client.generate(&mut wire, prompt).unwrap();
        let residuals = residual_stream(&sharded.client(), &tok, &local, wire.exchanges()).unwrap();
        let r = remnant_generate(&sharded, &residuals, &cfg, &tok, prompt).unwrap();
        let mean = r.relative_norms.iter().sum::<f64>() / r.relative_norms.len() as f64;
        println!(
            "phead {phead}: |R|/|H| {mean:.3}, empty {}, remnant text {:?}",
            r.empty, r.trace.text
        );
    }
}
