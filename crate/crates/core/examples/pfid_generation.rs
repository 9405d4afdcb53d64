//! One private session, step by step: ranks sent each way, bytes on the wire
//! and the text the client decodes, next to the unsplit model's output.

mod common;

use pfid::model::*;
use pfid::protocol::*;
use pfid::shard::{split, ShardSpec};

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let cfg = PfidConfig {
        sampling: SamplingParams::greedy(30),
        ..PfidConfig::default()
    };
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let prompt = "Call Nina Park at 555-0123. => ";
    let sim = run_local_sim(&sharded, &cfg, &tok, prompt).unwrap();

    for (s, c) in sim
        .local
        .steps
        .iter()
        .zip(&sim.local.ledger.records)
        .take(5)
    {
        println!(
            "step {:>2}: n={:>3} k_head={:>2} k_tail={:>2} up {:>6}B down {:>6}B",
            c.step, c.n, s.k_head, s.k_tail, c.bytes_up, c.bytes_down
        );
    }
    println!("pipeline: {prompt}{}", sim.pipeline.text);
    println!("client:   {prompt}{}", sim.local.text);
    println!(
        "traffic vs dense binary64: up {:.2}, down {:.2}",
        sim.local.ledger.up_ratio(),
        sim.local.ledger.down_ratio()
    );
}
