//! How much the retained head output Ω helps the client and the observer.

mod common;

use pfid::metrics::*;
use pfid::model::*;
use pfid::protocol::PfidConfig;
use pfid::shard::{split, ShardSpec};

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let cases = common::cases(12);
    let mut report = EvalReport::default();
    for omega in [0.0, 0.5, 1.0, 2.0] {
        let cfg = PfidConfig {
            omega,
            sampling: SamplingParams::greedy(40),
            ..PfidConfig::default()
        };
        let (r, _) =
            evaluate_scenario(&format!("omega={omega}"), &sharded, &tok, &cfg, &cases).unwrap();
        report.scenarios.push(r);
    }
    println!("{}", report.to_table());
}
