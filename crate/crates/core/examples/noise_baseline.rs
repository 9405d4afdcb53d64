//! Truncation against plain Gaussian noise at the same client utility.

mod common;

use pfid::metrics::{noise_baseline, NoiseSearch};
use pfid::model::*;
use pfid::protocol::PfidConfig;
use pfid::shard::{split, ShardSpec};

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let sharded = split(&model, ShardSpec::default()).unwrap();
    let cfg = PfidConfig {
        sampling: SamplingParams::greedy(40),
        ..PfidConfig::default()
    };
    let nb = noise_baseline(
        &sharded,
        &tok,
        &cfg,
        &common::cases(12),
        &NoiseSearch::default(),
    )
    .unwrap();
    for (sigma, agreement) in &nb.calibration {
        println!("sigma {sigma:>7.3}: local agreement {agreement:.4}");
    }
    println!("{}", nb.to_table());
}
