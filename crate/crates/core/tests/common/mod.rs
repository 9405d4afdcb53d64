#![allow(dead_code)]

use std::path::PathBuf;

use pfid::metrics::PromptCase;
use pfid::model::corpus::{bundled_corpus, held_out_prompts};
use pfid::model::*;

/// The default 8-layer shape with untrained weights.
pub fn untrained() -> TransformerModel {
    init_model(ModelConfig {
        seed: 42,
        ..ModelConfig::default()
    })
    .unwrap()
}

pub fn cases(count: usize, seed: u64) -> Vec<PromptCase> {
    held_out_prompts(bundled_corpus(), count, seed)
        .into_iter()
        .map(Into::into)
        .collect()
}

pub fn prompts(count: usize, seed: u64) -> Vec<String> {
    cases(count, seed).into_iter().map(|c| c.prompt).collect()
}

/// Default model trained for `steps` on the bundled corpus, cached under the
/// target directory keyed by step count so reruns skip training.
pub fn trained(steps: usize) -> (TransformerModel, Option<TrainReport>) {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("toy-{steps}.ckpt"));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(m) = load_model(&bytes) {
            return (m, None);
        }
    }
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let (m, report) = train(
        init_model(ModelConfig::default()).unwrap(),
        bundled_corpus(),
        &Tokenizer::default(),
        &cfg,
    )
    .unwrap();
    let bytes = save_model(&m);
    std::fs::write(&path, &bytes).unwrap();
    // Cached and fresh runs must see the same binary32-rounded weights.
    (load_model(&bytes).unwrap(), Some(report))
}
