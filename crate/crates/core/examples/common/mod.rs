use pfid::model::*;

/// Loads the checkpoint named by the first argument, or trains a small model
/// on the bundled corpus (about a minute in release mode).
pub fn model() -> TransformerModel {
    if let Some(path) = std::env::args().nth(1) {
        let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
        return load_model(&bytes).expect("a full checkpoint");
    }
    eprintln!("no checkpoint given; training 300 steps (pass a `pfid train` checkpoint to skip)");
    let cfg = TrainConfig {
        steps: 300,
        ..TrainConfig::default()
    };
    let init = init_model(ModelConfig::default()).unwrap();
    let (model, report) =
        train(init, corpus::bundled_corpus(), &Tokenizer::default(), &cfg).unwrap();
    eprintln!(
        "eval loss {:.3} -> {:.3}",
        report.initial_eval_loss, report.final_eval_loss
    );
    model
}

#[allow(dead_code)]
pub fn cases(count: usize) -> Vec<pfid::metrics::PromptCase> {
    corpus::held_out_prompts(corpus::bundled_corpus(), count, 7)
        .into_iter()
        .map(Into::into)
        .collect()
}
