//! Trains the toy transformer on the bundled synthetic corpus and saves a
//! checkpoint. Usage: `train_toy_model [OUT] [STEPS]`.

use pfid::model::*;
use pfid::protocol::PfidConfig;

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "toy.ckpt".into());
    let steps = args
        .next()
        .map_or(300, |s| s.parse().expect("STEPS is a number"));

    let tok = Tokenizer::default();
    let text = corpus::bundled_corpus();
    println!(
        "corpus: {} lines, first: {:?}",
        text.lines().count(),
        text.lines().next().unwrap()
    );
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let started = std::time::Instant::now();
    let (model, report) = train(
        init_model(ModelConfig::default()).unwrap(),
        text,
        &tok,
        &cfg,
    )
    .unwrap();
    println!(
        "{steps} steps in {:.1}s, eval loss {:.3} -> {:.3}",
        started.elapsed().as_secs_f64(),
        report.initial_eval_loss,
        report.final_eval_loss
    );
    for (i, l) in report
        .losses
        .iter()
        .enumerate()
        .step_by((steps / 10).max(1))
    {
        println!("  step {i:>5}  loss {l:.3}");
    }

    let prompt = "Omar is 70 years old. => ";
    let cfg = PfidConfig::degenerate(SamplingParams::greedy(40));
    let trace = pfid::protocol::pipeline_generate(&model, &tok, &cfg, prompt).unwrap();
    println!("{prompt}{}", trace.text);

    std::fs::write(&out, save_model(&model)).unwrap();
    println!("saved {out}");
}
