//! Singular value spectra of the hidden state after every layer: how much of
//! each state's energy sits outside the leading components.

mod common;

use pfid::metrics::spectra_report;
use pfid::model::Tokenizer;

fn main() {
    let model = common::model();
    let tok = Tokenizer::default();
    let prompts: Vec<_> = common::cases(16)
        .iter()
        .map(|c| tok.encode(&c.prompt).unwrap())
        .collect();
    let report = spectra_report(&model, &prompts, None).unwrap();
    print!("{}", report.to_table());
}
