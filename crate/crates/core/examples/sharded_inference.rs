//! Splits a model into head, middle and tail and checks that running the
//! three pieces in sequence reproduces the whole model exactly.

use pfid::model::*;
use pfid::shard::{split, ShardSpec};

fn main() {
    let model = init_model(ModelConfig::default()).unwrap();
    let tok = Tokenizer::default();
    let tokens = tok.encode("Call Li Wei at 879-3596.").unwrap();
    let whole = model.forward(&tokens).unwrap();

    for (k, n) in [(1, 2), (3, 5), (2, 7), (4, 6)] {
        let sharded = split(&model, ShardSpec::new(k, n)).unwrap();
        let h_head = sharded.head_forward(&tokens).unwrap();
        let h_mid = sharded.middle_forward(&h_head).unwrap();
        let logits = sharded.tail_forward(&h_mid).unwrap();
        println!(
            "split ({k},{n}): head {:?}, middle {:?}, tail {:?}; state {:?}; logits identical: {}",
            sharded.spec.head_range(),
            sharded.spec.middle_range(),
            sharded.spec.tail_range(model.config.n_layers),
            h_head.shape(),
            logits == whole
        );
    }
    println!(
        "an empty middle is rejected: {}",
        split(&model, ShardSpec::new(3, 3)).unwrap_err()
    );
}
