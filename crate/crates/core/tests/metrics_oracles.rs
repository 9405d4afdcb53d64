mod common;

use std::collections::BTreeMap;

use pfid::metrics::*;
use pfid::model::SamplingParams;
use pfid::protocol::{packet_len, PfidConfig};
use pfid::shard::{split, ShardSpec};
use proptest::prelude::*;

/// A second BLEU: n-grams keyed by their joined text in ordered maps,
/// precisions multiplied directly instead of summed as logs.
fn reference_bleu(pairs: &[(&str, &str)], chars: bool) -> f64 {
    let split = |s: &str| -> Vec<String> {
        if chars {
            s.chars().map(|c| c.to_string()).collect()
        } else {
            s.split_whitespace().map(String::from).collect()
        }
    };
    let grams = |toks: &[String], n: usize| {
        let mut m: BTreeMap<String, i64> = BTreeMap::new();
        if toks.len() >= n {
            for i in 0..=toks.len() - n {
                *m.entry(toks[i..i + n].join("\u{1}")).or_default() += 1;
            }
        }
        m
    };
    let mut num = [0i64; 4];
    let mut den = [0i64; 4];
    let (mut c_len, mut r_len) = (0i64, 0i64);
    for (c, r) in pairs {
        let (c, r) = (split(c), split(r));
        c_len += c.len() as i64;
        r_len += r.len() as i64;
        for n in 1..=4 {
            let rc = grams(&r, n);
            for (g, k) in grams(&c, n) {
                num[n - 1] += k.min(*rc.get(&g).unwrap_or(&0));
                den[n - 1] += k;
            }
        }
    }
    if c_len == 0 {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 0..4 {
        let (a, b) = if num[n] == 0 {
            (1, den[n] + 1)
        } else {
            (num[n], den[n])
        };
        product *= a as f64 / b as f64;
    }
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    100.0 * bp * product.powf(0.25)
}

#[test]
fn hand_value_and_second_implementation_agree() {
    let got = bleu("the cat sat", "the cat sat down").unwrap();
    assert!((got - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
    assert!((reference_bleu(&[("the cat sat", "the cat sat down")], false) - got).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn word_bleu_matches_reference(
        pairs in proptest::collection::vec(("[abc ]{0,24}", "[abc]{1,3}( [abc]{1,3}){0,6}"), 1..4)
    ) {
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let ours = corpus_bleu(&refs, &BleuOptions::default()).unwrap();
        prop_assert!((ours - reference_bleu(&refs, false)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&ours));
    }

    #[test]
    fn char_bleu_matches_reference(c in "[a-d0-9 ]{0,30}", r in "[a-d0-9 ]{1,30}") {
        let ours = bleu_with(&c, &r, &BleuOptions::char_level()).unwrap();
        prop_assert!((ours - reference_bleu(&[(&c, &r)], true)).abs() < 1e-9);
    }

    #[test]
    fn agreement_is_symmetric_and_bounded(a in proptest::collection::vec(0u32..5, 1..20), b in proptest::collection::vec(0u32..5, 1..20)) {
        let x = sequence_agreement(&a, &b).unwrap();
        prop_assert_eq!(x, sequence_agreement(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(sequence_agreement(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(p in proptest::collection::vec(-8.0f64..8.0, 2..12), shift in -3.0f64..3.0) {
        let q: Vec<f64> = p.iter().rev().cloned().collect();
        prop_assert!(kl_from_logits(&p, &q).unwrap() >= 0.0);
        let shifted: Vec<f64> = p.iter().map(|x| x + shift).collect();
        prop_assert!(kl_from_logits(&p, &shifted).unwrap() < 1e-12);
    }
}

#[test]
fn equal_singular_values_give_proportional_tail_share() {
    let (share, nuclear) = spectrum_stats(&[2.0; 10], 7);
    assert!((share - 0.7).abs() < 1e-12);
    assert!((nuclear - 20.0).abs() < 1e-12);
}

#[test]
fn spectra_report_shape_and_determinism() {
    let model = common::untrained();
    let tok = pfid::model::Tokenizer::default();
    let prompts: Vec<_> = common::prompts(3, 2)
        .iter()
        .map(|p| tok.encode(p).unwrap())
        .collect();
    let a = spectra_report(&model, &prompts, None).unwrap();
    let b = spectra_report(&model, &prompts, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.layers.len(), 9);
    for l in &a.layers {
        assert!(l.singular_values.windows(2).all(|w| w[0] >= w[1] - 1e-9));
        assert!((0.0..=1.0).contains(&l.tail_share));
    }
    assert!(a.to_table().lines().count() >= 9);
}

#[test]
fn communication_table_is_exactly_affine() {
    let rows = comm_table(64, &[16, 64, 100], &(1..=64).collect::<Vec<_>>());
    for r in &rows {
        assert_eq!(r.bytes, packet_len(r.d, r.n, r.k));
        assert_eq!(r.bytes, 32 + 4 * r.k * (r.d + r.n + 1));
    }
    for n in [16, 64, 100] {
        let pts: Vec<_> = rows
            .iter()
            .filter(|r| r.n == n)
            .map(|r| (r.k, r.bytes))
            .collect();
        let fit = affine_fit(&pts).unwrap();
        assert_eq!(fit.max_residual, 0.0);
        assert_eq!(fit.slope, 4.0 * (64 + n + 1) as f64);
        assert_eq!(fit.intercept, 32.0);
    }
}

#[test]
fn scenario_report_invariants_and_json_keys() {
    let model = split(&common::untrained(), ShardSpec::default()).unwrap();
    let tok = pfid::model::Tokenizer::default();
    let cases = common::cases(3, 4);
    let degenerate = PfidConfig::degenerate(SamplingParams::greedy(8));
    let (r, _) = evaluate_scenario("degenerate", &model, &tok, &degenerate, &cases).unwrap();
    assert_eq!(r.local.token_agreement, 1.0);
    assert_eq!(r.local.mean_logit_kl, 0.0);
    assert_eq!(r.privacy_gap, Scores::default());
    assert_eq!(r.differing_fraction, 0.0);

    let cfg = PfidConfig {
        sampling: SamplingParams::greedy(8),
        ..PfidConfig::default()
    };
    let (r2, _) = evaluate_scenario("table2", &model, &tok, &cfg, &cases).unwrap();
    let report = EvalReport {
        scenarios: vec![r, r2],
        ..EvalReport::default()
    };
    let json = report.to_json();
    for key in [
        "\"privacy_gap\"",
        "\"token_agreement\"",
        "\"mean_logit_kl\"",
        "\"eavesdropper_tail_only\"",
        "\"comm_up_ratio\"",
    ] {
        assert!(json.contains(key), "missing {key}");
    }
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    assert!(evaluate_scenario("empty", &model, &tok, &cfg, &[]).is_err());
}
