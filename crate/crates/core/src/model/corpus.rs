//! Synthetic "privacy-flavored" text: each line states a fact carrying a
//! private detail (an age, a phone number, a percentage...) and then restates
//! it after `=> `, so a model has to carry the detail across the sentence.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Seed and size of the corpus shipped in `data/corpus.txt`.
pub const BUNDLED_SEED: u64 = 20240612;
pub const BUNDLED_LINES: usize = 4000;
/// Separator between a fact and its restatement.
pub const SEPARATOR: &str = "=> ";

static BUNDLED: &str = include_str!("../../data/corpus.txt");

/// The training corpus bundled with the crate.
pub fn bundled_corpus() -> &'static str {
    BUNDLED
}

const NAMES: &[&str] = &[
    "Maria", "Li Wei", "Omar", "Anna", "Ivan", "Sofia", "Kenji", "Lucas", "Amara", "Noah", "Elena",
    "Yusuf", "Chen", "Marta", "Pavel", "Aiko", "Diego", "Leah", "Tariq", "Nina",
];
const CITIES: &[&str] = &[
    "Paris", "Kyiv", "Osaka", "Lima", "Oslo", "Cairo", "Hanoi", "Quito", "Rome", "Dubai",
];
const FIRMS: &[&str] = &[
    "Acme", "Sugo", "Nexa", "Orbit", "Veda", "Kiwi", "Zenit", "Aster",
];
const INDICES: &[&str] = &["Nasdaq", "Dow", "FTSE", "DAX", "Nikkei", "CAC"];

/// One generated sentence with its private detail.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    /// The private value the sentence carries (digits, possibly with punctuation).
    pub secret: String,
}

impl Sentence {
    /// Splits into the part up to and including the separator, and the rest.
    pub fn split_prompt(&self) -> (String, String) {
        let cut = self
            .text
            .find(SEPARATOR)
            .map(|i| i + SEPARATOR.len())
            .unwrap_or(0);
        (self.text[..cut].to_string(), self.text[cut..].to_string())
    }
}

/// Draws one templated sentence.
pub fn sentence<R: Rng>(rng: &mut R) -> Sentence {
    let name = *NAMES.choose(rng).unwrap();
    let city = *CITIES.choose(rng).unwrap();
    let firm = *FIRMS.choose(rng).unwrap();
    let index = *INDICES.choose(rng).unwrap();
    let pct = format!("{}.{}", rng.random_range(1..60), rng.random_range(0..10));
    let (text, secret) = match rng.random_range(0..8) {
        0 => {
            let age = rng.random_range(18..90).to_string();
            (
                format!("{name} is {age} years old. => Age of {name}: {age}."),
                age,
            )
        }
        1 => (
            format!("The {index} rose {pct}% today. => {index} up {pct}%."),
            pct,
        ),
        2 => {
            let phone = format!(
                "{:03}-{:04}",
                rng.random_range(200..1000),
                rng.random_range(0..10000)
            );
            (
                format!("Call {name} at {phone}. => Phone of {name}: {phone}."),
                phone,
            )
        }
        3 => (
            format!("{name} holds {pct}% of {firm}. => {name} owns {pct}%."),
            pct,
        ),
        4 => {
            let amount = rng.random_range(10..1000).to_string();
            (
                format!("{name} paid ${amount} to {firm}. => {firm} got ${amount}."),
                amount,
            )
        }
        5 => {
            let zip = format!("{:05}", rng.random_range(0..100000));
            (
                format!("{name} lives in {city}, zip {zip}. => Zip: {zip}."),
                zip,
            )
        }
        6 => {
            let pin = format!("{:04}", rng.random_range(0..10000));
            (
                format!("The PIN of {name} is {pin}. => {name} uses {pin}."),
                pin,
            )
        }
        _ => {
            let year = rng.random_range(1950..2010).to_string();
            (
                format!("{name} was born in {city} in {year}. => Born {year}."),
                year,
            )
        }
    };
    Sentence { text, secret }
}

/// `lines` sentences, newline-terminated, deterministic in `seed`.
pub fn generate_corpus(seed: u64, lines: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for _ in 0..lines {
        out.push_str(&sentence(&mut rng).text);
        out.push('\n');
    }
    out
}

/// A prompt/reference pair whose full sentence does not occur in `corpus`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldOutPrompt {
    pub prompt: String,
    pub reference: String,
    pub secret: String,
}

/// Sentences unseen in `corpus`, split at the separator.
pub fn held_out_prompts(corpus: &str, count: usize, seed: u64) -> Vec<HeldOutPrompt> {
    let seen: std::collections::HashSet<&str> = corpus.lines().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = sentence(&mut rng);
        if seen.contains(s.text.as_str())
            || out
                .iter()
                .any(|p: &HeldOutPrompt| p.prompt == s.split_prompt().0)
        {
            continue;
        }
        let (prompt, reference) = s.split_prompt();
        out.push(HeldOutPrompt {
            prompt,
            reference,
            secret: s.secret,
        });
    }
    out
}
