use super::ModelError;

/// Token id type shared by the tokenizer, sampler and traces.
pub type TokenId = u32;

/// Character-level tokenizer over an ordered alphabet.
///
/// The default alphabet is `'\n'` followed by printable ASCII, 96 symbols in
/// total; `'\n'` doubles as the end-of-sequence token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    alphabet: Vec<char>,
    /// When set, characters outside the alphabet encode to the fallback
    /// token instead of failing.
    byte_fallback: bool,
    fallback: TokenId,
}

impl Default for Tokenizer {
    fn default() -> Self {
        let alphabet: Vec<char> = std::iter::once('\n')
            .chain((32u8..=126).map(char::from))
            .collect();
        Self::new(alphabet, true).expect("default alphabet is valid")
    }
}

impl Tokenizer {
    pub fn new(alphabet: Vec<char>, byte_fallback: bool) -> Result<Self, ModelError> {
        if alphabet.is_empty() {
            return Err(ModelError::InvalidConfig("empty alphabet".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if !alphabet.iter().all(|c| seen.insert(*c)) {
            return Err(ModelError::InvalidConfig("alphabet has duplicates".into()));
        }
        let fallback = alphabet.iter().position(|&c| c == '?').unwrap_or(0) as TokenId;
        Ok(Self {
            alphabet,
            byte_fallback,
            fallback,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn byte_fallback(&self) -> bool {
        self.byte_fallback
    }

    /// Token that terminates generation.
    pub fn eos(&self) -> TokenId {
        self.alphabet.iter().position(|&c| c == '\n').unwrap_or(0) as TokenId
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        text.chars()
            .map(|c| match self.alphabet.iter().position(|&a| a == c) {
                Some(i) => Ok(i as TokenId),
                None if self.byte_fallback => Ok(self.fallback),
                None => Err(ModelError::UnknownCharacter(c)),
            })
            .collect()
    }

    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.alphabet.get(t as usize).copied().unwrap_or('\u{FFFD}'))
            .collect()
    }

    pub fn contains(&self, c: char) -> bool {
        self.alphabet.contains(&c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_alphabet_shape() {
        let t = Tokenizer::default();
        assert_eq!(t.vocab_size(), 96);
        assert_eq!(t.decode(&[t.eos()]), "\n");
    }

    #[test]
    fn unknown_characters() {
        let strict = Tokenizer::new(vec!['a', 'b'], false).unwrap();
        assert!(matches!(
            strict.encode("abc"),
            Err(ModelError::UnknownCharacter('c'))
        ));
        let lenient = Tokenizer::default();
        assert_eq!(lenient.decode(&lenient.encode("é").unwrap()), "?");
    }

    proptest! {
        #[test]
        fn round_trip(s in "[ -~\n]{0,64}") {
            let t = Tokenizer::default();
            prop_assert_eq!(t.decode(&t.encode(&s).unwrap()), s);
        }
    }
}
