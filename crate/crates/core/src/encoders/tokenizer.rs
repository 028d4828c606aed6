//! Lowercase whitespace tokenizer with hashed vocabulary buckets.

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;

const FIRST_WORD_ID: usize = 2;

/// A tokenized query: `ids = [BOS, words.., EOS]`, so word `i` sits at
/// sequence position `i + 1` and EOS at `words.len() + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedQuery {
    pub words: Vec<String>,
    pub ids: Vec<usize>,
}

impl TokenizedQuery {
    pub fn eos_position(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn word_position(&self, word_index: usize) -> usize {
        word_index + 1
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab_size: usize,
    max_tokens: usize,
}

impl Tokenizer {
    pub fn new(vocab_size: usize, max_tokens: usize) -> Self {
        assert!(vocab_size > FIRST_WORD_ID, "vocabulary too small");
        assert!(max_tokens >= 3, "max_tokens too small");
        Self { vocab_size, max_tokens }
    }

    pub fn word_id(&self, word: &str) -> usize {
        FIRST_WORD_ID + (fnv1a(word.as_bytes()) % (self.vocab_size - FIRST_WORD_ID) as u64) as usize
    }

    /// Words beyond `max_tokens - 2` are truncated.
    pub fn encode(&self, text: &str) -> TokenizedQuery {
        let words: Vec<String> = text
            .split_whitespace()
            .map(str::to_lowercase)
            .take(self.max_tokens - 2)
            .collect();
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(BOS_ID);
        ids.extend(words.iter().map(|w| self.word_id(w)));
        ids.push(EOS_ID);
        TokenizedQuery { words, ids }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_case_folding() {
        let tok = Tokenizer::new(1024, 16);
        let q = tok.encode("Lady  Drinking coffee");
        assert_eq!(q.words, ["lady", "drinking", "coffee"]);
        assert_eq!(q.ids.len(), 5);
        assert_eq!(q.ids[0], BOS_ID);
        assert_eq!(q.ids[4], EOS_ID);
        assert_eq!(q.eos_position(), 4);
        assert_eq!(q.ids[2], tok.word_id("drinking"));
        assert_eq!(q, tok.encode("lady drinking COFFEE"));
        assert!(q.ids.iter().all(|&id| id < 1024));
    }

    #[test]
    fn stable_hash_values() {
        // FNV-1a 64 reference vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn truncates_long_queries() {
        let tok = Tokenizer::new(64, 5);
        let q = tok.encode("a b c d e f");
        assert_eq!(q.ids.len(), 5);
        assert_eq!(q.words, ["a", "b", "c"]);
    }
}
