//! Deterministic text embedder based on signed feature hashing.

use super::{Embedding, EncodeError, Encoder, DEFAULT_DIM};
use crate::text::tokenize;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME)
    })
}

/// Hashes lowercased alphanumeric unigrams (and optionally adjacent bigrams)
/// into `dim` signed buckets, then L2-normalizes.
///
/// Text only: image references are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
    bigrams: bool,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, bigrams: true }
    }

    pub fn with_bigrams(mut self, on: bool) -> Self {
        self.bigrams = on;
        self
    }

    fn add(&self, acc: &mut [f64], feature: &str) {
        let h = fnv1a(feature.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }

    pub fn encode_text(&self, text: &str) -> Result<Embedding, EncodeError> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(EncodeError::EmptyInput);
        }
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            self.add(&mut acc, t);
        }
        if self.bigrams {
            for pair in tokens.windows(2) {
                self.add(&mut acc, &format!("{}\u{1f}{}", pair[0], pair[1]));
            }
        }
        Embedding::normalized(acc)
    }
}

impl Encoder for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_batch(
        &self,
        texts: &[String],
        _image_refs: &[Option<String>],
    ) -> Result<Vec<Embedding>, EncodeError> {
        texts.iter().map(|t| self.encode_text(t)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{memory_text, similarity};
    use crate::memory::{AugmentedMemory, AuxiliaryClue, MemoryEntry, RecallQuery};
    use proptest::prelude::*;

    fn memory(caption: &str) -> AugmentedMemory {
        AugmentedMemory {
            entry: MemoryEntry::new("m1", "remember where I parked", 1_700_000_000, "Lot B"),
            clue: AuxiliaryClue {
                image_caption: caption.into(),
                ..Default::default()
            },
            embedding: None,
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn memory_encoding_is_deterministic_and_unit_norm() {
        let enc = HashingEmbedder::default();
        let m = memory("red Toyota, lot B, slot 142");
        let a = enc.encode_memory(&m).unwrap();
        let b = enc.encode_memory(&m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 256);
        assert!((a.norm() - 1.0).abs() <= 1e-6);

        let mut twin = m.clone();
        twin.entry.id = "m2".into();
        assert_eq!(enc.encode_memory(&twin).unwrap(), a);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let enc = HashingEmbedder::default();
        let mut m = memory("");
        m.entry.invocation_command = String::new();
        m.entry.location = String::new();
        assert!(matches!(
            enc.encode_memory(&m),
            Err(EncodeError::EmptyInput)
        ));
        assert!(matches!(
            enc.encode_query(&RecallQuery::new("", 10)),
            Err(EncodeError::EmptyInput)
        ));
    }

    #[test]
    fn query_equal_to_memory_text_has_unit_similarity() {
        let enc = HashingEmbedder::default();
        let m = memory("red Toyota, lot B, slot 142");
        let q = RecallQuery::new(memory_text(&m), 1_700_000_100);
        let s = similarity(
            &enc.encode_memory(&m).unwrap(),
            &enc.encode_query(&q).unwrap(),
        )
        .unwrap();
        assert!((s - 1.0).abs() <= 1e-6);

        let q = RecallQuery::new("where did I park", 5);
        assert_eq!(enc.encode_query(&q).unwrap(), enc.encode_query(&q).unwrap());
    }

    proptest! {
        #[test]
        fn unigram_vectors_depend_only_on_the_token_multiset(
            tokens in prop::collection::vec("[a-z]{1,6}", 1..12),
            seed in any::<u64>(),
        ) {
            let enc = HashingEmbedder::new(64).with_bigrams(false);
            let mut shuffled = tokens.clone();
            // deterministic Fisher-Yates driven by `seed`
            let mut s = seed;
            for i in (1..shuffled.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (s >> 33) as usize % (i + 1));
            }
            let a = enc.encode_text(&tokens.join(" "));
            let b = enc.encode_text(&shuffled.join(" "));
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "permutation changed encodability"),
            }
        }

        #[test]
        fn similarity_is_symmetric(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
            let enc = HashingEmbedder::default();
            if let (Ok(x), Ok(y)) = (enc.encode_text(&a), enc.encode_text(&b)) {
                prop_assert_eq!(similarity(&x, &y).unwrap(), similarity(&y, &x).unwrap());
                let s = similarity(&x, &y).unwrap();
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
            }
        }
    }

    #[test]
    fn bigram_features_see_adjacency() {
        let enc = HashingEmbedder::default();
        let a = enc.encode_text("red car blue house").unwrap();
        let b = enc.encode_text("blue car red house").unwrap();
        assert_ne!(a, b);
        let c = enc.encode_text("red car; blue house").unwrap();
        assert_eq!(a, c);
    }
}
