//! Text side of the shared feature space.
//!
//! Queries are encoded as the unit-normalized mean of the embeddings of their
//! known words. Unknown words are skipped; a query with no known word encodes
//! to the zero vector, which every similarity treats as neutral.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::Dataset;
use crate::linalg;

const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    CaptionQuery,
    ObjectWord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextFeature {
    pub vector: Vec<f64>,
    pub source: FeatureSource,
}

impl TextFeature {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vector.iter().all(|&x| x == 0.0)
    }
}

/// Lowercased whitespace tokens with ASCII punctuation trimmed from both ends.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|tok| tok.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|tok| !tok.is_empty())
        .collect()
}

pub fn encode_text(text: &str, dataset: &Dataset) -> TextFeature {
    encode_with_source(text, dataset, FeatureSource::CaptionQuery)
}

pub fn encode_object_word(object: usize, dataset: &Dataset) -> Result<TextFeature> {
    let word = dataset.vocab.get(object).ok_or(Error::IndexOutOfRange {
        what: "vocabulary",
        index: object,
        len: dataset.vocab.len(),
    })?;
    Ok(encode_with_source(word, dataset, FeatureSource::ObjectWord))
}

fn encode_with_source(text: &str, dataset: &Dataset, source: FeatureSource) -> TextFeature {
    let dim = dataset.feature_dim;
    let known: Vec<&[f64]> = tokenize(text)
        .iter()
        .filter_map(|tok| dataset.embeddings.get(tok).map(Vec::as_slice))
        .collect();
    if known.is_empty() {
        return TextFeature { vector: vec![0.0; dim], source };
    }
    let mean = linalg::mean_rows(known, dim);
    let n = linalg::norm(&mean);
    let vector = if n == 0.0 || (n - 1.0).abs() <= UNIT_TOLERANCE {
        mean
    } else {
        mean.iter().map(|x| x / n).collect()
    };
    TextFeature { vector, source }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{generate_synthetic, SyntheticConfig};
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Dataset {
        generate_synthetic(&SyntheticConfig { noise_sigma: 0.0, ..SyntheticConfig::small(3) }).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("A man is surfing."), vec!["a", "man", "is", "surfing"]);
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("White short sleeve shirt"),
            vec!["white", "short", "sleeve", "shirt"]
        );
        assert_eq!(tokenize("  \"quoted\",  ... don't "), vec!["quoted", "don't"]);
    }

    #[test]
    fn single_word_is_its_embedding() {
        let ds = toy();
        let f = encode_text(&ds.vocab[2], &ds);
        assert_eq!(f.vector, ds.embeddings[&ds.vocab[2]]);
    }

    #[test]
    fn unknown_words_encode_to_zero() {
        let ds = toy();
        let f = encode_text("qwerty zxcv", &ds);
        assert!(f.is_zero());
        assert_eq!(f.dim(), ds.feature_dim);
    }

    #[test]
    fn two_words_match_hand_computation() {
        let ds = toy();
        let (u, v) = (&ds.embeddings[&ds.vocab[0]], &ds.embeddings[&ds.vocab[1]]);
        let mid: Vec<f64> = u.iter().zip(v).map(|(a, b)| (a + b) / 2.0).collect();
        let len = mid.iter().map(|x| x * x).sum::<f64>().sqrt();
        let expected: Vec<f64> = mid.iter().map(|x| x / len).collect();
        let got = encode_text(&format!("{} {}", ds.vocab[0], ds.vocab[1]), &ds);
        for (g, e) in got.vector.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn object_word_matches_text_encoding() {
        let ds = toy();
        assert!(matches!(encode_object_word(99, &ds), Err(Error::IndexOutOfRange { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let i = rng.random_range(0..ds.vocab_size());
            let a = encode_object_word(i, &ds).unwrap();
            let b = encode_text(&ds.vocab[i], &ds);
            assert_eq!(a.vector, b.vector);
            assert_eq!(a.source, FeatureSource::ObjectWord);
            assert!((linalg::norm(&a.vector) - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn norm_is_zero_or_one(words in proptest::collection::vec(0usize..16, 0..6)) {
            let ds = toy();
            let text: Vec<String> = words
                .iter()
                .map(|&i| ds.vocab.get(i).cloned().unwrap_or_else(|| format!("oov{i}")))
                .collect();
            let n = linalg::norm(&encode_text(&text.join(" "), &ds).vector);
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }

        #[test]
        fn permutation_invariant(words in proptest::collection::vec(0usize..12, 1..6), seed in any::<u64>()) {
            let ds = toy();
            let mut text: Vec<&str> = words.iter().map(|&i| ds.vocab[i].as_str()).collect();
            let a = encode_text(&text.join(" "), &ds);
            text.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = encode_text(&text.join(" "), &ds);
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
