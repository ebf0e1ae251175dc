use std::collections::{BTreeMap, BTreeSet};

use crate::encoders::tokenize;
use crate::error::{Error, Result};
use crate::gallery::Dataset;

/// Caption-word by object counts: `C[w][a]` is the number of images whose
/// tokenized captions contain `w` and whose objects contain `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceMatrix {
    words: BTreeMap<String, usize>,
    vocab_size: usize,
    counts: Vec<u32>,
}

impl CooccurrenceMatrix {
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Caption tokens seen in the source images, sorted.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.keys().map(String::as_str)
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    /// Counts row of `word`; `None` if it never occurs in a caption.
    pub fn row(&self, word: &str) -> Option<&[u32]> {
        self.words
            .get(word)
            .map(|&w| &self.counts[w * self.vocab_size..(w + 1) * self.vocab_size])
    }

    pub fn count(&self, word: &str, object: usize) -> u32 {
        self.row(word).map_or(0, |r| r[object])
    }
}

/// Counts over every image of `dataset`. Callers pass the training subset.
pub fn build_cooccurrence(dataset: &Dataset) -> Result<CooccurrenceMatrix> {
    if dataset.images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let image_tokens: Vec<BTreeSet<String>> = dataset
        .images
        .iter()
        .map(|img| img.captions.iter().flat_map(|c| tokenize(c)).collect())
        .collect();
    let words: BTreeMap<String, usize> = image_tokens
        .iter()
        .flatten()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i))
        .collect();
    let v = dataset.vocab_size();
    let mut counts = vec![0u32; words.len() * v];
    for (img, tokens) in dataset.images.iter().zip(&image_tokens) {
        for tok in tokens {
            let row = words[tok] * v;
            for &a in &img.objects {
                counts[row + a] += 1;
            }
        }
    }
    Ok(CooccurrenceMatrix { words, vocab_size: v, counts })
}

/// Unnormalized shaping scores: `Σ_w C[w][a]` over every query token,
/// repeated tokens counted each time.
pub fn shaping_counts(queries: &[String], cooccurrence: &CooccurrenceMatrix) -> Vec<u64> {
    let mut scores = vec![0u64; cooccurrence.vocab_size()];
    for tok in queries.iter().flat_map(|q| tokenize(q)) {
        if let Some(row) = cooccurrence.row(&tok) {
            for (s, &c) in scores.iter_mut().zip(row) {
                *s += u64::from(c);
            }
        }
    }
    scores
}

/// `P(a | Q_t)`: shaping counts normalized over objects, uniform when every
/// count is zero.
pub fn shaping_target(queries: &[String], cooccurrence: &CooccurrenceMatrix) -> Vec<f64> {
    let counts = shaping_counts(queries, cooccurrence);
    let total: u64 = counts.iter().sum();
    if total == 0 {
        let v = counts.len();
        return vec![1.0 / v as f64; v];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// `Σ_batch Σ_a (P − π)²` and its gradient with respect to `π`.
pub fn shaping_loss(targets: &[Vec<f64>], probs: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    if targets.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} shaping targets for {} policy outputs",
            targets.len(),
            probs.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    for (p, pi) in targets.iter().zip(probs) {
        if p.len() != pi.len() {
            return Err(Error::ShapeMismatch(format!(
                "shaping target of length {} against policy output of length {}",
                p.len(),
                pi.len()
            )));
        }
        let (l, g) = shaping_loss_single(p, pi);
        loss += l;
        grads.push(g);
    }
    Ok((loss, grads))
}

pub(crate) fn shaping_loss_single(target: &[f64], probs: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let grad = target
        .iter()
        .zip(probs)
        .map(|(p, pi)| {
            let diff = p - pi;
            loss += diff * diff;
            -2.0 * diff
        })
        .collect();
    (loss, grad)
}
