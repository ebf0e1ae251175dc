//! Heuristic candidate generators used as comparison points for the learned
//! policy.

use std::collections::BTreeSet;

use rand::prelude::*;

use crate::encoders::TextFeature;
use crate::error::{Error, Result};
use crate::gallery::Dataset;
use crate::linalg;
use crate::policy::{action_log_prob, top_n_by, unasked, ActionSet};

/// Uniform draw without replacement over the unasked objects.
pub fn baseline_random<R: Rng + ?Sized>(
    vocab_size: usize,
    asked: &BTreeSet<usize>,
    n: usize,
    rng: &mut R,
) -> Result<ActionSet> {
    let pool = unasked(vocab_size, asked);
    if pool.is_empty() {
        return Err(Error::AllExcluded);
    }
    let objects: Vec<usize> = pool.choose_multiple(rng, n).copied().collect();
    let uniform = vec![1.0 / pool.len() as f64; vocab_size];
    let log_prob = action_log_prob(&uniform, &objects);
    Ok(ActionSet { objects, log_prob })
}

/// Mean cosine between the queries and each object word.
pub fn qasim_scores(queries: &[TextFeature], object_features: &[TextFeature]) -> Vec<f64> {
    object_features
        .iter()
        .map(|obj| {
            let total: f64 = queries.iter().map(|q| linalg::cosine(&q.vector, &obj.vector)).sum();
            total / queries.len().max(1) as f64
        })
        .collect()
}

/// Objects whose word is closest to the queries, greedily.
pub fn baseline_qasim(
    queries: &[TextFeature],
    object_features: &[TextFeature],
    asked: &BTreeSet<usize>,
    n: usize,
) -> Result<ActionSet> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let pool = unasked(object_features.len(), asked);
    if pool.is_empty() {
        return Err(Error::AllExcluded);
    }
    let scores = qasim_scores(queries, object_features);
    let objects = top_n_by(&pool, |a| scores[a], n);
    Ok(ActionSet { objects, log_prob: 0.0 })
}

/// `P_c(i, j)`: share of ordered object pairs `(i, j)`, `i ≠ j`, that occur
/// together in one image.
#[derive(Clone, Debug, PartialEq)]
pub struct JointCooccurrence {
    vocab_size: usize,
    probs: Vec<f64>,
}

impl JointCooccurrence {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.vocab_size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.vocab_size..(i + 1) * self.vocab_size]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

pub fn build_joint_cooccurrence(dataset: &Dataset) -> Result<JointCooccurrence> {
    if dataset.images.is_empty() {
        return Err(Error::EmptyInput);
    }
    let v = dataset.vocab_size();
    let mut counts = vec![0u64; v * v];
    for img in &dataset.images {
        for &i in &img.objects {
            for &j in &img.objects {
                if i != j {
                    counts[i * v + j] += 1;
                }
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let probs = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();
    Ok(JointCooccurrence { vocab_size: v, probs })
}

/// Objects that most often co-occur with the object closest to the queries.
///
/// The anchor is the QASim top-1 among unasked objects. If its co-occurrence
/// row has no mass on any unasked object the round falls back to
/// [`baseline_random`].
pub fn baseline_qacohe<R: Rng + ?Sized>(
    queries: &[TextFeature],
    joint: &JointCooccurrence,
    object_features: &[TextFeature],
    asked: &BTreeSet<usize>,
    n: usize,
    rng: &mut R,
) -> Result<ActionSet> {
    let anchor = baseline_qasim(queries, object_features, asked, 1)?.objects[0];
    let pool = unasked(joint.vocab_size(), asked);
    let row = joint.row(anchor);
    if pool.iter().all(|&a| row[a] == 0.0) {
        return baseline_random(joint.vocab_size(), asked, n, rng);
    }
    let objects = top_n_by(&pool, |a| row[a], n);
    let log_prob = action_log_prob(row, &objects);
    Ok(ActionSet { objects, log_prob })
}
