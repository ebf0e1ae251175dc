//! Candidate generation: policy state, networks and object selection.

mod network;
mod persist;

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use serde::{Deserialize, Serialize};

pub use network::{
    policy_backward, policy_backward_into, policy_forward, softmax_backward, value_backward,
    value_backward_into, value_forward, Dense, PolicyCache, PolicyParameters, Tensors, Upstream,
    ValueCache, ValueParameters, DEFAULT_HIDDEN,
};
pub use persist::{load_policy, parse_policy, policy_to_json, save_policy};

use crate::encoders::TextFeature;
use crate::error::{Error, Result};
use crate::gallery::ObjectPresenceIndex;
use crate::ranker::{top_object_distribution, RankedList};

/// Number of top-ranked images whose objects form the ranking part of the state.
pub const DEFAULT_STATE_TOP_K: usize = 100;

/// Floor applied before taking the log of a selection probability.
pub const MIN_PROB: f64 = 1e-300;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateLayout {
    /// Mean query feature followed by the top-K object distribution.
    #[default]
    TextMeanPlusDist,
    /// Query-conditioned shaping distribution followed by the top-K object
    /// distribution (both over the vocabulary).
    DualDist,
}

impl StateLayout {
    pub fn state_dim(self, feature_dim: usize, vocab_size: usize) -> usize {
        match self {
            StateLayout::TextMeanPlusDist => feature_dim + vocab_size,
            StateLayout::DualDist => 2 * vocab_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub vector: Vec<f64>,
    /// Length of the leading block (query mean or shaping distribution).
    pub split: usize,
}

impl State {
    pub fn query_part(&self) -> &[f64] {
        &self.vector[..self.split]
    }

    pub fn ranking_part(&self) -> &[f64] {
        &self.vector[self.split..]
    }
}

fn query_mean(query_features: &[TextFeature]) -> Result<Vec<f64>> {
    let first = query_features.first().ok_or(Error::EmptyQuerySet)?;
    let mut mean = vec![0.0; first.dim()];
    for q in query_features {
        if q.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "query feature",
                expected: mean.len(),
                actual: q.dim(),
            });
        }
        for (m, x) in mean.iter_mut().zip(&q.vector) {
            *m += x;
        }
    }
    let n = query_features.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// `(mean query feature, top-k object distribution)`.
pub fn build_state(
    query_features: &[TextFeature],
    ranked: &RankedList,
    index: &ObjectPresenceIndex,
    top_k: usize,
) -> Result<State> {
    let mut vector = query_mean(query_features)?;
    let split = vector.len();
    vector.extend(top_object_distribution(ranked, index, top_k));
    Ok(State { vector, split })
}

/// Builds states for either layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateBuilder {
    pub layout: StateLayout,
    pub top_k: usize,
}

impl Default for StateBuilder {
    fn default() -> Self {
        StateBuilder { layout: StateLayout::TextMeanPlusDist, top_k: DEFAULT_STATE_TOP_K }
    }
}

impl StateBuilder {
    /// `shaping` is the current `P(a | Q_t)`; only the dual layout reads it.
    pub fn build(
        &self,
        query_features: &[TextFeature],
        ranked: &RankedList,
        index: &ObjectPresenceIndex,
        shaping: Option<&[f64]>,
    ) -> Result<State> {
        match self.layout {
            StateLayout::TextMeanPlusDist => build_state(query_features, ranked, index, self.top_k),
            StateLayout::DualDist => {
                if query_features.is_empty() {
                    return Err(Error::EmptyQuerySet);
                }
                let shaping = shaping.ok_or_else(|| {
                    Error::InvalidConfig("dual_dist state needs the shaping distribution".into())
                })?;
                let mut vector = shaping.to_vec();
                let split = vector.len();
                vector.extend(top_object_distribution(ranked, index, self.top_k));
                Ok(State { vector, split })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Stochastic,
    Greedy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSet {
    pub objects: Vec<usize>,
    /// `Σ log π(a)` under the unmasked distribution.
    pub log_prob: f64,
}

pub fn action_log_prob(probs: &[f64], objects: &[usize]) -> f64 {
    objects.iter().map(|&a| probs[a].max(MIN_PROB).ln()).sum()
}

/// Indices `< vocab` not in `excluded`, ascending.
pub fn unasked(vocab: usize, excluded: &BTreeSet<usize>) -> Vec<usize> {
    (0..vocab).filter(|a| !excluded.contains(a)).collect()
}

/// Top `n` of `candidates` by `score`, ties broken by ascending index.
pub(crate) fn top_n_by(candidates: &[usize], score: impl Fn(usize) -> f64, n: usize) -> Vec<usize> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(a.cmp(&b)));
    ranked.truncate(n);
    ranked
}

/// Proposes up to `n` objects that have not been asked yet.
///
/// Excluded objects get zero mass and the rest is renormalized. Greedy mode
/// takes the most probable objects; stochastic mode draws without
/// replacement, renormalizing after each draw.
pub fn select_candidates<R: Rng + ?Sized>(
    probs: &[f64],
    n: usize,
    mode: SelectionMode,
    excluded: &BTreeSet<usize>,
    rng: &mut R,
) -> Result<ActionSet> {
    if n == 0 {
        return Err(Error::InvalidConfig("number of candidates must be at least 1".into()));
    }
    let mut pool = unasked(probs.len(), excluded);
    if pool.is_empty() {
        return Err(Error::AllExcluded);
    }
    let objects = match mode {
        SelectionMode::Greedy => top_n_by(&pool, |a| probs[a], n),
        SelectionMode::Stochastic => {
            let take = n.min(pool.len());
            let mut chosen = Vec::with_capacity(take);
            for _ in 0..take {
                let weights: Vec<f64> = pool.iter().map(|&a| probs[a].max(0.0)).collect();
                let slot = match WeightedIndex::new(&weights) {
                    Ok(dist) => dist.sample(rng),
                    // all remaining mass underflowed: fall back to uniform
                    Err(_) => rng.random_range(0..pool.len()),
                };
                chosen.push(pool.remove(slot));
            }
            chosen
        }
    };
    let log_prob = action_log_prob(probs, &objects);
    Ok(ActionSet { objects, log_prob })
}

/// A trained policy together with the state layout it expects.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub layout: StateLayout,
    pub policy: PolicyParameters,
    pub value: ValueParameters,
}

impl PolicyModel {
    pub fn init<R: Rng + ?Sized>(
        layout: StateLayout,
        feature_dim: usize,
        vocab_size: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let d_state = layout.state_dim(feature_dim, vocab_size);
        PolicyModel {
            layout,
            policy: PolicyParameters::init(d_state, hidden, vocab_size, rng),
            value: ValueParameters::init(d_state, hidden, rng),
        }
    }

    pub fn d_state(&self) -> usize {
        self.policy.d_state()
    }

    pub fn vocab_size(&self) -> usize {
        self.policy.vocab_size()
    }

    /// Whether the model's input and output sizes fit a dataset.
    pub fn check_compatible(&self, feature_dim: usize, vocab_size: usize) -> Result<()> {
        let expected = self.layout.state_dim(feature_dim, vocab_size);
        if self.d_state() != expected {
            return Err(Error::DimensionMismatch {
                context: "policy state size vs dataset",
                expected,
                actual: self.d_state(),
            });
        }
        if self.vocab_size() != vocab_size {
            return Err(Error::DimensionMismatch {
                context: "policy output size vs vocabulary",
                expected: vocab_size,
                actual: self.vocab_size(),
            });
        }
        Ok(())
    }
}
