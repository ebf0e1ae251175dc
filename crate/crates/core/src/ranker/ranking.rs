use std::cmp::Ordering;
use std::collections::BTreeSet;

use super::SimilarityVector;
use crate::error::{Error, Result};
use crate::gallery::{Dataset, ObjectPresenceIndex};

/// Multiplier applied to an image that contains a confirmed-absent object.
pub const REFINE_FACTOR: f64 = 0.9;

/// Gallery positions sorted by descending score, ties by ascending image id.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub order: Vec<usize>,
    /// Scores aligned with `order`.
    pub scores: Vec<f64>,
    /// 1-based rank of the target, when one was given.
    pub target_rank: Option<usize>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// 1-based rank of the image at gallery position `pos`.
    pub fn rank_of(&self, pos: usize) -> Option<usize> {
        self.order.iter().position(|&p| p == pos).map(|r| r + 1)
    }

    pub fn ids<'a>(&self, dataset: &'a Dataset) -> Vec<&'a str> {
        self.order.iter().map(|&p| dataset.images[p].id.as_str()).collect()
    }
}

/// Multiplies by [`REFINE_FACTOR`] every image whose objects meet `negatives`.
///
/// The factor is applied once per call however many negatives match.
pub fn refine_similarities(
    scores: &SimilarityVector,
    negatives: &BTreeSet<usize>,
    index: &ObjectPresenceIndex,
) -> SimilarityVector {
    let refined = scores
        .scores
        .iter()
        .enumerate()
        .map(|(n, &s)| if index.intersects(n, negatives) { s * REFINE_FACTOR } else { s })
        .collect();
    SimilarityVector { scores: refined, kind: scores.kind }
}

pub(crate) fn rank_positions(
    scores: &[f64],
    ids: &[&str],
    target: Option<usize>,
) -> RankedList {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => ids[a].cmp(ids[b]),
        other => other,
    });
    let target_rank = target.and_then(|t| order.iter().position(|&p| p == t).map(|r| r + 1));
    let sorted = order.iter().map(|&p| scores[p]).collect();
    RankedList { order, scores: sorted, target_rank }
}

/// Ranks gallery positions of `dataset`, marking the target by position.
pub fn rank_positions_for(scores: &SimilarityVector, dataset: &Dataset, target: Option<usize>) -> RankedList {
    let ids: Vec<&str> = dataset.images.iter().map(|img| img.id.as_str()).collect();
    rank_positions(&scores.scores, &ids, target)
}

pub fn rank_gallery(
    scores: &SimilarityVector,
    dataset: &Dataset,
    target_id: Option<&str>,
) -> Result<RankedList> {
    if scores.scores.len() != dataset.images.len() {
        return Err(Error::DimensionMismatch {
            context: "similarity vector vs gallery",
            expected: dataset.images.len(),
            actual: scores.scores.len(),
        });
    }
    let target = match target_id {
        Some(id) => Some(dataset.image_position(id).ok_or_else(|| Error::UnknownTarget(id.into()))?),
        None => None,
    };
    let ids: Vec<&str> = dataset.images.iter().map(|img| img.id.as_str()).collect();
    Ok(rank_positions(&scores.scores, &ids, target))
}

/// Object frequencies over the objects of the top `min(k, N)` ranked images.
pub fn top_object_distribution(
    ranked: &RankedList,
    index: &ObjectPresenceIndex,
    k: usize,
) -> Vec<f64> {
    let mut dist = vec![0.0; index.vocab_size()];
    let mut total = 0usize;
    for &pos in ranked.order.iter().take(k.max(1)) {
        for &a in index.objects_of(pos) {
            dist[a] += 1.0;
            total += 1;
        }
    }
    if total > 0 {
        for p in &mut dist {
            *p /= total as f64;
        }
    }
    dist
}
