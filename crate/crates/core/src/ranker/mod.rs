//! Text-image similarity backends and gallery ranking.
//!
//! Two backends score a text feature against an image's regions:
//!
//! * `sscan`: unidirectional attention. With `c_m = cos(x, r_m)` over the `M`
//!   regions and `γ = softmax(c)`, the score is `(1/M) Σ_m γ_m c_m`.
//! * `tcmpl`: global alignment, `cos(x, mean_m r_m)`.
//!
//! A query set scores as the arithmetic mean of its per-query scores; zero
//! query vectors contribute 0.

mod metrics;
mod ranking;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{mean_rank, recall_at_k};
pub use ranking::{
    rank_gallery, rank_positions_for, refine_similarities, top_object_distribution, RankedList, REFINE_FACTOR,
};

use crate::encoders::TextFeature;
use crate::error::{Error, Result};
use crate::gallery::{Dataset, GalleryImage};
use crate::linalg;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankerKind {
    #[default]
    Sscan,
    Tcmpl,
}

impl fmt::Display for RankerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RankerKind::Sscan => "sscan",
            RankerKind::Tcmpl => "tcmpl",
        })
    }
}

impl FromStr for RankerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sscan" => Ok(RankerKind::Sscan),
            "tcmpl" => Ok(RankerKind::Tcmpl),
            other => Err(format!("unknown ranker {other:?} (expected sscan or tcmpl)")),
        }
    }
}

/// One score per gallery image, in gallery order.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityVector {
    pub scores: Vec<f64>,
    pub kind: RankerKind,
}

#[inline]
fn cos_with_norms(x: &[f64], x_norm: f64, r: &[f64], r_norm: f64) -> f64 {
    let denom = x_norm * r_norm;
    if denom == 0.0 {
        0.0
    } else {
        (linalg::dot(x, r) / denom).clamp(-1.0, 1.0)
    }
}

/// Attention-pooled score from the per-region cosines.
fn attend(cosines: &[f64]) -> f64 {
    let gamma = linalg::softmax(cosines);
    let pooled: f64 = gamma.iter().zip(cosines).map(|(g, c)| g * c).sum();
    pooled / cosines.len() as f64
}

fn check_dim(text: &TextFeature, image: &GalleryImage) -> Result<()> {
    for row in &image.regions {
        if row.len() != text.dim() {
            return Err(Error::DimensionMismatch {
                context: "text feature vs region feature",
                expected: row.len(),
                actual: text.dim(),
            });
        }
    }
    Ok(())
}

/// Attention weights `γ` over the image's regions for one text feature.
pub fn sscan_attention(text: &TextFeature, image: &GalleryImage) -> Result<Vec<f64>> {
    check_dim(text, image)?;
    let x_norm = linalg::norm(&text.vector);
    let cosines: Vec<f64> = image
        .regions
        .iter()
        .map(|r| cos_with_norms(&text.vector, x_norm, r, linalg::norm(r)))
        .collect();
    Ok(linalg::softmax(&cosines))
}

pub fn sscan_similarity(text: &TextFeature, image: &GalleryImage) -> Result<f64> {
    check_dim(text, image)?;
    if text.is_zero() || image.regions.is_empty() {
        return Ok(0.0);
    }
    let x_norm = linalg::norm(&text.vector);
    let cosines: Vec<f64> = image
        .regions
        .iter()
        .map(|r| cos_with_norms(&text.vector, x_norm, r, linalg::norm(r)))
        .collect();
    Ok(attend(&cosines))
}

fn mean_region(image: &GalleryImage, dim: usize) -> Vec<f64> {
    linalg::mean_rows(image.regions.iter().map(Vec::as_slice), dim)
}

pub fn tcmpl_similarity(text: &TextFeature, image: &GalleryImage) -> Result<f64> {
    check_dim(text, image)?;
    let mean = mean_region(image, text.dim());
    let mean_norm = linalg::norm(&mean);
    if mean_norm == 0.0 {
        return Err(Error::DegenerateImage(image.id.clone()));
    }
    Ok(cos_with_norms(&text.vector, linalg::norm(&text.vector), &mean, mean_norm))
}

pub fn similarity(text: &TextFeature, image: &GalleryImage, kind: RankerKind) -> Result<f64> {
    match kind {
        RankerKind::Sscan => sscan_similarity(text, image),
        RankerKind::Tcmpl => tcmpl_similarity(text, image),
    }
}

pub fn query_set_similarity(
    queries: &[TextFeature],
    image: &GalleryImage,
    kind: RankerKind,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let mut total = 0.0;
    for q in queries {
        total += similarity(q, image, kind)?;
    }
    Ok(total / queries.len() as f64)
}

struct PreparedImage {
    regions: Vec<Vec<f64>>,
    region_norms: Vec<f64>,
    mean: Vec<f64>,
    mean_norm: f64,
}

/// Gallery-wide scorer with region norms and mean vectors precomputed.
///
/// Produces bit-identical results to the per-image functions above.
pub struct GalleryScorer {
    kind: RankerKind,
    dim: usize,
    images: Vec<PreparedImage>,
}

impl GalleryScorer {
    pub fn new(dataset: &Dataset, kind: RankerKind) -> Result<Self> {
        let dim = dataset.feature_dim;
        let images = dataset
            .images
            .iter()
            .map(|img| {
                let mean = mean_region(img, dim);
                let mean_norm = linalg::norm(&mean);
                if kind == RankerKind::Tcmpl && mean_norm == 0.0 {
                    return Err(Error::DegenerateImage(img.id.clone()));
                }
                Ok(PreparedImage {
                    region_norms: img.regions.iter().map(|r| linalg::norm(r)).collect(),
                    regions: img.regions.clone(),
                    mean,
                    mean_norm,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GalleryScorer { kind, dim, images })
    }

    pub fn kind(&self) -> RankerKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn score_prepared(&self, text: &TextFeature, x_norm: f64, img: &PreparedImage) -> f64 {
        match self.kind {
            RankerKind::Sscan => {
                if x_norm == 0.0 || img.regions.is_empty() {
                    return 0.0;
                }
                let cosines: Vec<f64> = img
                    .regions
                    .iter()
                    .zip(&img.region_norms)
                    .map(|(r, &rn)| cos_with_norms(&text.vector, x_norm, r, rn))
                    .collect();
                attend(&cosines)
            }
            RankerKind::Tcmpl => cos_with_norms(&text.vector, x_norm, &img.mean, img.mean_norm),
        }
    }

    /// Scores of one text feature against every image.
    pub fn score_query(&self, text: &TextFeature) -> Result<Vec<f64>> {
        if text.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "text feature vs gallery",
                expected: self.dim,
                actual: text.dim(),
            });
        }
        let x_norm = linalg::norm(&text.vector);
        Ok(self.images.par_iter().map(|img| self.score_prepared(text, x_norm, img)).collect())
    }

    /// Query-set similarity from already computed per-query score rows.
    pub fn combine(&self, per_query: &[Vec<f64>]) -> Result<SimilarityVector> {
        if per_query.is_empty() {
            return Err(Error::EmptyQuerySet);
        }
        let count = per_query.len() as f64;
        let scores = (0..self.images.len())
            .map(|n| {
                let mut total = 0.0;
                for row in per_query {
                    total += row[n];
                }
                total / count
            })
            .collect();
        Ok(SimilarityVector { scores, kind: self.kind })
    }

    pub fn score_queries(&self, queries: &[TextFeature]) -> Result<SimilarityVector> {
        let rows = queries.iter().map(|q| self.score_query(q)).collect::<Result<Vec<_>>>()?;
        self.combine(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::FeatureSource;
    use crate::gallery::{generate_synthetic, SyntheticConfig};
    use crate::encoders::encode_text;

    fn feat(v: &[f64]) -> TextFeature {
        TextFeature { vector: v.to_vec(), source: FeatureSource::CaptionQuery }
    }

    fn image(regions: &[&[f64]]) -> GalleryImage {
        GalleryImage {
            id: "img".into(),
            regions: regions.iter().map(|r| r.to_vec()).collect(),
            objects: vec![0],
            captions: vec!["x".into()],
            split: None,
            url: None,
        }
    }

    #[test]
    fn sscan_single_identical_region() {
        let s = sscan_similarity(&feat(&[0.6, 0.8]), &image(&[&[0.6, 0.8]])).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sscan_orthogonal_regions() {
        let img = image(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let x = feat(&[1.0, 0.0, 0.0]);
        assert_eq!(sscan_similarity(&x, &img).unwrap(), 0.0);
        let gamma = sscan_attention(&x, &img).unwrap();
        assert_eq!(gamma, vec![0.5, 0.5]);
    }

    #[test]
    fn sscan_hand_computed_softmax() {
        let e = std::f64::consts::E;
        let g0 = e / (e + 1.0);
        let expected = 0.5 * (g0 * 1.0 + (1.0 - g0) * 0.0);
        let s = sscan_similarity(&feat(&[1.0, 0.0]), &image(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.3655).abs() < 1e-4);
    }

    #[test]
    fn sscan_zero_text_scores_zero() {
        assert_eq!(sscan_similarity(&feat(&[0.0, 0.0]), &image(&[&[1.0, 0.0]])).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = sscan_similarity(&feat(&[1.0, 0.0, 0.0]), &image(&[&[1.0, 0.0]]));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn tcmpl_examples() {
        let x = feat(&[1.0, 0.0]);
        assert!((tcmpl_similarity(&x, &image(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tcmpl_similarity(&x, &image(&[&[0.0, 1.0]])).unwrap(), 0.0);
        let s = tcmpl_similarity(&x, &image(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            tcmpl_similarity(&x, &image(&[&[1.0, 0.0], &[-1.0, 0.0]])),
            Err(Error::DegenerateImage(_))
        ));
    }

    #[test]
    fn query_set_examples() {
        let img = image(&[&[1.0, 0.0], &[0.6, 0.8]]);
        let q = feat(&[0.8, 0.6]);
        for kind in [RankerKind::Sscan, RankerKind::Tcmpl] {
            let single = similarity(&q, &img, kind).unwrap();
            assert_eq!(query_set_similarity(&[q.clone()], &img, kind).unwrap(), single);
            let twice = query_set_similarity(&[q.clone(), q.clone()], &img, kind).unwrap();
            assert!((twice - single).abs() < 1e-15);
        }
        assert!(matches!(
            query_set_similarity(&[], &img, RankerKind::Sscan),
            Err(Error::EmptyQuerySet)
        ));
    }

    #[test]
    fn query_set_matches_naive_loop() {
        let img = image(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let qs = [feat(&[1.0, 1.0, 0.0]), feat(&[0.0, 0.0, 2.0]), feat(&[0.0, 0.0, 0.0])];
        // naive: explicit cosines and softmax per query
        let mut total = 0.0;
        for q in &qs {
            let qn = q.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            if qn == 0.0 {
                continue;
            }
            let cos: Vec<f64> = img
                .regions
                .iter()
                .map(|r| q.vector.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / qn)
                .collect();
            let z: f64 = cos.iter().map(|c| c.exp()).sum();
            total += cos.iter().map(|c| c.exp() / z * c).sum::<f64>() / 3.0;
        }
        let expected = total / 3.0;
        let got = query_set_similarity(&qs, &img, RankerKind::Sscan).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn scorer_is_bit_identical_to_per_image_functions() {
        let ds = generate_synthetic(&SyntheticConfig::small(2)).unwrap();
        let queries = vec![encode_text(&ds.images[3].captions[0], &ds), encode_text(&ds.vocab[5], &ds)];
        for kind in [RankerKind::Sscan, RankerKind::Tcmpl] {
            let scorer = GalleryScorer::new(&ds, kind).unwrap();
            let batch = scorer.score_queries(&queries).unwrap();
            for (n, img) in ds.images.iter().enumerate() {
                assert_eq!(batch.scores[n], query_set_similarity(&queries, img, kind).unwrap());
            }
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let ds = generate_synthetic(&SyntheticConfig::small(8)).unwrap();
        for img in &ds.images {
            for cap in &img.captions {
                let gamma = sscan_attention(&encode_text(cap, &ds), img).unwrap();
                assert!((gamma.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ranker_kind_parses() {
        assert_eq!("SSCAN".parse::<RankerKind>().unwrap(), RankerKind::Sscan);
        assert_eq!("tcmpl".parse::<RankerKind>().unwrap(), RankerKind::Tcmpl);
        assert!("bm25".parse::<RankerKind>().is_err());
    }
}
