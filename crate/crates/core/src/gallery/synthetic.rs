//! Synthetic galleries with a known object structure.
//!
//! Every vocabulary word gets a random unit prototype that doubles as its word
//! embedding. An image draws a set of objects with a Zipf-like skew (word `i`
//! has weight `1 / (i + 1)`), each region is the prototype of one of those
//! objects plus isotropic Gaussian noise, and every caption names one to three
//! of the image's objects. Text and regions therefore share one space without
//! any encoder training.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, GalleryImage, DATASET_VERSION};
use crate::error::{Error, Result};
use crate::linalg;

const ZIPF_EXPONENT: f64 = 1.0;
const MAX_CAPTION_WORDS: usize = 3;

const OBJECT_WORDS: &[&str] = &[
    "man", "window", "tree", "building", "sky", "person", "shirt", "wall", "sign", "grass",
    "woman", "cloud", "water", "table", "head", "hand", "leg", "pole", "car", "plate",
    "ear", "fence", "door", "hair", "street", "chair", "boy", "field", "girl", "floor",
    "jacket", "light", "line", "road", "snow", "sidewalk", "hat", "bus", "shadow", "train",
    "rock", "leaf", "pants", "bench", "umbrella", "dog", "cat", "horse", "elephant", "giraffe",
    "zebra", "bird", "boat", "plane", "truck", "bike", "helmet", "glass", "cup", "bowl",
    "pizza", "food", "shoe", "bag", "box", "clock", "lamp", "bed", "pillow", "sink",
    "toilet", "mirror", "shelf", "counter", "wave", "beach", "sand", "ocean", "mountain", "hill",
    "bush", "flower", "ball", "racket", "skateboard", "surfboard", "kite", "frisbee", "sunglasses", "top",
    "tie", "collar", "wheel", "tire", "roof", "tower", "bridge", "river", "branch", "trunk",
    "banana", "orange", "apple", "cake", "sandwich", "phone", "laptop", "keyboard", "screen", "book",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub regions_per_image: usize,
    /// Inclusive `(min, max)` number of objects per image.
    pub objects_per_image: (usize, usize),
    pub captions_per_image: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// The benchmark gallery used by the acceptance suite: 2000 images over
    /// 100 objects, 32-d features, 8 regions and 10 captions per image.
    pub fn benchmark() -> Self {
        SyntheticConfig {
            n_images: 2000,
            vocab_size: 100,
            dim: 32,
            regions_per_image: 8,
            objects_per_image: (3, 6),
            captions_per_image: 10,
            noise_sigma: 0.15,
            seed: 1,
        }
    }

    /// A 50-image toy gallery for unit tests.
    pub fn small(seed: u64) -> Self {
        SyntheticConfig {
            n_images: 50,
            vocab_size: 12,
            dim: 8,
            regions_per_image: 4,
            objects_per_image: (2, 4),
            captions_per_image: 3,
            noise_sigma: 0.1,
            seed,
        }
    }

    fn check(&self) -> Result<()> {
        let (lo, hi) = self.objects_per_image;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_images == 0 {
            return bad("n_images must be positive".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.regions_per_image == 0 || self.captions_per_image == 0 {
            return bad("every image needs at least one region and one caption".into());
        }
        if lo == 0 || lo > hi {
            return bad(format!("objects_per_image range ({lo}, {hi}) is empty"));
        }
        if self.vocab_size < hi {
            return bad(format!(
                "vocab_size {} is smaller than the maximum of {hi} objects per image",
                self.vocab_size
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and non-negative, got {}", self.noise_sigma));
        }
        Ok(())
    }
}

fn vocab_words(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match OBJECT_WORDS.get(i) {
            Some(w) => (*w).to_owned(),
            None => format!("object{i}"),
        })
        .collect()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if linalg::norm(&v) > 1e-12 {
            return linalg::normalized(&v);
        }
    }
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Dataset> {
    config.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab = vocab_words(config.vocab_size);
    let prototypes: Vec<Vec<f64>> =
        (0..config.vocab_size).map(|_| random_unit(&mut rng, config.dim)).collect();
    let zipf: Vec<f64> =
        (0..config.vocab_size).map(|i| 1.0 / ((i + 1) as f64).powf(ZIPF_EXPONENT)).collect();

    let id_width = config.n_images.to_string().len().max(5);
    let (lo, hi) = config.objects_per_image;
    let mut images = Vec::with_capacity(config.n_images);
    for n in 0..config.n_images {
        let k = rng.random_range(lo..=hi);
        let mut weights = zipf.clone();
        let mut objects = Vec::with_capacity(k);
        for _ in 0..k {
            let dist = WeightedIndex::new(&weights).expect("positive weights remain");
            let a = dist.sample(&mut rng);
            weights[a] = 0.0;
            objects.push(a);
        }
        // regions cover every object once before repeating
        let regions = (0..config.regions_per_image)
            .map(|m| {
                let a = if m < k { objects[m] } else { objects[rng.random_range(0..k)] };
                let proto = &prototypes[a];
                if config.noise_sigma == 0.0 {
                    return proto.clone();
                }
                let noisy: Vec<f64> = proto
                    .iter()
                    .map(|&x| x + config.noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                linalg::normalized(&noisy)
            })
            .collect();
        let captions = (0..config.captions_per_image)
            .map(|_| {
                let len = rng.random_range(1..=k.min(MAX_CAPTION_WORDS));
                objects
                    .choose_multiple(&mut rng, len)
                    .map(|&a| vocab[a].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        objects.sort_unstable();
        images.push(GalleryImage {
            id: format!("img{n:0id_width$}"),
            regions,
            objects,
            captions,
            split: None,
            url: None,
        });
    }

    let embeddings: BTreeMap<String, Vec<f64>> = vocab.iter().cloned().zip(prototypes).collect();
    Ok(Dataset {
        version: DATASET_VERSION,
        feature_dim: config.dim,
        vocab,
        embeddings,
        images,
        rng_seed: Some(config.seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::{parse_dataset, validate_dataset, dataset_to_json};

    #[test]
    fn zero_noise_region_equals_prototype() {
        let cfg = SyntheticConfig {
            n_images: 1,
            vocab_size: 1,
            dim: 4,
            regions_per_image: 1,
            objects_per_image: (1, 1),
            captions_per_image: 1,
            noise_sigma: 0.0,
            seed: 0,
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let word = &ds.vocab[0];
        assert_eq!(ds.images[0].regions[0], ds.embeddings[word]);
        assert_eq!(ds.images[0].captions, vec![word.clone()]);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&SyntheticConfig::small(9)).unwrap();
        let b = generate_synthetic(&SyntheticConfig::small(9)).unwrap();
        assert_eq!(dataset_to_json(&a), dataset_to_json(&b));
        let c = generate_synthetic(&SyntheticConfig::small(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_regions_are_prototypes() {
        let cfg = SyntheticConfig { noise_sigma: 0.0, ..SyntheticConfig::small(4) };
        let ds = generate_synthetic(&cfg).unwrap();
        for img in &ds.images {
            for row in &img.regions {
                assert!(ds.embeddings.values().any(|p| p == row));
            }
        }
    }

    #[test]
    fn output_is_valid_and_round_trips() {
        let ds = generate_synthetic(&SyntheticConfig { seed: 7, ..SyntheticConfig::small(7) }).unwrap();
        assert!(validate_dataset(&ds).is_valid());
        let text = dataset_to_json(&ds);
        let back = parse_dataset(&text).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_json(&back), text);
    }

    #[test]
    fn contradictory_sizes_rejected() {
        let cfg = SyntheticConfig { vocab_size: 3, objects_per_image: (2, 5), ..SyntheticConfig::small(0) };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = SyntheticConfig { dim: 1, ..SyntheticConfig::small(0) };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
        let cfg = SyntheticConfig { objects_per_image: (3, 2), ..SyntheticConfig::small(0) };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn frequency_is_skewed_toward_low_indices() {
        let ds = generate_synthetic(&SyntheticConfig::benchmark()).unwrap();
        let idx = crate::gallery::build_object_index(&ds);
        assert!(idx.count(0) > 5 * idx.count(99), "{} vs {}", idx.count(0), idx.count(99));
    }
}
