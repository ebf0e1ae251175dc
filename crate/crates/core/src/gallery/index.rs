use std::collections::BTreeSet;

use fixedbitset::FixedBitSet;

use super::Dataset;

/// Object-major presence bitmap over the gallery plus per-object frequencies.
#[derive(Clone, Debug)]
pub struct ObjectPresenceIndex {
    presence: Vec<FixedBitSet>,
    counts: Vec<usize>,
    image_objects: Vec<Vec<usize>>,
}

impl ObjectPresenceIndex {
    pub fn vocab_size(&self) -> usize {
        self.presence.len()
    }

    pub fn num_images(&self) -> usize {
        self.image_objects.len()
    }

    pub fn contains(&self, object: usize, image: usize) -> bool {
        self.presence[object].contains(image)
    }

    /// Number of gallery images containing `object`.
    pub fn count(&self, object: usize) -> usize {
        self.counts[object]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn objects_of(&self, image: usize) -> &[usize] {
        &self.image_objects[image]
    }

    /// Whether `image` contains at least one object of `set`.
    pub fn intersects(&self, image: usize, set: &BTreeSet<usize>) -> bool {
        set.iter().any(|&a| a < self.presence.len() && self.presence[a].contains(image))
    }
}

pub fn build_object_index(dataset: &Dataset) -> ObjectPresenceIndex {
    let n = dataset.images.len();
    let mut presence = vec![FixedBitSet::with_capacity(n); dataset.vocab.len()];
    for (i, img) in dataset.images.iter().enumerate() {
        for &a in &img.objects {
            presence[a].insert(i);
        }
    }
    let counts = presence.iter().map(|row| row.count_ones(..)).collect();
    let image_objects = dataset.images.iter().map(|img| img.objects.clone()).collect();
    ObjectPresenceIndex { presence, counts, image_objects }
}
