//! Gallery data model and its on-disk JSON form.
//!
//! A [`Dataset`] bundles the object vocabulary, a word-embedding table and the
//! gallery images. Each [`GalleryImage`] carries its region features, the set
//! of object indices detected in it and a handful of region captions.

mod index;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use index::{build_object_index, ObjectPresenceIndex};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalleryImage {
    pub id: String,
    /// `M × d` region features, one row per detected region.
    pub regions: Vec<Vec<f64>>,
    /// Indices into [`Dataset::vocab`].
    pub objects: Vec<usize>,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Optional pass-through link for front ends that can show the picture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl GalleryImage {
    pub fn contains_object(&self, object: usize) -> bool {
        self.objects.contains(&object)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub version: u32,
    pub feature_dim: usize,
    pub vocab: Vec<String>,
    pub embeddings: BTreeMap<String, Vec<f64>>,
    pub images: Vec<GalleryImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl Dataset {
    pub fn num_images(&self) -> usize {
        self.images.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn image_position(&self, id: &str) -> Option<usize> {
        self.images.iter().position(|img| img.id == id)
    }

    pub fn vocab_lookup(&self) -> HashMap<&str, usize> {
        self.vocab.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect()
    }

    /// Tags the last `test_count` images as test and the rest as train.
    pub fn assign_holdout(&mut self, test_count: usize) -> Result<()> {
        if test_count >= self.images.len() {
            return Err(Error::InvalidConfig(format!(
                "test split of {test_count} leaves no training images out of {}",
                self.images.len()
            )));
        }
        let cut = self.images.len() - test_count;
        for (i, img) in self.images.iter_mut().enumerate() {
            img.split = Some(if i < cut { Split::Train } else { Split::Test });
        }
        Ok(())
    }

    /// Copy of the dataset restricted to images tagged with `split`.
    ///
    /// Untagged datasets have no splits; asking for one is an error so that a
    /// missing tag never silently evaluates on the training images.
    pub fn subset(&self, split: Split) -> Result<Dataset> {
        let images: Vec<GalleryImage> =
            self.images.iter().filter(|img| img.split == Some(split)).cloned().collect();
        if images.is_empty() {
            return Err(Error::InvalidConfig(format!("dataset has no images tagged {split:?}")));
        }
        Ok(Dataset { images, ..self.clone_header() })
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            version: self.version,
            feature_dim: self.feature_dim,
            vocab: self.vocab.clone(),
            embeddings: self.embeddings.clone(),
            images: Vec::new(),
            rng_seed: self.rng_seed,
        }
    }
}

/// One broken invariant. `location` is an image id or `"dataset"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub location: String,
    pub field: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, location: &str, field: &str, message: String) {
        self.violations.push(Violation {
            location: location.to_owned(),
            field: field.to_owned(),
            message,
        });
    }
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = dataset.feature_dim;
    let vocab_size = dataset.vocab.len();

    if dataset.version != DATASET_VERSION {
        report.push("dataset", "version", format!("unsupported version {}", dataset.version));
    }
    if d == 0 {
        report.push("dataset", "feature_dim", "feature_dim must be positive".into());
    }
    if vocab_size == 0 {
        report.push("dataset", "vocab", "vocabulary is empty".into());
    }
    let mut seen_words = HashSet::new();
    for word in &dataset.vocab {
        if !seen_words.insert(word.as_str()) {
            report.push("dataset", "vocab", format!("duplicate vocabulary word {word:?}"));
        }
        if !dataset.embeddings.contains_key(word) {
            report.push("dataset", "embeddings", format!("no embedding for vocabulary word {word:?}"));
        }
    }
    for (word, vector) in &dataset.embeddings {
        if vector.len() != d {
            report.push(
                "dataset",
                "embeddings",
                format!("embedding of {word:?} has {} dims, expected {d}", vector.len()),
            );
        } else if vector.iter().any(|x| !x.is_finite()) {
            report.push("dataset", "embeddings", format!("embedding of {word:?} is not finite"));
        }
    }

    if dataset.images.is_empty() {
        report.push("dataset", "images", "gallery is empty".into());
    }
    let mut seen_ids = HashSet::new();
    for img in &dataset.images {
        let loc = img.id.as_str();
        if !seen_ids.insert(loc) {
            report.push(loc, "id", format!("duplicate image id {loc:?}"));
        }
        if img.regions.is_empty() {
            report.push(loc, "regions", "image has no regions".into());
        }
        for (m, row) in img.regions.iter().enumerate() {
            if row.len() != d {
                report.push(
                    loc,
                    "regions",
                    format!("region {m} has {} dims, expected {d}", row.len()),
                );
            } else if row.iter().any(|x| !x.is_finite()) {
                report.push(loc, "regions", format!("region {m} is not finite"));
            }
        }
        if img.objects.is_empty() {
            report.push(loc, "objects", "image has no objects".into());
        }
        let mut seen_objects = HashSet::new();
        for &obj in &img.objects {
            if obj >= vocab_size {
                report.push(
                    loc,
                    "objects",
                    format!("object index {obj} out of range for vocabulary of {vocab_size}"),
                );
            }
            if !seen_objects.insert(obj) {
                report.push(loc, "objects", format!("duplicate object index {obj}"));
            }
        }
        if img.captions.is_empty() {
            report.push(loc, "captions", "image has no captions".into());
        }
    }
    report
}

/// Parses a dataset document and checks every invariant.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let dataset: Dataset =
        serde_json::from_value(value).map_err(|e| Error::schema("document", e.to_string()))?;
    let report = validate_dataset(&dataset);
    if let Some(first) = report.violations.first() {
        let extra = report.violations.len() - 1;
        let mut message = format!("{}: {}", first.field, first.message);
        if extra > 0 {
            message.push_str(&format!(" (and {extra} more violations)"));
        }
        return Err(Error::schema(first.location.clone(), message));
    }
    Ok(dataset)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.to_owned(), source })?;
    parse_dataset(&text)
}

pub fn dataset_to_json(dataset: &Dataset) -> String {
    serde_json::to_string(dataset).expect("dataset serialization cannot fail")
}

/// Writes `dataset` next to `path` and renames it into place.
pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), |w| {
        serde_json::to_writer(&mut *w, dataset).map_err(std::io::Error::other)
    })
}

/// Temp-file-then-rename write used for every artifact the crate produces.
pub fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<&mut fs::File>) -> std::io::Result<()>,
) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_owned(), source };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut writer = BufWriter::new(tmp.as_file_mut());
        write(&mut writer).map_err(io_err)?;
        writer.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
