//! Netflow ingestion and shaping: CSV loading and cleaning, field dropping,
//! the pad/reshape/patch transform that turns a record into a one-channel
//! image, z-scoring, train/test splitting, synthetic datasets, and the binary
//! processed-dataset format.

mod image;
mod ingest;
mod scale;
mod split;
mod store;
mod synth;

pub use image::{
    default_factorization, extract_patches, is_prime, pad_record, pad_to_composite, reshape_to_image, ImageInstance, ImageLayout,
    PatchSequence,
};
pub use ingest::{clean, load_csv, load_csv_with, read_raw, write_csv, CsvLoad, CsvOptions, RawRow, RawTable};
pub use scale::{standardize, Scaler};
pub use split::{split, split_indices, SplitSpec};
pub use store::{load_processed, save_processed, ProcessedDataset, DATASET_FORMAT_VERSION};
pub use synth::{gen_synthetic, SynthSpec};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Class names in id order; ids are assigned by first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new(names: Vec<String>) -> Self {
        LabelMap { names }
    }

    /// `class-0`, `class-1`, ...
    pub fn numbered(n: usize) -> Self {
        LabelMap::new((0..n).map(|i| format!("class-{i}")).collect())
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn id_or_insert(&mut self, name: &str) -> usize {
        self.id(name).unwrap_or_else(|| {
            self.names.push(name.to_string());
            self.names.len() - 1
        })
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// `n × d` feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    d: usize,
    labels: Vec<usize>,
    feature_names: Vec<String>,
    label_map: LabelMap,
}

/// Encoder output: one `k`-dimensional row per record, labels carried over.
pub type LatentDataset = Dataset;

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        feature_names: Vec<String>,
        labels: Vec<usize>,
        label_map: LabelMap,
    ) -> Result<Self> {
        let d = feature_names.len();
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyDataset { dropped: 0 });
        }
        if d == 0 {
            return Err(Error::Invalid("dataset needs at least one feature".into()));
        }
        if features.len() != n * d {
            return Err(Error::shape(
                "dataset",
                format!("{n} rows x {d} features needs {} values, got {}", n * d, features.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_map.len()) {
            return Err(Error::Invalid(format!(
                "label {bad} out of range for {} classes",
                label_map.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Dataset {
            features,
            d,
            labels,
            feature_names,
            label_map,
        })
    }

    /// Latent dataset with features named `z0..z{k-1}`.
    pub fn latent(features: Vec<f64>, k: usize, labels: Vec<usize>, label_map: LabelMap) -> Result<Self> {
        Self::new(features, (0..k).map(|i| format!("z{i}")).collect(), labels, label_map)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_map(&self) -> &LabelMap {
        &self.label_map
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            d: self.d,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            label_map: self.label_map.clone(),
        }
    }

    /// Rows at `indices` as a `b × d` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor::from_parts(vec![indices.len(), self.d], data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Same records and labels with replaced feature values.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            features,
            self.feature_names.clone(),
            self.labels.clone(),
            self.label_map.clone(),
        )
    }
}

/// Removes the named columns, keeping the remaining order.
pub fn drop_fields(dataset: &Dataset, names: &[impl AsRef<str>]) -> Result<Dataset> {
    let mut keep = vec![true; dataset.d()];
    for name in names {
        let name = name.as_ref();
        let i = dataset
            .feature_names
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::UnknownField(name.to_string()))?;
        keep[i] = false;
    }
    let cols: Vec<usize> = (0..dataset.d()).filter(|&i| keep[i]).collect();
    let mut features = Vec::with_capacity(dataset.n() * cols.len());
    for r in 0..dataset.n() {
        let row = dataset.row(r);
        features.extend(cols.iter().map(|&c| row[c]));
    }
    Dataset::new(
        features,
        cols.iter().map(|&c| dataset.feature_names[c].clone()).collect(),
        dataset.labels.clone(),
        dataset.label_map.clone(),
    )
}
