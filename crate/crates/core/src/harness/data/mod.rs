//! Dataset loading.
//!
//! Every loader produces a [`Dataset`] holding all samples as a flat
//! `[n, features]` tensor plus disjoint train and validation index lists that
//! together cover every sample.

mod idx;
mod synthetic;
mod tabular;

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

use super::config::{DatasetKind, RunConfig};

pub use idx::{encode_idx_images, encode_idx_labels, load_mnist, parse_idx_images, parse_idx_labels, IdxImages};
pub use synthetic::{blobs, two_moons, xor_grid};
pub use tabular::{adult_vocabularies, load_adult, load_csv, TabularOptions, ADULT_COLUMNS};

/// Seed of the fallback split, independent of the run seed.
pub const SPLIT_SEED: u64 = 0;
pub const SPLIT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[n, features]`.
    pub inputs: Tensor<f64>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    /// How the split was obtained, echoed into the run summary.
    pub split: String,
    /// Validation-time categorical values never seen during fitting. Each is
    /// encoded as all zeros.
    pub unknown_categories: usize,
}

impl Dataset {
    pub fn new(
        inputs: Tensor<f64>,
        labels: Vec<usize>,
        classes: usize,
        train: Vec<usize>,
        val: Vec<usize>,
        split: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self { inputs, labels, classes, train, val, split: split.into(), unknown_categories: 0 };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.row_len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.inputs.shape().len() != 2 || self.inputs.rows() != n {
            return Err(Error::Dataset(format!("{} label(s) for inputs of shape {:?}", n, self.inputs.shape())));
        }
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= self.classes) {
            return Err(Error::Dataset(format!("sample {i} has label {l} but there are {} classes", self.classes)));
        }
        if self.train.is_empty() || self.val.is_empty() {
            return Err(Error::Dataset("train and validation splits must both be nonempty".into()));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val) {
            if i >= n || seen[i] {
                return Err(Error::Dataset(format!("split index {i} is out of range or repeated")));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Dataset("split does not cover every sample".into()));
        }
        Ok(())
    }
}

/// Seeded 80/20 split of `n` samples. Both halves are returned sorted.
pub fn random_split(n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Dataset(format!("cannot split {n} sample(s)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::stream(SPLIT_SEED, Stream::Split), &mut order);
    let n_train = ((n as f64 * SPLIT_TRAIN_FRACTION + 1e-9).floor() as usize).clamp(1, n - 1);
    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

pub(crate) fn split_label() -> String {
    format!("random {:.0}/{:.0}, seed {SPLIT_SEED}", SPLIT_TRAIN_FRACTION * 100.0, (1.0 - SPLIT_TRAIN_FRACTION) * 100.0)
}

/// Loads the dataset a config points at.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let path = cfg.dataset_path.as_deref();
    let need_path = || path.ok_or_else(|| Error::Config(format!("dataset {:?} needs dataset_path", cfg.dataset)));
    let n = cfg.train_size + cfg.val_size;
    let synthetic = |(x, y): (Tensor<f64>, Vec<usize>), classes: usize, name: &str| {
        Dataset::new(
            x,
            y,
            classes,
            (0..cfg.train_size).collect(),
            (cfg.train_size..n).collect(),
            format!("{name}: first {} generated train, next {} val", cfg.train_size, cfg.val_size),
        )
    };
    match cfg.dataset {
        DatasetKind::Mnist => load_mnist(need_path()?, cfg.train_size, cfg.val_size),
        DatasetKind::Csv => {
            let opts = TabularOptions {
                label_column: cfg.label_column.clone(),
                drop_columns: cfg.drop_columns.clone(),
                ..TabularOptions::default()
            };
            load_csv(need_path()?, &opts)
        }
        DatasetKind::Adult => load_adult(need_path()?),
        DatasetKind::TwoMoons => synthetic(two_moons(n, cfg.noise, cfg.seed), 2, "two_moons"),
        DatasetKind::Blobs => synthetic(blobs(n, 3, cfg.seed), 3, "blobs"),
        DatasetKind::Xor => synthetic(xor_grid(n, cfg.noise, cfg.seed), 2, "xor"),
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}
