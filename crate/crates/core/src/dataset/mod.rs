//! VesselMNIST3D ingestion: NPZ archives of 28×28×28 volumes with binary
//! labels, scaled into [0,1], plus class-balanced subsampling.

pub mod npy;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::glm::Dataset;
use crate::tensor::{DenseTensor, Shape};

pub use npy::{load_npz, read_npy, read_npz, write_npy, write_npz, NpyArray, NpyData};

pub const VOLUME_SIDE: usize = 28;

/// Split sizes of the published archive: (samples, positives).
pub const EXPECTED_TRAIN: (usize, usize) = (1335, 150);
pub const EXPECTED_TEST: (usize, usize) = (382, 43);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not an NPY array: bad magic string")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported NPY dtype {0:?} (expected |u1 or <f8)")]
    UnsupportedDtype(String),
    #[error("truncated NPY data while reading {0}")]
    Truncated(String),
    #[error("malformed NPY header: {0}")]
    BadHeader(String),
    #[error("archive contains no arrays")]
    NoArrays,
    #[error("missing array {0:?} in archive")]
    MissingKey(String),
    #[error("array {name:?} has shape {shape:?}, expected {expected}")]
    BadShape {
        name: String,
        shape: Vec<usize>,
        expected: String,
    },
    #[error("label {value} at index {index} is not 0 or 1")]
    BadLabel { index: usize, value: f64 },
    #[error("{images} images but {labels} labels in split {split}")]
    CountMismatch {
        split: Split,
        images: usize,
        labels: usize,
    },
    #[error("cannot draw {requested} per class: class {class} has only {available}")]
    ClassTooSmall {
        requested: usize,
        class: u8,
        available: usize,
    },
    #[error("cannot open {0}: {1}")]
    Open(String, #[source] std::io::Error),
    #[error("zip archive: {0}")]
    Zip(#[from] zip::result::ZipError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// Volumes with 0/1 labels. Internally a logistic [`Dataset`] whose
/// responses are the labels.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeDataset {
    split: Split,
    data: Dataset,
}

impl VolumeDataset {
    pub fn new(split: Split, data: Dataset) -> Result<Self, DatasetError> {
        for (index, &value) in data.responses().iter().enumerate() {
            if value != 0.0 && value != 1.0 {
                return Err(DatasetError::BadLabel { index, value });
            }
        }
        Ok(Self { split, data })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn volume(&self, i: usize) -> DenseTensor {
        self.data.covariate_tensor(i)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.data.responses().iter().map(|&y| y as u8).collect()
    }

    pub fn positives(&self) -> usize {
        self.data.responses().iter().filter(|&&y| y == 1.0).count()
    }

    pub fn as_dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn into_dataset(self) -> Dataset {
        self.data
    }

    /// Smallest and largest voxel value over all volumes.
    pub fn value_range(&self) -> (f64, f64) {
        (0..self.len())
            .flat_map(|i| self.data.covariate(i).iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }
}

#[derive(Debug, Clone)]
pub struct VesselSplits {
    pub train: VolumeDataset,
    pub test: VolumeDataset,
    /// Present when the archive ships a validation split; never used for fitting.
    pub val: Option<VolumeDataset>,
    /// Count mismatches against the published split sizes.
    pub warnings: Vec<String>,
}

pub fn load_vessel(path: &Path) -> Result<VesselSplits, DatasetError> {
    vessel_from_arrays(&load_npz(path)?)
}

pub fn vessel_from_arrays(arrays: &BTreeMap<String, NpyArray>) -> Result<VesselSplits, DatasetError> {
    let train = split_from_arrays(arrays, Split::Train)?;
    let test = split_from_arrays(arrays, Split::Test)?;
    let val = if arrays.contains_key("val_images") && arrays.contains_key("val_labels") {
        Some(split_from_arrays(arrays, Split::Val)?)
    } else {
        None
    };
    let mut warnings = Vec::new();
    for (d, (n, pos)) in [(&train, EXPECTED_TRAIN), (&test, EXPECTED_TEST)] {
        if d.len() != n || d.positives() != pos {
            warnings.push(format!(
                "{} split has {} samples ({} positive); expected {} ({} positive)",
                d.split(),
                d.len(),
                d.positives(),
                n,
                pos
            ));
        }
    }
    Ok(VesselSplits {
        train,
        test,
        val,
        warnings,
    })
}

fn get<'a>(arrays: &'a BTreeMap<String, NpyArray>, key: &str) -> Result<&'a NpyArray, DatasetError> {
    arrays
        .get(key)
        .ok_or_else(|| DatasetError::MissingKey(key.to_string()))
}

/// Builds one split from `<split>_images` of shape (N,28,28,28) and
/// `<split>_labels` of shape (N,) or (N,1). Voxel `[n,i,j,k]` of the source
/// becomes element `(i,j,k)` of volume `n`; byte images are divided by 255.
pub fn split_from_arrays(
    arrays: &BTreeMap<String, NpyArray>,
    split: Split,
) -> Result<VolumeDataset, DatasetError> {
    let images_key = format!("{}_images", split.prefix());
    let labels_key = format!("{}_labels", split.prefix());
    let images = get(arrays, &images_key)?;
    let labels = get(arrays, &labels_key)?;

    let s = VOLUME_SIDE;
    if images.shape.len() != 4 || images.shape[1..] != [s, s, s] {
        return Err(DatasetError::BadShape {
            name: images_key,
            shape: images.shape.clone(),
            expected: format!("(N, {s}, {s}, {s})"),
        });
    }
    let n = images.shape[0];
    let label_ok = matches!(labels.shape.as_slice(), [_] | [_, 1]);
    if !label_ok {
        return Err(DatasetError::BadShape {
            name: labels_key,
            shape: labels.shape.clone(),
            expected: "(N,) or (N, 1)".into(),
        });
    }
    if labels.shape[0] != n {
        return Err(DatasetError::CountMismatch {
            split,
            images: n,
            labels: labels.shape[0],
        });
    }

    let scale = match images.data {
        NpyData::U8(_) => 1.0 / 255.0,
        NpyData::F64(_) => 1.0,
    };
    let st = images.strides();
    let d = s * s * s;
    let mut flat = Vec::with_capacity(n * d);
    for sample in 0..n {
        for k in 0..s {
            for j in 0..s {
                for i in 0..s {
                    let off = sample * st[0] + i * st[1] + j * st[2] + k * st[3];
                    flat.push(images.value(off) * scale);
                }
            }
        }
    }
    let lst = labels.strides();
    let y: Vec<f64> = (0..n).map(|i| labels.value(i * lst[0])).collect();
    let shape = Shape::new([s, s, s]).expect("static shape");
    let data = Dataset::from_flat(shape, flat, y)
        .map_err(|e| DatasetError::BadHeader(e.to_string()))?;
    VolumeDataset::new(split, data)
}

/// Uniform without-replacement draw of `per_class` items from each class.
/// Output holds the negatives first, then the positives, each in original
/// order.
pub fn balanced_subsample<R: Rng + ?Sized>(
    d: &VolumeDataset,
    per_class: usize,
    rng: &mut R,
) -> Result<VolumeDataset, DatasetError> {
    let labels = d.labels();
    let mut chosen = Vec::with_capacity(2 * per_class);
    for class in [0u8, 1] {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect();
        if per_class > members.len() {
            return Err(DatasetError::ClassTooSmall {
                requested: per_class,
                class,
                available: members.len(),
            });
        }
        let mut picked: Vec<usize> = sample(rng, members.len(), per_class)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    let data = d
        .data
        .select(&chosen)
        .map_err(|e| DatasetError::BadHeader(e.to_string()))?;
    Ok(VolumeDataset {
        split: d.split,
        data,
    })
}
