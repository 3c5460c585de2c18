//! Image datasets, the MNIST-variant domain sequence and a synthetic stand-in.

pub mod idx;
pub mod mnist;
pub mod prepare;
pub mod synthetic;
pub mod variants;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::load_idx;
pub use prepare::{pad_to, prepare, prepare_with, NormStats};
pub use synthetic::{synthetic_sequence, Shift};
pub use variants::{apply_variant, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Raw greyscale images, one byte per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    pub name: String,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    /// `N × height × width`, row-major.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub classes: usize,
}

impl ImageDataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        height: usize,
        width: usize,
        images: Vec<u8>,
        labels: Vec<u8>,
        classes: usize,
    ) -> Result<Self> {
        let ds = Self { name: name.into(), split, height, width, images, labels, classes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let pixels = self.height * self.width;
        if pixels == 0 || self.images.len() != self.labels.len() * pixels {
            return Err(Error::Input(format!(
                "{}: {} pixel bytes for {} labels of {}x{}",
                self.name,
                self.images.len(),
                self.labels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l as usize >= self.classes) {
            return Err(Error::Input(format!("{}: label {bad} outside {} classes", self.name, self.classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }
}

/// Normalised single-channel images ready for a network.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub name: String,
    pub split: Split,
    /// Per-sample shape, `[1, h, w]`.
    pub shape: Vec<usize>,
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl PreparedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Gathers the given rows into a `[B, ...shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("{}: sample {i} of {}", self.name, self.len())));
            }
            data.extend_from_slice(&self.features[i * n..(i + 1) * n]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.shape);
        Ok((Tensor::new(shape, data)?, labels))
    }

    /// Consecutive `[start, end)` ranges of at most `size` samples.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
        let n = self.len();
        let size = size.max(1);
        (0..n.div_ceil(size)).map(move |c| c * size..((c + 1) * size).min(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub name: String,
    pub train: PreparedDataset,
    pub test: PreparedDataset,
    /// Human-readable record of how the task was built.
    pub provenance: Vec<String>,
}

/// Ordered train/test pairs sharing one input shape and label space.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub name: String,
    pub tasks: Vec<Task>,
}

impl TaskSequence {
    /// Checks the single-head contract and returns `(input shape, classes)`.
    pub fn validate(&self) -> Result<(Vec<usize>, usize)> {
        let first = self
            .tasks
            .first()
            .ok_or_else(|| Error::Config(format!("sequence {} has no tasks", self.name)))?;
        let shape = first.train.shape.clone();
        let classes = first.train.classes;
        for task in &self.tasks {
            for ds in [&task.train, &task.test] {
                if ds.shape != shape || ds.classes != classes {
                    return Err(Error::Config(format!(
                        "task {} ({:?}) has shape {:?} / {} classes, sequence uses {:?} / {}",
                        task.name, ds.split, ds.shape, ds.classes, shape, classes
                    )));
                }
                if ds.is_empty() {
                    return Err(Error::Config(format!("task {} has an empty {:?} split", task.name, ds.split)));
                }
            }
        }
        Ok((shape, classes))
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn train_samples(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str, classes: usize) -> PreparedDataset {
        PreparedDataset {
            name: name.into(),
            split: Split::Train,
            shape: vec![1, 2, 2],
            features: (0..12).map(|v| v as f32).collect(),
            labels: vec![0, 1, 0],
            classes,
        }
    }

    #[test]
    fn batch_gathers_rows() {
        let ds = tiny("a", 2);
        let (x, y) = ds.batch(&[2, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 1, 2, 2]);
        assert_eq!(x.data(), &[8.0, 9.0, 10.0, 11.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(y, vec![0, 0]);
        assert!(ds.batch(&[3]).is_err());
        assert_eq!(ds.chunks(2).collect::<Vec<_>>(), vec![0..2, 2..3]);
    }

    #[test]
    fn mismatched_classes_rejected() {
        let task = |name: &str, classes| Task {
            name: name.into(),
            train: tiny(name, classes),
            test: tiny(name, classes),
            provenance: vec![],
        };
        let seq = TaskSequence { name: "s".into(), tasks: vec![task("a", 2), task("b", 3)] };
        assert!(matches!(seq.validate(), Err(Error::Config(_))));
        let empty = TaskSequence { name: "e".into(), tasks: vec![] };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn image_dataset_checks_lengths() {
        assert!(ImageDataset::new("x", Split::Train, 2, 2, vec![0; 8], vec![0, 1], 2).is_ok());
        assert!(ImageDataset::new("x", Split::Train, 2, 2, vec![0; 7], vec![0, 1], 2).is_err());
        assert!(ImageDataset::new("x", Split::Train, 2, 2, vec![0; 8], vec![0, 2], 2).is_err());
    }
}
