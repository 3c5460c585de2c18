use serde::{Deserialize, Serialize};

use super::{ImageDataset, PreparedDataset};
use crate::error::{Error, Result};

/// Guard for constant images.
pub const STD_EPS: f64 = 1e-6;

/// Mean and standard deviation of `[0,1]`-scaled pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn of(ds: &ImageDataset) -> Result<Self> {
        if ds.images.is_empty() {
            return Err(Error::Input(format!("{}: no pixels to take statistics from", ds.name)));
        }
        let n = ds.images.len() as f64;
        let mean = ds.images.iter().map(|&v| v as f64 / 255.0).sum::<f64>() / n;
        let var = ds.images.iter().map(|&v| (v as f64 / 255.0 - mean).powi(2)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt().max(STD_EPS) })
    }
}

/// Zero-pads every image to `size × size`, centred. Larger images are rejected.
pub fn pad_to(ds: &ImageDataset, size: usize) -> Result<ImageDataset> {
    if ds.height > size || ds.width > size {
        return Err(Error::Input(format!("{}: {}x{} does not fit in {size}x{size}", ds.name, ds.height, ds.width)));
    }
    let (top, left) = ((size - ds.height) / 2, (size - ds.width) / 2);
    let mut images = vec![0u8; ds.len() * size * size];
    for (i, dst) in images.chunks_mut(size * size).enumerate() {
        for (y, row) in ds.image(i).chunks(ds.width).enumerate() {
            let start = (top + y) * size + left;
            dst[start..start + ds.width].copy_from_slice(row);
        }
    }
    ImageDataset::new(ds.name.clone(), ds.split, size, size, images, ds.labels.clone(), ds.classes)
}

/// Scales to `[0,1]` then standardises with `stats`.
pub fn prepare_with(ds: &ImageDataset, stats: NormStats) -> PreparedDataset {
    let features = ds
        .images
        .iter()
        .map(|&v| ((v as f64 / 255.0 - stats.mean) / stats.std) as f32)
        .collect();
    PreparedDataset {
        name: ds.name.clone(),
        split: ds.split,
        shape: vec![1, ds.height, ds.width],
        features,
        labels: ds.labels.iter().map(|&l| l as usize).collect(),
        classes: ds.classes,
    }
}

/// Standardises both splits with statistics of the training split.
pub fn prepare(train: &ImageDataset, test: &ImageDataset) -> Result<(PreparedDataset, PreparedDataset, NormStats)> {
    let stats = NormStats::of(train)?;
    Ok((prepare_with(train, stats), prepare_with(test, stats), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn ds(h: usize, w: usize, images: Vec<u8>, split: Split) -> ImageDataset {
        let n = images.len() / (h * w);
        ImageDataset::new("d", split, h, w, images, vec![0; n], 1).unwrap()
    }

    #[test]
    fn pads_28_to_32_centred() {
        let raw = ds(28, 28, vec![7; 2 * 28 * 28], Split::Train);
        let out = pad_to(&raw, 32).unwrap();
        assert_eq!((out.height, out.width, out.len()), (32, 32, 2));
        assert_eq!(out.image(1)[0], 0);
        assert_eq!(out.image(1)[2 * 32 + 2], 7);
        assert_eq!(out.image(1)[29 * 32 + 29], 7);
        assert_eq!(out.image(1)[30 * 32 + 30], 0);
        assert_eq!(out.images.iter().filter(|&&v| v == 7).count(), 2 * 28 * 28);
        assert_eq!(prepare_with(&out, NormStats { mean: 0.0, std: 1.0 }).shape, vec![1, 32, 32]);
    }

    #[test]
    fn train_mean_is_zero_and_test_reuses_stats() {
        let train = ds(2, 2, vec![0, 10, 200, 255, 30, 30, 90, 12], Split::Train);
        let test = ds(2, 2, vec![0, 0, 0, 0], Split::Test);
        let (a, b, stats) = prepare(&train, &test).unwrap();
        let mean: f64 = a.features.iter().map(|&v| v as f64).sum::<f64>() / a.features.len() as f64;
        assert!(mean.abs() < 1e-5);
        let expected = (-stats.mean / stats.std) as f32;
        assert!(b.features.iter().all(|&v| v == expected));

        // Recompute the statistics independently.
        let scaled: Vec<f64> = train.images.iter().map(|&v| v as f64 / 255.0).collect();
        let m = scaled.iter().sum::<f64>() / 8.0;
        let sd = (scaled.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 8.0).sqrt();
        assert!((stats.mean - m).abs() < 1e-12 && (stats.std - sd).abs() < 1e-12);
    }

    #[test]
    fn constant_images_use_epsilon() {
        let train = ds(1, 2, vec![0, 0], Split::Train);
        let stats = NormStats::of(&train).unwrap();
        assert_eq!(stats.std, STD_EPS);
        assert!(prepare_with(&train, stats).features.iter().all(|v| *v == 0.0));
    }
}
