//! MNIST-variant sequences read from `ADAPTCL_DATA_DIR`.

use std::path::{Path, PathBuf};

use super::prepare::{pad_to, prepare, prepare_with, NormStats};
use super::variants::{apply_variant, Variant};
use super::{load_idx, ImageDataset, Split, Task, TaskSequence};
use crate::error::{Error, Result};

pub const DATA_DIR_ENV: &str = "ADAPTCL_DATA_DIR";
pub const MNIST_SIDE: usize = 32;

const FILES: [(&str, Split); 2] = [("train", Split::Train), ("t10k", Split::Test)];

pub fn data_dir() -> Result<PathBuf> {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("{DATA_DIR_ENV} is not set; point it at the MNIST IDX files")))
}

fn find(dir: &Path, stem: &str) -> Result<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .iter()
        .map(|name| dir.join(name))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Config(format!("{stem}[.gz] not found in {}", dir.display())))
}

/// True when both MNIST splits are present in `dir`.
pub fn available(dir: &Path) -> bool {
    FILES.iter().all(|(prefix, _)| {
        find(dir, &format!("{prefix}-images-idx3-ubyte")).is_ok()
            && find(dir, &format!("{prefix}-labels-idx1-ubyte")).is_ok()
    })
}

/// Loads both splits, padded to 32×32.
pub fn load_mnist(dir: &Path) -> Result<(ImageDataset, ImageDataset)> {
    let mut out = Vec::new();
    for (prefix, split) in FILES {
        let images = find(dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = find(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
        let mut ds = pad_to(&load_idx(&images, &labels, split)?, MNIST_SIDE)?;
        ds.classes = 10;
        ds.validate()?;
        ds.name = "mnist".into();
        out.push(ds);
    }
    let test = out.pop().expect("two splits");
    let train = out.pop().expect("two splits");
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MnistPreset {
    /// MNIST, Permuted MNIST, Inverted MNIST.
    Strong,
    /// MNIST, Permuted MNIST, Rotated MNIST.
    Mild,
}

impl MnistPreset {
    pub fn domains(self, seed: u64) -> Vec<(&'static str, Variant)> {
        let third = match self {
            MnistPreset::Strong => ("inverted_mnist", Variant::Invert),
            MnistPreset::Mild => ("rotated_mnist", Variant::Rotate { seed, min_degrees: 0.0, max_degrees: 45.0 }),
        };
        vec![("mnist", Variant::Identity), ("permuted_mnist", Variant::Permute { seed }), third]
    }
}

/// Variant for a named MNIST domain, as used in explicit task lists.
pub fn mnist_domain(name: &str, seed: u64) -> Result<Variant> {
    match name {
        "mnist" => Ok(Variant::Identity),
        "permuted_mnist" => Ok(Variant::Permute { seed }),
        "inverted_mnist" => Ok(Variant::Invert),
        "rotated_mnist" => Ok(Variant::Rotate { seed, min_degrees: 0.0, max_degrees: 45.0 }),
        other => Err(Error::Config(format!(
            "unknown task `{other}`; expected mnist, permuted_mnist, inverted_mnist or rotated_mnist"
        ))),
    }
}

/// Builds the preset. With `shared_stats`, every domain is standardised with
/// the plain MNIST training statistics instead of its own.
pub fn mnist_sequence(dir: &Path, preset: MnistPreset, seed: u64, shared_stats: bool) -> Result<TaskSequence> {
    let name = match preset {
        MnistPreset::Strong => "mnist_strong",
        MnistPreset::Mild => "mnist_mild",
    };
    mnist_domains(dir, name, preset.domains(seed), shared_stats)
}

/// Any list of MNIST domains, in order.
pub fn mnist_domains(
    dir: &Path,
    name: &str,
    domains: Vec<(&str, Variant)>,
    shared_stats: bool,
) -> Result<TaskSequence> {
    if domains.is_empty() {
        return Err(Error::Config("task list is empty".into()));
    }
    let (train, test) = load_mnist(dir)?;
    let source = NormStats::of(&train)?;
    let mut tasks = Vec::new();
    for (name, variant) in domains {
        let (vtrain, vtest) = (apply_variant(&train, &variant), apply_variant(&test, &variant));
        let (mut ptrain, mut ptest, stats) = if shared_stats {
            (prepare_with(&vtrain, source), prepare_with(&vtest, source), source)
        } else {
            prepare(&vtrain, &vtest)?
        };
        ptrain.name = name.into();
        ptest.name = name.into();
        tasks.push(Task {
            name: name.into(),
            train: ptrain,
            test: ptest,
            provenance: vec![
                format!("idx({})", dir.display()),
                "pad(32)".into(),
                variant.describe(),
                format!("standardised(mean={:.6}, std={:.6})", stats.mean, stats.std),
            ],
        });
    }
    Ok(TaskSequence { name: name.into(), tasks })
}
