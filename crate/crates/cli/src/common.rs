//! Input loading shared by the subcommands.

use std::path::Path;

use arpoison::dataset::{read_cifar10, read_image_dir, sha256_hex, Dataset, ImageDirLayout};
use arpoison::set_file::{parse_set, PUBLISHED_SET_JSON};
use arpoison::{ARProcessSet, Result};

use crate::DatasetKind;

/// Resolve `--coeffs`: a path, or the literal `published` for the bundled
/// fixture set. Returns the set plus the SHA-256 of the document bytes.
pub fn load_coeffs(spec: &str) -> Result<(ARProcessSet, String)> {
    if spec == "published" {
        let set = parse_set(PUBLISHED_SET_JSON)?;
        return Ok((set, sha256_hex(PUBLISHED_SET_JSON.as_bytes())));
    }
    let text = std::fs::read_to_string(Path::new(spec))?;
    let set = parse_set(&text)?;
    Ok((set, sha256_hex(text.as_bytes())))
}

pub struct LoadedDataset {
    pub dataset: Dataset,
    pub sha256: String,
    pub layout: Option<ImageDirLayout>,
}

pub fn load_dataset(kind: DatasetKind, path: &Path) -> Result<LoadedDataset> {
    match kind {
        DatasetKind::Cifar10 => {
            let (dataset, sha256) = read_cifar10(path)?;
            Ok(LoadedDataset { dataset, sha256, layout: None })
        }
        DatasetKind::ImageDir => {
            let (dataset, sha256, layout) = read_image_dir(path)?;
            Ok(LoadedDataset { dataset, sha256, layout: Some(layout) })
        }
    }
}
