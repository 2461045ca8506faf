//! Dataset ingestion and 8-bit image export.
//!
//! Images live in memory as f32 in [0, 1], channel-planar (c, h, w) per
//! sample, which matches both the CIFAR-10 binary layout and the poison
//! container. Every reader also returns the SHA-256 of the bytes it
//! consumed so manifests can pin their inputs.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CIFAR_HEIGHT: usize = 32;
pub const CIFAR_WIDTH: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: u32 = 10;
/// One label byte plus 32*32*3 pixel bytes, channel-planar R,G,B.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_HEIGHT * CIFAR_WIDTH * CIFAR_CHANNELS;

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// An in-memory labeled image set, pixels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
    labels: Vec<u32>,
}

/// Borrowed view of one sample.
#[derive(Debug, Clone, Copy)]
pub struct DatasetSample<'a> {
    pub index: usize,
    pub label: u32,
    pub image: &'a [f32],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dataset {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let per = height * width * channels;
        if per == 0 {
            return Err(Error::InvalidArgument("zero-sized sample shape".into()));
        }
        if data.len() != labels.len() * per {
            return Err(Error::InvalidArgument(format!(
                "data length {} does not match {} samples of {} values",
                data.len(),
                labels.len(),
                per
            )));
        }
        Ok(Self { height, width, channels, data, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Values per sample, i.e. `channels * height * width`.
    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let per = self.sample_len();
        &self.data[index * per..(index + 1) * per]
    }

    pub fn sample(&self, index: usize) -> DatasetSample<'_> {
        DatasetSample {
            index,
            label: self.labels[index],
            image: self.image(index),
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }
}

fn cifar_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Error::InvalidArgument(format!("{} is neither file nor directory", path.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().map(|e| e == "bin").unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidFormat(format!("no .bin files under {}", path.display())));
    }
    Ok(files)
}

/// Read CIFAR-10 binary batches: 3073-byte records of one label byte and
/// 3072 channel-planar pixel bytes, mapped to [0, 1] by /255.
///
/// `path` may be a single .bin file or a directory of them (read in
/// lexicographic order). Also returns the SHA-256 of the raw bytes.
pub fn read_cifar10(path: &Path) -> Result<(Dataset, String)> {
    let mut bytes = Vec::new();
    for file in cifar_files(path)? {
        bytes.extend(fs::read(&file)?);
    }
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::InvalidFormat(format!(
            "CIFAR-10 input is {} bytes, not a multiple of {CIFAR_RECORD_BYTES}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let per = CIFAR_RECORD_BYTES - 1;
    let mut data = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        let label = rec[0] as u32;
        if label >= CIFAR_CLASSES {
            return Err(Error::InvalidFormat(format!("CIFAR-10 label byte {label} out of range")));
        }
        labels.push(label);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    let hash = sha256_hex(&bytes);
    Ok((Dataset::new(CIFAR_HEIGHT, CIFAR_WIDTH, CIFAR_CHANNELS, data, labels)?, hash))
}

/// Directory layout of an image-directory dataset, kept so exports can
/// mirror it.
#[derive(Debug, Clone)]
pub struct ImageDirLayout {
    pub class_names: Vec<String>,
    /// Per sample, the path relative to the dataset root.
    pub rel_paths: Vec<PathBuf>,
}

const IMAGE_EXTENSIONS: [&str; 4] = ["bmp", "jpeg", "jpg", "png"];

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Read a directory with one subdirectory per class holding 8-bit RGB
/// images of uniform size. Subdirectories sorted by name define the class
/// indices; files are read in name order within each class.
pub fn read_image_dir(root: &Path) -> Result<(Dataset, String, ImageDirLayout)> {
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::InvalidFormat(format!("no class subdirectories under {}", root.display())));
    }
    let mut hasher = Sha256::new();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    let mut rel_paths = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    for (class, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidFormat("unreadable class directory name".into()))?
            .to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        for file in files {
            let bytes = fs::read(&file)?;
            let rel = file.strip_prefix(root).expect("file under root").to_path_buf();
            hasher.update(rel.to_string_lossy().as_bytes());
            hasher.update(&bytes);
            let img = image::load_from_memory(&bytes)?.to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            match dims {
                None => dims = Some((h, w)),
                Some(d) if d != (h, w) => {
                    return Err(Error::InvalidFormat(format!(
                        "{}: image is {h}x{w}, expected {}x{}",
                        file.display(),
                        d.0,
                        d.1
                    )));
                }
                _ => {}
            }
            // Interleaved RGB rows to channel-planar.
            let raw = img.as_raw();
            for c in 0..3 {
                for px in 0..h * w {
                    data.push(raw[px * 3 + c] as f32 / 255.0);
                }
            }
            labels.push(class as u32);
            rel_paths.push(rel);
        }
        class_names.push(name);
    }
    let (h, w) = dims.ok_or_else(|| Error::InvalidFormat("no images found".into()))?;
    let digest = hasher.finalize();
    let mut hash = String::with_capacity(64);
    for b in digest {
        hash.push_str(&format!("{b:02x}"));
    }
    let dataset = Dataset::new(h, w, 3, data, labels)?;
    Ok((dataset, hash, ImageDirLayout { class_names, rel_paths }))
}

/// Write the dataset back out as 8-bit PNG images. Quantization to 8 bits
/// is lossy for float poisons; the canonical container keeps f32.
///
/// With a layout the original directory structure and file stems are
/// mirrored; otherwise samples land in `class_<label>/<index>.png`.
pub fn export_images_8bit(
    dataset: &Dataset,
    layout: Option<&ImageDirLayout>,
    out_dir: &Path,
) -> Result<()> {
    if dataset.channels() != 3 && dataset.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "8-bit export supports 1 or 3 channels, dataset has {}",
            dataset.channels()
        )));
    }
    let (h, w, c) = (dataset.height(), dataset.width(), dataset.channels());
    for i in 0..dataset.len() {
        let rel: PathBuf = match layout {
            Some(l) => l.rel_paths[i].with_extension("png"),
            None => PathBuf::from(format!("class_{}", dataset.labels()[i])).join(format!("{i:06}.png")),
        };
        let path = out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let img = dataset.image(i);
        let mut px = Vec::with_capacity(h * w * c);
        for offset in 0..h * w {
            for ch in 0..c {
                let v = img[ch * h * w + offset].clamp(0.0, 1.0);
                px.push((v * 255.0).round() as u8);
            }
        }
        match c {
            3 => image::RgbImage::from_raw(w as u32, h as u32, px)
                .expect("buffer sized")
                .save(&path)?,
            _ => image::GrayImage::from_raw(w as u32, h as u32, px)
                .expect("buffer sized")
                .save(&path)?,
        }
    }
    Ok(())
}
