//! Poison application: per-sample AR noise, class-wise baseline noises,
//! and the manifest that makes every output bit-reproducible.
//!
//! Perturbations are generated oversized, cropped past the start signal,
//! projected onto the requested norm ball as one C-channel tensor, added to
//! the clean image, and clamped to [0, 1]. Labels are never touched. The
//! manifest records the inputs' hashes, every derived seed, and both the
//! pre- and post-clamp perturbation norm of every sample, so `replay`
//! rebuilds a deleted container byte for byte.

use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ar_core::{
    ar_generate_seeded, crop_init_band, project_norm, tensor_norm, NormKind, Perturbation,
};
use crate::dataset::{Dataset, DatasetSample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, domain, NoiseStream};
use crate::search::ARProcessSet;

pub const MANIFEST_FORMAT: &str = "arpoison-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// What kind of noise a container holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PoisonMode {
    /// Sample-wise AR noise from a process set.
    Ar,
    /// Class-wise grid of uniform Gaussian-colored patches.
    Regions { p: usize },
    /// Class-wise dense Gaussian noise.
    RandomClasswise,
    /// Bare AR perturbations for one class, no carrier images.
    Perturbations { class: usize },
}

/// Per-sample provenance and norm record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub label: u32,
    pub poisoned: bool,
    /// Derived per-sample seed; absent for class-wise and untouched samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub pre_clamp_norm: f64,
    pub post_clamp_norm: f64,
    /// Number of pixels the [0, 1] clamp actually moved.
    pub clamped: u32,
}

/// The reproducibility record written next to every container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub mode: PoisonMode,
    pub epsilon: f64,
    pub norm: NormKind,
    pub master_seed: u64,
    pub extra_crop: usize,
    pub poison_fraction: f64,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff_set_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_sha256: Option<String>,
    pub samples: Vec<SampleRecord>,
}

impl PoisonManifest {
    pub fn render_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn parse(text: &str) -> Result<Self> {
        let manifest: PoisonManifest = serde_json::from_str(text)
            .map_err(|e| Error::InvalidFormat(format!("manifest: {e}")))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::InvalidFormat(format!("unknown manifest format '{}'", manifest.format)));
        }
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::InvalidFormat(format!("unsupported manifest version {}", manifest.version)));
        }
        Ok(manifest)
    }

    pub fn params(&self) -> PoisonParams {
        PoisonParams {
            epsilon: self.epsilon,
            norm: self.norm,
            master_seed: self.master_seed,
            extra_crop: self.extra_crop,
            poison_fraction: self.poison_fraction,
        }
    }
}

/// Knobs shared by all poisoning entry points.
#[derive(Debug, Clone, Copy)]
pub struct PoisonParams {
    pub epsilon: f64,
    pub norm: NormKind,
    pub master_seed: u64,
    pub extra_crop: usize,
    pub poison_fraction: f64,
}

/// Input hashes recorded into the manifest.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub coeff_set_sha256: Option<String>,
    pub dataset_sha256: Option<String>,
}

/// A finished poisoning run.
#[derive(Debug, Clone)]
pub struct PoisonOutcome {
    pub dataset: Dataset,
    pub manifest: PoisonManifest,
}

/// Norm bookkeeping for one sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleStats {
    pub pre_clamp_norm: f64,
    pub post_clamp_norm: f64,
    pub clamped: u32,
}

/// Generate one cropped, norm-projected C-channel AR perturbation for
/// `class`, every channel from its own process and its own seeded init
/// band.
#[allow(clippy::too_many_arguments)]
pub fn generate_perturbation(
    set: &ARProcessSet,
    class: usize,
    height: usize,
    width: usize,
    epsilon: f64,
    norm: NormKind,
    sample_seed: u64,
    extra_crop: usize,
) -> Result<Perturbation> {
    let v = set.window_side();
    let channels = set.channels();
    let gen_h = height + v - 1 + extra_crop;
    let gen_w = width + v - 1 + extra_crop;
    let mut raw = Array3::zeros((channels, height, width));
    for channel in 0..channels {
        let coeffs = set.process(class, channel)?;
        let seed = derive_seed(sample_seed, &[domain::CHANNEL, channel as u64]);
        let plane = ar_generate_seeded(coeffs, gen_h, gen_w, seed)?
            .with_source(set.entry_label(class * channels + channel));
        let cropped = crop_init_band(&plane, extra_crop)?;
        raw.slice_mut(s![channel, .., ..]).assign(cropped.values());
    }
    project_norm(&raw, epsilon, norm)
}

/// Add `delta` to the image, clamp to [0, 1], and record the norms.
fn apply_delta(image: &[f32], delta: &Perturbation, norm: NormKind) -> (Vec<f32>, SampleStats) {
    let flat = delta.values.as_slice().expect("owned tensor is contiguous");
    debug_assert_eq!(flat.len(), image.len());
    let pre_clamp_norm = tensor_norm(&delta.values, norm);
    let mut out = Vec::with_capacity(image.len());
    let mut clamped = 0u32;
    let mut l2 = 0.0f64;
    let mut linf = 0.0f64;
    for (&px, &d) in image.iter().zip(flat) {
        let x = px as f64;
        let raw = x + d;
        let kept = raw.clamp(0.0, 1.0);
        if kept != raw {
            clamped += 1;
        }
        let diff = kept - x;
        l2 += diff * diff;
        linf = linf.max(diff.abs());
        out.push(kept as f32);
    }
    let post_clamp_norm = match norm {
        NormKind::L2 => l2.sqrt(),
        NormKind::Linf => linf,
    };
    (out, SampleStats { pre_clamp_norm, post_clamp_norm, clamped })
}

/// Poison one sample with its class's AR processes. The label is left
/// untouched; the returned pixels are the clamped poisoned image.
pub fn poison_sample(
    sample: DatasetSample<'_>,
    set: &ARProcessSet,
    epsilon: f64,
    norm: NormKind,
    sample_seed: u64,
    extra_crop: usize,
) -> Result<(Vec<f32>, SampleStats)> {
    let class = sample.label as usize;
    if class >= set.num_classes() {
        return Err(Error::ClassOutOfRange { class, num_classes: set.num_classes() });
    }
    if sample.channels != set.channels() {
        return Err(Error::ChannelMismatch { dataset: sample.channels, set: set.channels() });
    }
    let delta = generate_perturbation(
        set,
        class,
        sample.height,
        sample.width,
        epsilon,
        norm,
        sample_seed,
        extra_crop,
    )?;
    Ok(apply_delta(sample.image, &delta, norm))
}

/// Choose the seeded poison subset: floor-to-nearest `fraction * n` samples
/// drawn uniformly without replacement.
pub fn poison_flags(n: usize, fraction: f64, master_seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "poison fraction must be in [0, 1], got {fraction}"
        )));
    }
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[domain::SUBSET]));
    order.shuffle(&mut rng);
    let mut flags = vec![false; n];
    for &i in &order[..count] {
        flags[i] = true;
    }
    Ok(flags)
}

fn unpoisoned_record(index: usize, label: u32) -> SampleRecord {
    SampleRecord {
        index,
        label,
        poisoned: false,
        seed: None,
        pre_clamp_norm: 0.0,
        post_clamp_norm: 0.0,
        clamped: 0,
    }
}

fn assemble(
    source: &Dataset,
    results: Vec<(Vec<f32>, SampleRecord)>,
    mode: PoisonMode,
    num_classes: usize,
    params: &PoisonParams,
    provenance: &Provenance,
) -> Result<PoisonOutcome> {
    let mut data = Vec::with_capacity(source.data().len());
    let mut samples = Vec::with_capacity(results.len());
    for (pixels, record) in results {
        data.extend(pixels);
        samples.push(record);
    }
    let dataset = Dataset::new(
        source.height(),
        source.width(),
        source.channels(),
        data,
        source.labels().to_vec(),
    )?;
    let manifest = PoisonManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        tool_version: crate::TOOL_VERSION.to_string(),
        mode,
        epsilon: params.epsilon,
        norm: params.norm,
        master_seed: params.master_seed,
        extra_crop: params.extra_crop,
        poison_fraction: params.poison_fraction,
        num_classes,
        height: source.height(),
        width: source.width(),
        channels: source.channels(),
        num_samples: source.len(),
        coeff_set_sha256: provenance.coeff_set_sha256.clone(),
        dataset_sha256: provenance.dataset_sha256.clone(),
        samples,
    };
    Ok(PoisonOutcome { dataset, manifest })
}

/// Sample-wise AR poisoning of a whole dataset.
///
/// A seeded uniform subset of `fraction * n` samples is poisoned; the rest
/// pass through untouched. Per-sample seeds derive from (master seed,
/// sample index), so the result is independent of thread count.
pub fn poison_dataset(
    source: &Dataset,
    set: &ARProcessSet,
    params: &PoisonParams,
    provenance: &Provenance,
) -> Result<PoisonOutcome> {
    if source.channels() != set.channels() {
        return Err(Error::ChannelMismatch { dataset: source.channels(), set: set.channels() });
    }
    let flags = poison_flags(source.len(), params.poison_fraction, params.master_seed)?;
    let results: Result<Vec<(Vec<f32>, SampleRecord)>> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let sample = source.sample(i);
            if !flags[i] {
                return Ok((sample.image.to_vec(), unpoisoned_record(i, sample.label)));
            }
            let seed = derive_seed(params.master_seed, &[domain::SAMPLE, i as u64]);
            let (pixels, stats) =
                poison_sample(sample, set, params.epsilon, params.norm, seed, params.extra_crop)
                    .map_err(|e| Error::SampleFailed { index: i, source: Box::new(e) })?;
            let record = SampleRecord {
                index: i,
                label: sample.label,
                poisoned: true,
                seed: Some(seed),
                pre_clamp_norm: stats.pre_clamp_norm,
                post_clamp_norm: stats.post_clamp_norm,
                clamped: stats.clamped,
            };
            Ok((pixels, record))
        })
        .collect();
    assemble(source, results?, PoisonMode::Ar, set.num_classes(), params, provenance)
}

/// Class-wise baseline noise: a sqrt(p) x sqrt(p) grid of uniform color
/// cells, each color an independent Gaussian draw per channel.
pub fn regions_noise(p: usize, side: usize, channels: usize, seed: u64) -> Result<Array3<f64>> {
    if p == 0 {
        return Err(Error::InvalidArgument("regions patch count must be positive".into()));
    }
    let grid = (p as f64).sqrt().round() as usize;
    if grid * grid != p {
        return Err(Error::NonSquareP(p));
    }
    if !side.is_multiple_of(grid) {
        return Err(Error::IndivisibleGrid { grid, side });
    }
    let cell = side / grid;
    let mut stream = NoiseStream::new(seed);
    let mut colors = vec![0.0f64; p * channels];
    for color in colors.iter_mut() {
        *color = stream.next_normal();
    }
    let mut out = Array3::zeros((channels, side, side));
    for c in 0..channels {
        for i in 0..side {
            for j in 0..side {
                let cell_index = (i / cell) * grid + j / cell;
                out[[c, i, j]] = colors[cell_index * channels + c];
            }
        }
    }
    Ok(out)
}

/// One dense Gaussian noise tensor per class, from independent seeded
/// streams.
pub fn random_noise_classwise(
    num_classes: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Vec<Array3<f64>> {
    (0..num_classes)
        .map(|class| {
            let mut stream = NoiseStream::new(derive_seed(seed, &[domain::CLASS_NOISE, class as u64]));
            Array3::from_shape_simple_fn((channels, height, width), || stream.next_normal())
        })
        .collect()
}

/// Which class-wise baseline to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Regions { p: usize },
    Random,
}

/// Build the per-class noise tensors for a baseline poison.
pub fn classwise_noises(
    kind: BaselineKind,
    num_classes: usize,
    height: usize,
    width: usize,
    channels: usize,
    master_seed: u64,
) -> Result<Vec<Array3<f64>>> {
    match kind {
        BaselineKind::Regions { p } => {
            if height != width {
                return Err(Error::InvalidArgument(format!(
                    "regions noise needs square images, dataset is {height}x{width}"
                )));
            }
            (0..num_classes)
                .map(|class| {
                    let seed = derive_seed(master_seed, &[domain::CLASS_NOISE, class as u64]);
                    regions_noise(p, height, channels, seed)
                })
                .collect()
        }
        BaselineKind::Random => {
            Ok(random_noise_classwise(num_classes, height, width, channels, master_seed))
        }
    }
}

/// Apply a class-wise baseline: every poisoned sample of class k receives
/// the identical projected delta_k.
pub fn poison_dataset_classwise(
    source: &Dataset,
    kind: BaselineKind,
    num_classes: usize,
    params: &PoisonParams,
    provenance: &Provenance,
) -> Result<PoisonOutcome> {
    let noises = classwise_noises(
        kind,
        num_classes,
        source.height(),
        source.width(),
        source.channels(),
        params.master_seed,
    )?;
    let deltas: Result<Vec<Perturbation>> = noises
        .iter()
        .map(|n| project_norm(n, params.epsilon, params.norm))
        .collect();
    let deltas = deltas?;
    let flags = poison_flags(source.len(), params.poison_fraction, params.master_seed)?;
    let results: Result<Vec<(Vec<f32>, SampleRecord)>> = (0..source.len())
        .into_par_iter()
        .map(|i| {
            let sample = source.sample(i);
            if !flags[i] {
                return Ok((sample.image.to_vec(), unpoisoned_record(i, sample.label)));
            }
            let delta = deltas.get(sample.label as usize).ok_or_else(|| Error::SampleFailed {
                index: i,
                source: Box::new(Error::ClassOutOfRange {
                    class: sample.label as usize,
                    num_classes,
                }),
            })?;
            let (pixels, stats) = apply_delta(sample.image, delta, params.norm);
            let record = SampleRecord {
                index: i,
                label: sample.label,
                poisoned: true,
                seed: None,
                pre_clamp_norm: stats.pre_clamp_norm,
                post_clamp_norm: stats.post_clamp_norm,
                clamped: stats.clamped,
            };
            Ok((pixels, record))
        })
        .collect();
    let mode = match kind {
        BaselineKind::Regions { p } => PoisonMode::Regions { p },
        BaselineKind::Random => PoisonMode::RandomClasswise,
    };
    assemble(source, results?, mode, num_classes, params, provenance)
}

/// Produce `count` bare perturbation tensors for one class (no carrier
/// images), packaged like any other container.
pub fn generate_perturbation_batch(
    set: &ARProcessSet,
    class: usize,
    count: usize,
    height: usize,
    width: usize,
    params: &PoisonParams,
    provenance: &Provenance,
) -> Result<PoisonOutcome> {
    if class >= set.num_classes() {
        return Err(Error::ClassOutOfRange { class, num_classes: set.num_classes() });
    }
    if count == 0 {
        return Err(Error::InvalidArgument("count must be positive".into()));
    }
    let channels = set.channels();
    let results: Result<Vec<(Vec<f32>, SampleRecord)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(params.master_seed, &[domain::SAMPLE, i as u64]);
            let delta = generate_perturbation(
                set,
                class,
                height,
                width,
                params.epsilon,
                params.norm,
                seed,
                params.extra_crop,
            )?;
            let norm = tensor_norm(&delta.values, params.norm);
            let pixels: Vec<f32> =
                delta.values.as_slice().expect("contiguous").iter().map(|&v| v as f32).collect();
            let record = SampleRecord {
                index: i,
                label: class as u32,
                poisoned: true,
                seed: Some(seed),
                pre_clamp_norm: norm,
                post_clamp_norm: norm,
                clamped: 0,
            };
            Ok((pixels, record))
        })
        .collect();
    let mut data = Vec::with_capacity(count * channels * height * width);
    let mut samples = Vec::with_capacity(count);
    for (pixels, record) in results? {
        data.extend(pixels);
        samples.push(record);
    }
    let dataset = Dataset::new(height, width, channels, data, vec![class as u32; count])?;
    let manifest = PoisonManifest {
        format: MANIFEST_FORMAT.to_string(),
        version: MANIFEST_VERSION,
        tool_version: crate::TOOL_VERSION.to_string(),
        mode: PoisonMode::Perturbations { class },
        epsilon: params.epsilon,
        norm: params.norm,
        master_seed: params.master_seed,
        extra_crop: params.extra_crop,
        poison_fraction: params.poison_fraction,
        num_classes: set.num_classes(),
        height,
        width,
        channels,
        num_samples: count,
        coeff_set_sha256: provenance.coeff_set_sha256.clone(),
        dataset_sha256: provenance.dataset_sha256.clone(),
        samples,
    };
    Ok(PoisonOutcome { dataset, manifest })
}

/// Rebuild a container from its manifest. The regenerated manifest must
/// equal the stored one field for field (hashes included), otherwise the
/// provided inputs do not match what the manifest records.
pub fn replay(
    manifest: &PoisonManifest,
    source: Option<(&Dataset, &str)>,
    set: Option<(&ARProcessSet, &str)>,
) -> Result<PoisonOutcome> {
    let params = manifest.params();
    let need_source = || {
        source.ok_or_else(|| Error::InvalidArgument("this manifest needs the source dataset".into()))
    };
    let need_set = || {
        set.ok_or_else(|| Error::InvalidArgument("this manifest needs the coefficient set".into()))
    };
    let mut outcome = match &manifest.mode {
        PoisonMode::Ar => {
            let (src, src_sha) = need_source()?;
            let (processes, set_sha) = need_set()?;
            let provenance = Provenance {
                coeff_set_sha256: Some(set_sha.to_string()),
                dataset_sha256: Some(src_sha.to_string()),
            };
            poison_dataset(src, processes, &params, &provenance)?
        }
        PoisonMode::Regions { p } => {
            let (src, src_sha) = need_source()?;
            let provenance =
                Provenance { coeff_set_sha256: None, dataset_sha256: Some(src_sha.to_string()) };
            poison_dataset_classwise(
                src,
                BaselineKind::Regions { p: *p },
                manifest.num_classes,
                &params,
                &provenance,
            )?
        }
        PoisonMode::RandomClasswise => {
            let (src, src_sha) = need_source()?;
            let provenance =
                Provenance { coeff_set_sha256: None, dataset_sha256: Some(src_sha.to_string()) };
            poison_dataset_classwise(src, BaselineKind::Random, manifest.num_classes, &params, &provenance)?
        }
        PoisonMode::Perturbations { class } => {
            let (processes, set_sha) = need_set()?;
            let provenance =
                Provenance { coeff_set_sha256: Some(set_sha.to_string()), dataset_sha256: None };
            generate_perturbation_batch(
                processes,
                *class,
                manifest.num_samples,
                manifest.height,
                manifest.width,
                &params,
                &provenance,
            )?
        }
    };
    outcome.manifest.tool_version = manifest.tool_version.clone();
    if &outcome.manifest != manifest {
        return Err(Error::InvalidFormat(format!(
            "replay diverged from the manifest ({}); the provided inputs differ from the originals",
            describe_manifest_divergence(manifest, &outcome.manifest)
        )));
    }
    Ok(outcome)
}

fn describe_manifest_divergence(expected: &PoisonManifest, got: &PoisonManifest) -> String {
    macro_rules! check {
        ($field:ident) => {
            if expected.$field != got.$field {
                return format!(
                    "field {}: manifest {:?} vs replay {:?}",
                    stringify!($field),
                    expected.$field,
                    got.$field
                );
            }
        };
    }
    check!(mode);
    check!(epsilon);
    check!(norm);
    check!(master_seed);
    check!(extra_crop);
    check!(poison_fraction);
    check!(num_classes);
    check!(height);
    check!(width);
    check!(channels);
    check!(num_samples);
    check!(coeff_set_sha256);
    check!(dataset_sha256);
    for (a, b) in expected.samples.iter().zip(&got.samples) {
        if a != b {
            return format!("sample {}: manifest {a:?} vs replay {b:?}", a.index);
        }
    }
    "unknown field".to_string()
}
