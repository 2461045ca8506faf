//! Subcommand implementations.

use std::path::PathBuf;

use arpoison::container::{read_container, write_container};
use arpoison::dataset::{export_images_8bit, Dataset};
use arpoison::poisoner::{
    generate_perturbation_batch, poison_dataset, poison_dataset_classwise, BaselineKind,
    PoisonManifest, PoisonMode, PoisonOutcome, PoisonParams, Provenance,
};
use arpoison::search::{find_coefficients_with_progress, verify_certificate, SearchConfig};
use arpoison::set_file::save_set;
use arpoison::verifier::verify_separability;
use arpoison::{Error, NormKind, Result};

use crate::common::{load_coeffs, load_dataset, LoadedDataset};
use crate::{BaselineArg, DatasetKind};

pub struct SearchArgs {
    pub classes: usize,
    pub channels: usize,
    pub window: usize,
    pub threshold: f64,
    pub seed: u64,
    pub max_attempts: u64,
    pub probe_size: usize,
    pub stability_trials: usize,
    pub stability_bound: f64,
    pub out: PathBuf,
}

pub fn search(args: SearchArgs) -> Result<()> {
    let mut config = SearchConfig::new(args.classes, args.channels, args.threshold, args.seed);
    config.window_side = args.window;
    config.max_attempts = args.max_attempts;
    config.probe_height = args.probe_size;
    config.probe_width = args.probe_size;
    config.stability_trials = args.stability_trials;
    config.stability_norm_bound = args.stability_bound;

    let mut last_attempts = 0;
    let set = find_coefficients_with_progress(&config, |p| {
        eprintln!("accepted {}/{} (attempt {})", p.accepted, p.needed, p.attempts);
        last_attempts = p.attempts;
    })?;
    save_set(&set, &args.out)?;

    // Independent pass: regenerate every probe and recheck the certificate.
    let report = verify_certificate(&set)?;
    println!("accepted {} processes after {} candidate draws", set.flat_len(), last_attempts);
    println!(
        "certificate: min pairwise response {:.6} >= threshold {:.6}; stable: {}",
        report.min_off_diagonal, report.threshold, report.all_stable
    );
    if !report.holds() {
        return Err(Error::InvalidArgument("certificate verification failed".into()));
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

pub struct GenerateArgs {
    pub coeffs: String,
    pub class: usize,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub epsilon: f64,
    pub norm: NormKind,
    pub seed: u64,
    pub extra_crop: usize,
    pub out: PathBuf,
}

pub fn generate(args: GenerateArgs) -> Result<()> {
    let (set, coeff_sha) = load_coeffs(&args.coeffs)?;
    let params = PoisonParams {
        epsilon: args.epsilon,
        norm: args.norm,
        master_seed: args.seed,
        extra_crop: args.extra_crop,
        poison_fraction: 1.0,
    };
    let provenance = Provenance { coeff_set_sha256: Some(coeff_sha), dataset_sha256: None };
    let outcome = generate_perturbation_batch(
        &set,
        args.class,
        args.count,
        args.height,
        args.width,
        &params,
        &provenance,
    )?;
    write_container(&args.out, &outcome.dataset, &outcome.manifest.render_json())?;
    println!(
        "generated {} perturbations for class {} at {}x{}x{} (epsilon {}, {})",
        args.count,
        args.class,
        args.height,
        args.width,
        set.channels(),
        args.epsilon,
        args.norm
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub struct VerifyArgs {
    pub coeffs: String,
    pub per_class: usize,
    pub size: usize,
    pub channel: Option<usize>,
    pub seed: u64,
    pub extra_crop: usize,
    pub report: Option<PathBuf>,
}

pub fn verify(args: VerifyArgs) -> Result<()> {
    let (set, _) = load_coeffs(&args.coeffs)?;
    let channels: Vec<usize> = match args.channel {
        Some(c) => {
            if c >= set.channels() {
                return Err(Error::ChannelOutOfRange { channel: c, channels: set.channels() });
            }
            vec![c]
        }
        None => (0..set.channels()).collect(),
    };
    let mut report_text = String::new();
    for &channel in &channels {
        let audit = verify_separability(
            &set,
            args.per_class,
            args.size,
            args.size,
            channel,
            args.extra_crop,
            args.seed,
        )?;
        println!(
            "channel {channel}: accuracy {:.3} ({}/{})",
            audit.accuracy, audit.correct, audit.total
        );
        report_text.push_str(&audit.render_text());
        report_text.push('\n');
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report_text)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub struct PoisonArgs {
    pub dataset_kind: DatasetKind,
    pub input: PathBuf,
    pub out: PathBuf,
    pub epsilon: f64,
    pub norm: NormKind,
    pub fraction: f64,
    pub seed: u64,
    pub export_8bit: Option<PathBuf>,
}

fn finish_poison(args: &PoisonArgs, loaded: &LoadedDataset, outcome: PoisonOutcome) -> Result<()> {
    write_container(&args.out, &outcome.dataset, &outcome.manifest.render_json())?;
    if let Some(dir) = &args.export_8bit {
        export_images_8bit(&outcome.dataset, loaded.layout.as_ref(), dir)?;
        println!("exported 8-bit images to {}", dir.display());
    }
    let poisoned = outcome.manifest.samples.iter().filter(|r| r.poisoned).count();
    println!(
        "poisoned {poisoned}/{} samples (epsilon {}, {})",
        outcome.dataset.len(),
        args.epsilon,
        args.norm
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn poison(args: PoisonArgs, coeffs: String, extra_crop: usize) -> Result<()> {
    let (set, coeff_sha) = load_coeffs(&coeffs)?;
    let loaded = load_dataset(args.dataset_kind, &args.input)?;
    let params = PoisonParams {
        epsilon: args.epsilon,
        norm: args.norm,
        master_seed: args.seed,
        extra_crop,
        poison_fraction: args.fraction,
    };
    let provenance = Provenance {
        coeff_set_sha256: Some(coeff_sha),
        dataset_sha256: Some(loaded.sha256.clone()),
    };
    let outcome = poison_dataset(&loaded.dataset, &set, &params, &provenance)?;
    finish_poison(&args, &loaded, outcome)
}

pub fn baseline(
    args: PoisonArgs,
    kind: BaselineArg,
    p: usize,
    classes: Option<usize>,
) -> Result<()> {
    let loaded = load_dataset(args.dataset_kind, &args.input)?;
    let num_classes = match classes {
        Some(k) => k,
        None => loaded.dataset.labels().iter().max().map(|&m| m as usize + 1).unwrap_or(1),
    };
    let kind = match kind {
        BaselineArg::Regions => BaselineKind::Regions { p },
        BaselineArg::Random => BaselineKind::Random,
    };
    let params = PoisonParams {
        epsilon: args.epsilon,
        norm: args.norm,
        master_seed: args.seed,
        extra_crop: 0,
        poison_fraction: args.fraction,
    };
    let provenance =
        Provenance { coeff_set_sha256: None, dataset_sha256: Some(loaded.sha256.clone()) };
    let outcome =
        poison_dataset_classwise(&loaded.dataset, kind, num_classes, &params, &provenance)?;
    finish_poison(&args, &loaded, outcome)
}

pub fn replay(
    manifest_path: PathBuf,
    input: Option<PathBuf>,
    dataset_kind: Option<DatasetKind>,
    coeffs: Option<String>,
    out: PathBuf,
) -> Result<()> {
    let manifest = PoisonManifest::parse(&std::fs::read_to_string(&manifest_path)?)?;

    let needs_source = !matches!(manifest.mode, PoisonMode::Perturbations { .. });
    let loaded = match (&input, dataset_kind) {
        (Some(path), Some(kind)) => Some(load_dataset(kind, path)?),
        (None, _) if needs_source => {
            return Err(Error::InvalidArgument(
                "this manifest needs --in and --dataset-kind for the source dataset".into(),
            ));
        }
        _ => None,
    };
    if let (Some(loaded), Some(recorded)) = (&loaded, &manifest.dataset_sha256) {
        if &loaded.sha256 != recorded {
            return Err(Error::InvalidArgument(format!(
                "source dataset hash {} does not match manifest {recorded}",
                loaded.sha256
            )));
        }
    }

    let needs_set = matches!(manifest.mode, PoisonMode::Ar | PoisonMode::Perturbations { .. });
    let set = match &coeffs {
        Some(spec) => Some(load_coeffs(spec)?),
        None if needs_set => {
            return Err(Error::InvalidArgument("this manifest needs --coeffs".into()));
        }
        None => None,
    };
    if let (Some((_, sha)), Some(recorded)) = (&set, &manifest.coeff_set_sha256) {
        if sha != recorded {
            return Err(Error::InvalidArgument(format!(
                "coefficient set hash {sha} does not match manifest {recorded}"
            )));
        }
    }

    let outcome = arpoison::poisoner::replay(
        &manifest,
        loaded.as_ref().map(|l| (&l.dataset, l.sha256.as_str())),
        set.as_ref().map(|(s, sha)| (s, sha.as_str())),
    )?;
    write_container(&out, &outcome.dataset, &outcome.manifest.render_json())?;
    println!("replayed {} samples", outcome.dataset.len());
    println!("wrote {}", out.display());
    Ok(())
}

fn mode_description(mode: &PoisonMode) -> String {
    match mode {
        PoisonMode::Ar => "ar".to_string(),
        PoisonMode::Regions { p } => format!("regions(p={p})"),
        PoisonMode::RandomClasswise => "random-classwise".to_string(),
        PoisonMode::Perturbations { class } => format!("perturbations(class={class})"),
    }
}

pub fn inspect(
    container: PathBuf,
    dump_perturbations: Option<PathBuf>,
    input: Option<PathBuf>,
    dataset_kind: Option<DatasetKind>,
    limit: usize,
) -> Result<()> {
    let (dataset, manifest_text) = read_container(&container)?;
    let manifest = PoisonManifest::parse(&manifest_text)?;

    println!("container: {}", container.display());
    println!("samples: {}", dataset.len());
    println!("shape: {}x{}x{}", dataset.height(), dataset.width(), dataset.channels());
    println!("mode: {}", mode_description(&manifest.mode));
    println!("epsilon: {} ({})", manifest.epsilon, manifest.norm);
    println!("seed: {}", manifest.master_seed);
    let poisoned = manifest.samples.iter().filter(|r| r.poisoned).count();
    println!("poisoned: {poisoned}/{}", manifest.samples.len());
    let clamped: u64 = manifest.samples.iter().map(|r| r.clamped as u64).sum();
    println!("clamped-pixels: {clamped}");

    let mut histogram = vec![0u64; manifest.num_classes.max(1)];
    for &label in dataset.labels() {
        let label = label as usize;
        if label >= histogram.len() {
            histogram.resize(label + 1, 0);
        }
        histogram[label] += 1;
    }
    println!("labels:");
    for (label, count) in histogram.iter().enumerate() {
        println!("  label {label}: {count}");
    }

    let norm_stats = |select: fn(&arpoison::poisoner::SampleRecord) -> f64| {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for r in &manifest.samples {
            let v = select(r);
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        (min, sum / manifest.samples.len() as f64, max)
    };
    if !manifest.samples.is_empty() {
        let (pmin, pmean, pmax) = norm_stats(|r| r.pre_clamp_norm);
        println!("pre-clamp-norm: min {pmin:.6} mean {pmean:.6} max {pmax:.6}");
        let (qmin, qmean, qmax) = norm_stats(|r| r.post_clamp_norm);
        println!("post-clamp-norm: min {qmin:.6} mean {qmean:.6} max {qmax:.6}");
    }

    if let Some(dump_dir) = dump_perturbations {
        dump_perturbation_images(&dataset, &manifest, input, dataset_kind, &dump_dir, limit)?;
        println!("dumped perturbation images to {}", dump_dir.display());
    }
    Ok(())
}

/// Write min-max normalized per-sample perturbations as PNGs, the usual way
/// imperceptible noise is visualized.
fn dump_perturbation_images(
    dataset: &Dataset,
    manifest: &PoisonManifest,
    input: Option<PathBuf>,
    dataset_kind: Option<DatasetKind>,
    dump_dir: &std::path::Path,
    limit: usize,
) -> Result<()> {
    let bare = matches!(manifest.mode, PoisonMode::Perturbations { .. });
    let source = if bare {
        None
    } else {
        let (path, kind) = match (input, dataset_kind) {
            (Some(p), Some(k)) => (p, k),
            _ => {
                return Err(Error::InvalidArgument(
                    "--dump-perturbations needs --in and --dataset-kind for the clean source".into(),
                ));
            }
        };
        let loaded = load_dataset(kind, &path)?;
        if loaded.dataset.len() != dataset.len()
            || loaded.dataset.sample_len() != dataset.sample_len()
        {
            return Err(Error::InvalidArgument(
                "source dataset shape does not match the container".into(),
            ));
        }
        Some(loaded.dataset)
    };

    let count = limit.min(dataset.len());
    let per = dataset.sample_len();
    let mut data = Vec::with_capacity(count * per);
    for i in 0..count {
        let poisoned = dataset.image(i);
        let delta: Vec<f64> = match &source {
            Some(src) => {
                let clean = src.image(i);
                poisoned.iter().zip(clean).map(|(&p, &c)| p as f64 - c as f64).collect()
            }
            None => poisoned.iter().map(|&p| p as f64).collect(),
        };
        let min = delta.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        if span > 0.0 {
            data.extend(delta.iter().map(|d| ((d - min) / span) as f32));
        } else {
            data.extend(std::iter::repeat_n(0.5f32, per));
        }
    }
    let views = Dataset::new(
        dataset.height(),
        dataset.width(),
        dataset.channels(),
        data,
        dataset.labels()[..count].to_vec(),
    )?;
    export_images_8bit(&views, None, dump_dir)
}
