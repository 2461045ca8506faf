//! Random search for mutually diverse, stable AR processes.
//!
//! Candidates are drawn as Gaussian vectors, normalized to sum one, checked
//! for stability under a few Gaussian start signals, and accepted only when
//! the clamped correlation response between their probe noise and every
//! already-accepted process (in both directions) clears a threshold. The
//! search runs flat over `classes * channels` slots and partitions the
//! result row-major into classes.

use ndarray::Array2;

use crate::ar_core::{ar_generate_seeded, ARCoefficients};
use crate::error::{Error, Result};
use crate::filters::{ar_filter, conv_response, ARFilter};
use crate::rng::{derive_seed, domain, NoiseStream};

/// Knobs for [`find_coefficients`].
#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub num_classes: usize,
    pub channels: usize,
    pub window_side: usize,
    /// Minimum pairwise response required for acceptance.
    pub threshold: f64,
    pub master_seed: u64,
    /// Gaussian start signals tried per stability check.
    pub stability_trials: usize,
    /// A probe plane whose l2 norm exceeds this is "large" and rejected.
    pub stability_norm_bound: f64,
    pub probe_height: usize,
    pub probe_width: usize,
    /// Candidate budget before giving up with [`Error::SearchExhausted`].
    pub max_attempts: u64,
}

impl SearchConfig {
    pub fn new(num_classes: usize, channels: usize, threshold: f64, master_seed: u64) -> Self {
        Self {
            num_classes,
            channels,
            window_side: crate::ar_core::DEFAULT_WINDOW_SIDE,
            threshold,
            master_seed,
            stability_trials: 3,
            stability_norm_bound: 1e4,
            probe_height: 36,
            probe_width: 36,
            max_attempts: 1_000_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 1 || self.channels < 1 {
            return Err(Error::InvalidArgument("classes and channels must be >= 1".into()));
        }
        if self.threshold < 0.0 || !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite and >= 0".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidArgument("max_attempts must be positive".into()));
        }
        if self.stability_trials < 1 {
            return Err(Error::InvalidArgument("stability_trials must be >= 1".into()));
        }
        if self.window_side < 2 {
            return Err(Error::InvalidArgument("window side must be at least 2".into()));
        }
        if self.probe_height < self.window_side || self.probe_width < self.window_side {
            return Err(Error::InvalidArgument("probe plane smaller than the window".into()));
        }
        Ok(())
    }
}

/// One accepted process plus the provenance needed to replay its probe.
#[derive(Debug, Clone)]
pub struct ProcessEntry {
    pub coefficients: ARCoefficients,
    /// Seed of the cached diversity probe (first stability plane).
    pub probe_seed: Option<u64>,
    /// Candidate index within the search, for replaying stability trials.
    pub attempt: Option<u64>,
}

/// Search parameters carried along with an accepted set.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchMetadata {
    pub master_seed: u64,
    pub threshold: f64,
    pub stability_trials: usize,
    pub stability_norm_bound: f64,
    pub probe_height: usize,
    pub probe_width: usize,
}

/// All pairwise probe responses recorded at acceptance time.
///
/// `responses[i * size + j]` is the response of probe noise `i` against
/// filter `j`. Diagonal entries are the (near-zero) matching responses.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityCertificate {
    size: usize,
    responses: Vec<f64>,
}

impl DiversityCertificate {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn response(&self, noise: usize, filter: usize) -> f64 {
        self.responses[noise * self.size + filter]
    }

    pub fn min_off_diagonal(&self) -> f64 {
        let mut min = f64::INFINITY;
        for i in 0..self.size {
            for j in 0..self.size {
                if i != j {
                    min = min.min(self.response(i, j));
                }
            }
        }
        min
    }
}

/// K classes x C channels of AR processes: the reusable poison key.
#[derive(Debug, Clone)]
pub struct ARProcessSet {
    window_side: usize,
    num_classes: usize,
    channels: usize,
    entries: Vec<ProcessEntry>,
    metadata: Option<SearchMetadata>,
    certificate: Option<DiversityCertificate>,
}

impl ARProcessSet {
    /// Build a set from a class-major grid of coefficients, e.g. a loaded
    /// fixture. No probe provenance, so no certificate can be replayed.
    pub fn from_grid(grid: Vec<Vec<ARCoefficients>>, window_side: usize) -> Result<Self> {
        if grid.is_empty() || grid[0].is_empty() {
            return Err(Error::InvalidArgument("empty process grid".into()));
        }
        let channels = grid[0].len();
        let num_classes = grid.len();
        let mut entries = Vec::with_capacity(num_classes * channels);
        for row in grid {
            if row.len() != channels {
                return Err(Error::InvalidArgument("ragged process grid".into()));
            }
            for coefficients in row {
                if coefficients.window_side() != window_side {
                    return Err(Error::InvalidArgument("window side mismatch in grid".into()));
                }
                entries.push(ProcessEntry { coefficients, probe_seed: None, attempt: None });
            }
        }
        Ok(Self { window_side, num_classes, channels, entries, metadata: None, certificate: None })
    }

    pub fn window_side(&self) -> usize {
        self.window_side
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn flat_len(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, flat: usize) -> &ProcessEntry {
        &self.entries[flat]
    }

    pub fn entries(&self) -> &[ProcessEntry] {
        &self.entries
    }

    /// Flat index of (class, channel) under the row-major partition.
    pub fn flat_index(&self, class: usize, channel: usize) -> Result<usize> {
        if class >= self.num_classes {
            return Err(Error::ClassOutOfRange { class, num_classes: self.num_classes });
        }
        if channel >= self.channels {
            return Err(Error::ChannelOutOfRange { channel, channels: self.channels });
        }
        Ok(class * self.channels + channel)
    }

    pub fn process(&self, class: usize, channel: usize) -> Result<&ARCoefficients> {
        Ok(&self.entries[self.flat_index(class, channel)?].coefficients)
    }

    pub fn metadata(&self) -> Option<&SearchMetadata> {
        self.metadata.as_ref()
    }

    pub fn certificate(&self) -> Option<&DiversityCertificate> {
        self.certificate.as_ref()
    }

    /// Human-readable label of a flat entry, e.g. `class3.ch1`.
    pub fn entry_label(&self, flat: usize) -> String {
        format!("class{}.ch{}", flat / self.channels, flat % self.channels)
    }

    pub(crate) fn from_parts(
        window_side: usize,
        num_classes: usize,
        channels: usize,
        entries: Vec<ProcessEntry>,
        metadata: Option<SearchMetadata>,
    ) -> Self {
        Self { window_side, num_classes, channels, entries, metadata, certificate: None }
    }
}

fn stability_seed(master: u64, attempt: u64, trial: usize) -> u64 {
    derive_seed(master, &[domain::PROBE, attempt, trial as u64])
}

fn plane_is_bounded(
    coeffs: &ARCoefficients,
    height: usize,
    width: usize,
    bound: f64,
    seed: u64,
) -> Result<Option<Array2<f64>>> {
    let plane = ar_generate_seeded(coeffs, height, width, seed)?;
    let norm = plane.l2_norm();
    if !norm.is_finite() || norm > bound {
        return Ok(None);
    }
    Ok(Some(plane.into_values()))
}

/// Check that the process does not diverge: the l2 norm of a probe plane
/// must stay finite and below `bound` for every one of `trials` independent
/// Gaussian start signals.
pub fn is_stable(
    coeffs: &ARCoefficients,
    trials: usize,
    bound: f64,
    probe_height: usize,
    probe_width: usize,
    seed: u64,
) -> bool {
    for trial in 0..trials {
        let s = stability_seed(seed, 0, trial);
        match plane_is_bounded(coeffs, probe_height, probe_width, bound, s) {
            Ok(Some(_)) => {}
            _ => return false,
        }
    }
    true
}

/// Progress snapshot handed to the search callback after every acceptance.
#[derive(Debug, Clone, Copy)]
pub struct SearchProgress {
    pub attempts: u64,
    pub accepted: usize,
    pub needed: usize,
}

/// Run the random search described by `config`. Deterministic in
/// `master_seed`: candidate draws and probe planes are derived per attempt
/// index, never from shared stream state.
pub fn find_coefficients(config: &SearchConfig) -> Result<ARProcessSet> {
    find_coefficients_with_progress(config, |_| {})
}

pub fn find_coefficients_with_progress(
    config: &SearchConfig,
    mut progress: impl FnMut(SearchProgress),
) -> Result<ARProcessSet> {
    config.validate()?;
    let needed = config.num_classes * config.channels;
    let v = config.window_side;
    let order = v * v - 1;

    struct Accepted {
        coefficients: ARCoefficients,
        filter: ARFilter,
        probe: Array2<f64>,
        probe_seed: u64,
        attempt: u64,
    }
    let mut accepted: Vec<Accepted> = Vec::with_capacity(needed);
    let mut attempts: u64 = 0;

    while accepted.len() < needed {
        if attempts >= config.max_attempts {
            return Err(Error::SearchExhausted(attempts));
        }
        let attempt = attempts;
        attempts += 1;

        let coeff_seed = derive_seed(config.master_seed, &[domain::COEFFICIENTS, attempt]);
        let mut stream = NoiseStream::new(coeff_seed);
        let raw: Vec<f64> = (0..order).map(|_| stream.next_normal()).collect();
        let coeffs = match ARCoefficients::from_raw(&raw, v) {
            Ok(c) => c,
            // Degenerate zero-sum draw: resample.
            Err(Error::ZeroSumCoefficients) => continue,
            Err(e) => return Err(e),
        };

        // Stability under `stability_trials` independent start signals. The
        // first plane doubles as the diversity probe.
        let mut probe = None;
        let mut stable = true;
        for trial in 0..config.stability_trials {
            let seed = stability_seed(config.master_seed, attempt, trial);
            match plane_is_bounded(
                &coeffs,
                config.probe_height,
                config.probe_width,
                config.stability_norm_bound,
                seed,
            )? {
                Some(plane) => {
                    if trial == 0 {
                        probe = Some(plane);
                    }
                }
                None => {
                    stable = false;
                    break;
                }
            }
        }
        if !stable {
            continue;
        }
        let probe = probe.expect("trial 0 ran");
        let filter = ar_filter(&coeffs);

        // Diversity: the minimum response between the candidate and every
        // accepted process, measured in both directions so the certificate
        // covers all ordered pairs.
        let mut min_response = f64::INFINITY;
        for prev in &accepted {
            min_response = min_response.min(conv_response(&probe, &prev.filter)?);
            min_response = min_response.min(conv_response(&prev.probe, &filter)?);
            if min_response < config.threshold {
                break;
            }
        }
        if min_response < config.threshold {
            continue;
        }

        let probe_seed = stability_seed(config.master_seed, attempt, 0);
        accepted.push(Accepted { coefficients: coeffs, filter, probe, probe_seed, attempt });
        progress(SearchProgress { attempts, accepted: accepted.len(), needed });
    }

    let size = accepted.len();
    let mut responses = vec![0.0f64; size * size];
    for i in 0..size {
        for j in 0..size {
            responses[i * size + j] = conv_response(&accepted[i].probe, &accepted[j].filter)?;
        }
    }

    let entries = accepted
        .into_iter()
        .map(|a| ProcessEntry {
            coefficients: a.coefficients,
            probe_seed: Some(a.probe_seed),
            attempt: Some(a.attempt),
        })
        .collect();

    let metadata = SearchMetadata {
        master_seed: config.master_seed,
        threshold: config.threshold,
        stability_trials: config.stability_trials,
        stability_norm_bound: config.stability_norm_bound,
        probe_height: config.probe_height,
        probe_width: config.probe_width,
    };

    let mut set = ARProcessSet::from_parts(
        config.window_side,
        config.num_classes,
        config.channels,
        entries,
        Some(metadata),
    );
    set.certificate = Some(DiversityCertificate { size, responses });
    Ok(set)
}

/// Result of an independent certificate check.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub threshold: f64,
    pub min_off_diagonal: f64,
    pub all_stable: bool,
    pub certificate: DiversityCertificate,
}

impl CertificateReport {
    pub fn holds(&self) -> bool {
        self.all_stable && self.min_off_diagonal >= self.threshold
    }
}

/// Re-derive every probe plane from its recorded seed and recompute all
/// pairwise responses and stability checks from scratch.
pub fn verify_certificate(set: &ARProcessSet) -> Result<CertificateReport> {
    let meta = set.metadata().ok_or_else(|| {
        Error::InvalidArgument("process set carries no search metadata to verify".into())
    })?;
    let size = set.flat_len();
    let mut probes = Vec::with_capacity(size);
    let mut filters = Vec::with_capacity(size);
    let mut all_stable = true;
    for i in 0..size {
        let entry = set.entry(i);
        let probe_seed = entry.probe_seed.ok_or_else(|| {
            Error::InvalidArgument(format!("entry {i} has no recorded probe seed"))
        })?;
        let attempt = entry.attempt.ok_or_else(|| {
            Error::InvalidArgument(format!("entry {i} has no recorded attempt index"))
        })?;
        let plane =
            ar_generate_seeded(&entry.coefficients, meta.probe_height, meta.probe_width, probe_seed)?;
        for trial in 0..meta.stability_trials {
            let seed = stability_seed(meta.master_seed, attempt, trial);
            if plane_is_bounded(
                &entry.coefficients,
                meta.probe_height,
                meta.probe_width,
                meta.stability_norm_bound,
                seed,
            )?
            .is_none()
            {
                all_stable = false;
            }
        }
        filters.push(ar_filter(&entry.coefficients));
        probes.push(plane.into_values());
    }
    let mut responses = vec![0.0f64; size * size];
    for i in 0..size {
        for j in 0..size {
            responses[i * size + j] = conv_response(&probes[i], &filters[j])?;
        }
    }
    let certificate = DiversityCertificate { size, responses };
    Ok(CertificateReport {
        threshold: meta.threshold,
        min_off_diagonal: certificate.min_off_diagonal(),
        all_stable,
        certificate,
    })
}
