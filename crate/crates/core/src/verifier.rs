//! Separability audit: a three-layer CNN whose parameters are written down
//! by hand, never trained.
//!
//! The convolutional layer holds one matching AR filter per class (no bias,
//! ReLU), pooling is a global spatial max, and the linear layer is fixed to
//! W = -I, b = 1. A perturbation from process i leaves filter i's response
//! at zero, so logit i lands exactly at 1 while every other logit is pushed
//! below 1 by its positive response.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::ar_core::{ar_generate_seeded, crop_init_band};
use crate::error::{Error, Result};
use crate::filters::{ar_filter, max_correlation, ARFilter};
use crate::rng::{derive_seed, domain};
use crate::search::ARProcessSet;

/// The manually-specified classifier for one channel of a process set.
#[derive(Debug, Clone)]
pub struct ManualCNN {
    filters: Vec<ARFilter>,
    linear_weights: Array2<f64>,
    linear_bias: Array1<f64>,
    window_side: usize,
    channel: usize,
}

impl ManualCNN {
    pub fn num_classes(&self) -> usize {
        self.filters.len()
    }

    pub fn channel(&self) -> usize {
        self.channel
    }

    pub fn filters(&self) -> &[ARFilter] {
        &self.filters
    }

    pub fn linear_weights(&self) -> &Array2<f64> {
        &self.linear_weights
    }

    pub fn linear_bias(&self) -> &Array1<f64> {
        &self.linear_bias
    }

    /// Correlate, ReLU, global spatial max, then the fixed affine layer.
    /// Returns the logits and the argmax class (lowest index wins ties).
    pub fn forward(&self, delta: &Array2<f64>) -> Result<(Vec<f64>, usize)> {
        let (h, w) = delta.dim();
        if h < self.window_side || w < self.window_side {
            return Err(Error::DimensionTooSmall(format!(
                "input {h}x{w} is smaller than the {0}x{0} filters",
                self.window_side
            )));
        }
        let k = self.filters.len();
        let mut pooled = Array1::zeros(k);
        for (i, filter) in self.filters.iter().enumerate() {
            // ReLU then max over the map equals clamping the map max at 0.
            pooled[i] = max_correlation(delta, filter)?.max(0.0);
        }
        let logits = self.linear_weights.dot(&pooled) + &self.linear_bias;
        let mut class = 0;
        for i in 1..k {
            if logits[i] > logits[class] {
                class = i;
            }
        }
        Ok((logits.to_vec(), class))
    }
}

/// Assemble the classifier from one channel of `set`.
pub fn build_manual_cnn(set: &ARProcessSet, channel: usize) -> Result<ManualCNN> {
    if channel >= set.channels() {
        return Err(Error::ChannelOutOfRange { channel, channels: set.channels() });
    }
    let k = set.num_classes();
    let mut filters = Vec::with_capacity(k);
    for class in 0..k {
        let coeffs = set.process(class, channel)?;
        filters.push(ar_filter(coeffs).with_source(set.entry_label(class * set.channels() + channel)));
    }
    let mut linear_weights = Array2::zeros((k, k));
    for i in 0..k {
        linear_weights[[i, i]] = -1.0;
    }
    Ok(ManualCNN {
        filters,
        linear_weights,
        linear_bias: Array1::ones(k),
        window_side: set.window_side(),
        channel,
    })
}

/// Gap statistics of the matching logit over one class's audit samples.
#[derive(Debug, Clone, Copy)]
pub struct GapStats {
    /// Smallest `logit(true) - max logit(other)` observed.
    pub min: f64,
    pub mean: f64,
}

/// Outcome of a separability audit.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub channel: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub class_gaps: Vec<GapStats>,
}

impl AuditReport {
    /// Structured plain-text rendering, stable across runs and thread counts.
    pub fn render_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "separability-audit").unwrap();
        writeln!(out, "channel: {}", self.channel).unwrap();
        writeln!(out, "classes: {}", self.confusion.len()).unwrap();
        writeln!(out, "samples-per-class: {}", self.per_class).unwrap();
        writeln!(out, "plane-size: {}x{}", self.height, self.width).unwrap();
        writeln!(out, "seed: {}", self.seed).unwrap();
        writeln!(out, "accuracy: {:.6}", self.accuracy).unwrap();
        writeln!(out, "correct: {}/{}", self.correct, self.total).unwrap();
        writeln!(out, "confusion-matrix: row = true class, column = predicted").unwrap();
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            writeln!(out, "  {}", cells.join(" ")).unwrap();
        }
        writeln!(out, "matching-logit-gap: logit(true) - max logit(other)").unwrap();
        for (k, gap) in self.class_gaps.iter().enumerate() {
            writeln!(out, "  class {k}: min {:.6} mean {:.6}", gap.min, gap.mean).unwrap();
        }
        out
    }
}

/// Generate `per_class` fresh cropped perturbations per class from one
/// channel's processes, classify them with the manual CNN, and tally.
///
/// No norm scaling is applied; the argmax is scale-invariant.
pub fn verify_separability(
    set: &ARProcessSet,
    per_class: usize,
    height: usize,
    width: usize,
    channel: usize,
    extra_crop: usize,
    seed: u64,
) -> Result<AuditReport> {
    if per_class < 1 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    let cnn = build_manual_cnn(set, channel)?;
    let k = set.num_classes();
    let v = set.window_side();
    let gen_h = height + v - 1 + extra_crop;
    let gen_w = width + v - 1 + extra_crop;
    let total = k * per_class;

    // Parallel over samples; results land at fixed indices so reduction
    // order (and therefore every float in the report) is scheduling-free.
    let outcomes: Result<Vec<(usize, f64)>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let class = idx / per_class;
            let sample = idx % per_class;
            let plane_seed = derive_seed(
                seed,
                &[domain::AUDIT, channel as u64, class as u64, sample as u64],
            );
            let coeffs = set.process(class, channel)?;
            let plane = ar_generate_seeded(coeffs, gen_h, gen_w, plane_seed)?
                .with_source(set.entry_label(class * set.channels() + channel));
            let cropped = crop_init_band(&plane, extra_crop)?;
            let (logits, predicted) = cnn.forward(cropped.values())?;
            let mut best_other = f64::NEG_INFINITY;
            for (j, &l) in logits.iter().enumerate() {
                if j != class && l > best_other {
                    best_other = l;
                }
            }
            let gap = logits[class] - best_other;
            Ok((predicted, gap))
        })
        .collect();
    let outcomes = outcomes?;

    let mut confusion = vec![vec![0u64; k]; k];
    let mut gap_min = vec![f64::INFINITY; k];
    let mut gap_sum = vec![0.0f64; k];
    let mut correct = 0u64;
    for (idx, (predicted, gap)) in outcomes.iter().enumerate() {
        let class = idx / per_class;
        confusion[class][*predicted] += 1;
        if *predicted == class {
            correct += 1;
        }
        gap_min[class] = gap_min[class].min(*gap);
        gap_sum[class] += gap;
    }
    let class_gaps = (0..k)
        .map(|c| GapStats { min: gap_min[c], mean: gap_sum[c] / per_class as f64 })
        .collect();
    Ok(AuditReport {
        channel,
        per_class,
        height,
        width,
        seed,
        correct,
        total: total as u64,
        accuracy: correct as f64 / total as f64,
        confusion,
        class_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ar_core::{ARCoefficients, DEFAULT_EXTRA_CROP};
    use crate::rng::NoiseStream;
    use crate::set_file::published_process_set;

    #[test]
    fn published_set_yields_ten_near_zero_sum_filters() {
        let set = published_process_set();
        let cnn = build_manual_cnn(&set, 0).unwrap();
        assert_eq!(cnn.num_classes(), 10);
        for f in cnn.filters() {
            assert!(f.kernel_sum().abs() <= 5e-3, "kernel sum {}", f.kernel_sum());
        }
        // Filter #1 is the published process-one kernel.
        let k = cnn.filters()[0].kernel();
        assert_eq!(k[[0, 0]], 0.0226);
        assert_eq!(k[[1, 1]], -0.1896);
        assert_eq!(k[[2, 2]], -1.0);
    }

    #[test]
    fn toy_two_class_linear_layer_is_negative_identity() {
        let a = ARCoefficients::new(vec![0.125; 8], 3).unwrap();
        let mut b8 = vec![0.0; 8];
        b8[0] = 1.0;
        let b = ARCoefficients::new(b8, 3).unwrap();
        let set = ARProcessSet::from_grid(vec![vec![a], vec![b]], 3).unwrap();
        let cnn = build_manual_cnn(&set, 0).unwrap();
        assert_eq!(cnn.linear_weights(), &ndarray::arr2(&[[-1.0, 0.0], [0.0, -1.0]]));
        assert_eq!(cnn.linear_bias(), &ndarray::arr1(&[1.0, 1.0]));
        assert!(build_manual_cnn(&set, 1).is_err());
    }

    #[test]
    fn matching_class_logit_is_one() {
        let set = published_process_set();
        let cnn = build_manual_cnn(&set, 0).unwrap();
        for class in 0..set.num_classes() {
            let coeffs = set.process(class, 0).unwrap();
            let plane = ar_generate_seeded(coeffs, 36, 36, 400 + class as u64).unwrap();
            let cropped = crop_init_band(&plane, DEFAULT_EXTRA_CROP).unwrap();
            let (logits, predicted) = cnn.forward(cropped.values()).unwrap();
            assert_eq!(predicted, class);
            assert!((logits[class] - 1.0).abs() <= 1e-6, "logit {}", logits[class]);
            for (j, &l) in logits.iter().enumerate() {
                if j != class {
                    assert!(l < 1.0, "class {class}, other logit {j} = {l}");
                }
            }
        }
    }

    #[test]
    fn all_zero_input_ties_to_class_zero() {
        let set = published_process_set();
        let cnn = build_manual_cnn(&set, 0).unwrap();
        let zeros = Array2::zeros((32, 32));
        let (logits, predicted) = cnn.forward(&zeros).unwrap();
        assert_eq!(predicted, 0);
        for l in logits {
            assert_eq!(l, 1.0);
        }
    }

    #[test]
    fn argmax_is_invariant_under_positive_scaling() {
        let set = published_process_set();
        let cnn = build_manual_cnn(&set, 1).unwrap();
        let mut picker = NoiseStream::new(555);
        for trial in 0..100u64 {
            let class = (picker.next_u64() % 10) as usize;
            let coeffs = set.process(class, 1).unwrap();
            let plane = ar_generate_seeded(coeffs, 36, 36, 9000 + trial).unwrap();
            let cropped = crop_init_band(&plane, DEFAULT_EXTRA_CROP).unwrap();
            let c = picker.next_normal().abs() * 4.0 + 1e-3;
            let scaled = cropped.values().mapv(|v| c * v);
            let (_, base) = cnn.forward(cropped.values()).unwrap();
            let (_, after) = cnn.forward(&scaled).unwrap();
            assert_eq!(base, after, "trial {trial}, scale {c}");
        }
    }

    #[test]
    fn single_sample_audit_is_perfect() {
        let set = published_process_set();
        for channel in 0..3 {
            let report = verify_separability(&set, 1, 32, 32, channel, DEFAULT_EXTRA_CROP, 7).unwrap();
            assert_eq!(report.accuracy, 1.0, "channel {channel}");
            assert_eq!(report.correct, 10);
        }
    }

    #[test]
    fn duplicate_processes_collapse_under_tie_break() {
        let dup = ARCoefficients::new(vec![0.125; 8], 3).unwrap();
        let mut b8 = vec![0.0; 8];
        b8[0] = 0.6;
        b8[1] = 0.4;
        let other = ARCoefficients::new(b8, 3).unwrap();
        let set = ARProcessSet::from_grid(
            vec![vec![dup.clone()], vec![dup], vec![other]],
            3,
        )
        .unwrap();
        let k = set.num_classes() as f64;
        let per_class = 50;
        let report = verify_separability(&set, per_class, 16, 16, 0, 0, 99).unwrap();
        // Classes 0 and 1 share a process: identical filters tie and the
        // lowest index wins, so class 1 samples all land on class 0.
        let dup_correct = report.confusion[0][0] + report.confusion[1][1];
        let dup_total = 2 * per_class as u64;
        let dup_accuracy = dup_correct as f64 / dup_total as f64;
        assert!(dup_accuracy <= 0.5 + 1.0 / (2.0 * k), "accuracy {dup_accuracy}");
        assert_eq!(report.confusion[1][0], per_class as u64);
        // The distinct class is untouched.
        assert_eq!(report.confusion[2][2], per_class as u64);
    }

    #[test]
    fn softmax_would_not_change_the_decision() {
        // The decision path reads raw logits; softmax is monotone, so the
        // argmax agrees.
        let set = published_process_set();
        let cnn = build_manual_cnn(&set, 0).unwrap();
        for class in 0..set.num_classes() {
            let coeffs = set.process(class, 0).unwrap();
            let plane = ar_generate_seeded(coeffs, 36, 36, 800 + class as u64).unwrap();
            let cropped = crop_init_band(&plane, DEFAULT_EXTRA_CROP).unwrap();
            let (logits, predicted) = cnn.forward(cropped.values()).unwrap();
            let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let softmax: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
            let mut soft_arg = 0;
            for (j, &p) in softmax.iter().enumerate() {
                if p > softmax[soft_arg] {
                    soft_arg = j;
                }
            }
            assert_eq!(predicted, soft_arg);
        }
    }

    #[test]
    fn report_text_is_deterministic() {
        let set = published_process_set();
        let a = verify_separability(&set, 3, 20, 20, 2, 2, 1).unwrap();
        let b = verify_separability(&set, 3, 20, 20, 2, 2, 1).unwrap();
        assert_eq!(a.render_text(), b.render_text());
        assert!(a.render_text().contains("accuracy: 1.000000"));
    }
}
