//! End-to-end poisoning behavior: norm exactness, fractions, class-wise
//! semantics, baseline geometry, and manifest replay.

use arpoison::ar_core::{NormKind, DEFAULT_EXTRA_CROP};
use arpoison::dataset::Dataset;
use arpoison::error::Error;
use arpoison::poisoner::{
    poison_dataset, poison_dataset_classwise, poison_flags, regions_noise, replay,
    BaselineKind, PoisonParams, Provenance,
};
use arpoison::rng::NoiseStream;
use arpoison::set_file::published_process_set;

fn toy_dataset(n: usize, height: usize, width: usize, channels: usize, seed: u64) -> Dataset {
    let mut stream = NoiseStream::new(seed);
    let per = height * width * channels;
    let data: Vec<f32> = (0..n * per)
        .map(|_| ((stream.next_u64() % 256) as f32) / 255.0)
        .collect();
    let labels: Vec<u32> = (0..n).map(|i| (i % 10) as u32).collect();
    Dataset::new(height, width, channels, data, labels).unwrap()
}

fn params(epsilon: f64, norm: NormKind, fraction: f64) -> PoisonParams {
    PoisonParams {
        epsilon,
        norm,
        master_seed: 7,
        extra_crop: DEFAULT_EXTRA_CROP,
        poison_fraction: fraction,
    }
}

#[test]
fn vanishing_epsilon_leaves_pixels_unchanged() {
    let set = published_process_set();
    let source = toy_dataset(4, 32, 32, 3, 1);
    let out = poison_dataset(&source, &set, &params(1e-9, NormKind::L2, 1.0), &Provenance::default())
        .unwrap();
    for (a, b) in source.data().iter().zip(out.dataset.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn l2_poison_norms_are_exactly_epsilon_pre_clamp() {
    let set = published_process_set();
    let source = toy_dataset(20, 32, 32, 3, 2);
    let out = poison_dataset(&source, &set, &params(1.0, NormKind::L2, 1.0), &Provenance::default())
        .unwrap();
    for record in &out.manifest.samples {
        assert!(record.poisoned);
        assert!(
            (record.pre_clamp_norm - 1.0).abs() <= 1e-6,
            "sample {}: pre-clamp {}",
            record.index,
            record.pre_clamp_norm
        );
        assert!(record.post_clamp_norm <= record.pre_clamp_norm + 1e-12);
    }
    // Labels are untouched (clean-label poison).
    assert_eq!(source.labels(), out.dataset.labels());
}

#[test]
fn stl_shaped_samples_project_to_epsilon_three() {
    let set = published_process_set();
    let source = toy_dataset(2, 96, 96, 3, 3);
    let out = poison_dataset(&source, &set, &params(3.0, NormKind::L2, 1.0), &Provenance::default())
        .unwrap();
    for record in &out.manifest.samples {
        assert!((record.pre_clamp_norm - 3.0).abs() <= 3e-6, "{}", record.pre_clamp_norm);
    }
}

#[test]
fn linf_poison_peaks_at_eight_over_255() {
    let set = published_process_set();
    let source = toy_dataset(10, 32, 32, 3, 4);
    let eps = 8.0 / 255.0;
    let out = poison_dataset(&source, &set, &params(eps, NormKind::Linf, 1.0), &Provenance::default())
        .unwrap();
    for record in &out.manifest.samples {
        assert!((record.pre_clamp_norm - eps).abs() <= 1e-9, "{}", record.pre_clamp_norm);
    }
}

#[test]
fn zero_fraction_is_a_no_op() {
    let set = published_process_set();
    let source = toy_dataset(8, 32, 32, 3, 5);
    let out = poison_dataset(&source, &set, &params(1.0, NormKind::L2, 0.0), &Provenance::default())
        .unwrap();
    assert_eq!(source.data(), out.dataset.data());
    assert!(out.manifest.samples.iter().all(|r| !r.poisoned && r.pre_clamp_norm == 0.0));
}

#[test]
fn fractional_poisoning_hits_the_exact_count() {
    let set = published_process_set();
    let source = toy_dataset(200, 32, 32, 3, 6);
    let out = poison_dataset(&source, &set, &params(1.0, NormKind::L2, 0.95), &Provenance::default())
        .unwrap();
    let poisoned = out.manifest.samples.iter().filter(|r| r.poisoned).count();
    assert_eq!(poisoned, 190);
    // The seeded subset is re-derivable.
    let flags = poison_flags(200, 0.95, 7).unwrap();
    for record in &out.manifest.samples {
        assert_eq!(record.poisoned, flags[record.index]);
    }
}

#[test]
fn classwise_random_noise_is_identical_within_a_class() {
    // Two identical images sharing a class must end up bit-identical, and
    // distinct classes must receive different noise.
    let per = 3 * 8 * 8;
    let mut data = vec![0.5f32; per];
    data.extend(vec![0.5f32; per]); // same pixels, same class
    data.extend(vec![0.5f32; per]); // same pixels, other class
    let source = Dataset::new(8, 8, 3, data, vec![0, 0, 1]).unwrap();
    let out = poison_dataset_classwise(
        &source,
        BaselineKind::Random,
        2,
        &params(0.5, NormKind::L2, 1.0),
        &Provenance::default(),
    )
    .unwrap();
    let a = out.dataset.image(0);
    let b = out.dataset.image(1);
    let c = out.dataset.image(2);
    assert_eq!(a, b);
    assert_ne!(a, c);
    // Table-3 small-radius regime: projected to epsilon 0.5.
    for r in &out.manifest.samples {
        assert!((r.pre_clamp_norm - 0.5).abs() <= 1e-6);
    }
}

#[test]
fn regions_noise_has_uniform_cells_of_the_right_size() {
    for (p, side, cell) in [(16usize, 32usize, 8usize), (4, 32, 16), (1, 32, 32)] {
        let noise = regions_noise(p, side, 3, 11).unwrap();
        let grid = side / cell;
        for c in 0..3 {
            for gi in 0..grid {
                for gj in 0..grid {
                    let v0 = noise[[c, gi * cell, gj * cell]];
                    for i in 0..cell {
                        for j in 0..cell {
                            assert_eq!(noise[[c, gi * cell + i, gj * cell + j]], v0);
                        }
                    }
                }
            }
        }
        // Neighboring cells carry independent colors.
        if grid > 1 {
            assert_ne!(noise[[0, 0, 0]], noise[[0, 0, cell]]);
            assert_ne!(noise[[0, 0, 0]], noise[[0, cell, 0]]);
        }
    }
}

#[test]
fn regions_noise_validates_its_grid() {
    assert!(matches!(regions_noise(5, 32, 3, 1), Err(Error::NonSquareP(5))));
    assert!(matches!(
        regions_noise(16, 30, 3, 1),
        Err(Error::IndivisibleGrid { grid: 4, side: 30 })
    ));
    assert!(matches!(regions_noise(0, 32, 3, 1), Err(Error::InvalidArgument(_))));
}

#[test]
fn mismatched_shapes_are_rejected() {
    let set = published_process_set();
    let gray = toy_dataset(2, 32, 32, 1, 8);
    assert!(matches!(
        poison_dataset(&gray, &set, &params(1.0, NormKind::L2, 1.0), &Provenance::default()),
        Err(Error::ChannelMismatch { dataset: 1, set: 3 })
    ));
    // A bad label aborts with the failing sample index.
    let per = 3 * 32 * 32;
    let mut data = vec![0.0; per];
    data.extend(vec![0.0; per]);
    let wild = Dataset::new(32, 32, 3, data, vec![3, 12]).unwrap();
    match poison_dataset(&wild, &set, &params(1.0, NormKind::L2, 1.0), &Provenance::default()) {
        Err(Error::SampleFailed { index: 1, source }) => {
            assert!(matches!(*source, Error::ClassOutOfRange { class: 12, num_classes: 10 }));
        }
        other => panic!("expected SampleFailed at index 1, got {other:?}"),
    }
}

#[test]
fn replay_reproduces_the_outcome_exactly() {
    let set = published_process_set();
    let source = toy_dataset(12, 32, 32, 3, 9);
    let provenance = Provenance {
        coeff_set_sha256: Some("coeffhash".into()),
        dataset_sha256: Some("datahash".into()),
    };
    let out = poison_dataset(&source, &set, &params(1.0, NormKind::L2, 0.5), &provenance).unwrap();
    let replayed = replay(&out.manifest, Some((&source, "datahash")), Some((&set, "coeffhash"))).unwrap();
    assert_eq!(out.dataset, replayed.dataset);
    assert_eq!(out.manifest, replayed.manifest);

    // A different source is caught by the manifest equality check.
    let other = toy_dataset(12, 32, 32, 3, 10);
    assert!(replay(&out.manifest, Some((&other, "datahash")), Some((&set, "coeffhash"))).is_err());
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let set = published_process_set();
    let source = toy_dataset(16, 32, 32, 3, 11);
    let p = params(1.0, NormKind::L2, 0.75);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = single.install(|| poison_dataset(&source, &set, &p, &Provenance::default())).unwrap();
    let b = many.install(|| poison_dataset(&source, &set, &p, &Provenance::default())).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.manifest, b.manifest);
    assert_eq!(a.manifest.render_json(), b.manifest.render_json());
}
