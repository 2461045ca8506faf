//! Autoregressive perturbations for availability poisoning.
//!
//! The toolkit searches for diverse stable AR processes, expands them into
//! per-sample imperceptible noise through a 2D sliding-window recurrence,
//! audits their separability with a hand-specified three-layer CNN, and
//! applies them (or class-wise baseline noises) to image datasets with a
//! manifest that makes every poison bit-reproducible.

pub mod ar_core;
pub mod container;
pub mod dataset;
pub mod error;
pub mod filters;
pub mod poisoner;
pub mod rng;
pub mod search;
pub mod set_file;
pub mod verifier;

pub use ar_core::{
    ar_generate, ar_generate_seeded, crop_init_band, normalize_coefficients, project_norm,
    tensor_norm, ARCoefficients, NormKind, Perturbation, PerturbationPlane, DEFAULT_EXTRA_CROP,
    DEFAULT_WINDOW_SIDE,
};
pub use dataset::{read_cifar10, read_image_dir, sha256_hex, Dataset, DatasetSample};
pub use error::{Error, Result};
pub use filters::{ar_filter, conv_response, cross_correlate_valid, max_correlation, ARFilter};
pub use poisoner::{
    generate_perturbation, poison_dataset, poison_dataset_classwise, poison_sample,
    random_noise_classwise, regions_noise, replay, PoisonManifest, PoisonMode, PoisonOutcome,
    PoisonParams, Provenance,
};
pub use search::{
    find_coefficients, is_stable, verify_certificate, ARProcessSet, CertificateReport,
    DiversityCertificate, SearchConfig,
};
pub use set_file::{load_set, parse_set, published_process_set, render_set, save_set};
pub use verifier::{build_manual_cnn, verify_separability, AuditReport, ManualCNN};

/// Version string recorded in manifests and reports.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
