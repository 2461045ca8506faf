//! Autoregressive process representation and 2D noise generation.
//!
//! A process of order V^2-1 fills a plane through a V x V sliding window:
//! the first V-1 rows and columns hold a Gaussian start signal, and every
//! other cell is the coefficient-weighted sum of the V^2-1 window cells that
//! precede it in raster order. The start signal (plus a configurable number
//! of extra rows/columns) is cropped away afterwards, and the finished
//! multi-channel tensor is rescaled onto a norm ball of radius epsilon.

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Window side used throughout the toolkit unless asked otherwise.
pub const DEFAULT_WINDOW_SIDE: usize = 3;

/// Extra rows/columns cropped beyond the start signal.
pub const DEFAULT_EXTRA_CROP: usize = 2;

/// Divide a raw coefficient vector by its sum so the result sums to one.
///
/// Rejects draws whose sum is numerically zero; the caller resamples.
pub fn normalize_coefficients(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("empty coefficient vector".into()));
    }
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("non-finite coefficient".into()));
    }
    let sum: f64 = raw.iter().sum();
    if sum.abs() <= 1e-12 {
        return Err(Error::ZeroSumCoefficients);
    }
    Ok(raw.iter().map(|x| x / sum).collect())
}

/// Coefficients of one AR(V^2-1) process.
///
/// `beta[0]` weighs the raster-order immediate predecessor of the target
/// cell, `beta[1]` the one before that, and so on through the window.
#[derive(Debug, Clone, PartialEq)]
pub struct ARCoefficients {
    beta: Vec<f64>,
    window_side: usize,
}

impl ARCoefficients {
    /// Wrap an already-prepared coefficient vector. The length must be
    /// exactly `window_side^2 - 1` and every entry finite.
    pub fn new(beta: Vec<f64>, window_side: usize) -> Result<Self> {
        if window_side < 2 {
            return Err(Error::InvalidArgument(format!(
                "window side must be at least 2, got {window_side}"
            )));
        }
        let expect = window_side * window_side - 1;
        if beta.len() != expect {
            return Err(Error::InvalidArgument(format!(
                "expected {expect} coefficients for window side {window_side}, got {}",
                beta.len()
            )));
        }
        if beta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coefficient".into()));
        }
        Ok(Self { beta, window_side })
    }

    /// Normalize a raw draw to sum one, then wrap it.
    pub fn from_raw(raw: &[f64], window_side: usize) -> Result<Self> {
        Self::new(normalize_coefficients(raw)?, window_side)
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn window_side(&self) -> usize {
        self.window_side
    }

    /// Process order, i.e. `window_side^2 - 1`.
    pub fn order(&self) -> usize {
        self.beta.len()
    }

    pub fn sum(&self) -> f64 {
        self.beta.iter().sum()
    }
}

/// A single-channel plane produced by [`ar_generate`], with provenance.
#[derive(Debug, Clone)]
pub struct PerturbationPlane {
    values: Array2<f64>,
    window_side: usize,
    init_seed: u64,
    source: Option<String>,
}

impl PerturbationPlane {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn window_side(&self) -> usize {
        self.window_side
    }

    /// Seed of the noise stream that filled the start signal.
    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Identifier of the generating coefficients, when the caller knows it.
    pub fn source(&self) -> Option<&str> {
        self.source.as_deref()
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

/// Fill an `height x width` plane from `coeffs`.
///
/// The first V-1 rows and V-1 columns are drawn from `noise` in raster
/// order; every remaining cell is the recurrence value of its window, with
/// the innovation term fixed to zero. Fill order is left-to-right,
/// top-to-bottom, so identical (coefficients, dimensions, stream) inputs
/// produce bit-identical planes.
pub fn ar_generate(
    coeffs: &ARCoefficients,
    height: usize,
    width: usize,
    noise: &mut NoiseStream,
) -> Result<PerturbationPlane> {
    let v = coeffs.window_side();
    if height < v || width < v {
        return Err(Error::DimensionTooSmall(format!(
            "plane {height}x{width} cannot hold a start signal of {} rows/columns",
            v - 1
        )));
    }
    let init_seed = noise.seed();
    let mut data = vec![0.0f64; height * width];

    for i in 0..height {
        for j in 0..width {
            if i < v - 1 || j < v - 1 {
                data[i * width + j] = noise.next_normal();
            }
        }
    }

    let p = v * v - 1;
    let beta = coeffs.beta();
    for i in (v - 1)..height {
        let base = i + 1 - v;
        for j in (v - 1)..width {
            let left = j + 1 - v;
            let mut acc = 0.0f64;
            // beta[p-1-m] pairs with window cell m in raster order; this is
            // the same traversal the matching filter uses, so the filter's
            // response on generated cells cancels exactly.
            let mut m = 0usize;
            'window: for di in 0..v {
                let row = (base + di) * width + left;
                for dj in 0..v {
                    if m == p {
                        break 'window;
                    }
                    acc += beta[p - 1 - m] * data[row + dj];
                    m += 1;
                }
            }
            data[i * width + j] = acc;
        }
    }

    let values = Array2::from_shape_vec((height, width), data)
        .expect("shape matches buffer length");
    Ok(PerturbationPlane { values, window_side: v, init_seed, source: None })
}

/// Convenience wrapper: generate from a fresh stream seeded with `seed`.
pub fn ar_generate_seeded(
    coeffs: &ARCoefficients,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<PerturbationPlane> {
    let mut noise = NoiseStream::new(seed);
    ar_generate(coeffs, height, width, &mut noise)
}

/// Drop the first `(V-1) + extra` rows and columns of a plane.
///
/// This removes the Gaussian start signal plus `extra` more rows/columns;
/// the retained region is pure recurrence output.
pub fn crop_init_band(plane: &PerturbationPlane, extra: usize) -> Result<PerturbationPlane> {
    let cut = plane.window_side() - 1 + extra;
    if plane.height() <= cut || plane.width() <= cut {
        return Err(Error::DimensionTooSmall(format!(
            "cropping {cut} rows/columns from a {}x{} plane leaves nothing",
            plane.height(),
            plane.width()
        )));
    }
    Ok(PerturbationPlane {
        values: plane.values.slice(s![cut.., cut..]).to_owned(),
        window_side: plane.window_side,
        init_seed: plane.init_seed,
        source: plane.source.clone(),
    })
}

/// Norm used to size a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "linf")]
    Linf,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::L2 => write!(f, "l2"),
            NormKind::Linf => write!(f, "linf"),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            other => Err(Error::InvalidArgument(format!("unknown norm kind '{other}'"))),
        }
    }
}

/// Whole-tensor norm over all channels.
pub fn tensor_norm(values: &Array3<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::L2 => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
        NormKind::Linf => values.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// A norm-sized multi-channel perturbation, laid out channel-planar (c, h, w).
#[derive(Debug, Clone)]
pub struct Perturbation {
    pub values: Array3<f64>,
    pub epsilon: f64,
    pub norm_kind: NormKind,
}

impl Perturbation {
    pub fn norm(&self) -> f64 {
        tensor_norm(&self.values, self.norm_kind)
    }
}

/// Scale `delta` so its whole-tensor norm is exactly `epsilon`.
///
/// Direction is preserved: the output is `epsilon * delta / ||delta||`.
pub fn project_norm(delta: &Array3<f64>, epsilon: f64, norm_kind: NormKind) -> Result<Perturbation> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let norm = tensor_norm(delta, norm_kind);
    if !norm.is_finite() || norm <= 1e-30 {
        return Err(Error::ZeroPerturbation);
    }
    let scale = epsilon / norm;
    Ok(Perturbation {
        values: delta.mapv(|v| v * scale),
        epsilon,
        norm_kind,
    })
}
