//! Domain types shared by every stage of the pipeline.
//!
//! Intensities live on the 0–255 scale as `f64`; nothing is normalised to
//! `[0, 1]`, so every tuning constant keeps the magnitude it is quoted with.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A single-channel image stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Checks the `GrayImage` invariants on raw parts.
pub fn validate_image(height: usize, width: usize, data: &[f64]) -> Result<()> {
    let expected = height * width;
    if data.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: data.len(),
        });
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    Ok(())
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        validate_image(height, width, &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from an iterate that is only known to be the right
    /// length; fails with [`Error::NonFinite`] on NaN/inf.
    pub(crate) fn from_state(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copy with every value clamped to `[0, 255]`.
    pub fn clamped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 255.0))
    }

    /// Squared Euclidean distance to an image of the same shape.
    pub fn squared_distance(&self, other: &GrayImage) -> Result<f64> {
        ensure_same_dims(self.dims(), other.dims())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Observation mask: `true` marks a kept (observed) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    kept: Vec<bool>,
}

impl PixelMask {
    pub fn new(height: usize, width: usize, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != height * width {
            return Err(Error::Dimension {
                expected: height * width,
                got: kept.len(),
            });
        }
        Ok(Self {
            height,
            width,
            kept,
        })
    }

    pub fn all_kept(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            kept: vec![true; height * width],
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn is_kept(&self, index: usize) -> bool {
        self.kept[index]
    }

    #[inline]
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.kept.is_empty() {
            return 0.0;
        }
        self.kept_count() as f64 / self.kept.len() as f64
    }
}

/// A `d x m` matrix of vectorised similar patches (column 0 is the reference
/// patch) together with the patch origins they were read from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGroup {
    pub data: DMatrix<f64>,
    pub coords: Vec<(usize, usize)>,
    pub ref_index: usize,
}

impl PatchGroup {
    pub fn patch_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }
}

/// Per-group adaptive dictionary held as thin SVD factors; atom `j` is
/// `left[:, j] * right[:, j]^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDictionary {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

impl GroupDictionary {
    /// Number of rank-one atoms, `min(d, m)`.
    pub fn atoms(&self) -> usize {
        self.left.ncols()
    }

    /// Atom `j` materialised as a `d x m` matrix.
    pub fn atom(&self, j: usize) -> DMatrix<f64> {
        self.left.column(j) * self.right.column(j).transpose()
    }
}

/// Coefficients of a group on its adaptive dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCode {
    pub coeffs: Vec<f64>,
}

impl GroupCode {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Self { coeffs }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            coeffs: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Selects a member of the (weighted) lp / Schatten-p family.
///
/// `p = 1, weighted = false` is nuclear-norm minimisation, `p = 1, weighted`
/// is WNNM, `p < 1` without weights is the Schatten-p norm and `p < 1` with
/// weights is the weighted Schatten-p norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkageSpec {
    pub p: f64,
    pub weighted: bool,
    /// Multiplier on the per-group threshold `tau_i`.
    pub tau: f64,
    /// Offset in the reweighting `1 / (|gamma| + eps)`.
    pub eps_weight: f64,
    /// Fixed-point iterations of generalized soft-thresholding.
    pub gst_iters: usize,
}

impl Default for ShrinkageSpec {
    fn default() -> Self {
        Self {
            p: 1.0,
            weighted: false,
            tau: 1.0,
            eps_weight: 0.35,
            gst_iters: 2,
        }
    }
}

impl ShrinkageSpec {
    pub fn new(p: f64, weighted: bool, tau: f64, eps_weight: f64, gst_iters: usize) -> Result<Self> {
        let spec = Self {
            p,
            weighted,
            tau,
            eps_weight,
            gst_iters,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p must lie in (0, 1], got {}",
                self.p
            )));
        }
        if !(self.tau >= 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tau must be finite and >= 0, got {}",
                self.tau
            )));
        }
        if !(self.eps_weight > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps_weight must be > 0, got {}",
                self.eps_weight
            )));
        }
        if self.gst_iters == 0 {
            return Err(Error::InvalidParameter("gst_iters must be >= 1".into()));
        }
        Ok(())
    }
}
