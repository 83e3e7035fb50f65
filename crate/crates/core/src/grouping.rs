//! Nonlocal patch grouping and the inverse aggregation step.
//!
//! Reference patches sit on a regular grid (plus one extra row/column of
//! references flush with the bottom/right border). For each reference the
//! `m` most similar patches inside a `C x C` window of origins are stacked as
//! the columns of a group, reference first. Patches are vectorised row-major.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{GrayImage, PatchGroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupingConfig {
    /// Patch side in pixels; the patch dimension is `patch_size^2`.
    pub patch_size: usize,
    /// Patches per group (`m`), reference included.
    pub match_count: usize,
    /// Side of the search window of candidate origins.
    pub window: usize,
    /// Step between reference patches.
    pub stride: usize,
}

impl GroupingConfig {
    pub const DEFAULT_STRIDE: usize = 4;

    pub fn new(patch_size: usize, match_count: usize, window: usize) -> Result<Self> {
        let cfg = Self {
            patch_size,
            match_count,
            window,
            stride: Self::DEFAULT_STRIDE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stride(mut self, stride: usize) -> Result<Self> {
        self.stride = stride;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "patch_size must be >= 2, got {}",
                self.patch_size
            )));
        }
        if self.match_count < 1 {
            return Err(Error::InvalidParameter("match_count must be >= 1".into()));
        }
        if self.window < self.patch_size {
            return Err(Error::InvalidParameter(format!(
                "window ({}) must be >= patch_size ({})",
                self.window, self.patch_size
            )));
        }
        if self.stride < 1 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

/// Patch origins of every group, in reference scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    pub patch_size: usize,
    pub groups: Vec<Vec<(usize, usize)>>,
}

impl GroupLayout {
    pub fn from_groups(groups: &[PatchGroup]) -> Result<Self> {
        let patch_dim = groups.first().map_or(0, |g| g.patch_dim());
        let patch_size = (patch_dim as f64).sqrt().round() as usize;
        if patch_size * patch_size != patch_dim {
            return Err(Error::Shape(format!("patch dimension {patch_dim} is not square")));
        }
        Ok(Self {
            patch_size,
            groups: groups.iter().map(|g| g.coords.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total number of patch entries `d * sum_i m_i` (equals `d * m * n` for
    /// uniform groups).
    pub fn total_entries(&self) -> usize {
        self.patch_size * self.patch_size * self.groups.iter().map(Vec::len).sum::<usize>()
    }
}

/// One matched patch and its squared distance to the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchMatch {
    pub origin: (usize, usize),
    pub distance: f64,
}

/// Reference origins along one axis: every `stride` pixels plus the last
/// valid origin so the border is always covered.
pub fn reference_origins(extent: usize, patch_size: usize, stride: usize) -> Vec<usize> {
    if extent < patch_size {
        return Vec::new();
    }
    let last = extent - patch_size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

/// Candidate origins along one axis: a window of `window` origins centred on
/// `origin`, shifted (not shrunk) to stay inside the image.
pub fn candidate_range(origin: usize, extent: usize, patch_size: usize, window: usize) -> std::ops::Range<usize> {
    let count = extent - patch_size + 1;
    let span = window.min(count);
    let start = origin.saturating_sub(window / 2).min(count - span);
    start..start + span
}

fn check_fits(img: &GrayImage, patch_size: usize) -> Result<()> {
    if img.height() < patch_size || img.width() < patch_size {
        return Err(Error::ImageTooSmall {
            height: img.height(),
            width: img.width(),
            patch: patch_size,
        });
    }
    Ok(())
}

#[inline]
fn patch_distance(img: &GrayImage, a: (usize, usize), b: (usize, usize), ps: usize) -> f64 {
    let w = img.width();
    let data = img.data();
    let mut acc = 0.0;
    for dr in 0..ps {
        let ra = &data[(a.0 + dr) * w + a.1..][..ps];
        let rb = &data[(b.0 + dr) * w + b.1..][..ps];
        for (x, y) in ra.iter().zip(rb) {
            let d = x - y;
            acc += d * d;
        }
    }
    acc
}

/// Finds the `match_count` patches closest to the reference at `reference`.
///
/// The reference itself is always first. Remaining matches are ordered by
/// ascending squared distance, ties broken by row-major scan order.
pub fn match_patches(img: &GrayImage, cfg: &GroupingConfig, reference: (usize, usize)) -> Result<Vec<PatchMatch>> {
    cfg.validate()?;
    check_fits(img, cfg.patch_size)?;
    let ps = cfg.patch_size;
    let (r0, c0) = reference;
    if r0 + ps > img.height() || c0 + ps > img.width() {
        return Err(Error::OutOfBounds { row: r0, col: c0 });
    }
    let rows = candidate_range(r0, img.height(), ps, cfg.window);
    let cols = candidate_range(c0, img.width(), ps, cfg.window);
    let available = rows.len() * cols.len();
    if available < cfg.match_count {
        return Err(Error::InvalidParameter(format!(
            "search window holds {available} candidates, fewer than match_count {}",
            cfg.match_count
        )));
    }

    let mut candidates = Vec::with_capacity(available);
    for r in rows {
        for c in cols.clone() {
            if (r, c) == reference {
                continue;
            }
            candidates.push(PatchMatch {
                origin: (r, c),
                distance: patch_distance(img, reference, (r, c), ps),
            });
        }
    }
    // Candidates are generated in scan order, so a stable sort keeps the
    // row-major tie-break.
    let keep = cfg.match_count - 1;
    if keep > 0 && keep < candidates.len() {
        candidates.select_nth_unstable_by(keep - 1, |a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| a.origin.cmp(&b.origin))
        });
        candidates.truncate(keep);
    }
    candidates.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.origin.cmp(&b.origin))
    });
    candidates.truncate(keep);

    let mut out = Vec::with_capacity(cfg.match_count);
    out.push(PatchMatch {
        origin: reference,
        distance: 0.0,
    });
    out.extend(candidates);
    Ok(out)
}

/// Block matching over every reference patch of `img`.
pub fn build_layout(img: &GrayImage, cfg: &GroupingConfig) -> Result<GroupLayout> {
    cfg.validate()?;
    check_fits(img, cfg.patch_size)?;
    let rows = reference_origins(img.height(), cfg.patch_size, cfg.stride);
    let cols = reference_origins(img.width(), cfg.patch_size, cfg.stride);
    let refs: Vec<(usize, usize)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    let groups = refs
        .par_iter()
        .map(|&origin| {
            match_patches(img, cfg, origin).map(|ms| ms.into_iter().map(|m| m.origin).collect())
        })
        .collect::<Result<Vec<Vec<_>>>>()?;
    Ok(GroupLayout {
        patch_size: cfg.patch_size,
        groups,
    })
}

/// Reads the patches at `coords` into a `d x m` matrix.
pub fn gather_group(img: &GrayImage, patch_size: usize, coords: &[(usize, usize)]) -> Result<PatchGroup> {
    let d = patch_size * patch_size;
    let w = img.width();
    let data = img.data();
    let mut mat = DMatrix::zeros(d, coords.len());
    for (j, &(r, c)) in coords.iter().enumerate() {
        if r + patch_size > img.height() || c + patch_size > w {
            return Err(Error::OutOfBounds { row: r, col: c });
        }
        let mut col = mat.column_mut(j);
        for dr in 0..patch_size {
            let src = &data[(r + dr) * w + c..][..patch_size];
            for (dc, &v) in src.iter().enumerate() {
                col[dr * patch_size + dc] = v;
            }
        }
    }
    Ok(PatchGroup {
        data: mat,
        coords: coords.to_vec(),
        ref_index: 0,
    })
}

/// Materialises every group of `layout` from `img`.
pub fn gather(img: &GrayImage, layout: &GroupLayout) -> Result<Vec<PatchGroup>> {
    layout
        .groups
        .par_iter()
        .map(|coords| gather_group(img, layout.patch_size, coords))
        .collect()
}

/// Block matching followed by gathering: one group per reference patch.
pub fn extract_groups(img: &GrayImage, cfg: &GroupingConfig) -> Result<Vec<PatchGroup>> {
    let layout = build_layout(img, cfg)?;
    gather(img, &layout)
}

/// Uniform-weight aggregation of per-group patch estimates.
///
/// Every output pixel is the mean of all estimated patch values covering it.
/// Accumulation is serial in group order, so the result does not depend on
/// how the estimates were computed.
pub fn aggregate(layout: &GroupLayout, estimates: &[DMatrix<f64>], height: usize, width: usize) -> Result<GrayImage> {
    if layout.groups.len() != estimates.len() {
        return Err(Error::Shape(format!(
            "{} groups but {} estimates",
            layout.groups.len(),
            estimates.len()
        )));
    }
    let ps = layout.patch_size;
    let d = ps * ps;
    // Neumaier-compensated sums: pixels can be covered hundreds of times.
    let mut sum = vec![0.0; height * width];
    let mut comp = vec![0.0; height * width];
    let mut count = vec![0u32; height * width];
    for (coords, est) in layout.groups.iter().zip(estimates) {
        if est.nrows() != d || est.ncols() != coords.len() {
            return Err(Error::Shape(format!(
                "estimate is {}x{}, group needs {}x{}",
                est.nrows(),
                est.ncols(),
                d,
                coords.len()
            )));
        }
        for (j, &(r, c)) in coords.iter().enumerate() {
            if r + ps > height || c + ps > width {
                return Err(Error::OutOfBounds { row: r, col: c });
            }
            let col = est.column(j);
            for dr in 0..ps {
                let base = (r + dr) * width + c;
                for dc in 0..ps {
                    let (i, v) = (base + dc, col[dr * ps + dc]);
                    let t = sum[i] + v;
                    comp[i] += if sum[i].abs() >= v.abs() { (sum[i] - t) + v } else { (v - t) + sum[i] };
                    sum[i] = t;
                    count[i] += 1;
                }
            }
        }
    }
    for (i, (s, &n)) in sum.iter_mut().zip(&count).enumerate() {
        if n == 0 {
            return Err(Error::UncoveredPixel {
                row: i / width,
                col: i % width,
            });
        }
        *s = (*s + comp[i]) / f64::from(n);
    }
    GrayImage::from_state(height, width, sum)
}

/// Convenience wrapper: aggregate estimates aligned with `groups`.
pub fn aggregate_groups(groups: &[PatchGroup], estimates: &[DMatrix<f64>], height: usize, width: usize) -> Result<GrayImage> {
    let layout = GroupLayout::from_groups(groups)?;
    aggregate(&layout, estimates, height, width)
}
