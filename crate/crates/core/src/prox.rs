//! Shrinkage operators for the weighted lp / Schatten-p family.
//!
//! Everything funnels into [`gst`], generalized soft-thresholding of one
//! coefficient: `argmin_a 0.5 (g - a)^2 + w |a|^p`. With `p = 1` it is plain
//! soft-thresholding; applied to singular values it gives NNM, WNNM, SNM or
//! WSNM depending on `p` and whether weights are used.

use nalgebra::DMatrix;

use crate::dictionary::thin_svd;
use crate::error::{Error, Result};
use crate::types::{GroupCode, ShrinkageSpec};

fn check_tau(tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {tau}")));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0, 1], got {p}")));
    }
    Ok(())
}

#[inline]
fn soft_scalar(a: f64, tau: f64) -> f64 {
    a.signum() * (a.abs() - tau).max(0.0)
}

/// `sign(a) * max(|a| - tau, 0)` elementwise.
pub fn soft(a: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    Ok(a.iter()
        .map(|&x| if x == 0.0 { 0.0 } else { soft_scalar(x, tau) })
        .collect())
}

/// Singular value thresholding `U soft(S, tau) V^T`, the proximal operator of
/// `tau * ||X||_*`.
pub fn svt(y: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    check_tau(tau)?;
    let (u, s, v) = thin_svd(y)?;
    let shrunk = soft(&s, tau)?;
    let mut scaled = u;
    for (j, &c) in shrunk.iter().enumerate() {
        scaled.column_mut(j).scale_mut(c);
    }
    Ok(scaled * v.transpose())
}

/// Dead-zone threshold of generalized soft-thresholding:
/// `(2w(1-p))^(1/(2-p)) + w p (2w(1-p))^((p-1)/(2-p))`, equal to `w` at `p = 1`.
pub fn gst_threshold(w: f64, p: f64) -> Result<f64> {
    check_p(p)?;
    if !(w >= 0.0) {
        return Err(Error::InvalidParameter(format!("weight must be >= 0, got {w}")));
    }
    Ok(threshold_unchecked(w, p))
}

#[inline]
fn threshold_unchecked(w: f64, p: f64) -> f64 {
    if p == 1.0 {
        return w;
    }
    if w == 0.0 {
        return 0.0;
    }
    let base = 2.0 * w * (1.0 - p);
    base.powf(1.0 / (2.0 - p)) + w * p * base.powf((p - 1.0) / (2.0 - p))
}

/// Generalized soft-thresholding with exactly `iters` fixed-point updates
/// `a <- |g| - w p a^(p-1)` started at `a = |g|`.
pub fn gst(gamma: f64, w: f64, p: f64, iters: usize) -> Result<f64> {
    check_p(p)?;
    if !(w >= 0.0) {
        return Err(Error::InvalidParameter(format!("weight must be >= 0, got {w}")));
    }
    Ok(gst_unchecked(gamma, w, p, iters))
}

#[inline]
fn gst_unchecked(gamma: f64, w: f64, p: f64, iters: usize) -> f64 {
    let g = gamma.abs();
    if g <= threshold_unchecked(w, p) {
        return 0.0;
    }
    let mut a = g;
    if p == 1.0 {
        // The update is constant in `a`.
        a = g - w;
    } else {
        for _ in 0..iters {
            a = g - w * p * a.powf(p - 1.0);
        }
    }
    gamma.signum() * a
}

/// Scalar objective `0.5 (g - a)^2 + w |a|^p`.
#[inline]
pub fn scalar_objective(gamma: f64, a: f64, w: f64, p: f64) -> f64 {
    0.5 * (gamma - a) * (gamma - a) + w * a.abs().powf(p)
}

/// Real roots of `a x^3 + b x^2 + c x + d` (a != 0) by the trigonometric /
/// Cardano formulas.
fn cubic_real_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let (b, c, d) = (b / a, c / a, d / a);
    // x = t - b/3 gives t^3 + p t + q = 0
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = if disc > 0.0 {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() + shift]
    } else if p == 0.0 {
        vec![shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) / r).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| 2.0 * r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
            .collect()
    };
    // One Newton polish step per root.
    for x in &mut roots {
        let f = ((*x + b) * *x + c) * *x + d;
        let df = (3.0 * *x + 2.0 * b) * *x + c;
        if df != 0.0 {
            *x -= f / df;
        }
    }
    roots
}

/// Roots of a polynomial (coefficients highest degree first) inside
/// `[lo, hi]`, found by dense sign-change bracketing plus bisection.
fn bracketed_roots(coeffs: &[f64], lo: f64, hi: f64, samples: usize) -> Vec<f64> {
    let eval = |x: f64| coeffs.iter().fold(0.0, |acc, &c| acc * x + c);
    let mut roots = Vec::new();
    let step = (hi - lo) / samples as f64;
    let mut x0 = lo;
    let mut f0 = eval(x0);
    for k in 1..=samples {
        let x1 = lo + step * k as f64;
        let f1 = eval(x1);
        if f0 == 0.0 {
            roots.push(x0);
        } else if f0 * f1 < 0.0 {
            let (mut a, mut b, mut fa) = (x0, x1, f0);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                let fm = eval(mid);
                if fm == 0.0 || (b - a) < 1e-15 * b.abs().max(1.0) {
                    a = mid;
                    b = mid;
                    break;
                }
                if fa * fm < 0.0 {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
        x0 = x1;
        f0 = f1;
    }
    if f0 == 0.0 {
        roots.push(x0);
    }
    roots
}

fn select_minimizer(gamma: f64, weight: f64, p: f64, roots: impl IntoIterator<Item = f64>) -> f64 {
    let g = gamma.abs();
    let mut best = 0.0;
    let mut best_val = scalar_objective(g, 0.0, weight, p);
    for r in roots {
        if r.is_finite() && r > 0.0 && r <= g {
            let val = scalar_objective(g, r, weight, p);
            if val < best_val {
                best = r;
                best_val = val;
            }
        }
    }
    gamma.signum() * best
}

/// Exact p = 1/2 shrinkage via the real roots of
/// `a^3 - 2|g| a^2 + g^2 a - (tau w)^2 / 4 = 0`, keeping whichever of the
/// admissible roots and zero minimises the scalar objective.
pub fn gst_p_half_exact(gamma: f64, w: f64, tau: f64) -> f64 {
    let g = gamma.abs();
    let weight = tau * w;
    if g == 0.0 {
        return 0.0;
    }
    let roots = cubic_real_roots(1.0, -2.0 * g, g * g, -weight * weight / 4.0);
    select_minimizer(gamma, weight, 0.5, roots)
}

/// Exact p = 2/3 shrinkage via the real roots of
/// `a^4 - 3|g| a^3 + 3 g^2 a^2 - |g|^3 a + 8 (tau w)^3 / 27 = 0`.
pub fn gst_p_twothirds_exact(gamma: f64, w: f64, tau: f64) -> f64 {
    let g = gamma.abs();
    let weight = tau * w;
    if g == 0.0 {
        return 0.0;
    }
    let coeffs = [
        1.0,
        -3.0 * g,
        3.0 * g * g,
        -g * g * g,
        8.0 * weight * weight * weight / 27.0,
    ];
    let roots = bracketed_roots(&coeffs, 0.0, g, 4096);
    select_minimizer(gamma, weight, 2.0 / 3.0, roots)
}

/// Output of [`shrink_code`].
#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkResult {
    pub values: Vec<f64>,
    /// Weight `tau * w_j` handed to GST for each entry.
    pub thresholds_used: Vec<f64>,
}

/// Reweighting `1 / (|g_j| + eps)`: large coefficients are shrunk less.
pub fn reweight(code: &[f64], eps: f64) -> Vec<f64> {
    code.iter().map(|g| 1.0 / (g.abs() + eps)).collect()
}

/// Shrinks a group code with the member of the norm family selected by
/// `spec`, using the per-group threshold `tau_i`.
///
/// Weights come from the unshrunk code in one pass. The effective weight
/// passed to [`gst`] for entry `j` is `spec.tau * tau_i * w_j`.
pub fn shrink_code(code: &GroupCode, spec: &ShrinkageSpec, tau_i: f64) -> Result<ShrinkResult> {
    check_tau(tau_i)?;
    shrink_code_with(code, spec, &vec![tau_i; code.len()])
}

/// Like [`shrink_code`] with one threshold scale per coefficient.
pub fn shrink_code_with(code: &GroupCode, spec: &ShrinkageSpec, taus: &[f64]) -> Result<ShrinkResult> {
    spec.validate()?;
    if taus.len() != code.len() {
        return Err(Error::Dimension {
            expected: code.len(),
            got: taus.len(),
        });
    }
    for &t in taus {
        check_tau(t)?;
    }
    let thresholds_used: Vec<f64> = if spec.weighted {
        reweight(&code.coeffs, spec.eps_weight)
            .into_iter()
            .zip(taus)
            .map(|(w, t)| spec.tau * t * w)
            .collect()
    } else {
        taus.iter().map(|t| spec.tau * t).collect()
    };
    let values = code
        .coeffs
        .iter()
        .zip(&thresholds_used)
        .map(|(&g, &w)| gst_unchecked(g, w, spec.p, spec.gst_iters))
        .collect();
    Ok(ShrinkResult {
        values,
        thresholds_used,
    })
}
