//! ADMM restoration loop and the IST baseline.
//!
//! One outer iteration is
//!
//! 1. Z-update: exact per-pixel solve for masks, gradient steps for block CS;
//! 2. A-update: regroup on `L = Z - b`, learn each group's dictionary, shrink
//!    its code with the configured norm and aggregate `Xhat = D A`;
//! 3. multiplier update `b <- b - (Z - Xhat)`.
//!
//! Per-group thresholds are `tau_i = lambda_i S / (rho N)` with `S = d m n`
//! the number of grouped entries and `N` the pixel count.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::dictionary::{decode, learn_adaptive_matrix, learn_pca};
use crate::error::{Error, Result};
use crate::grouping::{aggregate, build_layout, gather_group, GroupLayout, GroupingConfig};
use crate::operators::{cs_adjoint, cs_normal, psnr, BlockCsOp, Measurements};
use crate::prox::shrink_code_with;
use crate::types::{ensure_same_dims, GrayImage, GroupCode, PatchGroup, PixelMask, ShrinkageSpec};

/// How the regularisation weight `lambda_i` of a group is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// Same `lambda` for every group.
    Fixed(f64),
    /// `lambda = 2 sqrt(2) sigma^2 / (delta + eps_var)` with `delta` from
    /// the given estimator.
    Adaptive(Spread),
}

/// Estimator of the spread `delta` in the adaptive lambda rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spread {
    /// Sample variance of the whole code vector; one lambda per group.
    CodeVariance,
    /// Per-coefficient signal standard deviation
    /// `sqrt(max(gamma_j^2 / m - sigma^2, 0))`, `m` the group's patch count;
    /// one lambda per coefficient.
    SignalStd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Stop as soon as PSNR against ground truth drops; needs a reference.
    Oracle,
    /// Stop when `||Z_{t+1} - Z_t|| / ||Z_t||` falls below the tolerance.
    RelChange(f64),
    /// Always run `max_iters` iterations.
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DictionaryKind {
    /// Per-group SVD atoms; shrinking the code shrinks singular values.
    Adaptive,
    /// Per-group PCA basis; the whole coefficient matrix is shrunk.
    Pca,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreConfig {
    pub grouping: GroupingConfig,
    pub spec: ShrinkageSpec,
    pub rho: f64,
    pub lambda: LambdaMode,
    pub sigma: f64,
    pub eps_var: f64,
    /// Gradient step for the CS Z-update; `None` picks `1 / (L + rho)` with
    /// `L` the largest eigenvalue of `Phi^T Phi`.
    pub eta: Option<f64>,
    /// Gradient steps per CS Z-update, warm-started at `Xhat + b`.
    pub cs_inner_steps: usize,
    pub max_iters: usize,
    pub stop: StopRule,
    pub dictionary: DictionaryKind,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            grouping: GroupingConfig {
                patch_size: 8,
                match_count: 60,
                window: 25,
                stride: GroupingConfig::DEFAULT_STRIDE,
            },
            spec: ShrinkageSpec::default(),
            rho: 1e-3,
            lambda: LambdaMode::Adaptive(Spread::CodeVariance),
            sigma: std::f64::consts::SQRT_2,
            eps_var: 0.3,
            eta: None,
            cs_inner_steps: 30,
            max_iters: 120,
            stop: StopRule::RelChange(1e-4),
            dictionary: DictionaryKind::Adaptive,
        }
    }
}

impl RestoreConfig {
    pub fn validate(&self) -> Result<()> {
        self.grouping.validate()?;
        self.spec.validate()?;
        let bad = |what: &str, v: f64| Error::InvalidParameter(format!("{what} invalid: {v}"));
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(bad("rho must be > 0;", self.rho));
        }
        if let LambdaMode::Fixed(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(bad("lambda must be >= 0;", l));
            }
        }
        if !(self.eps_var > 0.0) {
            return Err(bad("eps_var must be > 0;", self.eps_var));
        }
        if !self.sigma.is_finite() {
            return Err(bad("sigma", self.sigma));
        }
        if let Some(eta) = self.eta {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(bad("eta must be > 0;", eta));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be >= 1".into()));
        }
        if self.cs_inner_steps == 0 {
            return Err(Error::InvalidParameter("cs_inner_steps must be >= 1".into()));
        }
        if let StopRule::RelChange(tol) = self.stop {
            if !(tol >= 0.0) {
                return Err(bad("relative-change tolerance", tol));
            }
        }
        Ok(())
    }
}

/// The observation `Y = H X` together with its operator.
#[derive(Debug, Clone, Copy)]
pub enum Observation<'a> {
    /// `H = I`.
    Identity(&'a GrayImage),
    /// `H` keeps the pixels marked in the mask; killed pixels of `y` are
    /// ignored.
    Mask { y: &'a GrayImage, mask: &'a PixelMask },
    /// Block Gaussian compressive sensing.
    Cs { meas: &'a Measurements, op: &'a BlockCsOp },
}

impl Observation<'_> {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Observation::Identity(y) => y.dims(),
            Observation::Mask { y, .. } => y.dims(),
            Observation::Cs { meas, .. } => meas.dims(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Observation::Identity(_) => Ok(()),
            Observation::Mask { y, mask } => ensure_same_dims(y.dims(), mask.dims()),
            Observation::Cs { meas, op } => {
                if meas.block != op.block || meas.rows != op.rows {
                    return Err(Error::Shape("measurements do not match the operator".into()));
                }
                Ok(())
            }
        }
    }
}

/// Pre-computed pieces of the CS data term.
#[derive(Debug, Clone)]
pub struct CsSystem<'a> {
    pub op: &'a BlockCsOp,
    /// `H^T Y`.
    pub hty: GrayImage,
    /// Largest eigenvalue of `Phi^T Phi`.
    pub lipschitz: f64,
}

impl<'a> CsSystem<'a> {
    pub fn new(meas: &Measurements, op: &'a BlockCsOp) -> Result<Self> {
        let hty = cs_adjoint(meas, op)?;
        Ok(Self {
            op,
            hty,
            lipschitz: spectral_norm_sq(&op.matrix),
        })
    }
}

/// `||Phi||_2^2`, via the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm_sq(phi: &DMatrix<f64>) -> f64 {
    let gram = if phi.nrows() <= phi.ncols() {
        phi * phi.transpose()
    } else {
        phi.transpose() * phi
    };
    SymmetricEigen::new(gram).eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// Z-update for a 0/1 mask: `(y + rho q) / (1 + rho)` on kept pixels and
/// `q` on killed ones, with `q = Xhat + b`.
pub fn z_update_mask(xhat: &GrayImage, b: &GrayImage, y: &GrayImage, mask: &PixelMask, rho: f64) -> Result<GrayImage> {
    ensure_same_dims(xhat.dims(), b.dims())?;
    ensure_same_dims(xhat.dims(), y.dims())?;
    ensure_same_dims(xhat.dims(), mask.dims())?;
    let data = xhat
        .data()
        .iter()
        .zip(b.data())
        .zip(y.data())
        .zip(mask.kept())
        .map(|(((&x, &bb), &yy), &k)| {
            let q = x + bb;
            if k {
                (yy + rho * q) / (1.0 + rho)
            } else {
                q
            }
        })
        .collect();
    GrayImage::new(xhat.height(), xhat.width(), data)
}

/// One gradient step on `0.5 ||Y - H Z||^2 + rho/2 ||Z - q||^2`:
/// `Z - eta (H^T H Z - H^T Y + rho (Z - q))`.
pub fn z_update_cs(z: &GrayImage, q: &GrayImage, sys: &CsSystem<'_>, rho: f64, eta: f64) -> Result<GrayImage> {
    ensure_same_dims(z.dims(), q.dims())?;
    ensure_same_dims(z.dims(), sys.hty.dims())?;
    let hthz = cs_normal(z, sys.op)?;
    let data = z
        .data()
        .iter()
        .zip(hthz.data())
        .zip(sys.hty.data())
        .zip(q.data())
        .map(|(((&zz, &n), &hy), &qq)| zz - eta * (n - hy + rho * (zz - qq)))
        .collect();
    GrayImage::new(z.height(), z.width(), data)
}

/// Objective of the Z sub-problem, `0.5 ||Y - H Z||^2 + rho/2 ||Z - q||^2`.
pub fn z_objective_cs(z: &GrayImage, q: &GrayImage, meas: &Measurements, op: &BlockCsOp, rho: f64) -> Result<f64> {
    let hz = crate::operators::cs_measure(z, op);
    let fit: f64 = hz
        .blocks
        .iter()
        .zip(&meas.blocks)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(0.5 * fit + 0.5 * rho * z.squared_distance(q)?)
}

/// `b - (Z - Xhat)`.
pub fn multiplier_update(b: &GrayImage, z: &GrayImage, xhat: &GrayImage) -> Result<GrayImage> {
    ensure_same_dims(b.dims(), z.dims())?;
    ensure_same_dims(b.dims(), xhat.dims())?;
    let data = b
        .data()
        .iter()
        .zip(z.data())
        .zip(xhat.data())
        .map(|((&bb, &zz), &x)| bb - (zz - x))
        .collect();
    GrayImage::new(b.height(), b.width(), data)
}

/// Sample variance (mean removed, `n - 1` denominator), 0 for fewer than
/// two entries.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n as f64 - 1.0)).max(0.0)
}

/// `2 sqrt(2) sigma^2 / (delta + eps_var)`.
pub fn adaptive_lambda(delta: f64, sigma: f64, eps_var: f64) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * sigma * sigma / (delta.max(0.0) + eps_var)
}

/// Adaptive lambdas for one code: a single repeated value for
/// [`Spread::CodeVariance`], one per coefficient for [`Spread::SignalStd`].
pub fn adaptive_lambdas(code: &[f64], spread: Spread, m: usize, sigma: f64, eps_var: f64) -> Vec<f64> {
    match spread {
        Spread::CodeVariance => vec![adaptive_lambda(sample_variance(code), sigma, eps_var); code.len()],
        Spread::SignalStd => code
            .iter()
            .map(|g| {
                let var = g * g / m.max(1) as f64 - sigma * sigma;
                adaptive_lambda(var.max(0.0).sqrt(), sigma, eps_var)
            })
            .collect(),
    }
}

/// Per-coefficient lambdas for `code` under `mode`.
pub fn lambdas_for(mode: LambdaMode, code: &[f64], m: usize, sigma: f64, eps_var: f64) -> Vec<f64> {
    match mode {
        LambdaMode::Fixed(l) => vec![l; code.len()],
        LambdaMode::Adaptive(spread) => adaptive_lambdas(code, spread, m, sigma, eps_var),
    }
}

/// `lambda S / (rho N)`.
pub fn group_tau(lambda: f64, entries: usize, rho: f64, pixels: usize) -> f64 {
    lambda * entries as f64 / (rho * pixels as f64)
}

/// Result of shrinking one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimate {
    pub estimate: DMatrix<f64>,
    /// Code before shrinkage.
    pub code: GroupCode,
    /// Code after shrinkage.
    pub shrunk: GroupCode,
    /// Mean lambda over the code.
    pub lambda: f64,
    /// Mean threshold scale `tau` over the code.
    pub tau: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Dictionary learning plus shrinkage for one group. `entries_per_pixel`
/// is `S / N`.
pub fn shrink_group(group: &PatchGroup, cfg: &RestoreConfig, entries_per_pixel: f64) -> Result<GroupEstimate> {
    let m = group.data.ncols();
    let shrink = |code: &GroupCode| -> Result<(GroupCode, f64, f64)> {
        let lambdas = lambdas_for(cfg.lambda, &code.coeffs, m, cfg.sigma, cfg.eps_var);
        let taus: Vec<f64> = lambdas.iter().map(|l| l * entries_per_pixel / cfg.rho).collect();
        let shrunk = GroupCode::new(shrink_code_with(code, &cfg.spec, &taus)?.values);
        Ok((shrunk, mean(&lambdas), mean(&taus)))
    };
    match cfg.dictionary {
        DictionaryKind::Adaptive => {
            let (dict, code) = learn_adaptive_matrix(&group.data)?;
            let (shrunk, lambda, tau) = shrink(&code)?;
            let estimate = decode(&dict, &shrunk)?;
            Ok(GroupEstimate {
                estimate,
                code,
                shrunk,
                lambda,
                tau,
            })
        }
        DictionaryKind::Pca => {
            let pca = learn_pca(group)?;
            let code = GroupCode::new(pca.coeffs.as_slice().to_vec());
            let (shrunk, lambda, tau) = shrink(&code)?;
            let coeffs = DMatrix::from_column_slice(pca.coeffs.nrows(), pca.coeffs.ncols(), &shrunk.coeffs);
            Ok(GroupEstimate {
                estimate: pca.reconstruct(&coeffs),
                code,
                shrunk,
                lambda,
                tau,
            })
        }
    }
}

/// Output of one A-update.
#[derive(Debug, Clone, PartialEq)]
pub struct AUpdate {
    pub layout: GroupLayout,
    /// Per-group threshold `tau_i`, in layout order.
    pub taus: Vec<f64>,
    pub xhat: GrayImage,
}

impl AUpdate {
    pub fn mean_tau(&self) -> f64 {
        if self.taus.is_empty() {
            return 0.0;
        }
        self.taus.iter().sum::<f64>() / self.taus.len() as f64
    }
}

/// Regroups on `l`, shrinks every group and aggregates the estimates.
pub fn a_update(l: &GrayImage, cfg: &RestoreConfig) -> Result<AUpdate> {
    let layout = build_layout(l, &cfg.grouping)?;
    a_update_with_layout(l, layout, cfg)
}

/// A-update on a fixed layout.
pub fn a_update_with_layout(l: &GrayImage, layout: GroupLayout, cfg: &RestoreConfig) -> Result<AUpdate> {
    let entries_per_pixel = layout.total_entries() as f64 / l.len() as f64;
    let results = layout
        .groups
        .par_iter()
        .map(|coords| {
            let group = gather_group(l, layout.patch_size, coords)?;
            let est = shrink_group(&group, cfg, entries_per_pixel)?;
            Ok((est.estimate, est.tau))
        })
        .collect::<Result<Vec<_>>>()?;
    let (estimates, taus): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let xhat = aggregate(&layout, &estimates, l.height(), l.width())?;
    Ok(AUpdate { layout, taus, xhat })
}

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// PSNR of the clamped estimate against ground truth, when supplied.
    pub psnr: Option<f64>,
    pub rel_change: f64,
    pub mean_tau: f64,
    /// `||Z - Xhat||` after the iteration (0 for IST).
    pub residual: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    /// CSV with columns `iter,psnr,rel_change,mean_tau,seconds`; `psnr` is
    /// empty without ground truth.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iter,psnr,rel_change,mean_tau,seconds")?;
        for r in &self.rows {
            let psnr = r.psnr.map(|p| format!("{p}")).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", r.iter, psnr, r.rel_change, r.mean_tau, r.seconds)?;
        }
        Ok(())
    }

    pub fn psnrs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.psnr).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    RelChange,
    /// PSNR dropped; the estimate from the previous iteration is returned.
    OracleDrop,
}

#[derive(Debug, Clone)]
pub struct Restoration {
    pub image: GrayImage,
    pub trace: Trace,
    pub stop: StopReason,
    /// 1-based iteration whose estimate is returned.
    pub best_iter: usize,
}

/// Mutable ADMM state.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub z: GrayImage,
    pub xhat: GrayImage,
    pub b: GrayImage,
    pub iter: usize,
    pub trace: Trace,
}

/// Starting point: observed pixels with holes filled by the observed mean
/// for masks, `H^T Y` for CS, `Y` itself for the identity.
pub fn initial_estimate(obs: &Observation<'_>) -> Result<GrayImage> {
    match obs {
        Observation::Identity(y) => Ok((*y).clone()),
        Observation::Mask { y, mask } => {
            ensure_same_dims(y.dims(), mask.dims())?;
            let kept = mask.kept_count();
            let mean = if kept == 0 {
                0.0
            } else {
                y.data()
                    .iter()
                    .zip(mask.kept())
                    .filter(|(_, &k)| k)
                    .map(|(v, _)| v)
                    .sum::<f64>()
                    / kept as f64
            };
            let data = y
                .data()
                .iter()
                .zip(mask.kept())
                .map(|(&v, &k)| if k { v } else { mean })
                .collect();
            GrayImage::new(y.height(), y.width(), data)
        }
        Observation::Cs { meas, op } => cs_adjoint(meas, op),
    }
}

fn diverged(iter: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Divergence { iter },
        other => other,
    }
}

fn check_oracle(cfg: &RestoreConfig, obs: &Observation<'_>, oracle: Option<&GrayImage>) -> Result<()> {
    if let Some(truth) = oracle {
        ensure_same_dims(truth.dims(), obs.dims())?;
    } else if cfg.stop == StopRule::Oracle {
        return Err(Error::InvalidParameter("oracle stopping needs a ground-truth image".into()));
    }
    Ok(())
}

/// Tracks the stopping rule and the estimate to return.
struct Stopper {
    rule: StopRule,
    best: Option<(GrayImage, usize)>,
    last_psnr: Option<f64>,
}

impl Stopper {
    fn new(rule: StopRule) -> Self {
        Self {
            rule,
            best: None,
            last_psnr: None,
        }
    }

    /// Returns `Some(reason)` when iteration `iter` should be the last.
    fn observe(&mut self, iter: usize, xhat: &GrayImage, row: &TraceRow) -> Option<StopReason> {
        match self.rule {
            StopRule::Oracle => {
                let p = row.psnr.expect("oracle psnr");
                if let Some(prev) = self.last_psnr {
                    if p - prev < 0.0 {
                        return Some(StopReason::OracleDrop);
                    }
                }
                self.last_psnr = Some(p);
                self.best = Some((xhat.clone(), iter));
                None
            }
            StopRule::RelChange(tol) => {
                self.best = Some((xhat.clone(), iter));
                (row.rel_change < tol).then_some(StopReason::RelChange)
            }
            StopRule::MaxIters => {
                self.best = Some((xhat.clone(), iter));
                None
            }
        }
    }

    fn finish(self, trace: Trace, stop: StopReason) -> Restoration {
        let (image, best_iter) = self.best.expect("at least one iteration");
        Restoration {
            image,
            trace,
            stop,
            best_iter,
        }
    }
}

fn relative_change(new: &GrayImage, old: &GrayImage) -> f64 {
    let diff = new.squared_distance(old).unwrap_or(f64::NAN).sqrt();
    let base = old.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

fn oracle_psnr(xhat: &GrayImage, oracle: Option<&GrayImage>) -> Result<Option<f64>> {
    oracle.map(|t| psnr(&xhat.clamped(), t)).transpose()
}

fn cs_eta(cfg: &RestoreConfig, sys: &CsSystem<'_>) -> f64 {
    cfg.eta.unwrap_or(1.0 / (sys.lipschitz + cfg.rho))
}

/// ADMM restoration. `oracle` supplies ground truth for PSNR tracing and
/// for [`StopRule::Oracle`].
pub fn restore(obs: Observation<'_>, cfg: &RestoreConfig, oracle: Option<&GrayImage>) -> Result<Restoration> {
    cfg.validate()?;
    obs.validate()?;
    check_oracle(cfg, &obs, oracle)?;
    let (h, w) = obs.dims();
    let cs = match obs {
        Observation::Cs { meas, op } => Some(CsSystem::new(meas, op)?),
        _ => None,
    };
    let all_kept;
    let (y, mask) = match obs {
        Observation::Identity(y) => {
            all_kept = PixelMask::all_kept(h, w);
            (Some(y), Some(&all_kept))
        }
        Observation::Mask { y, mask } => (Some(y), Some(mask)),
        Observation::Cs { .. } => (None, None),
    };

    let z0 = initial_estimate(&obs)?;
    let mut state = AdmmState {
        xhat: z0.clone(),
        z: z0,
        b: GrayImage::zeros(h, w),
        iter: 0,
        trace: Trace::default(),
    };
    let mut stopper = Stopper::new(cfg.stop);
    let start = Instant::now();

    for iter in 1..=cfg.max_iters {
        let z_new = match (&cs, y, mask) {
            (Some(sys), _, _) => {
                let q = state.xhat.zip_add(&state.b)?;
                let eta = cs_eta(cfg, sys);
                let mut z = q.clone();
                for _ in 0..cfg.cs_inner_steps {
                    z = z_update_cs(&z, &q, sys, cfg.rho, eta).map_err(diverged(iter))?;
                }
                z
            }
            (None, Some(y), Some(mask)) => z_update_mask(&state.xhat, &state.b, y, mask, cfg.rho).map_err(diverged(iter))?,
            _ => unreachable!("observation variants are exhaustive"),
        };
        let rel_change = relative_change(&z_new, &state.z);
        let l = z_new.zip_sub(&state.b).map_err(diverged(iter))?;
        let upd = a_update(&l, cfg).map_err(diverged(iter))?;
        let b = multiplier_update(&state.b, &z_new, &upd.xhat).map_err(diverged(iter))?;
        let residual = z_new.squared_distance(&upd.xhat)?.sqrt();
        if !rel_change.is_finite() || !residual.is_finite() {
            return Err(Error::Divergence { iter });
        }
        state.z = z_new;
        state.xhat = upd.xhat;
        state.b = b;
        state.iter = iter;
        let row = TraceRow {
            iter,
            psnr: oracle_psnr(&state.xhat, oracle)?,
            rel_change,
            mean_tau: upd.taus.iter().sum::<f64>() / upd.taus.len().max(1) as f64,
            residual,
            seconds: start.elapsed().as_secs_f64(),
        };
        let verdict = stopper.observe(iter, &state.xhat, &row);
        state.trace.rows.push(row);
        if let Some(reason) = verdict {
            return Ok(stopper.finish(state.trace, reason));
        }
    }
    Ok(stopper.finish(state.trace, StopReason::MaxIters))
}

/// Gradient of `0.5 ||Y - H X||^2` at `x`.
fn fidelity_gradient(x: &GrayImage, obs: &Observation<'_>, cs: Option<&CsSystem<'_>>) -> Result<GrayImage> {
    match (obs, cs) {
        (Observation::Identity(y), _) => x.zip_sub(y),
        (Observation::Mask { y, mask }, _) => {
            ensure_same_dims(x.dims(), mask.dims())?;
            let data = x
                .data()
                .iter()
                .zip(y.data())
                .zip(mask.kept())
                .map(|((&xx, &yy), &k)| if k { xx - yy } else { 0.0 })
                .collect();
            GrayImage::new(x.height(), x.width(), data)
        }
        (Observation::Cs { .. }, Some(sys)) => cs_normal(x, sys.op)?.zip_sub(&sys.hty),
        (Observation::Cs { .. }, None) => unreachable!("CS system is built for CS observations"),
    }
}

/// Iterative shrinkage/thresholding: a gradient step on the data term
/// followed by the same group shrinkage as the A-update. Thresholds use the
/// same `tau_i` schedule as ADMM. The step is `cfg.eta`, defaulting to 1
/// for masks/identity and `1 / L` for CS.
pub fn restore_ist(obs: Observation<'_>, cfg: &RestoreConfig, oracle: Option<&GrayImage>) -> Result<Restoration> {
    cfg.validate()?;
    obs.validate()?;
    check_oracle(cfg, &obs, oracle)?;
    let cs = match obs {
        Observation::Cs { meas, op } => Some(CsSystem::new(meas, op)?),
        _ => None,
    };
    let eta = cfg
        .eta
        .unwrap_or_else(|| cs.as_ref().map_or(1.0, |s| 1.0 / s.lipschitz));
    let mut x = initial_estimate(&obs)?;
    let mut trace = Trace::default();
    let mut stopper = Stopper::new(cfg.stop);
    let start = Instant::now();
    for iter in 1..=cfg.max_iters {
        let upd = ist_step(&x, &obs, cs.as_ref(), cfg, eta).map_err(diverged(iter))?;
        let rel_change = relative_change(&upd.xhat, &x);
        if !rel_change.is_finite() {
            return Err(Error::Divergence { iter });
        }
        x = upd.xhat;
        let row = TraceRow {
            iter,
            psnr: oracle_psnr(&x, oracle)?,
            rel_change,
            mean_tau: upd.taus.iter().sum::<f64>() / upd.taus.len().max(1) as f64,
            residual: 0.0,
            seconds: start.elapsed().as_secs_f64(),
        };
        let verdict = stopper.observe(iter, &x, &row);
        trace.rows.push(row);
        if let Some(reason) = verdict {
            return Ok(stopper.finish(trace, reason));
        }
    }
    Ok(stopper.finish(trace, StopReason::MaxIters))
}

/// One IST iteration from `x`.
pub fn ist_step(x: &GrayImage, obs: &Observation<'_>, cs: Option<&CsSystem<'_>>, cfg: &RestoreConfig, eta: f64) -> Result<AUpdate> {
    let grad = fidelity_gradient(x, obs, cs)?;
    let r = GrayImage::new(
        x.height(),
        x.width(),
        x.data().iter().zip(grad.data()).map(|(&a, &g)| a - eta * g).collect(),
    )?;
    a_update(&r, cfg)
}

/// Both sides of the group/image error-energy identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyGap {
    /// `(1/N) ||x - l||^2`.
    pub lhs: f64,
    /// `(1/S) sum_i ||X_i - L_i||_F^2`.
    pub rhs: f64,
    /// `|lhs - rhs| / lhs` (0 when both vanish).
    pub rel_gap: f64,
}

/// Compares the per-pixel error energy of two images with the per-entry
/// error energy over the groups of `layout`.
pub fn error_energy_gap(x: &GrayImage, l: &GrayImage, layout: &GroupLayout) -> Result<EnergyGap> {
    ensure_same_dims(x.dims(), l.dims())?;
    if layout.is_empty() {
        return Err(Error::Shape("layout has no groups".into()));
    }
    let ps = layout.patch_size;
    let (h, w) = x.dims();
    let mut sum = 0.0;
    for coords in &layout.groups {
        for &(r, c) in coords {
            if r + ps > h || c + ps > w {
                return Err(Error::OutOfBounds { row: r, col: c });
            }
            for dr in 0..ps {
                for dc in 0..ps {
                    let d = x.get(r + dr, c + dc) - l.get(r + dr, c + dc);
                    sum += d * d;
                }
            }
        }
    }
    let lhs = x.squared_distance(l)? / x.len() as f64;
    let rhs = sum / layout.total_entries() as f64;
    let rel_gap = if lhs == 0.0 {
        if rhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (lhs - rhs).abs() / lhs
    };
    Ok(EnergyGap { lhs, rhs, rel_gap })
}

impl GrayImage {
    pub(crate) fn zip_add(&self, other: &GrayImage) -> Result<GrayImage> {
        ensure_same_dims(self.dims(), other.dims())?;
        GrayImage::new(
            self.height(),
            self.width(),
            self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect(),
        )
    }

    pub(crate) fn zip_sub(&self, other: &GrayImage) -> Result<GrayImage> {
        ensure_same_dims(self.dims(), other.dims())?;
        GrayImage::new(
            self.height(),
            self.width(),
            self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{cs_measure, random_mask};

    fn textured(h: usize, w: usize) -> GrayImage {
        GrayImage::from_fn(h, w, |r, c| {
            let (rf, cf) = (r as f64, c as f64);
            128.0 + 60.0 * (rf / 3.0).sin() * (cf / 5.0).cos() + 30.0 * ((rf + cf) / 7.0).sin()
        })
    }

    fn small_cfg() -> RestoreConfig {
        RestoreConfig {
            grouping: GroupingConfig::new(4, 8, 9).unwrap(),
            spec: ShrinkageSpec::new(0.5, true, 1.0, 0.35, 2).unwrap(),
            rho: 0.01,
            max_iters: 5,
            stop: StopRule::MaxIters,
            ..RestoreConfig::default()
        }
    }

    #[test]
    fn z_mask_examples() {
        let xhat = GrayImage::zeros(1, 2);
        let b = GrayImage::zeros(1, 2);
        let y = GrayImage::new(1, 2, vec![10.0, 99.0]).unwrap();
        let mask = PixelMask::new(1, 2, vec![true, false]).unwrap();
        let z = z_update_mask(&xhat, &b, &y, &mask, 1.0).unwrap();
        assert_eq!(z.data(), &[5.0, 0.0]);

        // no data: Z = Xhat + b exactly
        let none = PixelMask::new(1, 2, vec![false, false]).unwrap();
        let xhat = GrayImage::new(1, 2, vec![3.0, 4.0]).unwrap();
        let b = GrayImage::new(1, 2, vec![0.5, -1.0]).unwrap();
        assert_eq!(z_update_mask(&xhat, &b, &y, &none, 0.3).unwrap().data(), &[3.5, 3.0]);

        // fidelity-dominant limit
        let all = PixelMask::all_kept(1, 2);
        let z = z_update_mask(&xhat, &b, &y, &all, 1e-12).unwrap();
        assert!((z.get(0, 0) - 10.0).abs() < 1e-9 && (z.get(0, 1) - 99.0).abs() < 1e-9);
    }

    #[test]
    fn multiplier_examples() {
        let b = GrayImage::new(1, 2, vec![1.0, 2.0]).unwrap();
        let z = GrayImage::new(1, 2, vec![5.0, 5.0]).unwrap();
        assert_eq!(multiplier_update(&b, &z, &z).unwrap(), b);
        let zero = GrayImage::zeros(1, 2);
        let xhat = GrayImage::new(1, 2, vec![3.0, 7.0]).unwrap();
        let once = multiplier_update(&zero, &z, &xhat).unwrap();
        assert_eq!(once.data(), &[-2.0, 2.0]);
        let twice = multiplier_update(&once, &z, &xhat).unwrap();
        assert_eq!(twice.data(), &[-4.0, 4.0]);
    }

    #[test]
    fn lambda_and_tau_arithmetic() {
        assert!((group_tau(1.0, 200, 2.0, 100) - 1.0).abs() < 1e-15);
        let l = adaptive_lambda(0.0, std::f64::consts::SQRT_2, 0.3);
        assert!((l - 18.856).abs() < 1e-3);
        assert_eq!(sample_variance(&[2.0]), 0.0);
        assert!((sample_variance(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn a_update_saturates_to_zero() {
        let img = textured(16, 16);
        let cfg = RestoreConfig {
            spec: ShrinkageSpec::new(1.0, false, 1.0, 0.35, 2).unwrap(),
            lambda: LambdaMode::Fixed(1e9),
            ..small_cfg()
        };
        let upd = a_update(&img, &cfg).unwrap();
        assert!(upd.xhat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn a_update_without_shrinkage_is_identity() {
        let img = textured(20, 17);
        let cfg = RestoreConfig {
            lambda: LambdaMode::Fixed(0.0),
            ..small_cfg()
        };
        let upd = a_update(&img, &cfg).unwrap();
        for (a, b) in upd.xhat.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let pca = RestoreConfig {
            dictionary: DictionaryKind::Pca,
            ..cfg
        };
        let upd = a_update(&img, &pca).unwrap();
        for (a, b) in upd.xhat.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn cs_gradient_step_fixed_point_and_zero_step() {
        let op = BlockCsOp::with_block(8, 0.5, 1).unwrap();
        let x = textured(16, 16);
        let meas = cs_measure(&x, &op);
        let sys = CsSystem::new(&meas, &op).unwrap();
        // Z = x is stationary when q = x and H x = Y.
        let z = z_update_cs(&x, &x, &sys, 0.1, 0.05).unwrap();
        for (a, b) in z.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        let other = textured(16, 16).map(|v| 255.0 - v);
        assert_eq!(z_update_cs(&other, &x, &sys, 0.1, 0.0).unwrap(), other);
    }

    #[test]
    fn oracle_stop_requires_reference() {
        let img = textured(16, 16);
        let cfg = RestoreConfig {
            stop: StopRule::Oracle,
            ..small_cfg()
        };
        assert!(restore(Observation::Identity(&img), &cfg, None).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let img = textured(16, 16);
        let cfg = RestoreConfig {
            rho: 0.0,
            ..small_cfg()
        };
        assert!(restore(Observation::Identity(&img), &cfg, None).is_err());
    }

    #[test]
    fn inpainting_improves_on_initializer() {
        let clean = textured(32, 32);
        let mask = random_mask(32, 32, 0.5, 3).unwrap();
        let y = crate::operators::apply_mask(&clean, &mask).unwrap();
        let obs = Observation::Mask { y: &y, mask: &mask };
        let init = initial_estimate(&obs).unwrap();
        let cfg = RestoreConfig {
            max_iters: 20,
            spec: ShrinkageSpec::default(),
            lambda: LambdaMode::Fixed(0.025),
            ..small_cfg()
        };
        let out = restore(obs, &cfg, Some(&clean)).unwrap();
        let p = out.trace.psnrs();
        assert!(p.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{p:?}");
        assert!(psnr(&out.image, &clean).unwrap() > psnr(&init, &clean).unwrap() + 3.0, "{p:?}");
    }

    #[test]
    fn error_energy_gap_trivial_cases() {
        let x = textured(16, 16);
        let layout = build_layout(&x, &GroupingConfig::new(4, 4, 8).unwrap()).unwrap();
        let stat = error_energy_gap(&x, &x, &layout).unwrap();
        assert_eq!(stat.rel_gap, 0.0);
        // one group covering the image exactly once: S = N
        let whole = GroupLayout {
            patch_size: 16,
            groups: vec![vec![(0, 0)]],
        };
        let l = x.map(|v| v + 3.0);
        let stat = error_energy_gap(&x, &l, &whole).unwrap();
        assert_eq!(stat.lhs, stat.rhs);
        assert!(error_energy_gap(&x, &GrayImage::zeros(4, 4), &whole).is_err());
    }

    #[test]
    fn trace_csv_schema() {
        let trace = Trace {
            rows: vec![
                TraceRow {
                    iter: 1,
                    psnr: None,
                    rel_change: 0.5,
                    mean_tau: 2.0,
                    residual: 0.0,
                    seconds: 0.25,
                },
                TraceRow {
                    iter: 2,
                    psnr: Some(30.5),
                    rel_change: 0.1,
                    mean_tau: 1.0,
                    residual: 0.0,
                    seconds: 0.5,
                },
            ],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iter,psnr,rel_change,mean_tau,seconds\n1,,0.5,2,0.25\n2,30.5,0.1,1,0.5\n");
    }
}
