//! Per-group adaptive dictionaries.
//!
//! A group `Y = U diag(s) V^T` is coded on the rank-one atoms `u_j v_j^T`.
//! The atoms are orthonormal under the trace inner product, so coefficient
//! distances equal Frobenius distances between the decoded matrices and
//! shrinking the code is singular value shrinkage of the group.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::types::{GroupCode, GroupDictionary, PatchGroup};

fn check_finite(mat: &DMatrix<f64>) -> Result<()> {
    if let Some(index) = mat.iter().position(|v| !v.is_finite()) {
        return Err(Error::Svd(format!("non-finite entry at linear index {index}")));
    }
    Ok(())
}

/// Thin SVD with singular values in non-increasing order and the sign of
/// each left vector fixed so its largest-magnitude entry is positive.
pub fn thin_svd(mat: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    check_finite(mat)?;
    let (d, m) = mat.shape();
    let n = d.min(m);
    if n == 0 {
        return Ok((DMatrix::zeros(d, 0), Vec::new(), DMatrix::zeros(m, 0)));
    }
    let svd = mat.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Svd("left vectors not computed".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Svd("right vectors not computed".into()))?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut left = DMatrix::zeros(d, n);
    let mut right = DMatrix::zeros(m, n);
    let mut values = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let ucol = u.column(j);
        let (imax, _) = ucol
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best });
        let sign = if ucol[imax] < 0.0 { -1.0 } else { 1.0 };
        left.set_column(k, &(ucol * sign));
        right.set_column(k, &(v_t.row(j).transpose() * sign));
        values.push(sv[j]);
    }
    Ok((left, values, right))
}

/// Singular values of `mat`, largest first.
pub fn singular_values(mat: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_finite(mat)?;
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Learns the adaptive dictionary of a group with one SVD. The code is the
/// vector of singular values. Tiny singular values are kept as they are.
pub fn learn_adaptive(group: &PatchGroup) -> Result<(GroupDictionary, GroupCode)> {
    learn_adaptive_matrix(&group.data)
}

pub fn learn_adaptive_matrix(data: &DMatrix<f64>) -> Result<(GroupDictionary, GroupCode)> {
    let (left, values, right) = thin_svd(data)?;
    Ok((GroupDictionary { left, right }, GroupCode::new(values)))
}

/// `sum_j code_j * left[:, j] * right[:, j]^T`.
pub fn decode(dict: &GroupDictionary, code: &GroupCode) -> Result<DMatrix<f64>> {
    if code.len() != dict.atoms() || dict.right.ncols() != dict.atoms() {
        return Err(Error::Shape(format!(
            "code has {} coefficients, dictionary has {} atoms",
            code.len(),
            dict.atoms()
        )));
    }
    let mut scaled = dict.left.clone();
    for (j, &c) in code.coeffs.iter().enumerate() {
        scaled.column_mut(j).scale_mut(c);
    }
    Ok(scaled * dict.right.transpose())
}

/// PCA dictionary of a group: orthonormal patch-space basis (principal
/// directions first), the column mean and the coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaDictionary {
    pub basis: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub coeffs: DMatrix<f64>,
    /// Covariance eigenvalues matching the basis columns.
    pub variances: Vec<f64>,
}

impl PcaDictionary {
    /// `basis * coeffs + mean * 1^T`.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.basis * coeffs;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

/// Principal-component dictionary of the group's columns (mean removed).
/// Falls back to the identity basis when the covariance is degenerate.
pub fn learn_pca(group: &PatchGroup) -> Result<PcaDictionary> {
    let data = &group.data;
    check_finite(data)?;
    let (d, m) = data.shape();
    if m < 2 {
        return Err(Error::InvalidParameter(format!(
            "PCA needs at least 2 patches, group has {m}"
        )));
    }
    let mean = data.column_mean();
    let mut centered = data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = &centered * centered.transpose() / (m as f64 - 1.0);

    let (basis, variances) = if cov.iter().all(|v| v.abs() == 0.0) {
        (DMatrix::identity(d, d), vec![0.0; d])
    } else {
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut basis = DMatrix::zeros(d, d);
        let mut variances = Vec::with_capacity(d);
        for (k, &j) in order.iter().enumerate() {
            let col = eig.eigenvectors.column(j);
            let (imax, _) = col
                .iter()
                .enumerate()
                .fold((0, -1.0), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best });
            let sign = if col[imax] < 0.0 { -1.0 } else { 1.0 };
            basis.set_column(k, &(col * sign));
            variances.push(eig.eigenvalues[j].max(0.0));
        }
        if basis.iter().any(|v| !v.is_finite()) {
            (DMatrix::identity(d, d), vec![0.0; d])
        } else {
            (basis, variances)
        }
    };
    let coeffs = basis.transpose() * &centered;
    Ok(PcaDictionary {
        basis,
        mean,
        coeffs,
        variances,
    })
}
