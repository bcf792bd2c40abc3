//! Dense symmetric linear algebra shared by the rest of the crate.
//!
//! Eigenvectors are sign-normalized (first non-negligible component positive)
//! and eigenvalues sorted descending, so decompositions are reproducible
//! bit-for-bit across runs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative rank cutoff: `dim * eps * 64`.
pub fn default_rel_tol(dim: usize) -> f64 {
    dim.max(1) as f64 * f64::EPSILON * 64.0
}

/// A real symmetric matrix. Stored symmetrized, so `A[i,j] == A[j,i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps a square matrix after checking symmetry within `1e-10 * (1 + max|A|)`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m)?;
        let scale = 1.0 + m.amax();
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::InvalidMatrix(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes `(A + A^T) / 2` without any check.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut s = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix(s)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    /// `Q diag(values) Q^T`.
    pub fn from_spectral(q: &DMatrix<f64>, values: &[f64]) -> Self {
        let mut scaled = q.clone();
        for (j, &v) in values.iter().enumerate() {
            scaled.column_mut(j).scale_mut(v);
        }
        Self::symmetrize(scaled * q.transpose())
    }

    /// `B B^T` for any `B`.
    pub fn gram(b: &DMatrix<f64>) -> Self {
        Self::symmetrize(b * b.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scale(&self, c: f64) -> Self {
        SymMatrix(&self.0 * c)
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        SymMatrix(&self.0 - &other.0)
    }

    /// `tr(A B)` for symmetric `A, B`, computed as the entrywise inner product.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// `x^T A x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.0 * x
    }

    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }
}

/// Eigen-decomposition `A = Q diag(values) Q^T`.
///
/// The rotation `U` of a base matrix written as `U^T diag(values) U` is `Q^T`.
#[derive(Debug, Clone)]
pub struct EigenDecomp {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenDecomp {
    pub fn reconstruct(&self) -> SymMatrix {
        SymMatrix::from_spectral(&self.vectors, self.values.as_slice())
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Applies `f` to every eigenvalue and rebuilds the matrix.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let vals: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        SymMatrix::from_spectral(&self.vectors, &vals)
    }
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix("non-finite entry".into()))
    }
}

/// Flips each column so its first component with `|v| > 1e-12 * max|v|` is positive.
pub fn normalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let cutoff = 1e-12 * col.amax();
        if let Some(&first) = col.iter().find(|v| v.abs() > cutoff) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomp> {
    check_finite(a.as_matrix())?;
    let n = a.dim();
    if n == 0 {
        return Ok(EigenDecomp {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps ties in solver order, which is itself deterministic.
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    normalize_signs(&mut vectors);
    Ok(EigenDecomp { values, vectors })
}

fn psd_eig(a: &SymMatrix, rel_tol: f64) -> Result<(EigenDecomp, f64)> {
    let eig = sym_eig(a)?;
    let lmax = eig.max_value();
    let cutoff = rel_tol * lmax;
    let lmin = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if lmin < -cutoff {
        return Err(Error::NotPsd {
            min_eig: lmin,
            cutoff,
        });
    }
    Ok((eig, cutoff))
}

/// Moore-Penrose inverse of a PSD matrix. Eigenvalues `<= rel_tol * lambda_max`
/// are treated as zero.
pub fn pseudoinverse(a: &SymMatrix, rel_tol: f64) -> Result<SymMatrix> {
    let (eig, cutoff) = psd_eig(a, rel_tol)?;
    Ok(eig.map(|v| if v > cutoff && v > 0.0 { 1.0 / v } else { 0.0 }))
}

pub fn pseudoinverse_default(a: &SymMatrix) -> Result<SymMatrix> {
    pseudoinverse(a, default_rel_tol(a.dim()))
}

/// Symmetric PSD square root.
pub fn psd_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (eig, _) = psd_eig(a, default_rel_tol(a.dim()))?;
    Ok(eig.map(|v| v.max(0.0).sqrt()))
}

/// Numerical rank with the given relative cutoff on eigenvalues.
pub fn psd_rank(a: &SymMatrix, rel_tol: f64) -> Result<usize> {
    let (eig, cutoff) = psd_eig(a, rel_tol)?;
    Ok(eig.values.iter().filter(|&&v| v > cutoff && v > 0.0).count())
}

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Orthonormal basis of `{x : M x = 0}` as the columns of a `p x (p - rank)` matrix.
///
/// The row space comes from a thin SVD (singular values above
/// `rel_tol * sigma_max`); its complement is completed by Gram-Schmidt over
/// the standard basis in index order, so the basis is deterministic.
pub fn null_space_basis(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    check_finite(m)?;
    let p = m.ncols();
    if m.nrows() == 0 || p == 0 {
        return Ok(DMatrix::identity(p, p));
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidMatrix("svd failed to produce V^T".into()))?;
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cutoff = rel_tol * smax;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(p);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let row = v_t.row(k).transpose();
            let mut v = row.clone_owned();
            orthogonalize(&mut v, &basis);
            let norm = v.norm();
            if norm > 1e-8 {
                basis.push(v / norm);
            }
        }
    }
    let rank = basis.len();
    let mut null_cols: Vec<DVector<f64>> = Vec::with_capacity(p - rank);
    for j in 0..p {
        if basis.len() == p {
            break;
        }
        let mut v = DVector::zeros(p);
        v[j] = 1.0;
        orthogonalize(&mut v, &basis);
        let norm = v.norm();
        if norm > 1e-6 {
            let u = v / norm;
            basis.push(u.clone());
            null_cols.push(u);
        }
    }
    let mut out = DMatrix::zeros(p, null_cols.len());
    for (j, c) in null_cols.iter().enumerate() {
        out.set_column(j, c);
    }
    Ok(out)
}

/// Two-pass classical Gram-Schmidt against an orthonormal list.
pub(crate) fn orthogonalize(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
}
