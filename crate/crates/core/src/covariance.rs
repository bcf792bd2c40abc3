//! Base spectra, truncation levels, covariance splits and endogeneity models.
//!
//! Every model here is stored spectrally: `Sigma_u`, `Xi_z` and `Sigma_x` share
//! the eigenvector matrix `Q = U^T` of the base matrix and differ only in
//! eigenvalues. Dense `p x p` matrices are materialized on first request.

use std::f64::consts::E;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::SymMatrix;

/// Log-scale factor of the Setup (i)/(vii) spectrum, read as
/// `300 i^-1 (log(i+1) * e / 2)^-2`. The alternative reading `(log(i+1)/2)^-2`
/// is `SETUP_LOG_SCALE_ALT`.
pub const SETUP_LOG_SCALE: f64 = E / 2.0;
pub const SETUP_LOG_SCALE_ALT: f64 = 0.5;

/// Residual norm (relative to the candidate column) below which Gram-Schmidt
/// treats a column as dependent.
pub const GRAM_SCHMIDT_TOL: f64 = 1e-10;

/// Relative cutoff for counting an eigenvalue of `Sigma_u` or `Xi_z` as nonzero.
pub const SPECTRAL_RANK_TOL: f64 = 1e-13;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EpsRule {
    /// `exp(-sqrt(n)) / sqrt(n)`
    ExpSqrt,
    Constant { value: f64 },
}

impl EpsRule {
    pub fn eval(&self, n: usize) -> f64 {
        match *self {
            EpsRule::ExpSqrt => {
                let s = (n as f64).sqrt();
                (-s).exp() / s
            }
            EpsRule::Constant { value } => value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumShape {
    /// `c * i^-1 * (log(i+1) * log_scale)^-beta`
    LogPoly {
        c: f64,
        beta: f64,
        #[serde(default = "one")]
        log_scale: f64,
    },
    /// `scale * exp(-i / tau) + eps_n`
    ExpPlusNoise { tau: f64, scale: f64, eps: EpsRule },
    /// Fixed descending values; the dimension rule is ignored.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimRule {
    /// `p = factor * n`
    Linear { factor: usize },
    /// `p = round(n^exponent)`
    Power { exponent: f64 },
    Fixed { p: usize },
}

impl DimRule {
    pub fn eval(&self, n: usize) -> usize {
        match *self {
            DimRule::Linear { factor } => factor * n,
            DimRule::Power { exponent } => (n as f64).powf(exponent).round() as usize,
            DimRule::Fixed { p } => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub shape: SpectrumShape,
    pub dim: DimRule,
}

impl SpectrumProfile {
    /// Setup (i) base spectrum with `p = 5n`.
    pub fn setup_log_poly() -> Self {
        SpectrumProfile {
            shape: SpectrumShape::LogPoly {
                c: 300.0,
                beta: 2.0,
                log_scale: SETUP_LOG_SCALE,
            },
            dim: DimRule::Linear { factor: 5 },
        }
    }

    /// Setup (ii) base spectrum with `p = n^{3/2}`.
    pub fn setup_exp_plus_noise() -> Self {
        SpectrumProfile {
            shape: SpectrumShape::ExpPlusNoise {
                tau: 2.0,
                scale: 10.0,
                eps: EpsRule::ExpSqrt,
            },
            dim: DimRule::Power { exponent: 1.5 },
        }
    }
}

/// Base eigenvalues for sample size `n`: returns `(p, lambda_1..lambda_p)`.
pub fn spectrum(profile: &SpectrumProfile, n: usize) -> Result<(usize, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidProfile("sample size must be at least 1".into()));
    }
    let values = match &profile.shape {
        SpectrumShape::LogPoly { c, beta, log_scale } => {
            if !(*c > 0.0 && *beta > 0.0 && *log_scale > 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "log-poly needs c, beta, log_scale > 0 (got {c}, {beta}, {log_scale})"
                )));
            }
            let p = profile.dim.eval(n);
            (1..=p)
                .map(|i| {
                    let i = i as f64;
                    c / i * ((i + 1.0).ln() * log_scale).powf(-beta)
                })
                .collect::<Vec<_>>()
        }
        SpectrumShape::ExpPlusNoise { tau, scale, eps } => {
            if !(*tau > 0.0 && *scale > 0.0) {
                return Err(Error::InvalidProfile(format!(
                    "exp-plus-noise needs tau, scale > 0 (got {tau}, {scale})"
                )));
            }
            let eps_n = eps.eval(n);
            if !(eps_n >= 0.0 && eps_n.is_finite()) {
                return Err(Error::InvalidProfile(format!("eps_n = {eps_n} must be >= 0")));
            }
            let p = profile.dim.eval(n);
            (1..=p)
                .map(|i| scale * (-(i as f64) / tau).exp() + eps_n)
                .collect()
        }
        SpectrumShape::Explicit { values } => {
            validate_descending(values).map_err(|e| Error::InvalidProfile(e.to_string()))?;
            values.clone()
        }
    };
    if values.is_empty() {
        return Err(Error::InvalidProfile("dimension rule produced p = 0".into()));
    }
    Ok((values.len(), values))
}

fn validate_descending(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidSpectrum("eigenvalues must be finite and >= 0".into()));
    }
    if values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidSpectrum("eigenvalues must be nonincreasing".into()));
    }
    Ok(())
}

/// Smallest `k` such that `(sum_{i>k} lambda_i) / lambda_{k+1} > n`.
pub fn truncation_level(eigenvalues: &[f64], n: usize) -> Result<usize> {
    validate_descending(eigenvalues)?;
    if eigenvalues.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidSpectrum("all-zero spectrum".into()));
    }
    let tails = tail_sums(eigenvalues);
    for (k, &lead) in eigenvalues.iter().enumerate() {
        if lead <= 0.0 {
            break;
        }
        if tails[k] / lead > n as f64 {
            return Ok(k);
        }
    }
    Err(Error::NoSuchLevel { n })
}

/// `tails[k] = sum_{i >= k} values[i]`, accumulated from the smallest end.
pub fn tail_sums(values: &[f64]) -> Vec<f64> {
    let mut tails = vec![0.0; values.len() + 1];
    for k in (0..values.len()).rev() {
        tails[k] = tails[k + 1] + values[k];
    }
    tails.truncate(values.len());
    tails
}

/// Orthonormal rotation `U`. The base matrix is `U^T diag(lambda) U`, so its
/// eigenvectors are the rows of `U` (equivalently the columns of `Q = U^T`).
#[derive(Debug, Clone)]
pub enum Rotation {
    Identity(usize),
    Dense(Arc<DMatrix<f64>>),
    /// Eigen-index `i` sits on coordinate `perm[i]`.
    Permutation(Arc<Vec<usize>>),
}

impl Rotation {
    pub fn dim(&self) -> usize {
        match self {
            Rotation::Identity(p) => *p,
            Rotation::Dense(u) => u.nrows(),
            Rotation::Permutation(perm) => perm.len(),
        }
    }

    pub fn permutation(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &c in &perm {
            if c >= perm.len() || seen[c] {
                return Err(Error::InvalidConfig("not a permutation".into()));
            }
            seen[c] = true;
        }
        Ok(Rotation::Permutation(Arc::new(perm)))
    }

    /// Coordinates in the eigenbasis: `Q^T v = U v`.
    pub fn to_eigen(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Rotation::Identity(_) => v.clone(),
            Rotation::Dense(u) => u.as_ref() * v,
            Rotation::Permutation(perm) => DVector::from_iterator(perm.len(), perm.iter().map(|&c| v[c])),
        }
    }

    /// Back to ambient coordinates: `Q c = U^T c`.
    pub fn from_eigen(&self, c: &DVector<f64>) -> DVector<f64> {
        match self {
            Rotation::Identity(_) => c.clone(),
            Rotation::Dense(u) => u.tr_mul(c),
            Rotation::Permutation(perm) => {
                let mut out = DVector::zeros(perm.len());
                for (i, &col) in perm.iter().enumerate() {
                    out[col] = c[i];
                }
                out
            }
        }
    }

    /// Applies the rotation `U` itself (used by the `(Sigma_u^{1/2})^+ omega := U rho` rule).
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.to_eigen(v)
    }

    /// Eigenvector matrix `Q = U^T`.
    pub fn eigenvectors(&self) -> DMatrix<f64> {
        match self {
            Rotation::Identity(p) => DMatrix::identity(*p, *p),
            Rotation::Dense(u) => u.transpose(),
            Rotation::Permutation(perm) => {
                let p = perm.len();
                let mut q = DMatrix::zeros(p, p);
                for (i, &c) in perm.iter().enumerate() {
                    q[(c, i)] = 1.0;
                }
                q
            }
        }
    }

    /// For axis-aligned rotations, spreads eigen-indexed values onto ambient
    /// coordinates; `None` for dense rotations.
    pub fn ambient_diagonal(&self, values: &[f64]) -> Option<Vec<f64>> {
        match self {
            Rotation::Identity(_) => Some(values.to_vec()),
            Rotation::Permutation(perm) => {
                let mut out = vec![0.0; perm.len()];
                for (i, &c) in perm.iter().enumerate() {
                    out[c] = values[i];
                }
                Some(out)
            }
            Rotation::Dense(_) => None,
        }
    }
}

/// The `p x p` 0/1 matrix `P[j, j'] = 1{|j - j'| != p - 2}` whose orthogonalized
/// columns define the rotation.
pub fn rotation_seed_column(p: usize, j: usize) -> DVector<f64> {
    DVector::from_fn(p, |i, _| if i.abs_diff(j) == p - 2 { 0.0 } else { 1.0 })
}

/// Orthonormalizes `P` column by column (see [`gram_schmidt_with_fallback`]).
pub fn build_rotation(p: usize) -> Result<Rotation> {
    if p < 2 {
        return Err(Error::InvalidConfig(format!("rotation needs p >= 2, got {p}")));
    }
    let u = gram_schmidt_with_fallback(p, |j| rotation_seed_column(p, j));
    Ok(Rotation::Dense(Arc::new(u)))
}

/// Gram-Schmidt over `columns(0..p)` in index order. When a column is
/// dependent on its predecessors, the standard basis vector `e_j` is used
/// instead (then `e_0, e_1, ...` if `e_j` is dependent too).
///
/// The span built so far is kept as `span{e_s : s in S} (+) span(B)` where `B`
/// is a short orthonormal list supported off `S`. A fallback column absorbs
/// one coordinate into `S`, so residuals cost `O(p |B|)` instead of `O(p j)`
/// and the whole rotation is `O(p^2)` when few columns are dense.
pub fn gram_schmidt_with_fallback(p: usize, columns: impl Fn(usize) -> DVector<f64>) -> DMatrix<f64> {
    let mut u = DMatrix::<f64>::zeros(p, p);
    let mut absorbed = vec![false; p];
    let mut dense: Vec<DVector<f64>> = Vec::new();

    for j in 0..p {
        let c = columns(j);
        let cn = c.norm();
        let mut r = c;
        for (i, a) in absorbed.iter().enumerate() {
            if *a {
                r[i] = 0.0;
            }
        }
        project_out(&mut r, &dense);
        if cn > 0.0 && r.norm() > GRAM_SCHMIDT_TOL * cn {
            let nr = r.norm();
            r /= nr;
            u.set_column(j, &r);
            dense.push(r);
            continue;
        }

        let candidates = std::iter::once(j).chain(0..p);
        let mut placed = false;
        for t in candidates {
            if absorbed[t] {
                continue;
            }
            let mut r = DVector::zeros(p);
            r[t] = 1.0;
            project_out(&mut r, &dense);
            let nr = r.norm();
            if nr <= GRAM_SCHMIDT_TOL {
                continue;
            }
            u.set_column(j, &(r / nr));
            absorbed[t] = true;
            for b in dense.iter_mut() {
                b[t] = 0.0;
            }
            dense = reorthonormalize(std::mem::take(&mut dense));
            placed = true;
            break;
        }
        debug_assert!(placed, "standard basis exhausted before p columns");
    }
    u
}

fn project_out(v: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(v);
            v.axpy(-c, b, 1.0);
        }
    }
}

fn reorthonormalize(vectors: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        project_out(&mut v, &out);
        let n = v.norm();
        if n > GRAM_SCHMIDT_TOL {
            out.push(v / n);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    Orthogonal,
    NonOrthogonal { alpha: f64 },
}

#[derive(Debug)]
struct DenseCovariances {
    sigma_u: SymMatrix,
    xi_z: SymMatrix,
    sigma_x: SymMatrix,
}

/// `(Sigma_u, Xi_z, Sigma_x)` sharing the eigenvectors of the base matrix.
#[derive(Debug)]
pub struct CovarianceModel {
    rotation: Rotation,
    base: Vec<f64>,
    sigma_u: Vec<f64>,
    xi_z: Vec<f64>,
    k_star: usize,
    split: SplitKind,
    dense: OnceLock<DenseCovariances>,
}

impl Clone for CovarianceModel {
    fn clone(&self) -> Self {
        CovarianceModel {
            rotation: self.rotation.clone(),
            base: self.base.clone(),
            sigma_u: self.sigma_u.clone(),
            xi_z: self.xi_z.clone(),
            k_star: self.k_star,
            split: self.split,
            dense: OnceLock::new(),
        }
    }
}

fn check_split_inputs(base: &[f64], rotation: &Rotation, k: usize) -> Result<()> {
    validate_descending(base)?;
    if rotation.dim() != base.len() {
        return Err(Error::DimensionMismatch(format!(
            "rotation is {}-dimensional, spectrum has {} values",
            rotation.dim(),
            base.len()
        )));
    }
    if k > base.len() {
        return Err(Error::DimensionMismatch(format!(
            "truncation level {k} exceeds p = {}",
            base.len()
        )));
    }
    Ok(())
}

/// `Sigma_u` keeps the top `k` eigenvalues, `Xi_z` the rest.
pub fn split_orthogonal(base: &[f64], rotation: &Rotation, k: usize) -> Result<CovarianceModel> {
    check_split_inputs(base, rotation, k)?;
    let sigma_u: Vec<f64> = base.iter().enumerate().map(|(i, &v)| if i < k { v } else { 0.0 }).collect();
    let xi_z: Vec<f64> = base.iter().enumerate().map(|(i, &v)| if i < k { 0.0 } else { v }).collect();
    Ok(CovarianceModel {
        rotation: rotation.clone(),
        base: base.to_vec(),
        sigma_u,
        xi_z,
        k_star: k,
        split: SplitKind::Orthogonal,
        dense: OnceLock::new(),
    })
}

/// `Sigma_u = (1 - n^-alpha) * top-k part`, `Xi_z = base - Sigma_u`.
pub fn split_nonorthogonal(
    base: &[f64],
    rotation: &Rotation,
    k: usize,
    alpha: f64,
    n: usize,
) -> Result<CovarianceModel> {
    if !(alpha > 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    check_split_inputs(base, rotation, k)?;
    let shrink = 1.0 - (n as f64).powf(-alpha);
    let sigma_u: Vec<f64> = base
        .iter()
        .enumerate()
        .map(|(i, &v)| if i < k { shrink * v } else { 0.0 })
        .collect();
    let xi_z: Vec<f64> = base.iter().zip(&sigma_u).map(|(b, u)| b - u).collect();
    Ok(CovarianceModel {
        rotation: rotation.clone(),
        base: base.to_vec(),
        sigma_u,
        xi_z,
        k_star: k,
        split: SplitKind::NonOrthogonal { alpha },
        dense: OnceLock::new(),
    })
}

impl CovarianceModel {
    pub fn p(&self) -> usize {
        self.base.len()
    }

    pub fn k_star(&self) -> usize {
        self.k_star
    }

    pub fn split_kind(&self) -> SplitKind {
        self.split
    }

    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn base_eigenvalues(&self) -> &[f64] {
        &self.base
    }

    /// Eigenvalues of `Sigma_u` in the shared eigenbasis (same order as the base).
    pub fn sigma_u_eigenvalues(&self) -> &[f64] {
        &self.sigma_u
    }

    pub fn xi_z_eigenvalues(&self) -> &[f64] {
        &self.xi_z
    }

    /// Same model expressed in its own eigenbasis (identity rotation).
    pub fn canonical(&self) -> CovarianceModel {
        CovarianceModel {
            rotation: Rotation::Identity(self.p()),
            dense: OnceLock::new(),
            ..self.clone()
        }
    }

    fn dense(&self) -> &DenseCovariances {
        self.dense.get_or_init(|| {
            let q = self.rotation.eigenvectors();
            DenseCovariances {
                sigma_u: SymMatrix::from_spectral(&q, &self.sigma_u),
                xi_z: SymMatrix::from_spectral(&q, &self.xi_z),
                sigma_x: SymMatrix::from_spectral(&q, &self.base),
            }
        })
    }

    /// Dense `Sigma_u` (built on first use; `O(p^3)` for dense rotations).
    pub fn sigma_u(&self) -> &SymMatrix {
        &self.dense().sigma_u
    }

    pub fn xi_z(&self) -> &SymMatrix {
        &self.dense().xi_z
    }

    /// Dense `Sigma_x`, built from the base spectrum independently of the split.
    pub fn sigma_x(&self) -> &SymMatrix {
        &self.dense().sigma_x
    }

    fn rank_of(values: &[f64]) -> usize {
        let max = values.iter().copied().fold(0.0, f64::max);
        values.iter().filter(|&&v| v > SPECTRAL_RANK_TOL * max && v > 0.0).count()
    }

    pub fn rank_sigma_u(&self) -> usize {
        Self::rank_of(&self.sigma_u)
    }

    pub fn rank_xi_z(&self) -> usize {
        Self::rank_of(&self.xi_z)
    }

    pub fn rank_sigma_x(&self) -> usize {
        Self::rank_of(&self.base)
    }

    /// Whether eigen-index `i` lies in the range of `Sigma_u`.
    pub fn in_sigma_u_range(&self, i: usize) -> bool {
        self.sigma_u_range()[i]
    }

    /// Range membership of every eigen-index of `Sigma_u`.
    pub fn sigma_u_range(&self) -> Vec<bool> {
        let max = self.sigma_u.iter().copied().fold(0.0, f64::max);
        self.sigma_u.iter().map(|&v| v > SPECTRAL_RANK_TOL * max && v > 0.0).collect()
    }

    pub fn trace_xi_z(&self) -> f64 {
        self.xi_z.iter().sum()
    }

    pub fn trace_xi_z_sq(&self) -> f64 {
        self.xi_z.iter().map(|v| v * v).sum()
    }

    pub fn op_norm_xi_z(&self) -> f64 {
        self.xi_z.iter().copied().fold(0.0, f64::max)
    }

    /// `tr(Sigma_u Xi_z)`.
    pub fn trace_cross(&self) -> f64 {
        self.sigma_u.iter().zip(&self.xi_z).map(|(u, z)| u * z).sum()
    }

    /// Explicit instrument factorization `Xi_z = Pi0 Sigma_z Pi0^T` with
    /// `Sigma_z = I_k`, `Pi0 = Xi_z^{1/2}` restricted to its range, `k = rank(Xi_z)`.
    pub fn instrument_factorization(&self) -> InstrumentFactor {
        let q = self.rotation.eigenvectors();
        let max = self.xi_z.iter().copied().fold(0.0, f64::max);
        let kept: Vec<usize> = (0..self.p())
            .filter(|&i| self.xi_z[i] > SPECTRAL_RANK_TOL * max && self.xi_z[i] > 0.0)
            .collect();
        let mut pi0 = DMatrix::zeros(self.p(), kept.len());
        for (c, &i) in kept.iter().enumerate() {
            pi0.set_column(c, &(q.column(i) * self.xi_z[i].sqrt()));
        }
        InstrumentFactor {
            sigma_z: SymMatrix::identity(kept.len()),
            pi0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstrumentFactor {
    pub pi0: DMatrix<f64>,
    pub sigma_z: SymMatrix,
}

/// Coefficient shapes used for `theta0`, `rho` and `omega`. Indices are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// `scale / sqrt(i)`
    InvSqrt { scale: f64 },
    /// `scale / i`
    Harmonic { scale: f64 },
    /// `scale * exp(-i / rate)`
    ExpDecay { scale: f64, rate: f64 },
    /// `scale * i^-1 * log^-beta(i+1)`
    LogPoly { scale: f64, beta: f64 },
    Explicit { values: Vec<f64> },
    Zero,
}

/// Which 1-based indices keep their value; the rest are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Support {
    All,
    /// `i <= fraction * n`
    FirstFraction { fraction: f64 },
    /// `i <= max_index` and `(i + offset) % modulus == 0`
    Residue { max_index: usize, modulus: usize, offset: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorRule {
    pub shape: Shape,
    #[serde(default = "support_all")]
    pub support: Support,
}

fn support_all() -> Support {
    Support::All
}

impl VectorRule {
    pub fn new(shape: Shape) -> Self {
        VectorRule { shape, support: Support::All }
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn eval(&self, p: usize, n: usize) -> Result<DVector<f64>> {
        let value = |i: usize| -> f64 {
            let x = i as f64;
            match &self.shape {
                Shape::InvSqrt { scale } => scale / x.sqrt(),
                Shape::Harmonic { scale } => scale / x,
                Shape::ExpDecay { scale, rate } => scale * (-x / rate).exp(),
                Shape::LogPoly { scale, beta } => scale / x * (x + 1.0).ln().powf(-beta),
                Shape::Explicit { values } => values[i - 1],
                Shape::Zero => 0.0,
            }
        };
        if let Shape::Explicit { values } = &self.shape {
            if values.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "explicit vector has {} entries, p = {p}",
                    values.len()
                )));
            }
        }
        let keep = |i: usize| -> bool {
            match self.support {
                Support::All => true,
                Support::FirstFraction { fraction } => (i as f64) <= fraction * n as f64,
                Support::Residue {
                    max_index,
                    modulus,
                    offset,
                } => i <= max_index && (i + offset).is_multiple_of(modulus),
            }
        };
        Ok(DVector::from_fn(p, |r, _| {
            let i = r + 1;
            if keep(i) {
                value(i)
            } else {
                0.0
            }
        }))
    }
}

/// How the endogeneity vector is specified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EndogeneityRule {
    Exogenous,
    /// `(Sigma_u^{1/2})^+ omega := U rho`; the part of `U rho` outside the
    /// range of `Sigma_u` is dropped, so `omega = Sigma_u^{1/2} U rho`.
    RotatedRho { rho: VectorRule },
    /// Eigen-coordinates `(U omega)_i` given directly, restricted to the range of `Sigma_u`.
    EigenOmega { omega: VectorRule },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaRule {
    Fixed { sigma: f64 },
    /// `sigma = factor * |rho|_2` with `rho` before restriction to the range of `Sigma_u`.
    RhoMultiple { factor: f64 },
}

impl Default for SigmaRule {
    fn default() -> Self {
        SigmaRule::RhoMultiple { factor: 2.0 }
    }
}

/// A covariance split together with `theta0`, `omega`, `rho` and noise levels.
#[derive(Debug, Clone)]
pub struct EndogeneityModel {
    pub id: String,
    pub cov: CovarianceModel,
    pub theta0: DVector<f64>,
    /// `E[X xi]`
    pub omega: DVector<f64>,
    /// `(Sigma_u^{1/2})^+ omega`
    pub rho: DVector<f64>,
    pub sigma2: f64,
    /// `sigma^2 - |rho|^2`
    pub sigma_tilde2: f64,
    theta0_eig: DVector<f64>,
    rho_eig: DVector<f64>,
}

pub fn assemble_model(
    cov: CovarianceModel,
    theta0: &VectorRule,
    endogeneity: &EndogeneityRule,
    sigma: SigmaRule,
    n: usize,
) -> Result<EndogeneityModel> {
    let p = cov.p();
    let theta0 = theta0.eval(p, n)?;
    let rot = cov.rotation().clone();

    // rho in eigen coordinates, restricted to range(Sigma_u), plus the raw norm for sigma.
    let (rho_eig, raw_norm) = match endogeneity {
        EndogeneityRule::Exogenous => (DVector::zeros(p), 0.0),
        EndogeneityRule::RotatedRho { rho } => {
            let rho = rho.eval(p, n)?;
            let ambient = rot.apply(&rho);
            let mut c = rot.to_eigen(&ambient);
            let range = cov.sigma_u_range();
            for i in 0..p {
                if !range[i] {
                    c[i] = 0.0;
                }
            }
            (c, rho.norm())
        }
        EndogeneityRule::EigenOmega { omega } => {
            let w = omega.eval(p, n)?;
            let lu = cov.sigma_u_eigenvalues();
            let range = cov.sigma_u_range();
            let c = DVector::from_fn(p, |i, _| if range[i] { w[i] / lu[i].sqrt() } else { 0.0 });
            let norm = c.norm();
            (c, norm)
        }
    };

    let sigma = match sigma {
        SigmaRule::Fixed { sigma } => sigma,
        SigmaRule::RhoMultiple { factor } => {
            if raw_norm == 0.0 {
                return Err(Error::InvalidConfig(
                    "sigma as a multiple of |rho| needs a nonzero rho; use a fixed sigma".into(),
                ));
            }
            factor * raw_norm
        }
    };
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::ModelInconsistent(format!("sigma must be positive, got {sigma}")));
    }
    let sigma2 = sigma * sigma;
    let rho_norm2 = rho_eig.norm_squared();
    if rho_norm2 > sigma2 {
        return Err(Error::EndogeneityTooStrong {
            rho_norm2,
            sigma2,
        });
    }
    let lu = cov.sigma_u_eigenvalues();
    let omega_eig = DVector::from_fn(p, |i, _| lu[i].sqrt() * rho_eig[i]);
    let model = EndogeneityModel {
        id: String::new(),
        omega: rot.from_eigen(&omega_eig),
        rho: rot.from_eigen(&rho_eig),
        theta0_eig: rot.to_eigen(&theta0),
        theta0,
        sigma2,
        sigma_tilde2: sigma2 - rho_norm2,
        rho_eig,
        cov,
    };
    let min_eig = model.joint_covariance_min_eigenvalue();
    if min_eig < -1e-8 {
        return Err(Error::ModelInconsistent(format!(
            "joint covariance of (W1, W2, xi) has min eigenvalue {min_eig:e}"
        )));
    }
    Ok(model)
}

impl EndogeneityModel {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn p(&self) -> usize {
        self.cov.p()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn theta0_eigen(&self) -> &DVector<f64> {
        &self.theta0_eig
    }

    pub fn rho_eigen(&self) -> &DVector<f64> {
        &self.rho_eig
    }

    pub fn omega_eigen(&self) -> DVector<f64> {
        let lu = self.cov.sigma_u_eigenvalues();
        DVector::from_fn(self.p(), |i, _| lu[i].sqrt() * self.rho_eig[i])
    }

    /// `Sigma_u^+ omega` in eigen coordinates: `rho_i / sqrt(lambda^u_i)` on the range.
    pub fn sigma_u_pinv_omega_eigen(&self) -> DVector<f64> {
        let lu = self.cov.sigma_u_eigenvalues();
        let range = self.cov.sigma_u_range();
        DVector::from_fn(self.p(), |i, _| {
            if range[i] {
                self.rho_eig[i] / lu[i].sqrt()
            } else {
                0.0
            }
        })
    }

    /// Smallest eigenvalue of the `(2p+1)`-dimensional covariance of `(W1, W2, xi)`,
    /// `[[I, 0, 0], [0, I, rho], [0, rho^T, sigma^2]]`, in closed form.
    pub fn joint_covariance_min_eigenvalue(&self) -> f64 {
        let r2 = self.rho_eig.norm_squared();
        let s2 = self.sigma2;
        let disc = ((1.0 - s2).powi(2) + 4.0 * r2).sqrt();
        let block_min = 0.5 * ((1.0 + s2) - disc);
        block_min.min(1.0)
    }

    /// Dense joint covariance (test and small-`p` use only).
    pub fn joint_covariance(&self) -> SymMatrix {
        let p = self.p();
        let mut m = DMatrix::zeros(2 * p + 1, 2 * p + 1);
        for i in 0..2 * p {
            m[(i, i)] = 1.0;
        }
        for i in 0..p {
            m[(p + i, 2 * p)] = self.rho[i];
            m[(2 * p, p + i)] = self.rho[i];
        }
        m[(2 * p, 2 * p)] = self.sigma2;
        SymMatrix::symmetrize(m)
    }

    /// The same model in its own eigenbasis. The ridgeless estimator and the
    /// projected RMSE are equivariant under this change of coordinates.
    pub fn canonical(&self) -> EndogeneityModel {
        let p = self.p();
        let cov = self.cov.canonical();
        let rot = Rotation::Identity(p);
        let omega_eig = self.omega_eigen();
        EndogeneityModel {
            id: self.id.clone(),
            theta0: self.theta0_eig.clone(),
            omega: rot.from_eigen(&omega_eig),
            rho: self.rho_eig.clone(),
            sigma2: self.sigma2,
            sigma_tilde2: self.sigma_tilde2,
            theta0_eig: self.theta0_eig.clone(),
            rho_eig: self.rho_eig.clone(),
            cov,
        }
    }

    /// Ambient indices where `omega` is nonzero.
    pub fn endogenous_indices(&self) -> Vec<usize> {
        let scale = self.omega.amax();
        if scale == 0.0 {
            return Vec::new();
        }
        (0..self.p()).filter(|&i| self.omega[i].abs() > 1e-14 * scale).collect()
    }
}
