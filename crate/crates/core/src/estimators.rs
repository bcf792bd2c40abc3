//! Minimum-norm interpolation, ridge, lasso by coordinate descent, and the
//! split-sample lasso-IV baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{pseudoinverse_default, sym_eig, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    MinNorm,
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    LassoIv,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: DVector<f64>,
    pub method: Method,
    /// `|Y - X theta|^2 / n`
    pub training_loss: f64,
    pub norm: f64,
    pub iterations: Option<usize>,
}

impl FitResult {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>, theta_hat: DVector<f64>, method: Method, iterations: Option<usize>) -> Self {
        let n = x.nrows().max(1) as f64;
        let training_loss = (y - x * &theta_hat).norm_squared() / n;
        FitResult {
            norm: theta_hat.norm(),
            theta_hat,
            method,
            training_loss,
            iterations,
        }
    }
}

fn check_xy(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} rows, Y has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite entries in X or Y".into()));
    }
    Ok(())
}

/// `X^T (X X^T)^+ Y`.
pub fn min_norm_interpolator(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    check_xy(x, y)?;
    let gram = SymMatrix::symmetrize(x * x.transpose());
    let ginv = pseudoinverse_default(&gram)?;
    let theta = x.tr_mul(&ginv.mul_vec(y));
    Ok(FitResult::new(x, y, theta, Method::MinNorm, None))
}

/// `X^T (X X^T + n lambda I)^{-1} Y`.
pub fn ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<FitResult> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidLambda(lambda));
    }
    check_xy(x, y)?;
    let n = x.nrows();
    let mut g = x * x.transpose();
    for i in 0..n {
        g[(i, i)] += n as f64 * lambda;
    }
    let chol = g
        .cholesky()
        .ok_or_else(|| Error::InvalidData("ridge system is not positive definite".into()))?;
    let theta = x.tr_mul(&chol.solve(y));
    Ok(FitResult::new(x, y, theta, Method::Ridge { lambda }, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Stop once the largest KKT violation is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    /// Penalize `lambda * sd_j * |theta_j|`, i.e. the lasso on unit-variance
    /// columns reported back in the original scale.
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-8,
            max_iter: 10_000,
            standardize: false,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Per-column penalty weights: `1`, or the column's root mean square when standardizing.
pub fn lasso_weights(x: &DMatrix<f64>, standardize: bool) -> Vec<f64> {
    let n = x.nrows().max(1) as f64;
    (0..x.ncols())
        .map(|j| if standardize { (x.column(j).norm_squared() / n).sqrt() } else { 1.0 })
        .collect()
}

/// Largest violation of the lasso optimality conditions for
/// `(1/2n)|Y - X theta|^2 + lambda sum_j w_j |theta_j|`.
pub fn lasso_kkt_residual(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, lambda: f64, weights: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let r = y - x * theta;
    let g = x.tr_mul(&r) / n;
    kkt_from_gradient(&g, theta, lambda, weights)
}

fn kkt_from_gradient(g: &DVector<f64>, theta: &DVector<f64>, lambda: f64, weights: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() {
        let t = lambda * weights[j];
        let v = if theta[j] == 0.0 {
            (g[j].abs() - t).max(0.0)
        } else {
            (g[j] - t * theta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Cyclic coordinate descent with a maintained residual.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &LassoOptions) -> Result<FitResult> {
    lasso_cd_warm(x, y, lambda, opts, None)
}

pub fn lasso_cd_warm(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidLambda(lambda));
    }
    check_xy(x, y)?;
    let (n, p) = x.shape();
    let nf = n as f64;
    let weights = lasso_weights(x, opts.standardize);
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() / nf).collect();
    let mut theta = match start {
        Some(s) if s.len() == p => s.clone(),
        _ => DVector::zeros(p),
    };
    let mut r = y - x * &theta;
    let method = Method::Lasso { lambda };

    let mut kkt = f64::INFINITY;
    for sweep in 1..=opts.max_iter {
        for j in 0..p {
            if col_sq[j] == 0.0 {
                theta[j] = 0.0;
                continue;
            }
            let col = x.column(j);
            let old = theta[j];
            let z = col.dot(&r) / nf + col_sq[j] * old;
            let new = soft_threshold(z, lambda * weights[j]) / col_sq[j];
            if new != old {
                r.axpy(old - new, &col, 1.0);
                theta[j] = new;
            }
        }
        let g = x.tr_mul(&r) / nf;
        kkt = kkt_from_gradient(&g, &theta, lambda, &weights);
        if kkt <= opts.tol {
            return Ok(FitResult::new(x, y, theta, method, Some(sweep)));
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: opts.max_iter,
        kkt,
        last: Box::new(FitResult::new(x, y, theta, method, Some(opts.max_iter))),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    Error,
    /// Solve the second stage with the pseudoinverse instead.
    MinNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoIvOptions {
    /// Seed for the half split.
    pub seed: u64,
    /// Plug-in constant `c` in `lambda = c sigma_hat sqrt(2 log(2p) / n)`.
    pub penalty_constant: f64,
    pub lasso: LassoOptions,
    pub singular: SingularPolicy,
}

impl Default for LassoIvOptions {
    fn default() -> Self {
        LassoIvOptions {
            seed: 0,
            penalty_constant: 1.1,
            lasso: LassoOptions {
                tol: 1e-6,
                max_iter: 5_000,
                standardize: true,
            },
            singular: SingularPolicy::MinNorm,
        }
    }
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Lasso with the plug-in penalty, refitting once with the noise level
/// estimated from the first fit's residual.
pub fn plug_in_lasso(x: &DMatrix<f64>, y: &DVector<f64>, c: f64, opts: &LassoOptions) -> Result<FitResult> {
    let (n, p) = x.shape();
    let nf = n as f64;
    let rate = (2.0 * (2.0 * p.max(1) as f64).ln() / nf).sqrt();
    let mean = y.mean();
    let sd0 = (y.map(|v| v - mean).norm_squared() / nf).sqrt();
    let first = lasso_or_last(x, y, c * sd0 * rate, opts, None)?;
    let sd1 = (y - x * &first.theta_hat).norm() / nf.sqrt();
    lasso_or_last(x, y, c * sd1 * rate, opts, Some(&first.theta_hat))
}

fn lasso_or_last(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LassoOptions,
    start: Option<&DVector<f64>>,
) -> Result<FitResult> {
    match lasso_cd_warm(x, y, lambda, opts, start) {
        Err(Error::ConvergenceFailure { last, .. }) => Ok(*last),
        other => other,
    }
}

/// Split-sample lasso-IV.
///
/// Half 1 estimates the endogenous coefficients by two-stage least squares:
/// each endogenous column is regressed on the instruments selected by a
/// plug-in lasso (post-lasso refit), then `Y` is regressed on the fitted columns. Half 2 regresses
/// `Y - X_endo beta_hat` on the exogenous columns by plug-in lasso.
pub fn split_sample_lasso_iv(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    instruments: &DMatrix<f64>,
    endo_idx: &[usize],
    opts: &LassoIvOptions,
) -> Result<FitResult> {
    check_xy(x, y)?;
    let (n, p) = x.shape();
    if instruments.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "instruments have {} rows, X has {n}",
            instruments.nrows()
        )));
    }
    if endo_idx.iter().any(|&j| j >= p) {
        return Err(Error::DimensionMismatch("endogenous index out of range".into()));
    }
    if 2 * endo_idx.len() >= n {
        return Err(Error::InvalidData(format!(
            "{} endogenous columns need more than {} observations",
            endo_idx.len(),
            2 * endo_idx.len()
        )));
    }
    let mut is_endo = vec![false; p];
    for &j in endo_idx {
        is_endo[j] = true;
    }
    let exo_idx: Vec<usize> = (0..p).filter(|&j| !is_endo[j]).collect();

    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut ChaCha20Rng::seed_from_u64(opts.seed));
    let (h1, h2) = rows.split_at(n / 2);
    let mut h1 = h1.to_vec();
    let mut h2 = h2.to_vec();
    h1.sort_unstable();
    h2.sort_unstable();

    let mut theta = DVector::zeros(p);
    let mut y2 = select_entries(y, &h2);
    let x2 = select_rows(x, &h2);

    if !endo_idx.is_empty() {
        let z1 = select_rows(instruments, &h1);
        let x1 = select_rows(x, &h1);
        let y1 = select_entries(y, &h1);
        let mut fitted = DMatrix::zeros(h1.len(), endo_idx.len());
        for (c, &j) in endo_idx.iter().enumerate() {
            let d = x1.column(j).clone_owned();
            let first = plug_in_lasso(&z1, &d, opts.penalty_constant, &opts.lasso)?;
            fitted.set_column(c, &post_lasso_fit(&z1, &d, &first.theta_hat)?);
        }
        let beta = second_stage(&fitted, &y1, opts.singular)?;
        for (c, &j) in endo_idx.iter().enumerate() {
            theta[j] = beta[c];
        }
        y2 -= select_cols(&x2, endo_idx) * &beta;
    }

    if !exo_idx.is_empty() {
        let xe = select_cols(&x2, &exo_idx);
        let fit = plug_in_lasso(&xe, &y2, opts.penalty_constant, &opts.lasso)?;
        for (c, &j) in exo_idx.iter().enumerate() {
            theta[j] = fit.theta_hat[c];
        }
    }
    Ok(FitResult::new(x, y, theta, Method::LassoIv, None))
}

/// Fitted values of least squares restricted to the lasso support.
fn post_lasso_fit(z: &DMatrix<f64>, d: &DVector<f64>, lasso_theta: &DVector<f64>) -> Result<DVector<f64>> {
    let support: Vec<usize> = (0..lasso_theta.len()).filter(|&j| lasso_theta[j] != 0.0).collect();
    if support.is_empty() {
        return Ok(DVector::zeros(z.nrows()));
    }
    let zs = select_cols(z, &support);
    let coef = second_stage(&zs, d, SingularPolicy::MinNorm)?;
    Ok(zs * coef)
}

/// `(D^T D)^{-1} D^T Y`, or the pseudoinverse version under `MinNorm`.
fn second_stage(d: &DMatrix<f64>, y: &DVector<f64>, policy: SingularPolicy) -> Result<DVector<f64>> {
    let gram = SymMatrix::symmetrize(d.tr_mul(d));
    let rhs = d.tr_mul(y);
    let eig = sym_eig(&gram)?;
    let lmax = eig.max_value();
    let lmin = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    let singular = !(lmax > 0.0) || lmin <= crate::matops::default_rel_tol(gram.dim()) * lmax;
    match (singular, policy) {
        (true, SingularPolicy::Error) => Err(Error::SingularDesign(format!(
            "second-stage Gram matrix has eigenvalues in [{lmin:e}, {lmax:e}]"
        ))),
        (true, SingularPolicy::MinNorm) => Ok(pseudoinverse_default(&gram)?.mul_vec(&rhs)),
        (false, _) => Ok(eig.map(|v| 1.0 / v).mul_vec(&rhs)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn single_row_interpolator() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let fit = min_norm_interpolator(&x, &DVector::from_vec(vec![3.0])).unwrap();
        assert!((fit.theta_hat - DVector::from_vec(vec![3.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn identity_design() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = DMatrix::identity(3, 3);
        let fit = min_norm_interpolator(&x, &y).unwrap();
        assert!((&fit.theta_hat - &y).amax() < 1e-14);
        let r = ridge(&x, &y, 0.5).unwrap();
        assert!((r.theta_hat - &y / 2.5).amax() < 1e-14);
    }

    #[test]
    fn ridge_limits() {
        let x = gaussian(5, 12, 1);
        let y = DVector::from_fn(5, |i, _| i as f64 - 1.5);
        let mn = min_norm_interpolator(&x, &y).unwrap().theta_hat;
        let r = ridge(&x, &y, 1e-10).unwrap().theta_hat;
        assert!((&r - &mn).norm() <= 1e-6 * mn.norm());
        let big = ridge(&x, &y, 1e12).unwrap().theta_hat;
        assert!(big.norm() < 1e-9);
        assert!(matches!(ridge(&x, &y, 0.0), Err(Error::InvalidLambda(_))));
    }

    #[test]
    fn non_finite_rejected() {
        let mut x = gaussian(2, 3, 2);
        x[(0, 0)] = f64::NAN;
        let y = DVector::zeros(2);
        assert!(matches!(min_norm_interpolator(&x, &y), Err(Error::InvalidData(_))));
    }

    #[test]
    fn lasso_zero_penalty_is_least_squares() {
        let x = gaussian(40, 5, 3);
        let y = DVector::from_fn(40, |i, _| (i as f64).sin());
        let fit = lasso_cd(&x, &y, 0.0, &LassoOptions { tol: 1e-12, max_iter: 100_000, standardize: false }).unwrap();
        let ols = (x.transpose() * &x).cholesky().unwrap().solve(&x.tr_mul(&y));
        assert!((fit.theta_hat - ols).amax() < 1e-9);
    }

    #[test]
    fn lasso_full_shrinkage() {
        let x = gaussian(30, 8, 4);
        let y = DVector::from_fn(30, |i, _| (i as f64).cos());
        let lmax = x.tr_mul(&y).amax() / 30.0;
        let fit = lasso_cd(&x, &y, lmax * 1.0001, &LassoOptions::default()).unwrap();
        assert_eq!(fit.theta_hat.amax(), 0.0);
    }

    #[test]
    fn lasso_orthogonal_design_soft_thresholds() {
        // Columns of a scaled orthogonal matrix: X^T X = n I.
        let n = 16;
        let q = gaussian(n, 4, 5).qr().q();
        let x = q * (n as f64).sqrt();
        let y = DVector::from_fn(n, |i, _| (i as f64 * 0.7).sin() * 3.0);
        let lambda = 0.3;
        let fit = lasso_cd(&x, &y, lambda, &LassoOptions { tol: 1e-12, ..Default::default() }).unwrap();
        let z = x.tr_mul(&y) / n as f64;
        let expect = z.map(|v| soft_threshold(v, lambda));
        assert!((fit.theta_hat - expect).amax() < 1e-10);
    }

    #[test]
    fn lasso_convergence_failure_carries_iterate() {
        let x = gaussian(20, 30, 6);
        let y = DVector::from_fn(20, |i, _| i as f64);
        let opts = LassoOptions { tol: 1e-14, max_iter: 1, standardize: false };
        match lasso_cd(&x, &y, 1e-3, &opts) {
            Err(Error::ConvergenceFailure { iterations, last, .. }) => {
                assert_eq!(iterations, 1);
                assert_eq!(last.theta_hat.len(), 30);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn standardized_lasso_satisfies_weighted_kkt() {
        let mut x = gaussian(50, 20, 7);
        for j in 0..20 {
            x.column_mut(j).scale_mut(1.0 + j as f64);
        }
        let y = x.column(3) * 0.5 + x.column(10) * 0.1;
        let opts = LassoOptions { tol: 1e-9, max_iter: 50_000, standardize: true };
        let fit = lasso_cd(&x, &y, 0.05, &opts).unwrap();
        let w = lasso_weights(&x, true);
        assert!(lasso_kkt_residual(&x, &y, &fit.theta_hat, 0.05, &w) <= 1e-9);
    }

    #[test]
    fn lasso_iv_without_endogeneity_is_half_sample_lasso() {
        let x = gaussian(60, 10, 8);
        let y = x.column(0) * 2.0;
        let opts = LassoIvOptions { seed: 3, ..Default::default() };
        let fit = split_sample_lasso_iv(&x, &y, &x, &[], &opts).unwrap();
        let mut rows: Vec<usize> = (0..60).collect();
        rows.shuffle(&mut ChaCha20Rng::seed_from_u64(3));
        let mut h2 = rows[30..].to_vec();
        h2.sort_unstable();
        let direct = plug_in_lasso(&select_rows(&x, &h2), &select_entries(&y, &h2), 1.1, &opts.lasso).unwrap();
        assert_eq!(fit.theta_hat, direct.theta_hat);
        let again = split_sample_lasso_iv(&x, &y, &x, &[], &opts).unwrap();
        assert_eq!(fit.theta_hat, again.theta_hat);
    }

    #[test]
    fn lasso_iv_recovers_strong_instrument_coefficient() {
        let n = 400;
        let z = gaussian(n, 6, 9);
        let u = gaussian(n, 1, 10);
        let e = gaussian(n, 1, 11);
        let mut x = gaussian(n, 6, 12);
        // Column 0 is endogenous: driven by instrument 0 and by u, which also enters the noise.
        for i in 0..n {
            x[(i, 0)] = z[(i, 0)] + u[(i, 0)];
        }
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + 0.8 * u[(i, 0)] + 0.3 * e[(i, 0)]);
        let fit = split_sample_lasso_iv(&x, &y, &z, &[0], &LassoIvOptions::default()).unwrap();
        assert!((fit.theta_hat[0] - 1.5).abs() < 0.25, "{}", fit.theta_hat[0]);
    }

    #[test]
    fn singular_second_stage_policy() {
        let d = DMatrix::from_column_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(second_stage(&d, &y, SingularPolicy::Error), Err(Error::SingularDesign(_))));
        assert!(second_stage(&d, &y, SingularPolicy::MinNorm).is_ok());
    }
}
