//! Draws `(X, Y, xi)` from the latent-factor representation
//! `X = W1 Xi_z^{1/2} + W2 Sigma_u^{1/2}`, `xi = W2 rho + sigma_tilde g`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::EndogeneityModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InstrumentDist {
    #[default]
    Gaussian,
    /// Multivariate t with identity covariance (variance-matched).
    StudentT { dof: f64 },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub xi: DVector<f64>,
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub seed: u64,
    pub model_id: String,
}

/// Generator for repetition `rep` of a run seeded with `base_seed`.
///
/// The seed is `base_seed ^ rep` and the ChaCha stream is `stream`, so
/// different sample sizes (passed as `stream`) never share a keystream.
pub fn rep_rng(base_seed: u64, rep: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(base_seed ^ rep);
    rng.set_stream(stream);
    rng
}

/// Seed for repetition `rep`, drawn from [`rep_rng`].
pub fn rep_seed(base_seed: u64, rep: u64, stream: u64) -> u64 {
    rep_rng(base_seed, rep, stream).random()
}

fn check_dof(dof: f64) -> Result<()> {
    if dof > 2.0 && dof.is_finite() {
        Ok(())
    } else {
        Err(Error::InfiniteVariance(dof))
    }
}

fn standard_normal_matrix<R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<f64> {
    // Filled row by row so the draw order does not depend on the storage layout.
    let mut m = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Scales row `i` of `z` by `sqrt((dof - 2) / chi2_i)`, turning Gaussian rows
/// into multivariate t rows with the same (identity) covariance.
fn studentize_rows<R: Rng>(rng: &mut R, z: &mut DMatrix<f64>, dof: f64) -> Result<()> {
    let chi = ChiSquared::new(dof).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    for i in 0..z.nrows() {
        let c: f64 = chi.sample(rng);
        let s = ((dof - 2.0) / c).sqrt();
        z.row_mut(i).scale_mut(s);
    }
    Ok(())
}

/// `n` rows `cov_factor * t_i` where `t_i` is multivariate t with identity covariance.
pub fn sample_mvt(dof: f64, cov_factor: &DMatrix<f64>, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_dof(dof)?;
    if cov_factor.nrows() != cov_factor.ncols() {
        return Err(Error::DimensionMismatch("covariance factor must be square".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut t = standard_normal_matrix(&mut rng, n, cov_factor.ncols());
    studentize_rows(&mut rng, &mut t, dof)?;
    Ok(t * cov_factor.transpose())
}

/// Draws `n` observations. Draw order: `W1`, `W2`, `g`, then the chi-square
/// row scales for t instruments, so the Gaussian and t variants share `W2` and `g`.
pub fn sample_dataset(model: &EndogeneityModel, n: usize, seed: u64, dist: InstrumentDist) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("sample size must be at least 1".into()));
    }
    if let InstrumentDist::StudentT { dof } = dist {
        check_dof(dof)?;
    }
    let p = model.p();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut w1 = standard_normal_matrix(&mut rng, n, p);
    let w2 = standard_normal_matrix(&mut rng, n, p);
    let g: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    if let InstrumentDist::StudentT { dof } = dist {
        studentize_rows(&mut rng, &mut w1, dof)?;
    }

    let x = latent_to_design(model, &w1, &w2);
    let xi = &w2 * &model.rho + g * model.sigma_tilde2.max(0.0).sqrt();
    let y = &x * &model.theta0 + &xi;
    Ok(Dataset {
        x,
        y,
        xi,
        w1,
        w2,
        seed,
        model_id: model.id.clone(),
    })
}

/// `W1 Xi_z^{1/2} + W2 Sigma_u^{1/2}` using the shared eigenbasis.
pub fn latent_to_design(model: &EndogeneityModel, w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> DMatrix<f64> {
    let cov = &model.cov;
    let sz: Vec<f64> = cov.xi_z_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    let su: Vec<f64> = cov.sigma_u_eigenvalues().iter().map(|v| v.max(0.0).sqrt()).collect();
    let rot = cov.rotation();
    if let (Some(dz), Some(du)) = (rot.ambient_diagonal(&sz), rot.ambient_diagonal(&su)) {
        let mut x = w1.clone();
        for j in 0..x.ncols() {
            let mut col = x.column_mut(j);
            col.scale_mut(dz[j]);
            col.axpy(du[j], &w2.column(j), 1.0);
        }
        return x;
    }
    let q = rot.eigenvectors();
    let mut a = w1 * &q;
    let b = w2 * &q;
    for j in 0..a.ncols() {
        let mut col = a.column_mut(j);
        col.scale_mut(sz[j]);
        col.axpy(su[j], &b.column(j), 1.0);
    }
    a * q.transpose()
}

/// Writes the dataset as CSV with header `x1..xp,y,xi`.
pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let p = data.x.ncols();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    header.push("xi".into());
    w.write_record(&header)?;
    for i in 0..data.x.nrows() {
        let mut row: Vec<String> = (0..p).map(|j| data.x[(i, j)].to_string()).collect();
        row.push(data.y[i].to_string());
        row.push(data.xi[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Byte serialization of every field, used to compare datasets exactly.
pub fn dataset_bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for m in [&data.x, &data.w1, &data.w2] {
        for v in m.iter() {
            out.write_all(&v.to_le_bytes()).unwrap();
        }
    }
    for v in data.y.iter().chain(data.xi.iter()) {
        out.write_all(&v.to_le_bytes()).unwrap();
    }
    out
}
