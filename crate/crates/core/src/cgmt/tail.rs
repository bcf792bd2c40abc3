//! Monte Carlo tail comparison `P(Phi > c) <= 2 P(phi >= c)` and the
//! distributional check between direct sampling and the latent factors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ao::{solve_ao, AoOptions};
use super::po::{max_projected_risk, solve_po, PoInstance};
use crate::covariance::{
    assemble_model, spectrum, split_orthogonal, DimRule, EndogeneityModel, EndogeneityRule, Rotation, Shape,
    SigmaRule, SpectrumProfile, VectorRule,
};
use crate::error::{Error, Result};
use crate::matops::{psd_sqrt, SymMatrix};
use crate::sampling::{rep_rng, rep_seed, sample_dataset, InstrumentDist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailConfig {
    pub n: usize,
    /// `rank(Xi_z)`
    pub p1: usize,
    /// `rank(Sigma_u)`
    pub p2: usize,
    pub reps: usize,
    /// Number of thresholds when `c_grid` is empty; placed at empirical quantiles of `Phi`.
    pub c_points: usize,
    pub c_grid: Vec<f64>,
    /// Ball radius as a multiple of `|theta0|`.
    pub ball_factor: f64,
    pub seed: u64,
    pub ao: AoOptions,
}

impl Default for TailConfig {
    fn default() -> Self {
        TailConfig {
            n: 3,
            p1: 2,
            p2: 2,
            reps: 10_000,
            c_points: 20,
            c_grid: Vec::new(),
            ball_factor: 1.25,
            seed: 20240601,
            ao: AoOptions {
                grid_points: 41,
                ..AoOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub c_grid: Vec<f64>,
    pub p_phi_gt: Vec<f64>,
    pub p_phi_ao_ge: Vec<f64>,
    pub stderr_po: Vec<f64>,
    pub stderr_ao: Vec<f64>,
    pub violations: usize,
    pub reps: usize,
    pub po_infeasible: usize,
    pub ao_empty: usize,
}

/// A small model with the setup (i) spectrum: the top `p2` eigenvalues form
/// `Sigma_u`, the next `p1` form `Xi_z`.
pub fn slice_model(p1: usize, p2: usize) -> Result<EndogeneityModel> {
    let p = p1 + p2;
    let profile = SpectrumProfile {
        dim: DimRule::Fixed { p },
        ..SpectrumProfile::setup_log_poly()
    };
    let (p, base) = spectrum(&profile, 1)?;
    let cov = split_orthogonal(&base, &Rotation::Identity(p), p2)?;
    let endo = if p2 == 0 {
        EndogeneityRule::Exogenous
    } else {
        EndogeneityRule::RotatedRho {
            rho: VectorRule::new(Shape::Harmonic { scale: 2.0 }),
        }
    };
    let sigma = if p2 == 0 { SigmaRule::Fixed { sigma: 1.0 } } else { SigmaRule::default() };
    assemble_model(cov, &VectorRule::new(Shape::InvSqrt { scale: 20.0 }), &endo, sigma, 1)
}

fn stderr(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// Empirical quantiles of the finite values at levels `(k + 1) / (m + 1)`.
fn quantile_grid(values: &[f64], m: usize) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Vec::new();
    }
    v.sort_by(f64::total_cmp);
    (0..m)
        .map(|k| {
            let idx = ((k + 1) as f64 / (m + 1) as f64 * (v.len() - 1) as f64).round() as usize;
            v[idx]
        })
        .collect()
}

/// Per repetition `(Phi, phi, ao_empty)`; an infeasible primary problem gives `Phi = -inf`.
pub fn tail_samples(model: &EndogeneityModel, cfg: &TailConfig) -> Result<Vec<(f64, f64, bool)>> {
    let xi_z = model.cov.xi_z().clone();
    let sigma_u = model.cov.sigma_u().clone();
    let radius = cfg.ball_factor * model.theta0.norm();
    let p = model.p();
    (0..cfg.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = sample_dataset(model, cfg.n, rep_seed(cfg.seed, rep, 0), InstrumentDist::Gaussian)?;
            let inst = PoInstance::new(data.w1, data.w2, data.xi, radius, model.theta0.clone(), xi_z.clone(), sigma_u.clone())?;
            let big_phi = match solve_po(&inst) {
                Ok(s) => s.value,
                Err(Error::NoFeasiblePoint(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            let mut rng = rep_rng(cfg.seed, rep, 1);
            let g = DVector::from_fn(cfg.n, |_, _| StandardNormal.sample(&mut rng));
            let h = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let opts = AoOptions {
                seed: rep_seed(cfg.seed, rep, 2),
                ..cfg.ao
            };
            let ao = solve_ao(&inst, &g, &h, &opts)?;
            Ok((big_phi, ao.value, ao.feasible_empty))
        })
        .collect()
}

pub fn tail_report(samples: &[(f64, f64, bool)], c_grid: &[f64]) -> TailReport {
    let reps = samples.len();
    let mut report = TailReport {
        c_grid: c_grid.to_vec(),
        p_phi_gt: Vec::new(),
        p_phi_ao_ge: Vec::new(),
        stderr_po: Vec::new(),
        stderr_ao: Vec::new(),
        violations: 0,
        reps,
        po_infeasible: samples.iter().filter(|s| s.0 == f64::NEG_INFINITY).count(),
        ao_empty: samples.iter().filter(|s| s.2).count(),
    };
    for &c in c_grid {
        let po = samples.iter().filter(|s| s.0 > c).count() as f64 / reps as f64;
        let ao = samples.iter().filter(|s| !s.2 && s.1 >= c).count() as f64 / reps as f64;
        let (se_po, se_ao) = (stderr(po, reps), stderr(ao, reps));
        if po > 2.0 * ao + 3.0 * (se_po + 2.0 * se_ao) {
            report.violations += 1;
        }
        report.p_phi_gt.push(po);
        report.p_phi_ao_ge.push(ao);
        report.stderr_po.push(se_po);
        report.stderr_ao.push(se_ao);
    }
    report
}

pub fn tail_dominance_check(cfg: &TailConfig) -> Result<TailReport> {
    if cfg.reps == 0 || cfg.n == 0 || cfg.p1 == 0 {
        return Err(Error::InvalidConfig("tail check needs reps, n and p1 at least 1".into()));
    }
    let model = slice_model(cfg.p1, cfg.p2)?;
    let samples = tail_samples(&model, cfg)?;
    let grid = if cfg.c_grid.is_empty() {
        let phis: Vec<f64> = samples.iter().map(|s| s.0).collect();
        quantile_grid(&phis, cfg.c_points)
    } else {
        cfg.c_grid.clone()
    };
    Ok(tail_report(&samples, &grid))
}

pub fn write_tail_csv(report: &TailReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["c", "p_po_gt", "p_ao_ge", "stderr_po", "stderr_ao", "violation"])?;
    for i in 0..report.c_grid.len() {
        let (po, ao) = (report.p_phi_gt[i], report.p_phi_ao_ge[i]);
        let (spo, sao) = (report.stderr_po[i], report.stderr_ao[i]);
        let bad = po > 2.0 * ao + 3.0 * (spo + 2.0 * sao);
        w.write_record([
            report.c_grid[i].to_string(),
            po.to_string(),
            ao.to_string(),
            spo.to_string(),
            sao.to_string(),
            bad.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov statistic; `-inf` entries are ordinary values.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { 1.0 };
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let v = if x[i].total_cmp(&y[j]).is_le() { x[i] } else { y[j] };
        while i < x.len() && x[i].total_cmp(&v).is_le() {
            i += 1;
        }
        while j < y.len() && y[j].total_cmp(&v).is_le() {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub ks: f64,
    pub reps: usize,
    pub direct_infeasible: usize,
    pub latent_infeasible: usize,
}

/// Max-over-ball projected risk from data drawn directly from the joint law of
/// `(x, xi)`, against the same quantity built from the latent factors.
pub fn latent_representation_check(model: &EndogeneityModel, n: usize, reps: usize, ball_factor: f64, seed: u64) -> Result<KsReport> {
    let p = model.p();
    let mut joint = DMatrix::zeros(p + 1, p + 1);
    joint.view_mut((0, 0), (p, p)).copy_from(model.cov.sigma_x().as_matrix());
    for i in 0..p {
        joint[(i, p)] = model.omega[i];
        joint[(p, i)] = model.omega[i];
    }
    joint[(p, p)] = model.sigma2;
    let factor = psd_sqrt(&SymMatrix::symmetrize(joint))?;
    let xi_z = model.cov.xi_z().clone();
    let sigma_u = model.cov.sigma_u().clone();
    let radius = ball_factor * model.theta0.norm();
    let to_value = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::NoFeasiblePoint(_)) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(e),
    };
    let pairs = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rep_rng(seed, rep, 3);
            let z = DMatrix::from_fn(p + 1, n, |_, _| StandardNormal.sample(&mut rng));
            let rows = (factor.as_matrix() * z).transpose();
            let x = rows.columns(0, p).clone_owned();
            let xi = rows.column(p).clone_owned();
            let direct = to_value(max_projected_risk(&x, &xi, &model.theta0, &xi_z, radius).map(|s| s.value))?;
            let data = sample_dataset(model, n, rep_seed(seed, rep, 4), InstrumentDist::Gaussian)?;
            let inst = PoInstance::new(data.w1, data.w2, data.xi, radius, model.theta0.clone(), xi_z.clone(), sigma_u.clone())?;
            let latent = to_value(solve_po(&inst).map(|s| s.value))?;
            Ok((direct, latent))
        })
        .collect::<Result<Vec<_>>>()?;
    let (direct, latent): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(KsReport {
        ks: ks_distance(&direct, &latent),
        reps,
        direct_infeasible: direct.iter().filter(|v| **v == f64::NEG_INFINITY).count(),
        latent_infeasible: latent.iter().filter(|v| **v == f64::NEG_INFINITY).count(),
    })
}
