//! Projected risk, effective ranks, closed-form bounds and the sufficient
//! conditions for benign overfitting, evaluated along a grid of sample sizes.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{
    assemble_model, spectrum, split_nonorthogonal, split_orthogonal, truncation_level, DimRule, EndogeneityModel,
    EndogeneityRule, Rotation, Shape, SigmaRule, SpectrumProfile, SpectrumShape, VectorRule,
};
use crate::error::{Error, Result};
use crate::matops::{psd_sqrt, sym_eig, SymMatrix};

/// Default ceiling for the absolute constant in the high-probability risk bound.
pub const C1_CEILING: f64 = 32.0;
/// Default ceiling for the absolute constant in the norm bound.
pub const C2_CEILING: f64 = 160.0;

/// `(theta - theta0)^T Xi_z (theta - theta0)`.
pub fn projected_rmse(theta: &DVector<f64>, theta0: &DVector<f64>, xi_z: &SymMatrix) -> f64 {
    let d = theta - theta0;
    xi_z.quad_form(&d).max(0.0)
}

/// Projected RMSE evaluated in the model's eigenbasis, without a dense `Xi_z`.
pub fn projected_rmse_model(model: &EndogeneityModel, theta: &DVector<f64>) -> f64 {
    let c = model.cov.rotation().to_eigen(&(theta - &model.theta0));
    c.iter().zip(model.cov.xi_z_eigenvalues()).map(|(v, l)| l * v * v).sum::<f64>().max(0.0)
}

/// `r = tr / |.|_op` and `R = tr^2 / tr(S^2)` from eigenvalues.
pub fn effective_ranks_spectral(values: &[f64]) -> Result<(f64, f64)> {
    let tr: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if !(tr > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let top = values.iter().copied().fold(0.0, f64::max);
    let sq: f64 = values.iter().map(|v| v.max(0.0).powi(2)).sum();
    Ok((tr / top, tr * tr / sq))
}

pub fn effective_ranks(sigma: &SymMatrix) -> Result<(f64, f64)> {
    let eig = sym_eig(sigma)?;
    let cutoff = crate::matops::default_rel_tol(sigma.dim()) * eig.max_value();
    if eig.values.iter().any(|&v| v < -cutoff) {
        return Err(Error::NotPsd {
            min_eig: eig.values.iter().copied().fold(f64::INFINITY, f64::min),
            cutoff,
        });
    }
    effective_ranks_spectral(eig.values.as_slice())
}

/// A norm given through its dual and a subgradient selector.
pub trait CustomNorm: Sync {
    /// `|u|_*`
    fn dual_norm(&self, u: &DVector<f64>) -> f64;
    /// `sup_{|u| <= 1} |u|_Sigma`
    fn sup_sigma_norm(&self, sigma: &SymMatrix) -> f64;
    /// `argmin_{v in d|u|_*} |v|_Sigma`, if the norm provides one.
    fn min_sigma_subgradient(&self, _u: &DVector<f64>, _sigma: &SymMatrix) -> Option<DVector<f64>> {
        None
    }
}

#[derive(Clone, Copy)]
pub enum NormKind<'a> {
    L2,
    L1,
    Custom(&'a dyn CustomNorm),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRanks {
    pub r: f64,
    pub big_r: f64,
    pub r_stderr: f64,
    pub big_r_stderr: f64,
}

/// Monte Carlo estimates of the norm-based effective ranks
/// `r = (E|S^{1/2}H|_* / sup_{|u|<=1}|u|_S)^2` and `R = (E|S^{1/2}H|_* / E|v*|_S)^2`,
/// with delta-method standard errors.
pub fn norm_effective_ranks(sigma: &SymMatrix, norm: NormKind<'_>, mc_samples: usize, seed: u64) -> Result<NormRanks> {
    if mc_samples < 2 {
        return Err(Error::InvalidConfig("need at least two Monte Carlo samples".into()));
    }
    let d = sigma.dim();
    let half = psd_sqrt(sigma)?;
    let sup = match norm {
        NormKind::L2 => sym_eig(sigma)?.max_value().max(0.0).sqrt(),
        NormKind::L1 => (0..d).map(|j| sigma.as_matrix()[(j, j)].max(0.0).sqrt()).fold(0.0, f64::max),
        NormKind::Custom(c) => c.sup_sigma_norm(sigma),
    };
    if !(sup > 0.0) {
        return Err(Error::ZeroMatrix);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(mc_samples);
    let mut b = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        let h = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let u = half.mul_vec(&h);
        let (dual, vnorm) = match norm {
            NormKind::L2 => {
                let nu = u.norm();
                let v = if nu > 0.0 { sigma.quad_form(&u).max(0.0).sqrt() / nu } else { 0.0 };
                (nu, v)
            }
            NormKind::L1 => {
                let mut best = 0;
                for j in 1..d {
                    if u[j].abs() > u[best].abs() {
                        best = j;
                    }
                }
                (u[best].abs(), sigma.as_matrix()[(best, best)].max(0.0).sqrt())
            }
            NormKind::Custom(c) => {
                let v = c.min_sigma_subgradient(&u, sigma).ok_or(Error::MissingSelector)?;
                (c.dual_norm(&u), sigma.quad_form(&v).max(0.0).sqrt())
            }
        };
        a.push(dual);
        b.push(vnorm);
    }
    let m = mc_samples as f64;
    let ma = a.iter().sum::<f64>() / m;
    let mb = b.iter().sum::<f64>() / m;
    let var_a = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (m - 1.0);
    let var_b = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (m - 1.0);
    let cov_ab = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (m - 1.0);
    let r = (ma / sup).powi(2);
    let r_stderr = 2.0 * ma / (sup * sup) * (var_a / m).sqrt();
    let big_r = (ma / mb).powi(2);
    let ga = 2.0 * ma / (mb * mb);
    let gb = -2.0 * ma * ma / (mb * mb * mb);
    let var_r = (ga * ga * var_a + gb * gb * var_b + 2.0 * ga * gb * cov_ab) / m;
    Ok(NormRanks {
        r,
        big_r,
        r_stderr,
        big_r_stderr: var_r.max(0.0).sqrt(),
    })
}

/// `sigma^2 - omega^T Sigma_u^+ omega`.
pub fn sigma_tilde2(model: &EndogeneityModel) -> Result<f64> {
    let w = model.omega_eigen();
    let lu = model.cov.sigma_u_eigenvalues();
    let range = model.cov.sigma_u_range();
    let q: f64 = (0..model.p())
        .filter(|&i| range[i])
        .map(|i| w[i] * w[i] / lu[i])
        .sum();
    let s = model.sigma2 - q;
    if s < -1e-10 {
        return Err(Error::ModelInconsistent(format!("sigma_tilde^2 = {s:e} is negative")));
    }
    Ok(s.max(0.0))
}

/// Spectral summaries of a model that every bound and condition uses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSummary {
    pub n: usize,
    pub rank_sigma_u: usize,
    pub trace_xi_z: f64,
    pub r_xi_z: f64,
    pub big_r_xi_z: f64,
    pub trace_xi_z_sq: f64,
    pub trace_cross: f64,
    pub theta0_norm: f64,
    /// `|Sigma_u^+ omega|_2`
    pub endo_norm: f64,
    /// `omega^T Sigma_u^+ Xi_z Sigma_u^+ omega`
    pub mixed: f64,
    pub sigma: f64,
    pub sigma_tilde: f64,
}

pub fn summarize(model: &EndogeneityModel, n: usize) -> Result<ModelSummary> {
    let cov = &model.cov;
    let (r, big_r) = effective_ranks_spectral(cov.xi_z_eigenvalues())?;
    let a = model.sigma_u_pinv_omega_eigen();
    let mixed: f64 = a.iter().zip(cov.xi_z_eigenvalues()).map(|(v, l)| l * v * v).sum();
    Ok(ModelSummary {
        n,
        rank_sigma_u: cov.rank_sigma_u(),
        trace_xi_z: cov.trace_xi_z(),
        r_xi_z: r,
        big_r_xi_z: big_r,
        trace_xi_z_sq: cov.trace_xi_z_sq(),
        trace_cross: cov.trace_cross(),
        theta0_norm: model.theta0.norm(),
        endo_norm: a.norm(),
        mixed,
        sigma: model.sigma(),
        sigma_tilde: sigma_tilde2(model)?.sqrt(),
    })
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `sqrt(log(1/delta)) (1/sqrt(r(Xi_z)) + sqrt(rank(Sigma_u)/n) + n/R(Xi_z))`.
pub fn eta_delta(model: &EndogeneityModel, n: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let s = summarize(model, n)?;
    Ok(eta_from_summary(&s, delta))
}

fn eta_from_summary(s: &ModelSummary, delta: f64) -> f64 {
    let nf = s.n as f64;
    (1.0 / delta).ln().sqrt() * (1.0 / s.r_xi_z.sqrt() + (s.rank_sigma_u as f64 / nf).sqrt() + nf / s.big_r_xi_z)
}

/// `psi(t) = t + t^2`.
pub fn psi(t: f64) -> f64 {
    t + t * t
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub delta: f64,
    pub gamma_delta: Option<f64>,
    pub eta_delta: f64,
    pub epsilon: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    /// `(1 + gamma) B^2 tr(Xi_z)/n - sigma_tilde^2`
    pub rmse_bound: Option<f64>,
    /// `(1 + eta)(1 v sigma_tilde) psi((|Sigma_u^+ omega| + |theta0|) sqrt(tr(Xi_z)/n))`, up to an absolute constant.
    pub rmse_principal: f64,
    pub norm_bound: Option<f64>,
    /// Norm bound evaluated with unit constant.
    pub norm_principal: Option<f64>,
    /// Conditions under which the bounds are stated but which fail here.
    pub flags: Vec<String>,
    pub constants_used: BTreeMap<String, f64>,
}

fn principal_rmse(s: &ModelSummary, eta: f64) -> f64 {
    let t = (s.endo_norm + s.theta0_norm) * (s.trace_xi_z / s.n as f64).sqrt();
    (1.0 + eta) * s.sigma_tilde.max(1.0) * psi(t)
}

/// Risk bound over `{|theta| <= B, X theta = Y}` with constant `c1`, and the
/// constant-free principal part.
pub fn rmse_upper_bound(model: &EndogeneityModel, n: usize, delta: f64, b: f64, c1: f64) -> Result<BoundReport> {
    check_delta(delta)?;
    let s = summarize(model, n)?;
    let nf = n as f64;
    let l = (1.0 / delta).ln();
    let gamma = c1 * ((l / s.r_xi_z).sqrt() + (l / nf).sqrt() + (s.rank_sigma_u as f64 / nf).sqrt());
    let eta = eta_from_summary(&s, delta);
    let mut flags = Vec::new();
    if gamma > 1.0 {
        flags.push(format!("gamma = {gamma:.4} > 1"));
    }
    if b < s.theta0_norm {
        flags.push(format!("B = {b} < |theta0| = {}", s.theta0_norm));
    }
    let mut constants = BTreeMap::new();
    constants.insert("C1".into(), c1);
    constants.insert("B".into(), b);
    Ok(BoundReport {
        n,
        delta,
        gamma_delta: Some(gamma),
        eta_delta: eta,
        rmse_bound: Some((1.0 + gamma) * b * b * s.trace_xi_z / nf - s.sigma_tilde.powi(2)),
        rmse_principal: principal_rmse(&s, eta),
        flags,
        constants_used: constants,
        ..Default::default()
    })
}

struct NormPieces {
    epsilon: f64,
    eta1: f64,
    eta2: f64,
    bound: f64,
}

fn norm_pieces(s: &ModelSummary, delta: f64, c2: f64) -> NormPieces {
    let nf = s.n as f64;
    let l = (1.0 / delta).ln();
    let a = s.endo_norm;
    let ratio = a / s.sigma_tilde * (s.trace_xi_z / nf).sqrt();
    let epsilon = c2
        * ((s.rank_sigma_u as f64 / nf).sqrt()
            + (l / nf).sqrt()
            + (1.0 + ratio) * (l / s.r_xi_z).sqrt()
            + nf * l / s.big_r_xi_z * (1.0 + s.trace_cross / s.trace_xi_z_sq)
            + ratio);
    let eta1 = (nf / s.big_r_xi_z).sqrt() * s.mixed.sqrt();
    // (E|Xi_z^{1/2} H|)^2 <= tr(Xi_z).
    let widen = 1.0 + (2.0 * (8.0 / delta).ln() / s.r_xi_z).sqrt();
    let eta2 = (s.trace_xi_z / nf * widen * a * a + s.mixed).sqrt();
    let bound = s.theta0_norm
        + a
        + (1.0 + epsilon).sqrt() * (2.0 * eta1 + s.sigma_tilde + eta2) * (nf / s.trace_xi_z).sqrt();
    NormPieces {
        epsilon,
        eta1,
        eta2,
        bound,
    }
}

/// High-probability bound on `|theta_hat|_2` with constant `c2` in `epsilon`.
pub fn norm_upper_bound(model: &EndogeneityModel, n: usize, delta: f64, c2: f64) -> Result<BoundReport> {
    check_delta(delta)?;
    let s = summarize(model, n)?;
    if !(s.sigma_tilde > 0.0) {
        return Err(Error::DegenerateNoise(s.sigma_tilde.powi(2)));
    }
    let lit = norm_pieces(&s, delta, c2);
    let unit = norm_pieces(&s, delta, 1.0);
    let eta = eta_from_summary(&s, delta);
    let mut flags = Vec::new();
    if lit.epsilon > 1.0 {
        flags.push(format!("epsilon = {:.4} > 1", lit.epsilon));
    }
    let l = (1.0 / delta).ln();
    if s.big_r_xi_z < l * l {
        flags.push(format!("R(Xi_z) = {:.4} < log(1/delta)^2", s.big_r_xi_z));
    }
    let mut constants = BTreeMap::new();
    constants.insert("C2".into(), c2);
    Ok(BoundReport {
        n,
        delta,
        eta_delta: eta,
        epsilon: Some(lit.epsilon),
        eta1: Some(lit.eta1),
        eta2: Some(lit.eta2),
        rmse_principal: principal_rmse(&s, eta),
        norm_bound: Some(lit.bound),
        norm_principal: Some(unit.bound),
        flags,
        constants_used: constants,
        ..Default::default()
    })
}

/// Both bounds, using the literal norm bound as the radius `B` of the risk bound.
pub fn full_bounds(model: &EndogeneityModel, n: usize, delta: f64, c1: f64, c2: f64) -> Result<BoundReport> {
    let norm = norm_upper_bound(model, n, delta, c2)?;
    let b = norm.norm_bound.unwrap_or(f64::NAN).max(model.theta0.norm());
    let risk = rmse_upper_bound(model, n, delta, b, c1)?;
    let mut flags = risk.flags;
    flags.extend(norm.flags);
    let mut constants = risk.constants_used;
    constants.extend(norm.constants_used);
    Ok(BoundReport {
        gamma_delta: risk.gamma_delta,
        rmse_bound: risk.rmse_bound,
        flags,
        constants_used: constants,
        ..norm
    })
}

/// Principal part of the exogenous comparison bound,
/// `(1 + eta')(1 v sigma) psi(|theta0| sqrt(tr(Sigma_2)/n))`.
pub fn exogenous_principal_part(
    theta0_norm: f64,
    sigma: f64,
    sigma1_rank: usize,
    sigma2_eigs: &[f64],
    n: usize,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    let (r, big_r) = effective_ranks_spectral(sigma2_eigs)?;
    let nf = n as f64;
    let tr: f64 = sigma2_eigs.iter().sum();
    let eta = (1.0 / delta).ln().sqrt() * (1.0 / r.sqrt() + (sigma1_rank as f64 / nf).sqrt() + nf / big_r);
    Ok((1.0 + eta) * sigma.max(1.0) * psi(theta0_norm * (tr / nf).sqrt()))
}

pub fn write_bounds_csv(reports: &[BoundReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "n",
        "delta",
        "gamma_delta",
        "eta_delta",
        "epsilon",
        "eta1",
        "eta2",
        "rmse_bound",
        "rmse_principal",
        "norm_bound",
        "norm_principal",
        "flags",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        w.write_record([
            r.n.to_string(),
            r.delta.to_string(),
            opt(r.gamma_delta),
            r.eta_delta.to_string(),
            opt(r.epsilon),
            opt(r.eta1),
            opt(r.eta2),
            opt(r.rmse_bound),
            r.rmse_principal.to_string(),
            opt(r.norm_bound),
            opt(r.norm_principal),
            r.flags.join("; "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    Orthogonal,
    Nonorthogonal,
    Exogenous,
}

pub const SEQUENCE_NAMES: [&str; 7] = [
    "rank_ratio",
    "eff_dim",
    "aliasing",
    "endo",
    "endo_nonortho",
    "cross_rank",
    "mixed",
];

impl ConditionMode {
    pub fn sequences(&self) -> &'static [&'static str] {
        match self {
            ConditionMode::Orthogonal => &["rank_ratio", "eff_dim", "aliasing", "endo"],
            ConditionMode::Nonorthogonal => &["rank_ratio", "eff_dim", "aliasing", "endo_nonortho", "cross_rank", "mixed"],
            ConditionMode::Exogenous => &["rank_ratio", "eff_dim", "aliasing", "cross_rank"],
        }
    }
}

/// A family of models indexed by `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFamily {
    pub profile: SpectrumProfile,
    /// `None` for the orthogonal split, `Some(alpha)` for the shrunken one.
    pub alpha: Option<f64>,
    pub theta0: VectorRule,
    pub endogeneity: EndogeneityRule,
    pub sigma: SigmaRule,
}

impl ConditionFamily {
    /// Log-polynomial spectrum, `p = 5n`, omega decaying like the spectrum.
    pub fn example1() -> Self {
        ConditionFamily {
            profile: SpectrumProfile::setup_log_poly(),
            alpha: None,
            theta0: VectorRule::new(Shape::InvSqrt { scale: 20.0 }),
            endogeneity: EndogeneityRule::EigenOmega {
                omega: VectorRule::new(Shape::LogPoly { scale: 2.0, beta: 2.0 }),
            },
            sigma: SigmaRule::default(),
        }
    }

    /// Exponential spectrum plus a flat floor, `p = n^{3/2}`.
    pub fn example2() -> Self {
        ConditionFamily {
            profile: SpectrumProfile::setup_exp_plus_noise(),
            alpha: None,
            theta0: VectorRule::new(Shape::InvSqrt { scale: 20.0 }),
            endogeneity: EndogeneityRule::EigenOmega {
                omega: VectorRule::new(Shape::ExpDecay { scale: 3.0, rate: 2.0 }),
            },
            sigma: SigmaRule::default(),
        }
    }

    /// The Example 1 base with the shrunken split, `alpha = 2`.
    pub fn example3() -> Self {
        ConditionFamily {
            alpha: Some(2.0),
            ..Self::example1()
        }
    }

    /// Identity covariance with fixed dimension; the conditions fail.
    pub fn identity(p: usize) -> Self {
        ConditionFamily {
            profile: SpectrumProfile {
                shape: SpectrumShape::Explicit { values: vec![1.0; p] },
                dim: DimRule::Fixed { p },
            },
            alpha: None,
            theta0: VectorRule::new(Shape::Zero),
            endogeneity: EndogeneityRule::Exogenous,
            sigma: SigmaRule::Fixed { sigma: 1.0 },
        }
    }

    pub fn by_name(name: &str) -> Result<(Self, ConditionMode)> {
        match name {
            "example1" => Ok((Self::example1(), ConditionMode::Orthogonal)),
            "example2" => Ok((Self::example2(), ConditionMode::Orthogonal)),
            "example3" => Ok((Self::example3(), ConditionMode::Nonorthogonal)),
            "identity" => Ok((Self::identity(1000), ConditionMode::Exogenous)),
            other => Err(Error::InvalidConfig(format!("unknown profile family '{other}'"))),
        }
    }

    pub fn model(&self, n: usize) -> Result<EndogeneityModel> {
        let (p, base) = spectrum(&self.profile, n)?;
        let k = truncation_level(&base, n)?;
        let rot = Rotation::Identity(p);
        let cov = match self.alpha {
            None => split_orthogonal(&base, &rot, k)?,
            Some(alpha) => split_nonorthogonal(&base, &rot, k, alpha, n)?,
        };
        assemble_model(cov, &self.theta0, &self.endogeneity, self.sigma, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceVerdict {
    pub decreasing: bool,
    pub final_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub n_grid: Vec<usize>,
    pub mode: ConditionMode,
    pub sequences: BTreeMap<String, Vec<f64>>,
    pub verdicts: BTreeMap<String, SequenceVerdict>,
}

impl ConditionReport {
    pub fn all_decreasing(&self) -> bool {
        self.verdicts.values().all(|v| v.decreasing)
    }
}

/// Every sequence value for a single model.
pub fn condition_values(model: &EndogeneityModel, n: usize) -> Result<BTreeMap<String, f64>> {
    let s = summarize(model, n)?;
    let nf = n as f64;
    let root = (s.trace_xi_z / nf).sqrt();
    let endo = s.endo_norm * root;
    let endo_nonortho = if s.endo_norm == 0.0 { 0.0 } else { endo / s.sigma_tilde };
    let values = [
        s.rank_sigma_u as f64 / nf,
        nf / s.big_r_xi_z,
        s.theta0_norm * root,
        endo,
        endo_nonortho,
        nf / s.big_r_xi_z * s.trace_cross / s.trace_xi_z_sq,
        s.mixed,
    ];
    Ok(SEQUENCE_NAMES.iter().map(|k| k.to_string()).zip(values).collect())
}

/// Strictly decreasing, with a relative slack of `1e-12` for rounding.
pub fn is_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0] + 1e-12 * w[0].abs())
}

pub fn evaluate_conditions(family: &ConditionFamily, n_grid: &[usize], mode: ConditionMode) -> Result<ConditionReport> {
    if n_grid.len() < 3 {
        return Err(Error::InvalidConfig("condition grid needs at least 3 points".into()));
    }
    if n_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("condition grid must be nondecreasing".into()));
    }
    let rows = n_grid
        .par_iter()
        .map(|&n| family.model(n).and_then(|m| condition_values(&m, n)))
        .collect::<Result<Vec<_>>>()?;
    let mut sequences: BTreeMap<String, Vec<f64>> =
        mode.sequences().iter().map(|k| (k.to_string(), Vec::with_capacity(n_grid.len()))).collect();
    for (&n, values) in n_grid.iter().zip(&rows) {
        for (k, seq) in sequences.iter_mut() {
            let v = values[k];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ModelInconsistent(format!("{k} = {v} at n = {n}")));
            }
            seq.push(v);
        }
    }
    let verdicts = sequences
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                SequenceVerdict {
                    decreasing: is_decreasing(v),
                    final_value: *v.last().unwrap(),
                },
            )
        })
        .collect();
    Ok(ConditionReport {
        n_grid: n_grid.to_vec(),
        mode,
        sequences,
        verdicts,
    })
}

pub fn write_conditions_csv(report: &ConditionReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let names: Vec<&String> = report.sequences.keys().collect();
    let mut header = vec!["n".to_string()];
    header.extend(names.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for (i, n) in report.n_grid.iter().enumerate() {
        let mut row = vec![n.to_string()];
        row.extend(names.iter().map(|k| report.sequences[*k][i].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
