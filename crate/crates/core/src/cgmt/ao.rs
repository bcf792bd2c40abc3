//! Auxiliary problem: `max |theta1|^2` over the ball subject to
//! `|xi - W2 theta2 - G |theta1|| <= <theta1, H>`.
//!
//! The search returns the best feasible value it finds, so the result is a
//! lower bound on the true maximum.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::po::PoInstance;
use super::trust_region::BallQuadratic;
use crate::error::{Error, Result};
use crate::matops::{default_rel_tol, psd_sqrt, sym_eig, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AoOptions {
    pub starts: usize,
    pub max_iter: usize,
    pub shrink: f64,
    /// Random draws per start while looking for a feasible point.
    pub start_tries: usize,
    /// Grid points per free dimension for the brute-force oracle; 0 disables it.
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for AoOptions {
    fn default() -> Self {
        AoOptions {
            starts: 32,
            max_iter: 200,
            shrink: 0.5,
            start_tries: 64,
            grid_points: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoSolution {
    /// Best feasible objective found; 0 when nothing feasible was found.
    pub value: f64,
    pub feasible_empty: bool,
    pub ascent_value: Option<f64>,
    pub grid_value: Option<f64>,
    /// Dimension of the searched variable.
    pub free_dim: usize,
}

/// The problem in search coordinates `x`, constrained to `|x - center| <= radius`.
enum Problem {
    /// Orthogonal split: `x` holds the coordinates of `theta'` in `range(Xi_z)`;
    /// the `range(Sigma_u)` part is optimized exactly for each `x`.
    Split {
        dz: Vec<f64>,
        hz: DVector<f64>,
        a: DMatrix<f64>,
        inner: BallQuadratic,
        beta0: DVector<f64>,
    },
    /// Any split: `x = theta'`.
    Joint { sz: SymMatrix, a: DMatrix<f64>, h: DVector<f64> },
}

struct Ao<'a> {
    problem: Problem,
    xi: &'a DVector<f64>,
    g: &'a DVector<f64>,
    center: DVector<f64>,
    radius: f64,
}

impl Ao<'_> {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        match &self.problem {
            Problem::Split { dz, .. } => x.iter().zip(dz).map(|(v, d)| d * v * v).sum(),
            Problem::Joint { sz, .. } => sz.mul_vec(x).norm_squared(),
        }
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.problem {
            Problem::Split { dz, .. } => DVector::from_fn(x.len(), |i, _| 2.0 * dz[i] * x[i]),
            Problem::Joint { sz, .. } => sz.mul_vec(&sz.mul_vec(x)) * 2.0,
        }
    }

    /// `min_theta2 |xi - W2 theta2 - G t| - <theta1, H>`; feasible iff `<= 0`.
    fn margin(&self, x: &DVector<f64>) -> f64 {
        let off = (x - &self.center).norm_squared();
        let budget = self.radius * self.radius - off;
        if budget < -1e-12 * self.radius * self.radius {
            return f64::INFINITY;
        }
        match &self.problem {
            Problem::Split { dz, hz, a, inner, beta0 } => {
                let t = self.objective(x).sqrt();
                let s: f64 = (0..x.len()).map(|i| dz[i].sqrt() * x[i] * hz[i]).sum();
                let r = self.xi - self.g * t + a * beta0;
                let resid = if a.ncols() == 0 {
                    r.norm()
                } else {
                    match inner.maximize(&(a.transpose() * &r), budget.max(0.0).sqrt()) {
                        Ok(sol) => (&r - a * &sol.w).norm(),
                        Err(_) => return f64::INFINITY,
                    }
                };
                resid - s
            }
            Problem::Joint { sz, a, h } => {
                let th1 = sz.mul_vec(x);
                let t = th1.norm();
                (self.xi - a * x - self.g * t).norm() - th1.dot(h)
            }
        }
    }

    fn project(&self, x: DVector<f64>) -> DVector<f64> {
        let off = &x - &self.center;
        let norm = off.norm();
        if norm <= self.radius {
            x
        } else {
            &self.center + off * (self.radius / norm)
        }
    }

    fn uniform_point(&self, rng: &mut ChaCha20Rng) -> DVector<f64> {
        let d = self.dim();
        let dir: DVector<f64> = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut *rng));
        let norm = dir.norm();
        if norm == 0.0 {
            return self.center.clone();
        }
        let u: f64 = rng.random();
        &self.center + dir * (self.radius * u.powf(1.0 / d as f64) / norm)
    }

    fn numeric_margin_gradient(&self, x: &DVector<f64>, m0: f64) -> DVector<f64> {
        let h = 1e-7 * self.radius.max(1e-300);
        DVector::from_fn(x.len(), |i, _| {
            let mut y = x.clone();
            y[i] += h;
            let m = self.margin(&y);
            if m.is_finite() {
                (m - m0) / h
            } else {
                let mut z = x.clone();
                z[i] -= h;
                (m0 - self.margin(&z)) / h
            }
        })
    }

    /// Backtracking descent on the margin until it becomes nonpositive.
    fn seek_feasible(&self, mut x: DVector<f64>, opts: &AoOptions) -> Option<DVector<f64>> {
        let mut m = self.margin(&x);
        let mut step = self.radius;
        for _ in 0..opts.max_iter {
            if m <= 0.0 {
                return Some(x);
            }
            let g = self.numeric_margin_gradient(&x, m);
            let gn = g.norm();
            if !(gn > 0.0) || !gn.is_finite() {
                return None;
            }
            let mut moved = false;
            while step > 1e-10 * self.radius {
                let y = self.project(&x - &g * (step / gn));
                let my = self.margin(&y);
                if my < m {
                    x = y;
                    m = my;
                    step = (step * 2.0).min(self.radius);
                    moved = true;
                    break;
                }
                step *= opts.shrink;
            }
            if !moved {
                return None;
            }
        }
        (m <= 0.0).then_some(x)
    }

    fn ascend(&self, mut x: DVector<f64>, opts: &AoOptions) -> f64 {
        let mut f = self.objective(&x);
        let mut step = self.radius;
        for _ in 0..opts.max_iter {
            let mut g = self.gradient(&x);
            if g.norm() == 0.0 {
                g = DVector::from_element(x.len(), 1.0);
            }
            let gn = g.norm();
            let mut moved = false;
            while step > 1e-9 * self.radius {
                let y = self.project(&x + &g * (step / gn));
                let fy = self.objective(&y);
                if fy > f && self.margin(&y) <= 0.0 {
                    x = y;
                    f = fy;
                    step = (step * 2.0).min(self.radius);
                    moved = true;
                    break;
                }
                step *= opts.shrink;
            }
            if !moved {
                break;
            }
        }
        f
    }

    fn grid(&self, points: usize) -> Option<f64> {
        let d = self.dim();
        if points < 2 || d == 0 || d > 3 {
            return None;
        }
        let mut best: Option<f64> = None;
        let total = points.pow(d as u32);
        let mut x = DVector::zeros(d);
        for idx in 0..total {
            let mut rest = idx;
            for k in 0..d {
                let i = rest % points;
                rest /= points;
                x[k] = self.center[k] + self.radius * (-1.0 + 2.0 * i as f64 / (points - 1) as f64);
            }
            if (&x - &self.center).norm() > self.radius {
                continue;
            }
            if self.margin(&x) <= 0.0 {
                let f = self.objective(&x);
                best = Some(best.map_or(f, |b: f64| b.max(f)));
            }
        }
        best
    }
}

fn range_basis(s: &SymMatrix) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let eig = sym_eig(s)?;
    let cutoff = default_rel_tol(s.dim()) * eig.max_value();
    let keep: Vec<usize> = (0..s.dim()).filter(|&i| eig.values[i] > cutoff && eig.values[i] > 0.0).collect();
    let mut v = DMatrix::zeros(s.dim(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        v.set_column(j, &eig.vectors.column(i));
    }
    Ok((v, keep.iter().map(|&i| eig.values[i]).collect()))
}

fn is_orthogonal_split(inst: &PoInstance) -> bool {
    let prod = inst.sigma_u.as_matrix() * inst.xi_z.as_matrix();
    prod.amax() <= 1e-10 * inst.sigma_u.max_abs().max(inst.xi_z.max_abs()).powi(2).max(f64::MIN_POSITIVE)
}

/// Solves the auxiliary problem for the instance's `W2`, `xi`, ball and
/// covariances; `W1` is not used.
pub fn solve_ao(inst: &PoInstance, g: &DVector<f64>, h: &DVector<f64>, opts: &AoOptions) -> Result<AoSolution> {
    let (n, p) = (inst.n(), inst.p());
    if g.len() != n || h.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "G has {} entries (n = {n}), H has {} (p = {p})",
            g.len(),
            h.len()
        )));
    }
    let ao = if is_orthogonal_split(inst) {
        let (vz, dz) = range_basis(&inst.xi_z)?;
        let (vu, du) = range_basis(&inst.sigma_u)?;
        let mut a = &inst.w2 * &vu;
        for (j, d) in du.iter().enumerate() {
            a.column_mut(j).scale_mut(d.sqrt());
        }
        let ata = SymMatrix::symmetrize(a.transpose() * &a);
        Ao {
            problem: Problem::Split {
                hz: vz.transpose() * h,
                beta0: vu.transpose() * &inst.theta0,
                inner: BallQuadratic::new(ata.scale(-1.0))?,
                a,
                dz,
            },
            xi: &inst.xi,
            g,
            center: -(vz.transpose() * &inst.theta0),
            radius: inst.ball_radius,
        }
    } else {
        let su = psd_sqrt(&inst.sigma_u)?;
        Ao {
            problem: Problem::Joint {
                sz: psd_sqrt(&inst.xi_z)?,
                a: &inst.w2 * su.as_matrix(),
                h: h.clone(),
            },
            xi: &inst.xi,
            g,
            center: -inst.theta0.clone(),
            radius: inst.ball_radius,
        }
    };

    let mut best: Option<f64> = None;
    for s in 0..opts.starts {
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
        rng.set_stream(s as u64);
        let mut pick: Option<(f64, DVector<f64>)> = None;
        for _ in 0..opts.start_tries.max(1) {
            let x = ao.uniform_point(&mut rng);
            let m = ao.margin(&x);
            if pick.as_ref().is_none_or(|(pm, _)| m < *pm) {
                pick = Some((m, x));
            }
            if m <= 0.0 {
                break;
            }
        }
        let Some((_, x)) = pick else { continue };
        if let Some(x) = ao.seek_feasible(x, opts) {
            let f = ao.ascend(x, opts);
            best = Some(best.map_or(f, |b| b.max(f)));
        }
    }
    let grid_value = if opts.grid_points > 0 { ao.grid(opts.grid_points) } else { None };
    let overall = match (best, grid_value) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    };
    Ok(AoSolution {
        value: overall.unwrap_or(0.0),
        feasible_empty: overall.is_none(),
        ascent_value: best,
        grid_value,
        free_dim: ao.dim(),
    })
}
