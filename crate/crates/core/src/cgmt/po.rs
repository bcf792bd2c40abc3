//! Primary problem: the largest projected risk among interpolators in a ball.

use nalgebra::{DMatrix, DVector};

use super::trust_region::maximize_on_ball;
use crate::error::{Error, Result};
use crate::matops::{default_rel_tol, null_space_basis, psd_sqrt, SymMatrix};

/// Latent factors and parameters of one primary problem.
#[derive(Debug, Clone)]
pub struct PoInstance {
    pub w1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub ball_radius: f64,
    pub theta0: DVector<f64>,
    pub xi_z: SymMatrix,
    pub sigma_u: SymMatrix,
}

impl PoInstance {
    pub fn new(
        w1: DMatrix<f64>,
        w2: DMatrix<f64>,
        xi: DVector<f64>,
        ball_radius: f64,
        theta0: DVector<f64>,
        xi_z: SymMatrix,
        sigma_u: SymMatrix,
    ) -> Result<Self> {
        let (n, p) = w1.shape();
        if w2.shape() != (n, p) || xi.len() != n || theta0.len() != p || xi_z.dim() != p || sigma_u.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "W1 {n}x{p}, W2 {:?}, xi {}, theta0 {}, Xi_z {}, Sigma_u {}",
                w2.shape(),
                xi.len(),
                theta0.len(),
                xi_z.dim(),
                sigma_u.dim()
            )));
        }
        if !(ball_radius >= theta0.norm()) {
            return Err(Error::InvalidConfig(format!(
                "ball radius {ball_radius} is below |theta0| = {}",
                theta0.norm()
            )));
        }
        Ok(PoInstance {
            w1,
            w2,
            xi,
            ball_radius,
            theta0,
            xi_z,
            sigma_u,
        })
    }

    pub fn n(&self) -> usize {
        self.w1.nrows()
    }

    pub fn p(&self) -> usize {
        self.w1.ncols()
    }

    /// `M = W1 Xi_z^{1/2} + W2 Sigma_u^{1/2}`.
    pub fn design(&self) -> Result<DMatrix<f64>> {
        let sz = psd_sqrt(&self.xi_z)?;
        let su = psd_sqrt(&self.sigma_u)?;
        Ok(&self.w1 * sz.as_matrix() + &self.w2 * su.as_matrix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoSolution {
    pub value: f64,
    /// Maximizer `theta = theta0 + theta'`.
    pub theta: DVector<f64>,
    pub multiplier: f64,
    pub stationarity: f64,
}

pub fn solve_po(inst: &PoInstance) -> Result<PoSolution> {
    max_projected_risk(&inst.design()?, &inst.xi, &inst.theta0, &inst.xi_z, inst.ball_radius)
}

/// `max { d^T Xi_z d : M d = rhs, |d + theta0| <= radius }`.
///
/// The affine set is parametrized as `d_p + N z` with `d_p` the min-norm
/// solution and `N` an orthonormal null-space basis; the ball becomes a ball in
/// `z`, and the convex quadratic is maximized exactly on it.
pub fn max_projected_risk(
    m: &DMatrix<f64>,
    rhs: &DVector<f64>,
    theta0: &DVector<f64>,
    xi_z: &SymMatrix,
    radius: f64,
) -> Result<PoSolution> {
    let (n, p) = m.shape();
    if rhs.len() != n || theta0.len() != p || xi_z.dim() != p {
        return Err(Error::DimensionMismatch(format!(
            "M {n}x{p}, rhs {}, theta0 {}, Xi_z {}",
            rhs.len(),
            theta0.len(),
            xi_z.dim()
        )));
    }
    let rel_tol = default_rel_tol(n.max(p));
    let svd = m.clone().svd(true, true);
    let dp = svd
        .solve(rhs, rel_tol * svd.singular_values.max())
        .map_err(|e| Error::InvalidMatrix(e.to_string()))?;
    let resid = (m * &dp - rhs).norm();
    let mnorm = svd.singular_values.max();
    if resid > 1e-9 * (mnorm * dp.norm() + rhs.norm()).max(f64::MIN_POSITIVE) {
        return Err(Error::NoFeasiblePoint(format!("interpolation residual {resid:e}")));
    }
    let null = null_space_basis(m, rel_tol)?;
    let c0 = &dp + theta0;
    let proj = null.transpose() * &c0;
    let perp2 = (c0.norm_squared() - proj.norm_squared()).max(0.0);
    let slack = radius * radius - perp2;
    if slack < -1e-12 * radius * radius.max(1.0) {
        return Err(Error::NoFeasiblePoint(format!(
            "affine set lies at distance {} > {radius} from -theta0",
            perp2.sqrt()
        )));
    }
    let rho = slack.max(0.0).sqrt();
    let d = &dp - &null * &proj;
    let zd = xi_z.mul_vec(&d);
    let q = SymMatrix::symmetrize(null.transpose() * xi_z.as_matrix() * &null);
    let b = null.transpose() * &zd;
    let tr = maximize_on_ball(&q, &b, rho)?;
    let delta = d + &null * &tr.w;
    Ok(PoSolution {
        value: xi_z.quad_form(&delta).max(0.0),
        theta: delta + theta0,
        multiplier: tr.multiplier,
        stationarity: tr.stationarity,
    })
}
