//! `max w^T Q w + 2 b^T w` over the Euclidean ball `|w| <= radius`, for any symmetric `Q`.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matops::{sym_eig, EigenDecomp, SymMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionSolution {
    pub w: DVector<f64>,
    pub value: f64,
    /// Lagrange multiplier `mu >= max(0, lambda_max(Q))`.
    pub multiplier: f64,
    /// `|(Q - mu I) w + b| / (|Q| |w| + |b|)`, zero for the trivial problem.
    pub stationarity: f64,
    pub hard_case: bool,
}

fn value_at(q: &SymMatrix, b: &DVector<f64>, w: &DVector<f64>) -> f64 {
    q.quad_form(w) + 2.0 * b.dot(w)
}

/// A quadratic with its eigendecomposition cached, for repeated solves with
/// different linear terms and radii.
#[derive(Debug, Clone)]
pub struct BallQuadratic {
    q: SymMatrix,
    eig: EigenDecomp,
    qscale: f64,
}

impl BallQuadratic {
    pub fn new(q: SymMatrix) -> Result<Self> {
        let eig = sym_eig(&q)?;
        let qscale = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(BallQuadratic { q, eig, qscale })
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }

    pub fn maximize(&self, b: &DVector<f64>, radius: f64) -> Result<TrustRegionSolution> {
        maximize_cached(&self.q, &self.eig, self.qscale, b, radius)
    }
}

pub fn maximize_on_ball(q: &SymMatrix, b: &DVector<f64>, radius: f64) -> Result<TrustRegionSolution> {
    BallQuadratic::new(q.clone())?.maximize(b, radius)
}

fn maximize_cached(
    q: &SymMatrix,
    eig: &EigenDecomp,
    qscale: f64,
    b: &DVector<f64>,
    radius: f64,
) -> Result<TrustRegionSolution> {
    let d = q.dim();
    if b.len() != d {
        return Err(Error::DimensionMismatch(format!("Q is {d}x{d}, b has {} entries", b.len())));
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidConfig(format!("trust region radius must be finite and >= 0, got {radius}")));
    }
    if d == 0 || radius == 0.0 {
        return Ok(TrustRegionSolution {
            w: DVector::zeros(d),
            value: 0.0,
            multiplier: 0.0,
            stationarity: 0.0,
            hard_case: false,
        });
    }
    let lam = &eig.values;
    let beta = eig.vectors.transpose() * b;
    let bnorm = b.norm();
    let scale = qscale.max(bnorm / radius).max(f64::MIN_POSITIVE);
    let top = lam[0];
    let mu_min = top.max(0.0);
    let tie = 1e-12 * scale;
    let in_top = |i: usize| lam[i] >= top - tie;

    let coords = |mu: f64| -> DVector<f64> {
        DVector::from_fn(d, |i, _| {
            let gap = mu - lam[i];
            if gap > 0.0 {
                beta[i] / gap
            } else {
                0.0
            }
        })
    };

    let finish = |c: DVector<f64>, mu: f64, hard_case: bool| {
        let w = &eig.vectors * c;
        let resid = (q.mul_vec(&w) - &w * mu + b).norm();
        let denom = scale * w.norm() + bnorm;
        TrustRegionSolution {
            value: value_at(q, b, &w),
            stationarity: if denom > 0.0 { resid / denom } else { 0.0 },
            w,
            multiplier: mu,
            hard_case,
        }
    };

    // Interior maximizer of a negative definite quadratic.
    if top < -tie {
        let c = coords(0.0);
        if c.norm() <= radius {
            return Ok(finish(c, 0.0, false));
        }
    }

    let top_mass: f64 = (0..d).filter(|&i| in_top(i)).map(|i| beta[i] * beta[i]).sum::<f64>().sqrt();
    if top >= -tie && top_mass <= 1e-13 * bnorm.max(scale * radius) {
        let mut c = DVector::from_fn(d, |i, _| if in_top(i) { 0.0 } else { beta[i] / (mu_min - lam[i]) });
        let rest = c.norm();
        if rest <= radius {
            // Hard case: fill the remaining radius along the leading eigenvector.
            let first = (0..d).find(|&i| in_top(i)).unwrap();
            c[first] = (radius * radius - rest * rest).max(0.0).sqrt();
            return Ok(finish(c, mu_min, true));
        }
    }

    // |w(mu)| decreases on (lambda_max, inf); bisect |w(mu)| = radius.
    let mut lo = mu_min;
    let mut hi = mu_min.max(top) + bnorm / radius + tie;
    while coords(hi).norm() > radius {
        hi = mu_min + 2.0 * (hi - mu_min);
    }
    for _ in 0..4000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid <= top || coords(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut c = coords(hi);
    // Land exactly on the sphere when the root is not interior.
    let norm = c.norm();
    if hi > 0.0 && norm > 0.0 {
        c *= radius / norm;
    }
    Ok(finish(c, hi, false))
}
