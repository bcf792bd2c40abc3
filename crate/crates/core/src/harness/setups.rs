//! Model parameters of the simulation setups.

use serde::{Deserialize, Serialize};

use super::config::SetupId;
use crate::covariance::{
    assemble_model, build_rotation, spectrum, split_nonorthogonal, split_orthogonal, truncation_level,
    EndogeneityModel, EndogeneityRule, Rotation, Shape, SigmaRule, SpectrumProfile, SplitKind, Support, VectorRule,
};
use crate::error::{Error, Result};

/// Shrinkage exponent of the non-orthogonal setups.
pub const SETUP_ALPHA: f64 = 1.01;

/// Share of endogenous variables in the comparison setups, `k = n / 10`.
pub const ENDOGENOUS_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RotationRule {
    Identity,
    /// Orthogonalized `P[j, j'] = 1{|j - j'| != p - 2}`.
    Seeded,
    /// Moves the endogenous eigen-directions to new coordinates. With
    /// `k = floor(fraction * n)` and `h = k / 5`, eigen indices `[0, k - h)` land
    /// on coordinates `[h, k)` and `[k - h, k)` on `[k*, k* + h)`; every other index keeps
    /// its relative order on the remaining coordinates.
    EndogenousShuffle { fraction: f64 },
}

/// Everything needed to assemble the model at a given `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub profile: SpectrumProfile,
    pub split: SplitKind,
    pub rotation: RotationRule,
    pub theta0: VectorRule,
    pub endogeneity: EndogeneityRule,
    #[serde(default)]
    pub sigma: SigmaRule,
}

fn sparse_theta0() -> VectorRule {
    VectorRule::new(Shape::InvSqrt { scale: 20.0 }).with_support(Support::Residue {
        max_index: 100,
        modulus: 5,
        offset: 4,
    })
}

impl ModelSpec {
    pub fn builtin(id: SetupId) -> Result<Self> {
        let dense_theta = VectorRule::new(Shape::InvSqrt { scale: 20.0 });
        let first = ModelSpec {
            profile: SpectrumProfile::setup_log_poly(),
            split: SplitKind::Orthogonal,
            rotation: RotationRule::Seeded,
            theta0: dense_theta.clone(),
            endogeneity: EndogeneityRule::RotatedRho {
                rho: VectorRule::new(Shape::Harmonic { scale: 2.0 }),
            },
            sigma: SigmaRule::default(),
        };
        let second = ModelSpec {
            profile: SpectrumProfile::setup_exp_plus_noise(),
            endogeneity: EndogeneityRule::RotatedRho {
                rho: VectorRule::new(Shape::ExpDecay { scale: 3.0, rate: 4.0 }),
            },
            ..first.clone()
        };
        let nonortho = SplitKind::NonOrthogonal { alpha: SETUP_ALPHA };
        let comparison = ModelSpec {
            split: nonortho,
            rotation: RotationRule::Identity,
            endogeneity: EndogeneityRule::EigenOmega {
                omega: VectorRule::new(Shape::Harmonic { scale: 2.0 }).with_support(Support::FirstFraction {
                    fraction: ENDOGENOUS_FRACTION,
                }),
            },
            ..first.clone()
        };
        Ok(match id {
            SetupId::I => first,
            SetupId::Ii => second,
            SetupId::Iii => ModelSpec { split: nonortho, ..first },
            SetupId::Iv => ModelSpec { split: nonortho, ..second },
            SetupId::V => ModelSpec {
                theta0: sparse_theta0(),
                ..first
            },
            SetupId::Vi => ModelSpec {
                split: nonortho,
                theta0: sparse_theta0(),
                ..first
            },
            SetupId::Vii => comparison,
            SetupId::Viii => ModelSpec {
                theta0: dense_theta.with_support(Support::FirstFraction { fraction: 0.8 }),
                ..comparison
            },
            SetupId::Ix => ModelSpec {
                rotation: RotationRule::EndogenousShuffle {
                    fraction: ENDOGENOUS_FRACTION,
                },
                ..comparison
            },
            SetupId::Custom => return Err(Error::InvalidConfig("custom setup has no built-in parameters".into())),
        })
    }

    /// Assembles the model for sample size `n`, recomputing `k*_n` from the base spectrum.
    pub fn build(&self, n: usize) -> Result<EndogeneityModel> {
        let (p, base) = spectrum(&self.profile, n)?;
        let k = truncation_level(&base, n)?;
        let rotation = match self.rotation {
            RotationRule::Identity => Rotation::Identity(p),
            RotationRule::Seeded => build_rotation(p)?,
            RotationRule::EndogenousShuffle { fraction } => Rotation::permutation(endogenous_shuffle(p, n, k, fraction)?)?,
        };
        let cov = match self.split {
            SplitKind::Orthogonal => split_orthogonal(&base, &rotation, k)?,
            SplitKind::NonOrthogonal { alpha } => split_nonorthogonal(&base, &rotation, k, alpha, n)?,
        };
        assemble_model(cov, &self.theta0, &self.endogeneity, self.sigma, n)
    }
}

/// Permutation `perm[eigen index] = coordinate` for [`RotationRule::EndogenousShuffle`].
pub fn endogenous_shuffle(p: usize, n: usize, k_star: usize, fraction: f64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("endogenous fraction must lie in (0, 1], got {fraction}")));
    }
    let k = (fraction * n as f64).floor() as usize;
    let head = k / 5;
    let stay = k - head;
    if k_star < k || k_star + head > p {
        return Err(Error::InvalidConfig(format!(
            "cannot move {k} endogenous directions with k* = {k_star}, p = {p}"
        )));
    }
    let mut perm = vec![usize::MAX; p];
    let mut used = vec![false; p];
    for (i, slot) in perm.iter_mut().enumerate().take(k) {
        *slot = if i < stay { head + i } else { k_star + i - stay };
    }
    for &c in perm.iter().take(k) {
        used[c] = true;
    }
    let mut free = (0..p).filter(|&c| !used[c]);
    for slot in perm.iter_mut().skip(k) {
        *slot = free.next().expect("counts match");
    }
    Ok(perm)
}
