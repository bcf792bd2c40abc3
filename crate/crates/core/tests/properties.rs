use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use ridgeless_iv::cgmt::{max_projected_risk, maximize_on_ball};
use ridgeless_iv::covariance::{
    assemble_model, build_rotation, split_nonorthogonal, split_orthogonal, spectrum, tail_sums, truncation_level,
    DimRule, EndogeneityRule, Rotation, Shape, SigmaRule, SpectrumProfile, SpectrumShape, VectorRule,
};
use ridgeless_iv::estimators::{lasso_cd, lasso_kkt_residual, lasso_weights, min_norm_interpolator, LassoOptions};
use ridgeless_iv::matops::{pseudoinverse_default, psd_rank, psd_sqrt, sym_eig, SymMatrix};
use ridgeless_iv::metrics::{
    effective_ranks, effective_ranks_spectral, exogenous_principal_part, full_bounds, projected_rmse,
};
use ridgeless_iv::Error;

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vec(rng: &mut ChaCha20Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `B B^T` with `B` of shape `dim x rank`.
fn random_psd(seed: u64, dim: usize, rank: usize) -> SymMatrix {
    let mut r = rng(seed);
    SymMatrix::gram(&gaussian(&mut r, dim, rank))
}

fn descending(seed: u64, p: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let mut v: Vec<f64> = (0..p).map(|_| {
        let z: f64 = StandardNormal.sample(&mut r);
        z.exp()
    }).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigendecomposition_reconstructs(seed in any::<u64>(), dim in 1usize..30) {
        let mut r = rng(seed);
        let a = SymMatrix::symmetrize(gaussian(&mut r, dim, dim));
        let eig = sym_eig(&a).unwrap();
        let back = eig.reconstruct();
        let err = frob(&(back.as_matrix() - a.as_matrix()));
        prop_assert!(err <= 1e-10 * (1.0 + frob(a.as_matrix())));
        prop_assert!(eig.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn penrose_identities(seed in any::<u64>(), dim in 1usize..50, rank_frac in 0.1f64..1.0) {
        let rank = ((dim as f64 * rank_frac).ceil() as usize).max(1);
        let a = random_psd(seed, dim, rank);
        let ap = pseudoinverse_default(&a).unwrap();
        let (am, pm) = (a.as_matrix(), ap.as_matrix());
        let scale = 1.0 + frob(am);
        let pscale = 1.0 + frob(pm);
        prop_assert!(frob(&(am * pm * am - am)) <= 1e-8 * scale * scale * pscale);
        prop_assert!(frob(&(pm * am * pm - pm)) <= 1e-8 * pscale * pscale * scale);
        prop_assert!(frob(&((am * pm).transpose() - am * pm)) <= 1e-8 * scale * pscale);
        prop_assert!(frob(&((pm * am).transpose() - pm * am)) <= 1e-8 * scale * pscale);
    }

    #[test]
    fn sqrt_commutes_with_pseudoinverse(seed in any::<u64>(), dim in 1usize..20) {
        let mut a = random_psd(seed, dim, dim + 3);
        a = a.add(&SymMatrix::identity(dim).scale(0.1));
        let left = pseudoinverse_default(&psd_sqrt(&a).unwrap()).unwrap();
        let right = psd_sqrt(&pseudoinverse_default(&a).unwrap()).unwrap();
        prop_assert!((left.as_matrix() - right.as_matrix()).amax() <= 1e-7);
    }

    #[test]
    fn splitting_identities(seed in any::<u64>(), p in 3usize..40, k_frac in 0.0f64..1.0, alpha in 1.01f64..3.0, n in 10usize..500) {
        let base = descending(seed, p);
        let k = ((p as f64) * k_frac) as usize;
        let rot = build_rotation(p).unwrap();
        for cov in [split_orthogonal(&base, &rot, k).unwrap(), split_nonorthogonal(&base, &rot, k, alpha, n).unwrap()] {
            let sx = cov.sigma_x().as_matrix();
            let sum = cov.sigma_u().as_matrix() + cov.xi_z().as_matrix();
            prop_assert!((sx - sum).amax() <= 1e-12 * sx.amax());
        }
        let cov = split_orthogonal(&base, &rot, k).unwrap();
        let prod = cov.sigma_u().as_matrix() * cov.xi_z().as_matrix();
        let op = cov.sigma_x().as_matrix().symmetric_eigenvalues().amax();
        prop_assert!(prod.amax() <= 1e-10 * op);
        let tol = 1e-10;
        let ranks = (psd_rank(cov.sigma_u(), tol).unwrap(), psd_rank(cov.xi_z(), tol).unwrap(), psd_rank(cov.sigma_x(), tol).unwrap());
        prop_assert_eq!(ranks.0 + ranks.1, ranks.2);
    }

    #[test]
    fn truncation_level_is_minimal(c in 1.0f64..500.0, beta in 0.5f64..3.0, n in 5usize..400, factor in 2usize..6) {
        let profile = SpectrumProfile {
            shape: SpectrumShape::LogPoly { c, beta, log_scale: 1.0 },
            dim: DimRule::Linear { factor },
        };
        let (_, base) = spectrum(&profile, n).unwrap();
        let tails = tail_sums(&base);
        let r_at = |k: usize| tails[k] / base[k];
        match truncation_level(&base, n) {
            Ok(k) => {
                prop_assert!(r_at(k) > n as f64);
                if k >= 1 {
                    prop_assert!(r_at(k - 1) <= n as f64);
                }
            }
            Err(Error::NoSuchLevel { .. }) => {
                prop_assert!((0..base.len()).all(|k| r_at(k) <= n as f64));
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn assembled_models_are_valid(seed in any::<u64>(), p in 4usize..30, scale in 0.01f64..20.0, sigma in 0.1f64..5.0) {
        let base = descending(seed, p);
        let cov = split_orthogonal(&base, &Rotation::Identity(p), p / 2).unwrap();
        let endo = EndogeneityRule::RotatedRho { rho: VectorRule::new(Shape::Harmonic { scale }) };
        match assemble_model(cov, &VectorRule::new(Shape::InvSqrt { scale: 1.0 }), &endo, SigmaRule::Fixed { sigma }, 50) {
            Ok(m) => {
                let su_pinv = pseudoinverse_default(m.cov.sigma_u()).unwrap();
                prop_assert!(su_pinv.quad_form(&m.omega) <= m.sigma2 * (1.0 + 1e-9));
                let jmin = sym_eig(&m.joint_covariance()).unwrap().values.min();
                prop_assert!(jmin >= -1e-8);
            }
            Err(Error::EndogeneityTooStrong { rho_norm2, sigma2 }) => prop_assert!(rho_norm2 > sigma2),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn min_norm_interpolates_and_is_minimal(seed in any::<u64>(), n in 1usize..20, extra in 1usize..40) {
        let p = n + extra;
        let mut r = rng(seed);
        let x = gaussian(&mut r, n, p);
        let y = gaussian_vec(&mut r, n);
        let fit = min_norm_interpolator(&x, &y).unwrap();
        let th = &fit.theta_hat;
        prop_assert!((&x * th - &y).norm() <= 1e-8 * y.norm().max(1e-300));
        let xp = x.clone().pseudo_inverse(1e-12).unwrap();
        let off_row = th - &xp * (&x * th);
        prop_assert!(off_row.norm() <= 1e-8 * th.norm().max(1e-300));
        let null = ridgeless_iv::matops::null_space_basis(&x, 1e-12).unwrap();
        for _ in 0..100 {
            let z = &null * gaussian_vec(&mut r, null.ncols());
            prop_assert!((th + &z).norm() >= th.norm() - 1e-12);
        }
    }

    #[test]
    fn lasso_satisfies_kkt(seed in any::<u64>(), n in 10usize..40, p in 2usize..30, lam_scale in 0.01f64..1.0, standardize in any::<bool>()) {
        let mut r = rng(seed);
        let x = gaussian(&mut r, n, p);
        let y = gaussian_vec(&mut r, n);
        let lambda = lam_scale * (x.tr_mul(&y) / n as f64).amax();
        let opts = LassoOptions { tol: 1e-9, max_iter: 100_000, standardize };
        let fit = lasso_cd(&x, &y, lambda, &opts).unwrap();
        let kkt = lasso_kkt_residual(&x, &y, &fit.theta_hat, lambda, &lasso_weights(&x, standardize));
        prop_assert!(kkt <= 1e-8);
    }

    #[test]
    fn effective_ranks_scale_and_bound(seed in any::<u64>(), dim in 1usize..60, rank in 1usize..60, log2c in -20i32..20, c in 1e-3f64..1e3) {
        let s = random_psd(seed, dim, rank.min(dim));
        let (r, big_r) = effective_ranks(&s).unwrap();
        prop_assert!(big_r <= r * r * (1.0 + 1e-12));
        // Powers of two scale every eigenvalue exactly.
        let exact = effective_ranks(&s.scale(2f64.powi(log2c))).unwrap();
        prop_assert_eq!(exact, (r, big_r));
        let (rc, big_rc) = effective_ranks(&s.scale(c)).unwrap();
        prop_assert!((rc - r).abs() <= 1e-9 * r && (big_rc - big_r).abs() <= 1e-9 * big_r);
    }

    #[test]
    fn spectral_ranks_of_random_spectra(seed in any::<u64>(), p in 1usize..200) {
        let v = descending(seed, p);
        let (r, big_r) = effective_ranks_spectral(&v).unwrap();
        prop_assert!(r >= 1.0 - 1e-12 && big_r <= r * r * (1.0 + 1e-12) && big_r <= p as f64 * (1.0 + 1e-12));
    }

    #[test]
    fn projected_rmse_symmetric_nonnegative(seed in any::<u64>(), dim in 1usize..30) {
        let mut r = rng(seed);
        let a = gaussian_vec(&mut r, dim);
        let b = gaussian_vec(&mut r, dim);
        let w = random_psd(seed ^ 1, dim, dim);
        let (ab, ba) = (projected_rmse(&a, &b, &w), projected_rmse(&b, &a, &w));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert_eq!(projected_rmse(&a, &a, &w), 0.0);
    }

    #[test]
    fn exogenous_principal_part_reduces(seed in any::<u64>(), p in 6usize..60, n in 2usize..50, delta in 0.01f64..0.5, sigma in 0.2f64..3.0) {
        let base = descending(seed, p);
        let k = p / 3;
        let cov = split_orthogonal(&base, &Rotation::Identity(p), k).unwrap();
        let m = assemble_model(cov, &VectorRule::new(Shape::InvSqrt { scale: 2.0 }), &EndogeneityRule::Exogenous, SigmaRule::Fixed { sigma }, n).unwrap();
        let report = full_bounds(&m, n, delta, 32.0, 160.0).unwrap();
        let rank_u = m.cov.rank_sigma_u();
        let direct = exogenous_principal_part(m.theta0.norm(), sigma, rank_u, &base[k..], n, delta).unwrap();
        prop_assert!((report.rmse_principal - direct).abs() <= 1e-12 * direct.abs().max(1.0), "{} vs {direct}", report.rmse_principal);
    }

    #[test]
    fn trust_region_certificate(seed in any::<u64>(), d in 1usize..12, radius in 0.01f64..10.0) {
        let mut r = rng(seed);
        let q = SymMatrix::symmetrize(gaussian(&mut r, d, d));
        let b = gaussian_vec(&mut r, d);
        let sol = maximize_on_ball(&q, &b, radius).unwrap();
        prop_assert!(sol.w.norm() <= radius * (1.0 + 1e-12));
        if !sol.hard_case {
            prop_assert!(sol.stationarity <= 1e-8, "{}", sol.stationarity);
        }
        for _ in 0..50 {
            let v = gaussian_vec(&mut r, d);
            let v = &v * (radius / v.norm()) * 0.999;
            prop_assert!(q.quad_form(&v) + 2.0 * b.dot(&v) <= sol.value + 1e-9 * sol.value.abs().max(1.0));
        }
    }

    #[test]
    fn po_dominates_min_norm_risk(seed in any::<u64>(), n in 1usize..5, extra in 1usize..6) {
        let p = n + extra;
        let mut r = rng(seed);
        let x = gaussian(&mut r, n, p);
        let y = gaussian_vec(&mut r, n);
        let theta0 = gaussian_vec(&mut r, p) * 0.3;
        let xi_z = random_psd(seed ^ 7, p, p.div_ceil(2));
        let fit = min_norm_interpolator(&x, &y).unwrap();
        let b = fit.theta_hat.norm().max(theta0.norm());
        let rhs = &y - &x * &theta0;
        let sol = max_projected_risk(&x, &rhs, &theta0, &xi_z, b).unwrap();
        let risk = projected_rmse(&fit.theta_hat, &theta0, &xi_z);
        prop_assert!(sol.value >= risk - 1e-8 * (1.0 + risk));
    }
}
