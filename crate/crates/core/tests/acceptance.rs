//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use ridgeless_iv::cgmt::{tail_dominance_check, TailConfig};
use ridgeless_iv::covariance::{
    assemble_model, spectrum, split_nonorthogonal, split_orthogonal, tail_sums, truncation_level, EndogeneityRule,
    Shape, SigmaRule, SpectrumProfile, VectorRule,
};
use ridgeless_iv::estimators::{min_norm_interpolator, ridge};
use ridgeless_iv::harness::{run_setup, with_t_instruments, EstimatorKind, ExperimentConfig, ModelSpec, SetupId};
use ridgeless_iv::matops::{null_space_basis, op_norm, pseudoinverse_default, sym_eig, SymMatrix};
use ridgeless_iv::metrics::{
    effective_ranks, evaluate_conditions, norm_upper_bound, ConditionFamily, NormKind, C2_CEILING,
};
use ridgeless_iv::sampling::{rep_seed, sample_dataset, InstrumentDist};
use ridgeless_iv::{metrics, Error};

const RESIDUAL_TOL: f64 = 1e-8;
const NULL_PERTURBATION_TOL: f64 = 1e-12;
const RIDGE_AGREEMENT_TOL: f64 = 1e-6;
const RIDGE_LAMBDA: f64 = 1e-10;
const SPLIT_TOL: f64 = 1e-12;
const ORTHOGONALITY_TOL: f64 = 1e-10;
const JOINT_PSD_TOL: f64 = -1e-8;
const SANDWICH_SIGMAS: f64 = 3.0;
const MC_SAMPLES: usize = 10_000;
const TREND_RATIO: f64 = 0.6;
const DESK_GRID: [usize; 4] = [100, 200, 300, 400];
const TREND_REPS: usize = 30;
const COVERAGE_LEVEL: f64 = 0.9;
const COVERAGE_REPS: usize = 200;
const SEED: u64 = 20240601;

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, Box<dyn Fn() -> Outcome>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("took {took:.1?}, limit {limit:?}"))
    }
}

fn gaussian(rng: &mut ChaCha20Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn c1_interpolation() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(SEED);
    let cases: Vec<(usize, usize, u64)> = (0..200)
        .map(|_| {
            let n = rng.random_range(1..=100);
            let p = rng.random_range(2 * n..=200);
            (n, p, rng.random())
        })
        .collect();
    let worst = cases
        .par_iter()
        .map(|&(n, p, seed)| {
            let mut r = ChaCha20Rng::seed_from_u64(seed);
            let x = gaussian(&mut r, n, p);
            let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut r));
            let fit = min_norm_interpolator(&x, &y).map_err(|e| e.to_string())?;
            let th = &fit.theta_hat;
            let resid = (&x * th - &y).norm() / y.norm();
            let null = null_space_basis(&x, 1e-12).map_err(|e| e.to_string())?;
            let mut shortfall: f64 = 0.0;
            for _ in 0..100 {
                let z = &null * DVector::from_fn(null.ncols(), |_, _| StandardNormal.sample(&mut r));
                shortfall = shortfall.max(th.norm() - (th + z).norm());
            }
            let rg = ridge(&x, &y, RIDGE_LAMBDA).map_err(|e| e.to_string())?;
            let agree = (&rg.theta_hat - th).norm() / th.norm();
            Ok((resid, shortfall, agree))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let max = |f: fn(&(f64, f64, f64)) -> f64| worst.iter().map(f).fold(0.0, f64::max);
    let (resid, short, agree) = (max(|t| t.0), max(|t| t.1), max(|t| t.2));
    within(Duration::from_secs(30), start)?;
    check(
        resid <= RESIDUAL_TOL && short <= NULL_PERTURBATION_TOL && agree <= RIDGE_AGREEMENT_TOL,
        format!("200 draws: residual {resid:.1e}, null shortfall {short:.1e}, ridge gap {agree:.1e}"),
    )
}

fn c2_spectral() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(SEED + 2);
    let mut worst_ratio: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(1..=100);
        let k = rng.random_range(1..=d);
        let s = SymMatrix::gram(&gaussian(&mut rng, d, k));
        let (r, big_r) = effective_ranks(&s).map_err(|e| e.to_string())?;
        worst_ratio = worst_ratio.max(big_r / (r * r));
        let c: f64 = rng.random_range(1e-3..1e3);
        let (rc, big_rc) = effective_ranks(&s.scale(c)).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max(((rc - r) / r).abs()).max(((big_rc - big_r) / big_r).abs());
    }
    let mut sandwich_ok = true;
    let mut detail = String::new();
    for (i, d) in [3usize, 10, 40].into_iter().enumerate() {
        let s = SymMatrix::gram(&gaussian(&mut rng, d, d));
        let (r, _) = effective_ranks(&s).map_err(|e| e.to_string())?;
        let nr = metrics::norm_effective_ranks(&s, NormKind::L2, MC_SAMPLES, SEED + i as u64).map_err(|e| e.to_string())?;
        let slack = SANDWICH_SIGMAS * nr.r_stderr;
        sandwich_ok &= nr.r >= r - 1.0 - slack && nr.r <= r + slack;
        detail.push_str(&format!(" d={d}: {:.3} in [{:.3}, {:.3}]", nr.r, r - 1.0, r));
    }
    within(Duration::from_secs(60), start)?;
    check(
        worst_ratio <= 1.0 + 1e-12 && worst_scale <= 1e-12 && sandwich_ok,
        format!("max R/r^2 {worst_ratio:.4}, scale drift {worst_scale:.1e};{detail}"),
    )
}

fn c3_splitting() -> Outcome {
    let start = Instant::now();
    let model = ModelSpec::builtin(SetupId::I).and_then(|s| s.build(100)).map_err(|e| e.to_string())?;
    let (_, base) = spectrum(&SpectrumProfile::setup_log_poly(), 100).map_err(|e| e.to_string())?;
    let rot = model.cov.rotation().clone();
    let k = model.cov.k_star();
    let mut split_err: f64 = 0.0;
    for cov in [
        split_orthogonal(&base, &rot, k).map_err(|e| e.to_string())?,
        split_nonorthogonal(&base, &rot, k, 1.01, 100).map_err(|e| e.to_string())?,
    ] {
        let sx = cov.sigma_x().as_matrix();
        let diff = (sx - cov.sigma_u().as_matrix() - cov.xi_z().as_matrix()).amax();
        split_err = split_err.max(diff / sx.amax());
    }
    let cov = split_orthogonal(&base, &rot, k).map_err(|e| e.to_string())?;
    let cross = (cov.sigma_u().as_matrix() * cov.xi_z().as_matrix()).amax() / op_norm(cov.sigma_x().as_matrix());
    let mut minimal = true;
    for profile in [SpectrumProfile::setup_log_poly(), SpectrumProfile::setup_exp_plus_noise()] {
        for n in (1..=8).map(|k| 100 * k) {
            let (_, v) = spectrum(&profile, n).map_err(|e| e.to_string())?;
            let k = truncation_level(&v, n).map_err(|e| e.to_string())?;
            let tails = tail_sums(&v);
            let r_at = |j: usize| tails[j] / v[j];
            minimal &= r_at(k) > n as f64 && (k == 0 || r_at(k - 1) <= n as f64);
        }
    }
    within(Duration::from_secs(10), start)?;
    check(
        split_err <= SPLIT_TOL && cross <= ORTHOGONALITY_TOL && minimal,
        format!("split error {split_err:.1e}, |Su Xz|max/|Sx| {cross:.1e}, truncation minimal on 16 spectra: {minimal}"),
    )
}

fn c4_model_validation() -> Outcome {
    let start = Instant::now();
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_joint = f64::INFINITY;
    let mut dense_gap: f64 = 0.0;
    for id in SetupId::BUILT_IN {
        let m = ModelSpec::builtin(id).and_then(|s| s.build(100)).map_err(|e| format!("{id}: {e}"))?;
        // omega^T Sigma_u^+ omega = |rho|^2 in the eigenbasis.
        worst_excess = worst_excess.max(m.rho_eigen().norm_squared() / m.sigma2 - 1.0);
        worst_joint = worst_joint.min(m.joint_covariance_min_eigenvalue());
        // Dense oracles on a small instance of the same setup.
        let s = ModelSpec::builtin(id).and_then(|s| s.build(20)).map_err(|e| format!("{id}: {e}"))?;
        let pinv = pseudoinverse_default(s.cov.sigma_u()).map_err(|e| e.to_string())?;
        let quad = pinv.quad_form(&s.omega);
        worst_excess = worst_excess.max(quad / s.sigma2 - 1.0);
        dense_gap = dense_gap.max((quad - s.rho_eigen().norm_squared()).abs() / s.sigma2);
        let dense_min = sym_eig(&s.joint_covariance()).map_err(|e| e.to_string())?.values.min();
        worst_joint = worst_joint.min(dense_min);
    }
    let small = ModelSpec::builtin(SetupId::I).and_then(|s| s.build(20)).map_err(|e| e.to_string())?;
    let sigma = small.sigma();
    let spec = ModelSpec::builtin(SetupId::I).unwrap();
    let cov = split_orthogonal(
        small.cov.base_eigenvalues(),
        small.cov.rotation(),
        small.cov.k_star(),
    )
    .map_err(|e| e.to_string())?;
    let strong = EndogeneityRule::RotatedRho {
        rho: VectorRule::new(Shape::Harmonic { scale: 20.0 }),
    };
    let rejected = matches!(
        assemble_model(cov, &spec.theta0, &strong, SigmaRule::Fixed { sigma }, 20),
        Err(Error::EndogeneityTooStrong { .. })
    );
    within(Duration::from_secs(5), start)?;
    check(
        worst_excess <= 1e-12 && worst_joint >= JOINT_PSD_TOL && dense_gap <= 1e-9 && rejected,
        format!(
            "9 setups: max w'Su+w/s^2 - 1 = {worst_excess:.3}, min joint eig {worst_joint:.3e}, dense gap {dense_gap:.1e}; rho x10 rejected: {rejected}"
        ),
    )
}

fn trend(cfg: &ExperimentConfig) -> Result<(bool, String), String> {
    let res = run_setup(cfg).map_err(|e| e.to_string())?;
    let m = res.means(EstimatorKind::Ridgeless);
    let strictly = m.windows(2).all(|w| w[1] < w[0]);
    let ratio = m[m.len() - 1] / m[0];
    let shown: Vec<String> = m.iter().map(|v| format!("{v:.3}")).collect();
    Ok((strictly && ratio <= TREND_RATIO, format!("{} [{}] ratio {ratio:.3}", cfg.setup, shown.join(", "))))
}

fn trend_suite(ids: &[SetupId], dist: Option<f64>) -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for &id in ids {
        let mut cfg = ExperimentConfig::new(id, TREND_REPS, SEED);
        cfg.n_grid = DESK_GRID.to_vec();
        if let Some(dof) = dist {
            cfg = with_t_instruments(&cfg, dof);
        }
        let (good, detail) = trend(&cfg)?;
        ok &= good;
        parts.push(detail);
    }
    within(Duration::from_secs(15 * 60), start)?;
    check(ok, parts.join("; "))
}

fn c8_baseline() -> Outcome {
    let mut cfg = ExperimentConfig::new(SetupId::Vii, TREND_REPS, SEED);
    cfg.n_grid = vec![100, 200];
    cfg.estimators = vec![EstimatorKind::Ridgeless, EstimatorKind::LassoIv];
    let res = run_setup(&cfg).map_err(|e| e.to_string())?;
    let ridge = res.means(EstimatorKind::Ridgeless);
    let lasso = res.means(EstimatorKind::LassoIv);
    let ok = ridge.iter().zip(&lasso).all(|(r, l)| r < l);
    check(ok, format!("ridgeless {ridge:.3?} vs lasso-IV {lasso:.3?}"))
}

fn c9_coverage() -> Outcome {
    let spec = ModelSpec::builtin(SetupId::Iii).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [100usize, 200] {
        let model = spec.build(n).map_err(|e| e.to_string())?.canonical();
        let bound = norm_upper_bound(&model, n, 0.1, C2_CEILING)
            .map_err(|e| e.to_string())?
            .norm_bound
            .ok_or("norm bound unavailable")?;
        let covered = (0..COVERAGE_REPS)
            .into_par_iter()
            .map(|rep| {
                let seed = rep_seed(SEED, rep as u64, n as u64);
                let data = sample_dataset(&model, n, seed, InstrumentDist::Gaussian).map_err(|e| e.to_string())?;
                let fit = min_norm_interpolator(&data.x, &data.y).map_err(|e| e.to_string())?;
                Ok((fit.norm <= bound) as usize)
            })
            .collect::<Result<Vec<_>, String>>()?
            .into_iter()
            .sum::<usize>();
        let frac = covered as f64 / COVERAGE_REPS as f64;
        ok &= frac >= COVERAGE_LEVEL;
        parts.push(format!("n={n}: {frac:.3} under bound {bound:.1}"));
    }
    check(ok, parts.join("; "))
}

fn c10_tail() -> Outcome {
    let start = Instant::now();
    let cfg = TailConfig::default();
    let rep = tail_dominance_check(&cfg).map_err(|e| e.to_string())?;
    within(Duration::from_secs(10 * 60), start)?;
    check(
        rep.violations == 0 && rep.c_grid.len() == 20 && rep.reps == 10_000,
        format!(
            "{} violations over {} thresholds, {} reps (PO infeasible {}, AO empty {}), {:.1?}",
            rep.violations,
            rep.c_grid.len(),
            rep.reps,
            rep.po_infeasible,
            rep.ao_empty,
            start.elapsed()
        ),
    )
}

fn c11_conditions() -> Outcome {
    let grid: Vec<usize> = (1..=8).map(|k| 100 * k).collect();
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["example1", "example2", "example3"] {
        let (family, mode) = ConditionFamily::by_name(name).map_err(|e| e.to_string())?;
        let rep = evaluate_conditions(&family, &grid, mode).map_err(|e| e.to_string())?;
        ok &= rep.all_decreasing();
        parts.push(format!("{name} {} sequences decreasing: {}", rep.sequences.len(), rep.all_decreasing()));
    }
    let (family, mode) = ConditionFamily::by_name("identity").map_err(|e| e.to_string())?;
    let rep = evaluate_conditions(&family, &grid, mode).map_err(|e| e.to_string())?;
    let eff = &rep.sequences["eff_dim"];
    let increasing = eff.windows(2).all(|w| w[1] > w[0]);
    ok &= increasing;
    parts.push(format!("identity eff_dim increasing: {increasing}"));
    check(ok, parts.join("; "))
}

fn c12_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, r#"{"setup":"iii","n_grid":[100,200],"repetitions":8,"base_seed":77}"#).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("t{threads}"));
        let st = Command::new(env!("CARGO_BIN_EXE_riv"))
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(String::from_utf8_lossy(&st.stderr).into_owned());
        }
        outputs.push(std::fs::read(out.join("iii.csv")).map_err(|e| e.to_string())?);
    }
    check(
        outputs[0] == outputs[1],
        format!("{} CSV bytes at 1 and 8 threads, identical: {}", outputs[0].len(), outputs[0] == outputs[1]),
    )
}

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, "interpolation and optimality", Box::new(c1_interpolation)),
        (2, "spectral identities", Box::new(c2_spectral)),
        (3, "splitting identities", Box::new(c3_splitting)),
        (4, "model validation", Box::new(c4_model_validation)),
        (5, "convergence trend, orthogonal", Box::new(|| trend_suite(&[SetupId::I, SetupId::Ii], None))),
        (
            6,
            "convergence trend, non-orthogonal and sparse",
            Box::new(|| trend_suite(&[SetupId::Iii, SetupId::Iv, SetupId::V, SetupId::Vi], None)),
        ),
        (7, "t-instrument robustness", Box::new(|| trend_suite(&[SetupId::I], Some(5.0)))),
        (8, "baseline comparison", Box::new(c8_baseline)),
        (9, "norm bound coverage", Box::new(c9_coverage)),
        (10, "tail dominance", Box::new(c10_tail)),
        (11, "condition checker", Box::new(c11_conditions)),
        (12, "determinism", Box::new(c12_determinism)),
    ];
    // Positional arguments select criteria by number or by a substring of the name.
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| f.parse() == Ok(id) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS {name} ({took:.1?}): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name} ({took:.1?}): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
