use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde_json::json;

use ridgeless_iv::cgmt::tail::{tail_dominance_check, write_tail_csv, TailConfig};
use ridgeless_iv::harness::emit::write_summary_json;
use ridgeless_iv::harness::{emit_outputs, run_setup, EstimatorKind, ExperimentConfig, ModelSpec, OutputFormat, SetupId};
use ridgeless_iv::matops::SymMatrix;
use ridgeless_iv::metrics::{
    effective_ranks, effective_ranks_spectral, evaluate_conditions, full_bounds, norm_effective_ranks,
    write_bounds_csv, write_conditions_csv, ConditionFamily, NormKind, C1_CEILING, C2_CEILING,
};
use ridgeless_iv::{Error, Result};

#[derive(Parser)]
#[command(name = "riv", version, about = "Ridgeless regression under endogeneity: simulations, ranks, bounds and checks")]
struct Cli {
    /// Overrides the seed of the config or subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    L1,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment from a JSON config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config, then $RIDGELESS_IV_OUT, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use n = 100, 200, ..., 1000 instead of the config grid.
        #[arg(long)]
        full_grid: bool,
    },
    /// Effective ranks of a CSV matrix, or of the covariances of a setup or condition family.
    Ranks {
        /// A CSV file with a square matrix, a setup id (i..ix) or a family (example1..3, identity).
        #[arg(long)]
        matrix: String,
        /// Sample size used to build a setup or family.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Also estimate norm-based ranks for a CSV matrix.
        #[arg(long, value_enum)]
        norm: Option<NormArg>,
        #[arg(long, default_value_t = 10_000)]
        mc: usize,
    },
    /// Evaluate the benign-overfitting sequences of a family over a grid of n.
    Conditions {
        #[arg(long)]
        profile: String,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 300, 400, 500, 600, 700, 800])]
        n_grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Risk and norm bounds for a setup.
    Bounds {
        #[arg(long)]
        setup: SetupId,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long, default_value_t = C1_CEILING)]
        c1: f64,
        #[arg(long, default_value_t = C2_CEILING)]
        c2: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo tail comparison of the primary and auxiliary problems.
    CgmtCheck {
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Total dimension, split as p1 = p - p/2 instrument and p2 = p/2 latent directions.
        #[arg(long, default_value_t = 4)]
        p: usize,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ridgeless against the lasso-IV baseline on a comparison setup.
    Compare {
        #[arg(long)]
        setup: SetupId,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [100, 200, 300, 400])]
        n_grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_all(result: &ridgeless_iv::harness::ExperimentResult, dir: &Path) -> Result<()> {
    let mut files = emit_outputs(result, dir, OutputFormat::Csv)?;
    files.extend(emit_outputs(result, dir, OutputFormat::PlotData)?);
    let summary = dir.join(format!("{}.summary.json", result.config.setup));
    write_summary_json(result, &summary)?;
    files.push(summary);
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn print_means(result: &ridgeless_iv::harness::ExperimentResult) {
    println!("setup,n,estimator,reps,mean,stderr");
    for a in &result.aggregates {
        println!("{},{},{},{},{},{}", a.setup, a.n, a.estimator, a.reps, a.mean, a.stderr);
    }
}

fn read_matrix_csv(path: &Path) -> Result<SymMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::InvalidData(format!("'{s}': {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!("{} is not a square matrix", path.display())));
    }
    SymMatrix::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn spectral_ranks(values: &[f64]) -> serde_json::Value {
    match effective_ranks_spectral(values) {
        Ok((r, big_r)) => json!({ "r": r, "R": big_r, "trace": values.iter().sum::<f64>() }),
        Err(_) => json!(null),
    }
}

fn ranks(matrix: &str, n: usize, norm: Option<NormArg>, mc: usize, seed: u64) -> Result<()> {
    let path = Path::new(matrix);
    if path.is_file() {
        let s = read_matrix_csv(path)?;
        let (r, big_r) = effective_ranks(&s)?;
        let mut out = json!({ "dim": s.dim(), "r": r, "R": big_r });
        if let Some(kind) = norm {
            let kind = match kind {
                NormArg::L2 => NormKind::L2,
                NormArg::L1 => NormKind::L1,
            };
            out["norm_ranks"] = serde_json::to_value(norm_effective_ranks(&s, kind, mc, seed)?)?;
        }
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    let model = match matrix.parse::<SetupId>() {
        Ok(id) if id != SetupId::Custom => ModelSpec::builtin(id)?.build(n)?,
        _ => ConditionFamily::by_name(matrix)
            .map_err(|_| Error::InvalidConfig(format!("'{matrix}' is neither a file, a setup id nor a family")))?
            .0
            .model(n)?,
    };
    let cov = &model.cov;
    let out = json!({
        "n": n,
        "p": cov.p(),
        "k_star": cov.k_star(),
        "base": spectral_ranks(cov.base_eigenvalues()),
        "sigma_u": spectral_ranks(cov.sigma_u_eigenvalues()),
        "xi_z": spectral_ranks(cov.xi_z_eigenvalues()),
        "tail_ranks_at_k_star": spectral_ranks(&cov.base_eigenvalues()[cov.k_star()..]),
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, full_grid } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.base_seed = seed;
            }
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            if full_grid {
                cfg.n_grid = ExperimentConfig::full_grid();
            }
            let result = run_setup(&cfg)?;
            write_all(&result, &cfg.resolved_output_dir())?;
            print_means(&result);
        }
        Command::Ranks { matrix, n, norm, mc } => ranks(&matrix, n, norm, mc, cli.seed.unwrap_or(0))?,
        Command::Conditions { profile, n_grid, out } => {
            let (family, mode) = ConditionFamily::by_name(&profile)?;
            let report = evaluate_conditions(&family, &n_grid, mode)?;
            println!("sequence,decreasing,values");
            for (name, values) in &report.sequences {
                let v: Vec<String> = values.iter().map(|x| format!("{x:.6e}")).collect();
                println!("{name},{},{}", report.verdicts[name].decreasing, v.join(" "));
            }
            if let Some(path) = out {
                write_conditions_csv(&report, &path)?;
            }
        }
        Command::Bounds { setup, n, delta, c1, c2, out } => {
            let model = ModelSpec::builtin(setup)?.build(n).map_err(|e| e.context(format!("setup {setup}")))?;
            let report = full_bounds(&model, n, delta, c1, c2)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(path) = out {
                write_bounds_csv(std::slice::from_ref(&report), &path)?;
            }
        }
        Command::CgmtCheck { n, p, reps, out } => {
            if p < 1 {
                return Err(Error::InvalidConfig("p must be at least 1".into()));
            }
            let mut cfg = TailConfig {
                n,
                p1: p - p / 2,
                p2: p / 2,
                reps,
                ..TailConfig::default()
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
                cfg.ao.seed = seed;
            }
            let report = tail_dominance_check(&cfg)?;
            println!("c,p_po_gt,p_ao_ge,stderr_po,stderr_ao");
            for i in 0..report.c_grid.len() {
                println!(
                    "{},{},{},{},{}",
                    report.c_grid[i], report.p_phi_gt[i], report.p_phi_ao_ge[i], report.stderr_po[i], report.stderr_ao[i]
                );
            }
            println!(
                "violations={} reps={} po_infeasible={} ao_empty={}",
                report.violations, report.reps, report.po_infeasible, report.ao_empty
            );
            if let Some(path) = out {
                write_tail_csv(&report, &path)?;
            }
        }
        Command::Compare { setup, reps, n_grid, out } => {
            if !matches!(setup, SetupId::Vii | SetupId::Viii | SetupId::Ix) {
                return Err(Error::InvalidConfig(format!("compare runs setups vii, viii or ix, not {setup}")));
            }
            let cfg = ExperimentConfig {
                n_grid,
                estimators: vec![EstimatorKind::Ridgeless, EstimatorKind::LassoIv],
                output_dir: out,
                ..ExperimentConfig::new(setup, reps, cli.seed.unwrap_or(2024))
            };
            let result = run_setup(&cfg)?;
            write_all(&result, &cfg.resolved_output_dir())?;
            print_means(&result);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_io() {
                ExitCode::from(3)
            } else if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
