use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::EstimatorKind;
use super::run::{ExperimentResult, Record};
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "setup,n,rep,estimator,projected_rmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `{setup}.csv`, one row per `(n, rep, estimator)`.
    Csv,
    /// `{setup}_{estimator}.plot.csv` with columns `n,mean,stderr`.
    PlotData,
}

fn io_context(e: impl Into<Error>, path: &Path) -> Error {
    e.into().context(format!("writing {}", path.display()))
}

/// Writes the result under `dir` and returns the files written.
pub fn emit_outputs(result: &ExperimentResult, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    if result.records.is_empty() {
        return Err(Error::InvalidConfig("result has no records".into()));
    }
    fs::create_dir_all(dir).map_err(|e| io_context(e, dir))?;
    let setup = &result.records[0].setup;
    match format {
        OutputFormat::Csv => {
            let path = dir.join(format!("{setup}.csv"));
            let mut w = csv::Writer::from_path(&path).map_err(|e| io_context(e, &path))?;
            for r in &result.records {
                w.serialize(r).map_err(|e| io_context(e, &path))?;
            }
            w.flush().map_err(|e| io_context(e, &path))?;
            Ok(vec![path])
        }
        OutputFormat::PlotData => {
            let mut estimators: Vec<EstimatorKind> = result.aggregates.iter().map(|a| a.estimator).collect();
            estimators.sort();
            estimators.dedup();
            let mut out = Vec::new();
            for est in estimators {
                let path = dir.join(format!("{setup}_{est}.plot.csv"));
                let mut w = csv::Writer::from_path(&path).map_err(|e| io_context(e, &path))?;
                w.write_record(["n", "mean", "stderr"]).map_err(|e| io_context(e, &path))?;
                for a in result.aggregates.iter().filter(|a| a.estimator == est) {
                    w.write_record([a.n.to_string(), a.mean.to_string(), a.stderr.to_string()])
                        .map_err(|e| io_context(e, &path))?;
                }
                w.flush().map_err(|e| io_context(e, &path))?;
                out.push(path);
            }
            Ok(out)
        }
    }
}

/// Config echo, aggregates and timing as pretty JSON.
pub fn write_summary_json(result: &ExperimentResult, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(result)?;
    fs::write(path, text).map_err(|e| io_context(e, path))
}

pub fn read_records_csv(path: &Path) -> Result<Vec<Record>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::InvalidData(format!("unexpected header '{header}'")));
    }
    Ok(r.deserialize().collect::<std::result::Result<Vec<Record>, _>>()?)
}
