use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::setups::ModelSpec;
use crate::error::{Error, Result};
use crate::sampling::InstrumentDist;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RIDGELESS_IV_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetupId {
    I,
    Ii,
    Iii,
    Iv,
    V,
    Vi,
    Vii,
    Viii,
    Ix,
    Custom,
}

impl SetupId {
    pub const BUILT_IN: [SetupId; 9] = [
        SetupId::I,
        SetupId::Ii,
        SetupId::Iii,
        SetupId::Iv,
        SetupId::V,
        SetupId::Vi,
        SetupId::Vii,
        SetupId::Viii,
        SetupId::Ix,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SetupId::I => "i",
            SetupId::Ii => "ii",
            SetupId::Iii => "iii",
            SetupId::Iv => "iv",
            SetupId::V => "v",
            SetupId::Vi => "vi",
            SetupId::Vii => "vii",
            SetupId::Viii => "viii",
            SetupId::Ix => "ix",
            SetupId::Custom => "custom",
        }
    }
}

impl fmt::Display for SetupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SetupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        SetupId::BUILT_IN
            .iter()
            .chain(std::iter::once(&SetupId::Custom))
            .find(|id| id.as_str() == lower)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown setup '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ridgeless,
    LassoIv,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Ridgeless => "ridgeless",
            EstimatorKind::LassoIv => "lasso_iv",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridgeless" => Ok(EstimatorKind::Ridgeless),
            "lasso_iv" => Ok(EstimatorKind::LassoIv),
            other => Err(Error::InvalidConfig(format!("unknown estimator '{other}'"))),
        }
    }
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Ridgeless]
}

/// One simulation run, read from and echoed as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setup: SetupId,
    pub n_grid: Vec<usize>,
    pub repetitions: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub instrument_dist: InstrumentDist,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    /// Required for `custom`; replaces the built-in parameters of a named setup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Desk-scale defaults: `n` in {100, 200, 300, 400}.
    pub fn new(setup: SetupId, repetitions: usize, base_seed: u64) -> Self {
        ExperimentConfig {
            setup,
            n_grid: vec![100, 200, 300, 400],
            repetitions,
            base_seed,
            instrument_dist: InstrumentDist::Gaussian,
            estimators: default_estimators(),
            model: None,
            output_dir: None,
        }
    }

    /// The full grid `n = 100, 200, ..., 1000`.
    pub fn full_grid() -> Vec<usize> {
        (1..=10).map(|k| 100 * k).collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::InvalidConfig("n_grid is empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("n_grid must be strictly ascending".into()));
        }
        if self.n_grid[0] < 2 {
            return Err(Error::InvalidConfig("sample sizes must be at least 2".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("estimator list is empty".into()));
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return Err(Error::InvalidConfig("estimator listed twice".into()));
        }
        if self.setup == SetupId::Custom && self.model.is_none() {
            return Err(Error::InvalidConfig("custom setup needs a 'model' section".into()));
        }
        if let InstrumentDist::StudentT { dof } = self.instrument_dist {
            if !(dof > 2.0 && dof.is_finite()) {
                return Err(Error::InfiniteVariance(dof));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match (&self.model, self.setup) {
            (Some(spec), _) => Ok(spec.clone()),
            (None, SetupId::Custom) => Err(Error::InvalidConfig("custom setup needs a 'model' section".into())),
            (None, id) => ModelSpec::builtin(id),
        }
    }

    /// `output_dir`, else the environment default, else `./out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_ids_round_trip() {
        for id in SetupId::BUILT_IN {
            assert_eq!(id.as_str().parse::<SetupId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
        assert!("x".parse::<SetupId>().is_err());
    }

    #[test]
    fn json_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"setup":"i","n_grid":[100,200],"repetitions":3,"base_seed":7}"#).unwrap();
        assert_eq!(cfg.estimators, vec![EstimatorKind::Ridgeless]);
        assert_eq!(cfg.instrument_dist, InstrumentDist::Gaussian);
        for bad in [
            r#"{"setup":"i","n_grid":[100],"repetitions":0,"base_seed":7}"#,
            r#"{"setup":"i","n_grid":[],"repetitions":1,"base_seed":7}"#,
            r#"{"setup":"i","n_grid":[200,100],"repetitions":1,"base_seed":7}"#,
            r#"{"setup":"custom","n_grid":[100],"repetitions":1,"base_seed":7}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::InvalidConfig(_))), "{bad}");
        }
        assert!(ExperimentConfig::from_json(r#"{"setup":"i","n_grid":[100],"repetitions":1,"base_seed":7,"typo":1}"#).is_err());
    }

    #[test]
    fn t_instruments_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"setup":"i","n_grid":[100],"repetitions":1,"base_seed":7,"instrument_dist":{"kind":"student_t","dof":5.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.instrument_dist, InstrumentDist::StudentT { dof: 5.0 });
    }
}
