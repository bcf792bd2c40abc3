use thiserror::Error;

use crate::estimators::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, cutoff {cutoff:e})")]
    NotPsd { min_eig: f64, cutoff: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid spectrum profile: {0}")]
    InvalidProfile(String),

    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("no truncation level k satisfies r(tail) > n = {n}")]
    NoSuchLevel { n: usize },

    #[error("non-orthogonal split needs alpha > 1, got {0}")]
    InvalidAlpha(f64),

    #[error("endogeneity too strong: |rho|^2 = {rho_norm2:e} exceeds sigma^2 = {sigma2:e}")]
    EndogeneityTooStrong { rho_norm2: f64, sigma2: f64 },

    #[error("model inconsistent: {0}")]
    ModelInconsistent(String),

    #[error("student-t instruments need dof > 2, got {0}")]
    InfiniteVariance(f64),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("ridge penalty must be positive, got {0}")]
    InvalidLambda(f64),

    #[error("coordinate descent did not converge in {iterations} sweeps (kkt residual {kkt:e})")]
    ConvergenceFailure {
        iterations: usize,
        kkt: f64,
        last: Box<FitResult>,
    },

    #[error("singular second-stage design: {0}")]
    SingularDesign(String),

    #[error("effective rank of the zero matrix is undefined")]
    ZeroMatrix,

    #[error("custom norm has no subgradient selector")]
    MissingSelector,

    #[error("degenerate noise: sigma_tilde^2 = {0:e} must be positive")]
    DegenerateNoise(f64),

    #[error("primary problem has no feasible point in the ball: {0}")]
    NoFeasiblePoint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(self.root(), Error::Io(_) | Error::Csv(_))
    }

    /// Rejected input: bad configs, profiles or model parameters.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::InvalidConfig(_)
                | Error::InvalidProfile(_)
                | Error::InvalidSpectrum(_)
                | Error::InvalidAlpha(_)
                | Error::NoSuchLevel { .. }
                | Error::EndogeneityTooStrong { .. }
                | Error::ModelInconsistent(_)
                | Error::InfiniteVariance(_)
                | Error::DegenerateNoise(_)
                | Error::InvalidData(_)
                | Error::DimensionMismatch(_)
                | Error::NotPsd { .. }
                | Error::Json(_)
        )
    }
}
