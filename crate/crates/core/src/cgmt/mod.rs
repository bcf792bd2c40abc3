//! Small-dimension Monte Carlo check of the Gaussian comparison between the
//! primary interpolation problem and its auxiliary problem.

pub mod ao;
pub mod po;
pub mod tail;
pub mod trust_region;

pub use ao::{solve_ao, AoOptions, AoSolution};
pub use po::{max_projected_risk, solve_po, PoInstance, PoSolution};
pub use tail::{ks_distance, tail_dominance_check, TailConfig, TailReport};
pub use trust_region::{maximize_on_ball, BallQuadratic, TrustRegionSolution};
