//! Closed-form evaluators: complexity formulas, committee sampling and the
//! forwarding incentive.

pub mod complexity;
pub mod incentive;
pub mod sampling;
pub mod sweep;

pub use complexity::{compare_trace, measure, psyncpcn_expected, syncpcn_expected, theta, ComplexityReport, Expected};
pub use incentive::{forwarding_is_rational, incentive_threshold, parse_rational};
pub use sampling::{committee_correct_exact, committee_correct_probability, standard_grid, SamplingParams};
pub use sweep::{sweep_csv, SweepSpec};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Domain(String),
    #[error("run failed: {0}")]
    Run(String),
}
