//! Capacity estimators.
//!
//! Two baselines consume a single probe reading (`m1`): the proportional
//! controller (TorFlow-P) and the observed-bandwidth adjustment (sbws).
//! MLEFlow-Q maximizes a single-probe Poisson likelihood over a quantized
//! grid. The dual-probe estimators first classify each reading as Case 1
//! (probes absorbed unused capacity, `m1 = 2·m2`) or Case 2 (the relay is
//! shared equally, `m2 = C/(X+2)`), then either solve the one-round
//! likelihood in closed form (DiProber-O) or accumulate log-likelihoods over
//! the whole history (DiProber-WH).

mod baselines;
mod closed_form;
mod grid;
mod lambert;
mod likelihood;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::MeasurementPair;
use crate::error::{Error, Result};

pub use baselines::{sbws_update, torflow_p_update};
pub use closed_form::{diprober_o_estimate, diprober_wh_analytic_case2};
pub use grid::QuantizationGrid;
pub use lambert::lambert_w0;
pub use likelihood::{
    diprober_wh_update, log_likelihood_term, mleflow_q_term, mleflow_q_update, poisson_log_pmf,
    LikelihoodTable, TableUpdate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "actual")]
    Actual,
    #[serde(rename = "torflow-p")]
    TorFlowP,
    #[serde(rename = "sbws")]
    Sbws,
    #[serde(rename = "mleflow-q")]
    MleFlowQ,
    #[serde(rename = "diprober-o")]
    DiProberO,
    #[serde(rename = "diprober-wh")]
    DiProberWH,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Actual,
        EstimatorKind::TorFlowP,
        EstimatorKind::Sbws,
        EstimatorKind::MleFlowQ,
        EstimatorKind::DiProberO,
        EstimatorKind::DiProberWH,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Actual => "actual",
            EstimatorKind::TorFlowP => "torflow-p",
            EstimatorKind::Sbws => "sbws",
            EstimatorKind::MleFlowQ => "mleflow-q",
            EstimatorKind::DiProberO => "diprober-o",
            EstimatorKind::DiProberWH => "diprober-wh",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                let valid: Vec<_> = EstimatorKind::ALL.iter().map(|k| k.name()).collect();
                Error::InvalidInput(format!(
                    "unknown method {s:?}; valid methods: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Expected number of users per round.
    pub lambda_s: f64,
    /// Average bandwidth used by one client, kb/s.
    pub c_avg_client: f64,
    /// Relative band for telling `m1 = 2·m2` apart from the bottlenecked case.
    pub case_tolerance: f64,
    pub grid: QuantizationGrid,
    /// Proportional gain of the TorFlow controller. Only 1.0 is modeled.
    pub kp: f64,
}

impl EstimatorConfig {
    pub fn new(lambda_s: f64, c_avg_client: f64, grid: QuantizationGrid) -> Self {
        EstimatorConfig {
            lambda_s,
            c_avg_client,
            case_tolerance: DEFAULT_CASE_TOLERANCE,
            grid,
            kp: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda_s must be > 0, got {}", self.lambda_s)));
        }
        if !(self.c_avg_client > 0.0 && self.c_avg_client.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "c_avg_client must be > 0, got {}",
                self.c_avg_client
            )));
        }
        if !(0.0..0.5).contains(&self.case_tolerance) {
            return Err(Error::InvalidInput(format!(
                "case_tolerance must lie in [0, 0.5), got {}",
                self.case_tolerance
            )));
        }
        if self.kp != 1.0 {
            return Err(Error::InvalidInput(format!(
                "only the proportional gain kp = 1 is supported, got {}",
                self.kp
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_CASE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Not bottlenecked: the probes split the relay's unused capacity.
    Unsaturated,
    /// Bottlenecked: every flow on the relay gets an equal share.
    Bottlenecked,
}

/// Case 1 iff `|m1 − 2·m2| ≤ tol·m1`.
pub fn classify_case(m: MeasurementPair, tol: f64) -> Case {
    if (m.m1 - 2.0 * m.m2).abs() <= tol * m.m1 {
        Case::Unsaturated
    } else {
        Case::Bottlenecked
    }
}
