//! Desk-scale rank experiments: omega matrices, Hadamard powers, the
//! explicit weight/template assignment and grid-tensor matricizations.

mod assignment;
mod grid;
mod omega;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

pub use assignment::{construct_assignment, proportionality, Proportionality};
pub use grid::{
    enumerate_balanced_partitions, grid_matricization_rank, grid_matrix, grid_spectrum, GridSpec, IndexSets,
    Partition, MAX_FULL_SIDE, MAX_LEMMA_SIDE,
};
pub use omega::{
    build_omega_matrix, compositions, hadamard_power, numerical_rank, rank_from_singular_values, rank_gap,
    singular_values, verify_hadamard_rank, HadamardReport, OmegaMatrix, DEFAULT_OMEGA, DEFAULT_REL_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("too large: {0}")]
    TooLarge(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl LabError {
    pub fn kind(&self) -> &'static str {
        match self {
            LabError::InvalidArgument(_) => "InvalidArgument",
            LabError::TooLarge(_) => "TooLarge",
            LabError::NonFinite => "NonFinite",
            LabError::Model(e) => e.kind(),
        }
    }
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

/// Machine-readable outcome of a rank experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabReport {
    pub config: serde_json::Value,
    pub expected_rank: usize,
    pub measured_rank: usize,
    pub singular_values: Vec<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub proportionality: Option<Proportionality>,
}
