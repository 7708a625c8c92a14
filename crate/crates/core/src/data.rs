//! Bundled datasets.
//!
//! Setting `ALLOCATRON_DATA_DIR` makes the loaders read
//! `published_transitions.csv` and `gpt3_roster.json` from that directory
//! instead of the copies compiled into the crate.

use std::path::PathBuf;

use crate::fit::{read_transitions, FitError, TransitionPoint};
use crate::planner::{ModelSpec, PlannerError};

pub const DATA_DIR_ENV: &str = "ALLOCATRON_DATA_DIR";
pub const TRANSITIONS_FILE: &str = "published_transitions.csv";
pub const ROSTER_FILE: &str = "gpt3_roster.json";

const TRANSITIONS_CSV: &str = include_str!("../data/published_transitions.csv");
const ROSTER_JSON: &str = include_str!("../data/gpt3_roster.json");

fn override_path(file: &str) -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(|dir| PathBuf::from(dir).join(file))
}

/// The five measured transition points.
pub fn bundled_transitions() -> Result<Vec<TransitionPoint>, FitError> {
    match override_path(TRANSITIONS_FILE) {
        Some(path) => crate::fit::read_transitions_file(&path),
        None => read_transitions(TRANSITIONS_CSV.as_bytes()),
    }
}

/// Published model sizes and their trained shapes.
pub fn bundled_roster() -> Result<Vec<ModelSpec>, PlannerError> {
    match override_path(ROSTER_FILE) {
        Some(path) => crate::planner::read_roster_file(&path),
        None => crate::planner::parse_roster(ROSTER_JSON),
    }
}
