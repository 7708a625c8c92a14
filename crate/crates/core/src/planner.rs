//! Depth/width recommendations from the fitted transition curve.
//!
//! The curve `N(L) = 12·L·e^{2a+2bL}` gives, per depth, the size at which
//! that depth becomes the best use of the budget. Inverting it yields the
//! recommended depth for a given budget.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{transition_size, FitError, FitResult};
use crate::model::count_nonembedding_params;

/// Search interval for [`optimal_depth`].
pub const DEPTH_BRACKET: (f64, f64) = (1.0, 1e4);
/// Bisection tolerance in `L`.
pub const DEPTH_TOL: f64 = 1e-6;
/// Upper limit for [`emit_transition_curve`].
pub const MAX_CURVE_DEPTH: u32 = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl PlannerError {
    pub fn kind(&self) -> &'static str {
        match self {
            PlannerError::OutOfRange(_) => "OutOfRange",
            PlannerError::InvalidArgument(_) => "InvalidArgument",
            PlannerError::Fit(e) => e.kind(),
            PlannerError::Io(_) => "Io",
            PlannerError::Parse(_) => "Parse",
        }
    }
}

impl From<std::io::Error> for PlannerError {
    fn from(e: std::io::Error) -> Self {
        PlannerError::Io(e.to_string())
    }
}

impl From<csv::Error> for PlannerError {
    fn from(e: csv::Error) -> Self {
        PlannerError::Io(e.to_string())
    }
}

pub type Result<T, E = PlannerError> = std::result::Result<T, E>;

fn check_fit(fit: &FitResult) -> Result<()> {
    fit.validate()?;
    if fit.b <= 0.0 {
        return Err(PlannerError::InvalidArgument(format!("fit slope b = {} must be positive", fit.b)));
    }
    Ok(())
}

/// `ln N(L)`, strictly increasing in `L` for `b > 0`.
fn log_transition(depth: f64, fit: &FitResult) -> f64 {
    (12.0 * depth).ln() + 2.0 * fit.a + 2.0 * fit.b * depth
}

/// Real depth `L*` with `12·L*·e^{2a + 2bL*} = N`.
pub fn optimal_depth(params: f64, fit: &FitResult) -> Result<f64> {
    check_fit(fit)?;
    if !(params > 0.0 && params.is_finite()) {
        return Err(PlannerError::InvalidArgument(format!("budget {params} must be positive")));
    }
    let target = params.ln();
    let (mut lo, mut hi) = DEPTH_BRACKET;
    if log_transition(lo, fit) > target {
        return Err(PlannerError::OutOfRange(format!(
            "budget {params:e} is below the depth-1 transition size {:e}",
            log_transition(lo, fit).exp()
        )));
    }
    if log_transition(hi, fit) < target {
        return Err(PlannerError::OutOfRange(format!(
            "budget {params:e} needs a depth beyond {hi}"
        )));
    }
    while hi - lo > DEPTH_TOL / 4.0 {
        let mid = 0.5 * (lo + hi);
        if log_transition(mid, fit) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Round half up.
pub fn round_depth(depth: f64) -> u32 {
    (depth + 0.5).floor().max(1.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSuggestion {
    pub budget: f64,
    pub optimal_depth_raw: f64,
    pub optimal_depth: u32,
    /// `sqrt(N / (12·L))`
    pub width_from_budget: f64,
    /// `e^{a + b·L}`
    pub width_from_fit: f64,
    pub n_transition: f64,
    pub dn: f64,
}

pub fn suggest_architecture(params: f64, fit: &FitResult) -> Result<ArchitectureSuggestion> {
    let raw = optimal_depth(params, fit)?;
    let depth = round_depth(raw);
    let (n_transition, dn) = transition_size(depth as f64, fit)?;
    Ok(ArchitectureSuggestion {
        budget: params,
        optimal_depth_raw: raw,
        optimal_depth: depth,
        width_from_budget: (params / (12.0 * depth as f64)).sqrt(),
        width_from_fit: fit.width_at(depth as f64),
        n_transition,
        dn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Larger than the transition size of its depth: deepen.
    TooShallow,
    /// Smaller than the transition size of its depth: widen.
    TooDeep,
    NearOptimal,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::TooShallow => "TooShallow",
            Verdict::TooDeep => "TooDeep",
            Verdict::NearOptimal => "NearOptimal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub verdict: Verdict,
    /// `N / N_transition(L)`
    pub margin: f64,
    pub params: f64,
    pub n_transition: f64,
    pub dn: f64,
}

/// Places `(L, d_x)` relative to the transition curve; within `±dN` of it
/// counts as near optimal.
pub fn audit_architecture(depth: u32, width: u64, fit: &FitResult) -> Result<AuditVerdict> {
    fit.validate()?;
    if depth == 0 || width == 0 {
        return Err(PlannerError::InvalidArgument("depth and width must be positive".into()));
    }
    let params = count_nonembedding_params(depth as u64, width) as f64;
    let (n_transition, dn) = transition_size(depth as f64, fit)?;
    let margin = params / n_transition;
    let tol = dn / n_transition;
    let verdict = if margin > 1.0 + tol {
        Verdict::TooShallow
    } else if margin < 1.0 - tol {
        Verdict::TooDeep
    } else {
        Verdict::NearOptimal
    };
    Ok(AuditVerdict {
        verdict,
        margin,
        params,
        n_transition,
        dn,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "L")]
    pub depth: u32,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "dN")]
    pub dn: f64,
}

/// Transition size and its error on `L_min..=L_max` in steps of `step`.
pub fn emit_transition_curve(fit: &FitResult, min_depth: u32, max_depth: u32, step: u32) -> Result<Vec<CurvePoint>> {
    if min_depth < 1 || min_depth > max_depth || max_depth > MAX_CURVE_DEPTH {
        return Err(PlannerError::InvalidArgument(format!(
            "need 1 <= L_min <= L_max <= {MAX_CURVE_DEPTH}, got {min_depth}..{max_depth}"
        )));
    }
    if step == 0 {
        return Err(PlannerError::InvalidArgument("step must be positive".into()));
    }
    (min_depth..=max_depth)
        .step_by(step as usize)
        .map(|l| {
            let (n, dn) = transition_size(l as f64, fit)?;
            Ok(CurvePoint { depth: l, n, dn })
        })
        .collect()
}

pub fn write_curve_csv<W: Write>(writer: W, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in curve {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

/// One model of the roster; the trained shape is absent for projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub params: f64,
    pub depth: Option<u32>,
    pub width: Option<u64>,
}

impl ModelSpec {
    /// Non-embedding size of the trained shape when known, else the
    /// nominal parameter count.
    pub fn budget(&self) -> f64 {
        match (self.depth, self.width) {
            (Some(l), Some(d)) => count_nonembedding_params(l as u64, d) as f64,
            _ => self.params,
        }
    }
}

pub fn parse_roster(text: &str) -> Result<Vec<ModelSpec>> {
    let roster: Vec<ModelSpec> = serde_json::from_str(text).map_err(|e| PlannerError::Parse(e.to_string()))?;
    for m in &roster {
        if !(m.params > 0.0 && m.params.is_finite()) || m.depth == Some(0) || m.width == Some(0) {
            return Err(PlannerError::Parse(format!("invalid roster entry {:?}", m.name)));
        }
    }
    Ok(roster)
}

pub fn read_roster_file(path: &Path) -> Result<Vec<ModelSpec>> {
    let text = std::fs::read_to_string(path).map_err(|e| PlannerError::Io(format!("{}: {e}", path.display())))?;
    parse_roster(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub name: String,
    pub params: f64,
    pub trained_depth: Option<u32>,
    pub trained_width: Option<u64>,
    pub budget: f64,
    pub optimal_depth_raw: f64,
    pub optimal_depth: u32,
    pub width_from_budget: f64,
    pub width_from_fit: f64,
    pub verdict: Option<Verdict>,
    pub margin: Option<f64>,
}

pub fn generate_table1(fit: &FitResult, models: &[ModelSpec]) -> Result<Vec<Table1Row>> {
    models
        .iter()
        .map(|m| {
            let s = suggest_architecture(m.budget(), fit)?;
            let audit = match (m.depth, m.width) {
                (Some(l), Some(d)) => Some(audit_architecture(l, d, fit)?),
                _ => None,
            };
            Ok(Table1Row {
                name: m.name.clone(),
                params: m.params,
                trained_depth: m.depth,
                trained_width: m.width,
                budget: s.budget,
                optimal_depth_raw: s.optimal_depth_raw,
                optimal_depth: s.optimal_depth,
                width_from_budget: s.width_from_budget,
                width_from_fit: s.width_from_fit,
                verdict: audit.map(|a| a.verdict),
                margin: audit.map(|a| a.margin),
            })
        })
        .collect()
}

pub fn write_table1_csv<W: Write>(writer: W, rows: &[Table1Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "name",
        "params",
        "trained_depth",
        "trained_width",
        "budget",
        "optimal_depth_raw",
        "optimal_depth",
        "width_from_budget",
        "width_from_fit",
        "verdict",
        "margin",
    ])?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.params.to_string(),
            opt(r.trained_depth.map(|v| v.to_string())),
            opt(r.trained_width.map(|v| v.to_string())),
            r.budget.to_string(),
            r.optimal_depth_raw.to_string(),
            r.optimal_depth.to_string(),
            r.width_from_budget.to_string(),
            r.width_from_fit.to_string(),
            opt(r.verdict.map(|v| v.to_string())),
            opt(r.margin.map(|v| v.to_string())),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable table with aligned columns.
pub fn format_table1_text(rows: &[Table1Row]) -> String {
    let header = [
        "model", "params", "L", "d_x", "L_opt", "L*", "d(budget)", "d(fit)", "verdict", "margin",
    ];
    let dash = || "-".to_string();
    let body: Vec<[String; 10]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                format!("{:.3e}", r.params),
                r.trained_depth.map_or_else(dash, |v| v.to_string()),
                r.trained_width.map_or_else(dash, |v| v.to_string()),
                r.optimal_depth.to_string(),
                format!("{:.2}", r.optimal_depth_raw),
                format!("{:.0}", r.width_from_budget),
                format!("{:.0}", r.width_from_fit),
                r.verdict.map_or_else(dash, |v| v.to_string()),
                r.margin.map_or_else(dash, |v| format!("{v:.3}")),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
