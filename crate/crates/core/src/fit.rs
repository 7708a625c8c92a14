//! Transition-width estimation and the weighted log-linear fit
//! `log d_x = a + b·L`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::count_nonembedding_params;

/// Loss standard deviation assumed when a record carries none.
pub const DEFAULT_LOSS_STD: f64 = 2.1e-3;

/// Default significance multiplier for loss differences.
pub const DEFAULT_K_SIGMA: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("no significant divergence between the curves in the sampled range")]
    NoTransition,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate fit: all depths are equal")]
    Degenerate,
    #[error("propagated variance {0} is negative")]
    NegativeVariance(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl FitError {
    pub fn kind(&self) -> &'static str {
        match self {
            FitError::NoTransition => "NoTransition",
            FitError::InsufficientData(_) => "InsufficientData",
            FitError::Degenerate => "Degenerate",
            FitError::NegativeVariance(_) => "NegativeVariance",
            FitError::InvalidArgument(_) => "InvalidArgument",
            FitError::Io(_) => "Io",
            FitError::Parse(_) => "Parse",
        }
    }
}

impl From<std::io::Error> for FitError {
    fn from(e: std::io::Error) -> Self {
        FitError::Io(e.to_string())
    }
}

impl From<csv::Error> for FitError {
    fn from(e: csv::Error) -> Self {
        FitError::Parse(e.to_string())
    }
}

pub type Result<T, E = FitError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub depth: u32,
    pub width: u64,
    pub test_loss: f64,
    #[serde(default)]
    pub loss_std: Option<f64>,
}

impl LossRecord {
    pub fn std(&self) -> f64 {
        self.loss_std.unwrap_or(DEFAULT_LOSS_STD)
    }

    /// `ln(12 · L · d_x²)`.
    pub fn log_params(&self) -> f64 {
        (count_nonembedding_params(self.depth as u64, self.width) as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPoint {
    pub depth: u32,
    pub width: f64,
    pub width_err: f64,
}

impl TransitionPoint {
    fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(FitError::InvalidArgument(format!("width {} must be positive", self.width)));
        }
        if !(self.width_err > 0.0 && self.width_err.is_finite()) {
            return Err(FitError::InvalidArgument(format!(
                "width_err {} must be positive",
                self.width_err
            )));
        }
        Ok(())
    }
}

/// Coefficients of `log d_x = a + b·L` with their unscaled covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "FitJson", into = "FitJson")]
pub struct FitResult {
    pub a: f64,
    pub b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov_ab: f64,
    pub chi2_red: f64,
    pub r2: f64,
    pub dof: u32,
}

#[derive(Serialize, Deserialize)]
struct FitJson {
    a: f64,
    b: f64,
    cov: [[f64; 2]; 2],
    chi2_red: f64,
    r2: f64,
    dof: u32,
}

impl From<FitJson> for FitResult {
    fn from(j: FitJson) -> Self {
        FitResult {
            a: j.a,
            b: j.b,
            var_a: j.cov[0][0],
            var_b: j.cov[1][1],
            cov_ab: j.cov[0][1],
            chi2_red: j.chi2_red,
            r2: j.r2,
            dof: j.dof,
        }
    }
}

impl From<FitResult> for FitJson {
    fn from(f: FitResult) -> Self {
        FitJson {
            a: f.a,
            b: f.b,
            cov: [[f.var_a, f.cov_ab], [f.cov_ab, f.var_b]],
            chi2_red: f.chi2_red,
            r2: f.r2,
            dof: f.dof,
        }
    }
}

impl FitResult {
    /// Published fit on the five transition points.
    pub fn published() -> Self {
        FitResult {
            a: 5.039,
            b: 0.0555,
            var_a: 9.4e-4,
            var_b: 1.7e-6,
            cov_ab: -3.74e-5,
            chi2_red: 0.854,
            r2: 0.998,
            dof: 3,
        }
    }

    pub fn sigma_a(&self) -> f64 {
        self.var_a.sqrt()
    }

    pub fn sigma_b(&self) -> f64 {
        self.var_b.sqrt()
    }

    /// Fitted width `e^{a + bL}`.
    pub fn width_at(&self, depth: f64) -> f64 {
        (self.a + self.b * depth).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.a, self.b, self.var_a, self.var_b, self.cov_ab];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidArgument("fit has non-finite entries".into()));
        }
        if self.var_a < 0.0 || self.var_b < 0.0 {
            return Err(FitError::InvalidArgument("fit has negative variances".into()));
        }
        Ok(())
    }
}

/// Weighted least squares of `y = a + b·x` with per-point `σ`.
pub fn weighted_linear_fit_xy(x: &[f64], y: &[f64], sigma: &[f64]) -> Result<FitResult> {
    let n = x.len();
    if y.len() != n || sigma.len() != n {
        return Err(FitError::InvalidArgument("x, y and sigma lengths differ".into()));
    }
    if n < 3 {
        return Err(FitError::InsufficientData(format!("{n} points, need at least 3")));
    }
    if sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) || x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::InvalidArgument("non-finite data or non-positive sigma".into()));
    }
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        s += w[i];
        sx += w[i] * x[i];
        sy += w[i] * y[i];
        sxx += w[i] * x[i] * x[i];
        sxy += w[i] * x[i] * y[i];
    }
    if x.iter().all(|v| *v == x[0]) {
        return Err(FitError::Degenerate);
    }
    let delta = s * sxx - sx * sx;
    if delta <= 0.0 {
        return Err(FitError::Degenerate);
    }
    let a = (sxx * sy - sx * sxy) / delta;
    let b = (s * sxy - sx * sy) / delta;
    let chi2: f64 = (0..n).map(|i| w[i] * (y[i] - a - b * x[i]).powi(2)).sum();
    let y_mean = sy / s;
    let ss_tot: f64 = (0..n).map(|i| w[i] * (y[i] - y_mean).powi(2)).sum();
    let r2 = if chi2 == 0.0 { 1.0 } else { 1.0 - chi2 / ss_tot };
    let dof = (n - 2) as u32;
    Ok(FitResult {
        a,
        b,
        var_a: sxx / delta,
        var_b: s / delta,
        cov_ab: -sx / delta,
        chi2_red: chi2 / dof as f64,
        r2,
        dof,
    })
}

/// Fits `log d_x = a + b·L` with `σ = width_err / width`.
pub fn weighted_linear_fit(points: &[TransitionPoint]) -> Result<FitResult> {
    for p in points {
        p.validate()?;
    }
    let x: Vec<f64> = points.iter().map(|p| p.depth as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.width.ln()).collect();
    let sigma: Vec<f64> = points.iter().map(|p| p.width_err / p.width).collect();
    weighted_linear_fit_xy(&x, &y, &sigma)
}

/// `N = 12·L·e^{2a + 2bL}` and its propagated one-sigma error.
pub fn transition_size(depth: f64, fit: &FitResult) -> Result<(f64, f64)> {
    let n = 12.0 * depth * (2.0 * fit.a + 2.0 * fit.b * depth).exp();
    let radicand = fit.var_a + depth * depth * fit.var_b + 2.0 * depth * fit.cov_ab;
    if radicand < 0.0 {
        return Err(FitError::NegativeVariance(radicand));
    }
    Ok((n, 2.0 * n * radicand.sqrt()))
}

/// Piecewise-linear curve in log parameter count.
struct Curve {
    x: Vec<f64>,
    loss: Vec<f64>,
    std: Vec<f64>,
}

impl Curve {
    fn new(records: &[LossRecord]) -> Self {
        let mut pts: Vec<_> = records.iter().map(|r| (r.log_params(), r.test_loss, r.std())).collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        Curve {
            x: pts.iter().map(|p| p.0).collect(),
            loss: pts.iter().map(|p| p.1).collect(),
            std: pts.iter().map(|p| p.2).collect(),
        }
    }

    /// Interpolated `(loss, std)`, or `None` outside the sampled range.
    fn at(&self, x: f64) -> Option<(f64, f64)> {
        let (first, last) = (*self.x.first()?, *self.x.last()?);
        if x < first || x > last {
            return None;
        }
        let i = self.x.partition_point(|&v| v < x);
        if self.x[i] == x {
            return Some((self.loss[i], self.std[i]));
        }
        let t = (x - self.x[i - 1]) / (self.x[i] - self.x[i - 1]);
        let lerp = |v: &[f64]| v[i - 1] + t * (v[i] - v[i - 1]);
        Some((lerp(&self.loss), lerp(&self.std)))
    }
}

fn check_curve(records: &[LossRecord], name: &str) -> Result<u32> {
    if records.len() < 3 {
        return Err(FitError::InsufficientData(format!(
            "{name} curve has {} sizes, need at least 3",
            records.len()
        )));
    }
    let depth = records[0].depth;
    let mut widths = Vec::with_capacity(records.len());
    for r in records {
        if r.depth != depth {
            return Err(FitError::InvalidArgument(format!("{name} curve mixes depths")));
        }
        if r.width == 0 || !r.test_loss.is_finite() || r.std().is_nan() || r.std() < 0.0 {
            return Err(FitError::InvalidArgument(format!("{name} curve has an invalid record")));
        }
        widths.push(r.width);
    }
    widths.sort_unstable();
    if widths.windows(2).any(|w| w[0] == w[1]) {
        return Err(FitError::InvalidArgument(format!("{name} curve repeats a width")));
    }
    Ok(depth)
}

/// Locates the width at which the shallow curve starts to trail the deep
/// one by more than `k_sigma` combined standard deviations.
///
/// Curves are aligned in `ln(12·L·d_x²)`; the deep curve is interpolated
/// linearly at each shallow sample and samples outside its range are
/// skipped. The reported width is the midpoint of the first significant
/// sample and the compared sample before it, the error their distance.
pub fn estimate_transition(shallow: &[LossRecord], deep: &[LossRecord], k_sigma: f64) -> Result<TransitionPoint> {
    let l1 = check_curve(shallow, "shallow")?;
    let l2 = check_curve(deep, "deep")?;
    if l2 <= l1 {
        return Err(FitError::InvalidArgument(format!(
            "deep depth {l2} must exceed shallow depth {l1}"
        )));
    }
    if !(k_sigma >= 0.0 && k_sigma.is_finite()) {
        return Err(FitError::InvalidArgument(format!("k_sigma {k_sigma} must be non-negative")));
    }
    let curve = Curve::new(deep);
    let mut sorted = shallow.to_vec();
    sorted.sort_by_key(|r| r.width);
    let mut prev: Option<u64> = None;
    for r in &sorted {
        let Some((deep_loss, deep_std)) = curve.at(r.log_params()) else {
            continue;
        };
        let threshold = k_sigma * (r.std().powi(2) + deep_std.powi(2)).sqrt();
        if r.test_loss - deep_loss > threshold {
            let Some(w1) = prev else {
                return Err(FitError::InsufficientData(format!(
                    "curves already differ at the first compared width {}",
                    r.width
                )));
            };
            let (w1, w2) = (w1 as f64, r.width as f64);
            return Ok(TransitionPoint {
                depth: l1,
                width: (w1 + w2) / 2.0,
                width_err: w2 - w1,
            });
        }
        prev = Some(r.width);
    }
    if prev.is_none() {
        return Err(FitError::InsufficientData("the curves share no parameter range".into()));
    }
    Err(FitError::NoTransition)
}

/// Groups loss records by depth, validating uniqueness of `(depth, width)`.
pub fn group_by_depth(records: &[LossRecord]) -> Result<BTreeMap<u32, Vec<LossRecord>>> {
    let mut out: BTreeMap<u32, Vec<LossRecord>> = BTreeMap::new();
    for r in records {
        let bucket = out.entry(r.depth).or_default();
        if bucket.iter().any(|o| o.width == r.width) {
            return Err(FitError::InvalidArgument(format!(
                "duplicate record for depth {} width {}",
                r.depth, r.width
            )));
        }
        bucket.push(*r);
    }
    Ok(out)
}

pub fn read_losses<R: Read>(reader: R) -> Result<Vec<LossRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let records = rdr.deserialize().collect::<std::result::Result<Vec<LossRecord>, _>>()?;
    group_by_depth(&records)?;
    Ok(records)
}

pub fn write_losses<W: Write>(writer: W, records: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_transitions<R: Read>(reader: R) -> Result<Vec<TransitionPoint>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let points = rdr.deserialize().collect::<std::result::Result<Vec<TransitionPoint>, _>>()?;
    for p in &points {
        p.validate()?;
    }
    Ok(points)
}

pub fn write_transitions<W: Write>(writer: W, points: &[TransitionPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_losses_file(path: &Path) -> Result<Vec<LossRecord>> {
    read_losses(std::fs::File::open(path).map_err(|e| FitError::Io(format!("{}: {e}", path.display())))?)
}

pub fn read_transitions_file(path: &Path) -> Result<Vec<TransitionPoint>> {
    read_transitions(std::fs::File::open(path).map_err(|e| FitError::Io(format!("{}: {e}", path.display())))?)
}

pub fn read_fit_file(path: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(path).map_err(|e| FitError::Io(format!("{}: {e}", path.display())))?;
    let fit: FitResult = serde_json::from_str(&text).map_err(|e| FitError::Parse(e.to_string()))?;
    fit.validate()?;
    Ok(fit)
}
