//! Separation-rank bounds for the linearized self-attention network.
//!
//! Every quantity here is reported on a log₃ scale. The two regimes are
//! split at `L = log₃ d_x`, compared exactly as `3^L` against `d_x`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("multiset coefficient ({n}, {k}) overflows 128 bits")]
    Overflow { n: u64, k: u64 },
}

impl BoundsError {
    pub fn kind(&self) -> &'static str {
        match self {
            BoundsError::RegimeMismatch(_) => "RegimeMismatch",
            BoundsError::InvalidArgument(_) => "InvalidArgument",
            BoundsError::Overflow { .. } => "Overflow",
        }
    }
}

pub type Result<T, E = BoundsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `L < log₃ d_x`
    DepthEfficiency,
    /// `L > log₃ d_x`
    DepthInefficiency,
    /// `3^L = d_x`
    Boundary,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::DepthEfficiency => "DepthEfficiency",
            Regime::DepthInefficiency => "DepthInefficiency",
            Regime::Boundary => "Boundary",
        })
    }
}

/// Correction terms entering the bounds. Only the ones used by the
/// producing theorem are set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Corrections {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub b2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    /// Lower bound, clamped at 0.
    pub log3_lower: f64,
    pub log3_upper: f64,
    pub regime: Regime,
    pub corrections: Corrections,
    /// Lower bound before clamping.
    pub raw_lower: f64,
}

pub fn log3(x: f64) -> f64 {
    x.ln() / 3f64.ln()
}

/// `log₃ d_x`.
pub fn depth_threshold(width: u64) -> f64 {
    log3(width as f64)
}

/// Compares `3^L` with `d_x` exactly.
pub fn classify_regime(depth: u32, width: u64) -> Regime {
    // 3^41 > u64::MAX, so anything deeper is always past the threshold.
    let pow = 3u128.checked_pow(depth).unwrap_or(u128::MAX);
    match pow.cmp(&(width as u128)) {
        std::cmp::Ordering::Less => Regime::DepthEfficiency,
        std::cmp::Ordering::Greater => Regime::DepthInefficiency,
        std::cmp::Ordering::Equal => Regime::Boundary,
    }
}

/// `C(L) = (3^L - 1)/2` as a float, valid far beyond the integer range.
pub fn mixed_copies_f64(depth: u32) -> f64 {
    (3f64.powi(depth as i32) - 1.0) / 2.0
}

fn check_positive(depth: u32, width: u64, heads: u64) -> Result<()> {
    if depth == 0 || width == 0 || heads == 0 {
        return Err(BoundsError::InvalidArgument(
            "depth, width and heads must be positive".into(),
        ));
    }
    Ok(())
}

fn theorem1_upper(depth: u32, width: f64, heads: f64) -> f64 {
    mixed_copies_f64(depth) * log3(width + heads)
}

fn theorem2_upper_parts(depth: u32, width: f64) -> (f64, f64, f64) {
    let l = depth as f64;
    let c1 = l;
    let c2 = -2.0 * width * log3(width / (2.0 * (2.0 * std::f64::consts::E).sqrt())) + log3(width);
    (2.0 * width * l + c1 + c2, c1, c2)
}

/// Bounds in the depth-efficiency regime.
pub fn theorem1_bounds(depth: u32, width: u64, heads: u64) -> Result<BoundEstimate> {
    check_positive(depth, width, heads)?;
    let regime = classify_regime(depth, width);
    if regime != Regime::DepthEfficiency {
        return Err(BoundsError::RegimeMismatch(format!(
            "L={depth} is not below log3({width})"
        )));
    }
    if width <= heads {
        return Err(BoundsError::InvalidArgument(format!(
            "width {width} must exceed heads {heads}"
        )));
    }
    let a = -(depth as f64) + 2.0 - log3(2.0);
    let inner = log3((width - heads) as f64) + a;
    if inner <= 0.0 {
        return Err(BoundsError::InvalidArgument(format!(
            "log3(d_x - H) + a = {inner} is not positive"
        )));
    }
    let lower = 3f64.powi(depth as i32 - 2) * inner;
    let upper = theorem1_upper(depth, width as f64, heads as f64);
    Ok(BoundEstimate {
        log3_lower: lower,
        log3_upper: upper,
        regime,
        corrections: Corrections {
            a: Some(a),
            ..Default::default()
        },
        raw_lower: lower,
    })
}

/// Bounds in the depth-inefficiency regime.
pub fn theorem2_bounds(depth: u32, width: u64, heads: u64) -> Result<BoundEstimate> {
    check_positive(depth, width, heads)?;
    let regime = classify_regime(depth, width);
    if regime != Regime::DepthInefficiency {
        return Err(BoundsError::RegimeMismatch(format!(
            "L={depth} is not above log3({width})"
        )));
    }
    if width <= heads + 2 {
        return Err(BoundsError::InvalidArgument(format!(
            "width {width} must exceed heads + 2 = {}",
            heads + 2
        )));
    }
    let (l, d, h) = (depth as f64, width as f64, heads as f64);
    let b1 = -l * (h / 2.0 + 1.0);
    let b2 = -d * (1.0 + 0.5 * log3((d - h) / 2.0));
    let raw = 0.5 * d * l + b1 + b2;
    let (upper, c1, c2) = theorem2_upper_parts(depth, d);
    Ok(BoundEstimate {
        log3_lower: raw.max(0.0),
        log3_upper: upper,
        regime,
        corrections: Corrections {
            b1: Some(b1),
            b2: Some(b2),
            c1: Some(c1),
            c2: Some(c2),
            ..Default::default()
        },
        raw_lower: raw,
    })
}

/// Dispatches to the theorem matching the regime of `(L, d_x)`.
pub fn regime_bounds(depth: u32, width: u64, heads: u64) -> Result<BoundEstimate> {
    match classify_regime(depth, width) {
        Regime::DepthEfficiency => theorem1_bounds(depth, width, heads),
        Regime::DepthInefficiency => theorem2_bounds(depth, width, heads),
        Regime::Boundary => Err(BoundsError::RegimeMismatch(format!(
            "3^{depth} = {width} lies on the regime boundary"
        ))),
    }
}

/// `C(L) · log₃(H (d_a + 1))`.
pub fn exact_count_log_deep(depth: u32, width: u64, heads: u64) -> Result<f64> {
    check_positive(depth, width, heads)?;
    if !width.is_multiple_of(heads) {
        return Err(BoundsError::InvalidArgument(format!(
            "heads {heads} must divide width {width}"
        )));
    }
    let da = (width / heads) as f64;
    Ok(mixed_copies_f64(depth) * log3(heads as f64 * (da + 1.0)))
}

/// `log₃[d_x (C+1) · multiset(d_x, 2C) · (2C/d_x + 1)^{d_x}]`.
pub fn exact_count_log_wide(depth: u32, width: u64) -> Result<f64> {
    if depth == 0 || width == 0 {
        return Err(BoundsError::InvalidArgument(
            "depth and width must be positive".into(),
        ));
    }
    let c = mixed_copies_f64(depth);
    let d = width as f64;
    Ok(log3(d * (c + 1.0)) + log_multiset(d, 2.0 * c) / 3f64.ln() + d * log3(2.0 * c / d + 1.0))
}

/// `L log₃ L + (4 log₃ d_x + log₃ N − log₃ H) · C(L)`.
pub fn residual_upper_bound(depth: u32, width: u64, seq_len: u64, heads: u64) -> Result<f64> {
    check_positive(depth, width, heads)?;
    if seq_len == 0 {
        return Err(BoundsError::InvalidArgument("seq_len must be positive".into()));
    }
    let l = depth as f64;
    Ok(l * log3(l)
        + (4.0 * log3(width as f64) + log3(seq_len as f64) - log3(heads as f64)) * mixed_copies_f64(depth))
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exact `C(n + k − 1, k)`.
pub fn multiset_coefficient(n: u64, k: u64) -> Result<u128> {
    if k == 0 {
        return Ok(1);
    }
    if n == 0 {
        return Ok(0);
    }
    let mut r: u128 = 1;
    for i in 1..=k as u128 {
        // r · (n+i-1) / i is an integer; divide out the common factor first.
        let g = gcd(r, i);
        let t = (n as u128 + i - 1) / (i / g);
        r = (r / g)
            .checked_mul(t)
            .ok_or(BoundsError::Overflow { n, k })?;
    }
    Ok(r)
}

/// Natural log of `C(n + k − 1, k)` for real arguments.
pub fn log_multiset(n: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 0.0;
    }
    ln_gamma(n + k) - ln_gamma(k + 1.0) - ln_gamma(n)
}

/// Width required of the shallow network, or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShallowWidth {
    Finite(u64),
    Infinity,
}

/// Regime-appropriate upper bound of `(L, d)`, made monotone in `d`.
///
/// Below `3^L` the inefficiency-regime bound is increasing on its own. From
/// `3^L` on it is replaced by the running maximum with the efficiency-regime
/// bound, which keeps the envelope non-decreasing across the boundary.
fn shallow_upper_envelope(depth: u32, width: f64, heads: f64) -> f64 {
    let threshold = 3f64.powi(depth as i32);
    let u1 = |d: f64| theorem1_upper(depth, d, heads);
    let u2 = |d: f64| theorem2_upper_parts(depth, d).0;
    if width < threshold {
        u2(width)
    } else {
        let at_boundary = u1(threshold).max(u2(threshold));
        let below = if threshold > 1.0 { u2(threshold - 1.0) } else { f64::NEG_INFINITY };
        u1(width).max(at_boundary).max(below)
    }
}

/// Smallest width at depth `L_shallow` whose upper bound reaches the lower
/// bound of `(L_deep, d_deep)`. Searches widths up to `2^64`.
pub fn min_equivalent_shallow_width(
    deep_depth: u32,
    deep_width: u64,
    heads: u64,
    shallow_depth: u32,
) -> Result<ShallowWidth> {
    check_positive(deep_depth, deep_width, heads)?;
    if shallow_depth == 0 || shallow_depth > deep_depth {
        return Err(BoundsError::InvalidArgument(format!(
            "shallow depth {shallow_depth} must lie in [1, {deep_depth}]"
        )));
    }
    let target = match regime_bounds(deep_depth, deep_width, heads) {
        Ok(b) => b.log3_lower,
        Err(e) => {
            return Err(BoundsError::InvalidArgument(format!(
                "deep lower bound undefined: {e}"
            )))
        }
    };
    let h = heads as f64;
    let reaches = |d: u128| shallow_upper_envelope(shallow_depth, d as f64, h) >= target;
    let cap: u128 = 1 << 64;
    let mut hi: u128 = 1;
    while !reaches(hi) {
        if hi >= cap {
            return Ok(ShallowWidth::Infinity);
        }
        hi *= 2;
    }
    let mut lo = hi / 2;
    if hi == 1 {
        return Ok(ShallowWidth::Finite(1));
    }
    // invariant: !reaches(lo) (or lo == 0), reaches(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if reaches(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(u64::try_from(hi).map_or(ShallowWidth::Infinity, ShallowWidth::Finite))
}
