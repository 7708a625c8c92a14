//! Explicit weights and templates whose grid sub-matrix is proportional to
//! `(V Vᵀ)^{⊙ 3^{L-2}}`.
//!
//! Each head owns a segment of `d_a = 2k + 1` coordinates: an `A` half of
//! `k` slots, a `B` half of `k` slots and one constant slot. Templates
//! `0..M/2` carry the rows of `V` in the `A` halves, templates `M/2..M`
//! carry them in the `B` halves, and the last template is constants only.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, IndexSets, Partition};
use super::omega::hadamard_power;
use super::{LabError, Result};
use crate::model::{HeadWeights, LayerWeights, Matrix, NetworkConfig, Theta};

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Builds the templates and weights for `V` (`M/2` unit rows, `(d_x - H)/2`
/// columns). Requires odd `d_a`, `L ≥ 3` and even `N`.
pub fn construct_assignment(v: &Matrix<f64>, cfg: &NetworkConfig) -> Result<(GridSpec, Theta<Complex64>)> {
    let (dx, heads, da, n) = (cfg.width(), cfg.heads(), cfg.head_dim(), cfg.seq_len());
    let depth = cfg.depth() as usize;
    if da % 2 == 0 {
        return Err(LabError::InvalidArgument(format!("head dimension {da} must be odd")));
    }
    if depth < 3 {
        return Err(LabError::InvalidArgument(format!("depth {depth} must be at least 3")));
    }
    if n % 2 != 0 || n < 2 {
        return Err(LabError::InvalidArgument(format!("N = {n} must be even")));
    }
    let k = (da - 1) / 2;
    if v.ncols() != heads * k {
        return Err(LabError::InvalidArgument(format!(
            "V has {} columns, expected (d_x - H)/2 = {}",
            v.ncols(),
            heads * k
        )));
    }
    let half = v.nrows();
    if half == 0 {
        return Err(LabError::InvalidArgument("V has no rows".into()));
    }
    if v.row_iter().any(|r| (r.norm() - 1.0).abs() > 1e-9) {
        return Err(LabError::InvalidArgument("rows of V must have unit norm".into()));
    }
    let m = 2 * half;

    let templates = (0..=m)
        .map(|t| {
            DVector::from_fn(dx, |j, _| {
                let (h, r) = (j / da, j % da);
                let val = if r == da - 1 {
                    1.0
                } else if t < half && r < k {
                    v[(t, h * k + r)]
                } else if (half..m).contains(&t) && r >= k {
                    v[(t - half, h * k + r - k)]
                } else {
                    0.0
                };
                c(val, 0.0)
            })
        })
        .collect();

    let inv_n = 1.0 / n as f64;
    let layers = (1..=depth)
        .map(|l| LayerWeights {
            heads: (0..heads)
                .map(|h| {
                    let base = da * h;
                    let mut w = HeadWeights::<Complex64>::zeros(cfg);
                    for a in 0..da {
                        w.output[(base + a, a)] = c(1.0, 0.0);
                    }
                    if l == 1 {
                        for a in 0..k {
                            w.value[(a, base + a)] = c(1.0, 0.0);
                            w.value[(a, base + k + a)] = c(0.0, 1.0);
                            w.value[(k + a, base + a)] = c(-1.0, 0.0);
                            w.value[(k + a, base + k + a)] = c(0.0, -1.0);
                        }
                        for a in k..da {
                            w.value[(a, base + da - 1)] += c(inv_n, 0.0);
                        }
                        w.key[(0, da - 1)] = c(1.0, 0.0);
                    } else if l < depth {
                        for a in 0..da {
                            w.value[(a, base + a)] = c(1.0, 0.0);
                        }
                    } else {
                        for a in 0..da {
                            for hh in 0..heads {
                                w.value[(a, da * hh + da - 1)] = c(0.0, 1.0);
                            }
                        }
                    }
                    if l == 2 {
                        for a in 0..k {
                            w.key[(a, base + a)] = c(1.0, 0.0);
                        }
                    } else if l > 2 {
                        for j in (0..dx).filter(|j| (j + 1) % da != 0) {
                            w.key[(0, j)] = c(1.0, 0.0);
                        }
                    }
                    w.query = w.key.clone();
                    w
                })
                .collect(),
        })
        .collect();

    let grid = GridSpec {
        templates,
        partition: Partition::contiguous(n),
        anchor: 0,
        index_sets: IndexSets::Lemma,
    };
    Ok((grid, Theta { layers }))
}

/// Entrywise ratio of a measured sub-matrix to its predicted shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportionality {
    /// Median ratio (real and imaginary parts medianed separately).
    pub ratio_re: f64,
    pub ratio_im: f64,
    /// Largest `|ratio - median| / |median|` over all entries.
    pub max_rel_deviation: f64,
}

/// Compares `measured` with `(V Vᵀ)^{⊙ power}`.
pub fn proportionality(measured: &Matrix<Complex64>, v: &Matrix<f64>, power: u32) -> Result<Proportionality> {
    let predicted = hadamard_power(&(v * v.transpose()), power);
    if predicted.shape() != measured.shape() {
        return Err(LabError::InvalidArgument(format!(
            "measured {:?} and predicted {:?} shapes differ",
            measured.shape(),
            predicted.shape()
        )));
    }
    if predicted.iter().any(|x| *x == 0.0) {
        return Err(LabError::InvalidArgument("predicted matrix has zero entries".into()));
    }
    let ratios: Vec<Complex64> = measured.iter().zip(predicted.iter()).map(|(m, p)| m / p).collect();
    let median = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2.0
        }
    };
    let med = c(
        median(ratios.iter().map(|r| r.re).collect()),
        median(ratios.iter().map(|r| r.im).collect()),
    );
    if med.norm() == 0.0 {
        return Err(LabError::InvalidArgument("median ratio is zero".into()));
    }
    let dev = ratios.iter().map(|r| (r - med).norm() / med.norm()).fold(0.0, f64::max);
    Ok(Proportionality {
        ratio_re: med.re,
        ratio_im: med.im,
        max_rel_deviation: dev,
    })
}
