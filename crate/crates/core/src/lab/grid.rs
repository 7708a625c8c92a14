//! Grid tensors of the network output and their matricizations.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::omega::{rank_from_singular_values, singular_values};
use super::{LabError, Result};
use crate::exec::{self, ExecMode};
use crate::model::{network_forward, Matrix, NetworkConfig, Theta};

/// Largest side of the lemma sub-matrix.
pub const MAX_LEMMA_SIDE: usize = 256;
/// Largest side of a full matricization.
pub const MAX_FULL_SIDE: usize = 4096;

const MAX_PARTITION_N: usize = 12;

/// Balanced split of the positions `0..N`, anchor on side `a`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl Partition {
    /// `A = {0, .., N/2 - 1}`.
    pub fn contiguous(n: usize) -> Self {
        Self {
            a: (0..n / 2).collect(),
            b: (n / 2..n).collect(),
        }
    }

    fn check(&self, n: usize, anchor: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.a.iter().chain(&self.b) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(LabError::InvalidArgument(format!(
                    "partition is not a split of 0..{n}"
                )));
            }
        }
        if seen.iter().any(|s| !s) || self.a.len() != self.b.len() {
            return Err(LabError::InvalidArgument(format!(
                "partition of 0..{n} is not balanced"
            )));
        }
        if !self.a.contains(&anchor) {
            return Err(LabError::InvalidArgument(format!("anchor {anchor} is not in A")));
        }
        Ok(())
    }
}

/// Which template assignments index rows and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSets {
    /// Anchor takes templates `0..M/2`, the first position of `B` takes
    /// `M/2..M`, every other position holds the last template.
    Lemma,
    /// Every position ranges over all templates; rows enumerate assignments
    /// to `A` and columns assignments to `B`, in increasing position order.
    Full,
}

/// Template vectors plus the partition and index sets used to read off a
/// matricization of the output grid tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub templates: Vec<DVector<Complex64>>,
    pub partition: Partition,
    pub anchor: usize,
    pub index_sets: IndexSets,
}

impl GridSpec {
    /// `(rows, cols)` of the matricization.
    pub fn shape(&self) -> Result<(usize, usize)> {
        let m = self.templates.len();
        match self.index_sets {
            IndexSets::Lemma => {
                if m < 3 || m.is_multiple_of(2) {
                    return Err(LabError::InvalidArgument(format!(
                        "lemma grid needs M+1 templates with M even, got {m}"
                    )));
                }
                let side = (m - 1) / 2;
                if side > MAX_LEMMA_SIDE {
                    return Err(LabError::TooLarge(format!("M/2 = {side} exceeds {MAX_LEMMA_SIDE}")));
                }
                Ok((side, side))
            }
            IndexSets::Full => {
                let side = |k: usize| {
                    (0..k).try_fold(1usize, |acc, _| acc.checked_mul(m).filter(|&v| v <= MAX_FULL_SIDE))
                };
                match (side(self.partition.a.len()), side(self.partition.b.len())) {
                    (Some(r), Some(c)) if m > 0 => Ok((r, c)),
                    _ => Err(LabError::TooLarge(format!(
                        "full matricization side exceeds {MAX_FULL_SIDE}"
                    ))),
                }
            }
        }
    }

    /// Template index at every position for matricization entry `(row, col)`.
    fn assignment(&self, n: usize, row: usize, col: usize) -> Vec<usize> {
        let m = self.templates.len();
        match self.index_sets {
            IndexSets::Lemma => {
                let half = (m - 1) / 2;
                let mut idx = vec![m - 1; n];
                idx[self.anchor] = row;
                idx[self.partition.b[0]] = half + col;
                idx
            }
            IndexSets::Full => {
                let mut idx = vec![0; n];
                let mut a = self.partition.a.clone();
                let mut b = self.partition.b.clone();
                a.sort_unstable();
                b.sort_unstable();
                // most significant digit at the smallest position
                for (positions, mut code) in [(a, row), (b, col)] {
                    for &p in positions.iter().rev() {
                        idx[p] = code % m;
                        code /= m;
                    }
                }
                idx
            }
        }
    }
}

/// Matricization of output coordinate `p` at the anchor position.
pub fn grid_matrix(
    cfg: &NetworkConfig,
    theta: &Theta<Complex64>,
    grid: &GridSpec,
    p: usize,
    mode: ExecMode,
) -> Result<Matrix<Complex64>> {
    let n = cfg.seq_len();
    grid.partition.check(n, grid.anchor)?;
    if p >= cfg.width() {
        return Err(LabError::InvalidArgument(format!(
            "output index {p} out of range for width {}",
            cfg.width()
        )));
    }
    if let Some(t) = grid.templates.iter().find(|t| t.len() != cfg.width()) {
        return Err(LabError::InvalidArgument(format!(
            "template has {} entries, expected {}",
            t.len(),
            cfg.width()
        )));
    }
    theta.check(cfg)?;
    let (rows, cols) = grid.shape()?;
    let values = exec::map_range(rows * cols, mode, |e| {
        let idx = grid.assignment(n, e / cols, e % cols);
        let x = Matrix::from_fn(cfg.width(), n, |i, j| grid.templates[idx[j]][i]);
        network_forward(&x, theta, cfg, false).map(|y| y[(p, grid.anchor)])
    });
    let values = values.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

/// Singular values of the matricization, descending.
pub fn grid_spectrum(
    cfg: &NetworkConfig,
    theta: &Theta<Complex64>,
    grid: &GridSpec,
    p: usize,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    singular_values(&grid_matrix(cfg, theta, grid, p, mode)?)
}

/// Numerical rank of the matricization; a lower bound on the separation
/// rank with respect to `grid.partition`.
pub fn grid_matricization_rank(
    cfg: &NetworkConfig,
    theta: &Theta<Complex64>,
    grid: &GridSpec,
    p: usize,
    rel_tol: f64,
) -> Result<usize> {
    let s = grid_spectrum(cfg, theta, grid, p, ExecMode::default())?;
    Ok(rank_from_singular_values(&s, rel_tol))
}

/// All balanced partitions of `0..N` with `anchor ∈ A`, in lexicographic
/// order of `A`.
pub fn enumerate_balanced_partitions(n: usize, anchor: usize) -> Result<Vec<Partition>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(LabError::InvalidArgument(format!("N = {n} must be even and positive")));
    }
    if n > MAX_PARTITION_N {
        return Err(LabError::TooLarge(format!("N = {n} exceeds {MAX_PARTITION_N}")));
    }
    if anchor >= n {
        return Err(LabError::InvalidArgument(format!("anchor {anchor} out of range")));
    }
    let others: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
    let k = n / 2 - 1;
    let mut out = Vec::new();
    for mask in 0u32..(1 << others.len()) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut a: Vec<usize> = others
            .iter()
            .enumerate()
            .filter(|(j, _)| mask >> j & 1 == 1)
            .map(|(_, &i)| i)
            .collect();
        a.push(anchor);
        a.sort_unstable();
        let b = (0..n).filter(|i| !a.contains(i)).collect();
        out.push(Partition { a, b });
    }
    out.sort_by(|x, y| x.a.cmp(&y.a));
    Ok(out)
}
