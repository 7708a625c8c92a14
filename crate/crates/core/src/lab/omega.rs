//! Omega matrices, Hadamard powers and SVD-based rank.

use serde::{Deserialize, Serialize};

use super::{LabError, Result};
use crate::bounds::multiset_coefficient;
use crate::model::{Field, Matrix};

/// Default relative singular-value cutoff for [`numerical_rank`].
pub const DEFAULT_REL_TOL: f64 = 1e-9;

/// Default Ω.
pub const DEFAULT_OMEGA: f64 = 2.0;

const MAX_OMEGA_ROWS: u128 = 10_000;
const MAX_HADAMARD_ROWS: u128 = 512;

/// Rows are the compositions of `λ` into `d` parts, row `α` holding
/// `Ω^{q_r} / ‖·‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaMatrix {
    pub v: Matrix<f64>,
    pub compositions: Vec<Vec<u32>>,
    pub omega: f64,
}

/// Compositions of `total` into `parts` non-negative parts, first part
/// descending (so `(2,0), (1,1), (0,2)`).
pub fn compositions(parts: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(parts: usize, total: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first);
            rec(parts - 1, total - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(parts, total, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

pub fn build_omega_matrix(d: usize, lambda: u32, omega: f64) -> Result<OmegaMatrix> {
    if d == 0 {
        return Err(LabError::InvalidArgument("d must be positive".into()));
    }
    if !(omega > 1.0 && omega.is_finite()) {
        return Err(LabError::InvalidArgument(format!("omega must exceed 1, got {omega}")));
    }
    let rows = multiset_coefficient(d as u64, lambda as u64).unwrap_or(u128::MAX);
    if rows > MAX_OMEGA_ROWS {
        return Err(LabError::TooLarge(format!(
            "multiset({d}, {lambda}) = {rows} rows exceeds {MAX_OMEGA_ROWS}"
        )));
    }
    let compositions = compositions(d, lambda);
    let mut v = Matrix::from_fn(compositions.len(), d, |a, r| omega.powi(compositions[a][r] as i32));
    for mut row in v.row_iter_mut() {
        let norm = row.norm();
        row /= norm;
    }
    Ok(OmegaMatrix {
        v,
        compositions,
        omega,
    })
}

/// Entrywise `k`-th power.
pub fn hadamard_power<T: Field>(m: &Matrix<T>, k: u32) -> Matrix<T> {
    m.map(|x| x.powi(k as i32))
}

/// Singular values in descending order.
pub fn singular_values<T: Field>(m: &Matrix<T>) -> Result<Vec<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(LabError::NonFinite);
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Number of singular values above `rel_tol · σ_max`.
pub fn numerical_rank<T: Field>(m: &Matrix<T>, rel_tol: f64) -> Result<usize> {
    Ok(rank_from_singular_values(&singular_values(m)?, rel_tol))
}

pub fn rank_from_singular_values(s: &[f64], rel_tol: f64) -> usize {
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&x| x > rel_tol * max).count(),
        _ => 0,
    }
}

/// Ratio between the last kept and the first dropped singular value
/// (relative to `σ_max`), i.e. how clean the rank decision was.
pub fn rank_gap(s: &[f64], rank: usize) -> Option<(f64, f64)> {
    let max = *s.first()?;
    if max == 0.0 || rank == 0 {
        return None;
    }
    let kept = s[rank - 1] / max;
    let dropped = s.get(rank).map_or(0.0, |x| x / max);
    Some((kept, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HadamardReport {
    pub d: usize,
    pub lambda: u32,
    pub omega: f64,
    pub rank: usize,
    pub expected: usize,
    pub pass: bool,
    pub singular_values: Vec<f64>,
}

/// Rank of `(V Vᵀ)^{⊙λ}` against `multiset(d, λ)`.
pub fn verify_hadamard_rank(d: usize, lambda: u32, omega: f64, rel_tol: f64) -> Result<HadamardReport> {
    let expected = multiset_coefficient(d as u64, lambda as u64).unwrap_or(u128::MAX);
    if expected > MAX_HADAMARD_ROWS {
        return Err(LabError::TooLarge(format!(
            "multiset({d}, {lambda}) = {expected} exceeds {MAX_HADAMARD_ROWS}"
        )));
    }
    let v = build_omega_matrix(d, lambda, omega)?.v;
    let gram = &v * v.transpose();
    let s = singular_values(&hadamard_power(&gram, lambda))?;
    let rank = rank_from_singular_values(&s, rel_tol);
    Ok(HadamardReport {
        d,
        lambda,
        omega,
        rank,
        expected: expected as usize,
        pass: rank == expected as usize,
        singular_values: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn omega_two_two() {
        let m = build_omega_matrix(2, 2, 2.0).unwrap();
        assert_eq!(m.compositions, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        let s17 = 17f64.sqrt();
        let s8 = 8f64.sqrt();
        let want = Matrix::from_row_slice(3, 2, &[4.0 / s17, 1.0 / s17, 2.0 / s8, 2.0 / s8, 1.0 / s17, 4.0 / s17]);
        assert!((m.v - want).amax() < 1e-15);
    }

    #[test]
    fn omega_lambda_zero() {
        let m = build_omega_matrix(4, 0, 3.0).unwrap();
        assert_eq!(m.v.shape(), (1, 4));
        assert!(m.v.iter().all(|x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn omega_row_counts_and_norms() {
        for d in 1..=4 {
            for l in 0..=4 {
                let m = build_omega_matrix(d, l, 2.0).unwrap();
                assert_eq!(m.v.nrows() as u128, multiset_coefficient(d as u64, l as u64).unwrap());
                for row in m.v.row_iter() {
                    assert!((row.norm() - 1.0).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn omega_errors() {
        assert!(matches!(build_omega_matrix(10, 10, 2.0), Err(LabError::TooLarge(_))));
        assert!(build_omega_matrix(2, 2, 1.0).is_err());
        assert!(build_omega_matrix(0, 2, 2.0).is_err());
    }

    #[test]
    fn hadamard_basics() {
        let id = Matrix::<f64>::identity(3, 3);
        assert_eq!(hadamard_power(&id, 2), id);
        assert_eq!(hadamard_power(&Matrix::from_element(1, 1, 2.0), 3)[(0, 0)], 8.0);
    }

    #[test]
    fn hadamard_rank_upper_bound_on_low_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 1..=3usize {
            let u = Matrix::from_fn(8, r, |_, _| rng.random_range(-1.0..1.0));
            let g = &u * u.transpose();
            for p in 1..=3u32 {
                let rank = numerical_rank(&hadamard_power(&g, p), DEFAULT_REL_TOL).unwrap();
                assert!(rank as u128 <= multiset_coefficient(r as u64, p as u64).unwrap());
            }
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(numerical_rank(&Matrix::<f64>::identity(3, 3), DEFAULT_REL_TOL).unwrap(), 3);
        let u = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let v = nalgebra::DVector::from_vec(vec![0.5, -1.0]);
        assert_eq!(numerical_rank(&(u * v.transpose()), DEFAULT_REL_TOL).unwrap(), 1);
        let hilbert = Matrix::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
        assert_eq!(numerical_rank(&hilbert, DEFAULT_REL_TOL).unwrap(), 4);
        assert_eq!(numerical_rank(&Matrix::<f64>::zeros(3, 3), DEFAULT_REL_TOL).unwrap(), 0);
        let mut bad = Matrix::<f64>::identity(2, 2);
        bad[(0, 1)] = f64::NAN;
        assert_eq!(numerical_rank(&bad, DEFAULT_REL_TOL), Err(LabError::NonFinite));
    }

    #[test]
    fn hilbert_singular_values_match_reference() {
        // eigenvalues of the 4x4 Hilbert matrix (symmetric positive definite)
        let want = [1.500214280059243, 0.169141220221450, 6.738273605760748e-3, 9.670230402258689e-5];
        let hilbert = Matrix::from_fn(4, 4, |i, j| 1.0 / (i + j + 1) as f64);
        let s = singular_values(&hilbert).unwrap();
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() / b < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn complex_rank() {
        let i = Complex64::i();
        let m = Matrix::from_row_slice(2, 2, &[Complex64::new(1.0, 0.0), i, i, -Complex64::new(1.0, 0.0)]);
        assert_eq!(numerical_rank(&m, DEFAULT_REL_TOL).unwrap(), 1);
    }

    #[test]
    fn hadamard_rank_examples() {
        let r = verify_hadamard_rank(2, 3, 2.0, DEFAULT_REL_TOL).unwrap();
        assert_eq!((r.rank, r.expected, r.pass), (4, 4, true));
        for d in 1..=5 {
            assert!(verify_hadamard_rank(d, 1, 2.0, DEFAULT_REL_TOL).unwrap().pass);
        }
        let r = verify_hadamard_rank(3, 2, 2.0, DEFAULT_REL_TOL).unwrap();
        assert_eq!((r.rank, r.pass), (6, true));
        assert!(matches!(verify_hadamard_rank(6, 7, 2.0, DEFAULT_REL_TOL), Err(LabError::TooLarge(_))));
    }

    #[test]
    fn rank_gap_reports() {
        let s = [2.0, 1.0, 1e-12];
        assert_eq!(rank_from_singular_values(&s, 1e-9), 2);
        assert_eq!(rank_gap(&s, 2), Some((0.5, 5e-13)));
        assert_eq!(rank_gap(&[], 0), None);
    }
}
