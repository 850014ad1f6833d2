//! Small dense linear algebra helpers.
//!
//! Every system solved by the estimators is tiny (at most a handful of
//! parameters), so a full-pivot LU with an explicit relative pivot test is
//! used throughout. Rank decisions are made by the pivot test rather than by
//! whatever threshold the backend would pick.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance used for every rank decision.
pub const PIVOT_TOL: f64 = 1e-12;

/// Solves `a x = b`, failing with a singular-system error naming `block`
/// when the smallest pivot is below `PIVOT_TOL` times the largest.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, block: &str) -> Result<DVector<f64>> {
    check_rank(a, block)?;
    a.clone()
        .full_piv_lu()
        .solve(b)
        .ok_or_else(|| Error::singular(block))
}

/// Solves `xᵀ a = bᵀ` for the row vector `x`, i.e. `aᵀ x = b`.
pub fn solve_transposed(a: &DMatrix<f64>, b: &DVector<f64>, block: &str) -> Result<DVector<f64>> {
    solve(&a.transpose(), b, block)
}

/// Numerical rank of `a` under the relative pivot test.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let lu = a.clone().full_piv_lu();
    let u = lu.u();
    let k = u.nrows().min(u.ncols());
    let pivots: Vec<f64> = (0..k).map(|i| u[(i, i)].abs()).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 || !largest.is_finite() {
        return 0;
    }
    pivots.iter().filter(|&&p| p > PIVOT_TOL * largest).count()
}

fn check_rank(a: &DMatrix<f64>, block: &str) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::singular(block));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::singular(block));
    }
    if rank(a) < a.nrows() {
        return Err(Error::singular(block));
    }
    Ok(())
}

/// Weighted Gram matrix `Σ c_i x_i x_iᵀ` over the rows for which `c_i` is given.
pub fn weighted_gram<'a, I>(rows: I, dim: usize) -> DMatrix<f64>
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut g = DMatrix::zeros(dim, dim);
    for (c, x) in rows {
        for a in 0..dim {
            let cx = c * x[a];
            for b in 0..dim {
                g[(a, b)] += cx * x[b];
            }
        }
    }
    g
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = solve(&a, &b, "test").unwrap();
        assert!((&a * &x - &b).amax() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let err = solve(&a, &b, "gram").unwrap_err();
        assert_eq!(err, Error::singular("gram"));
        assert_eq!(rank(&a), 1);
    }

    #[test]
    fn transposed_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let b = DVector::from_vec(vec![2.0, 7.0]);
        let x = solve_transposed(&a, &b, "t").unwrap();
        assert!((a.transpose() * &x - &b).amax() < 1e-14);
    }
}
