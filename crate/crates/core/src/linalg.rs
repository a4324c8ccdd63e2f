//! Dense linear algebra over nonterminal-indexed matrices.
//!
//! Everything here is sized by the nonterminal count of a grammar, which stays
//! small enough (hundreds) that dense row-major storage is the right choice.

use std::fmt;

use thiserror::Error;

/// Absolute pivot magnitude below which a matrix is treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericError {
    #[error("matrix is singular: pivot {pivot:e} in column {column} is below tolerance")]
    Singular { column: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("matrix entry ({row}, {col}) is negative ({value:e})")]
    NegativeEntry { row: usize, col: usize, value: f64 },
}

/// Square matrix in row-major order.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(dim: usize) -> Self {
        DenseMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericError> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(NumericError::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn max_norm(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// `I - self`, the coefficient matrix of every expectation system.
    pub fn identity_minus(&self) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v = -*v;
        }
        for i in 0..self.dim {
            out[(i, i)] += 1.0;
        }
        out
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, NumericError> {
        if x.len() != self.dim {
            return Err(NumericError::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok((0..self.dim)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix, NumericError> {
        if other.dim != self.dim {
            return Err(NumericError::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let n = self.dim;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        Ok(out)
    }

    fn check_finite(&self) -> Result<(), NumericError> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(idx) => Err(NumericError::NonFinite {
                row: idx / self.dim,
                col: idx % self.dim,
            }),
            None => Ok(()),
        }
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.dim + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        Ok(())
    }
}

/// Packed LU factors with the row permutation from partial pivoting.
///
/// Row `i` of `P·M` is row `pivots[i]` of the source matrix, and `P·M = L·U`
/// with unit-diagonal `L` stored below the diagonal of `lu`.
#[derive(Debug, Clone)]
pub struct Factorization {
    dim: usize,
    lu: Vec<f64>,
    pivots: Vec<usize>,
}

/// Factors a square matrix with partial pivoting.
pub fn lu_factor(m: &DenseMatrix) -> Result<Factorization, NumericError> {
    m.check_finite()?;
    let n = m.dim;
    let mut lu = m.data.clone();
    let mut pivots: Vec<usize> = (0..n).collect();

    for k in 0..n {
        let (p, pivot_abs) =
            (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot_abs < PIVOT_TOLERANCE {
            return Err(NumericError::Singular {
                column: k,
                pivot: pivot_abs,
            });
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            pivots.swap(k, p);
        }
        let pivot = lu[k * n + k];
        for r in (k + 1)..n {
            let factor = lu[r * n + k] / pivot;
            lu[r * n + k] = factor;
            if factor == 0.0 {
                continue;
            }
            for j in (k + 1)..n {
                lu[r * n + j] -= factor * lu[k * n + j];
            }
        }
    }

    Ok(Factorization { dim: n, lu, pivots })
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Solves `M·x = rhs` for the factored source matrix `M`.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, NumericError> {
        let n = self.dim;
        if rhs.len() != n {
            return Err(NumericError::DimensionMismatch {
                expected: n,
                actual: rhs.len(),
            });
        }
        let mut x: Vec<f64> = self.pivots.iter().map(|&p| rhs[p]).collect();

        // Forward substitution skips the leading zeros that sparse right-hand
        // sides produce.
        let first = x.iter().position(|v| *v != 0.0).unwrap_or(n);
        for i in first..n {
            let row = &self.lu[i * n..i * n + i];
            let mut acc = x[i];
            for (j, l) in row.iter().enumerate().skip(first) {
                acc -= l * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        Ok(x)
    }

    /// Multiplies the factors back together, undoing the row permutation.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim;
        let mut out = DenseMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    let l = if k == i { 1.0 } else { self.lu[i * n + k] };
                    acc += l * self.lu[k * n + j];
                }
                out[(self.pivots[i], j)] = acc;
            }
        }
        out
    }
}

/// Free-function form of [`Factorization::solve`].
pub fn lu_solve(f: &Factorization, rhs: &[f64]) -> Result<Vec<f64>, NumericError> {
    f.solve(rhs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Estimates the spectral radius of a non-negative matrix by power iteration.
///
/// Iterates on `M + I` from the all-ones vector, so periodic matrices (whose
/// plain power iterates oscillate) still converge; the shift is subtracted
/// from the result. Nilpotent matrices are detected up front and report 0.
/// Convergence is declared once the a-posteriori error bound of the
/// geometrically converging estimates drops below `tol`.
pub fn spectral_radius_estimate(
    m: &DenseMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate, NumericError> {
    m.check_finite()?;
    let n = m.dim;
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)];
            if v < 0.0 {
                return Err(NumericError::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    if n == 0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    // A non-negative matrix is nilpotent iff M^n·1 vanishes.
    let mut probe = vec![1.0; n];
    for step in 1..=n {
        probe = m.mul_vec(&probe)?;
        let norm: f64 = probe.iter().sum();
        if norm == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: step,
                converged: true,
            });
        }
        let scale = 1.0 / norm;
        probe.iter_mut().for_each(|v| *v *= scale);
    }

    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = f64::NAN;
    let mut last_delta = f64::NAN;
    for iter in 1..=max_iter {
        let mut y = m.mul_vec(&x)?;
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += xi;
        }
        let norm: f64 = y.iter().sum();
        let next = norm - 1.0;
        let scale = 1.0 / norm;
        y.iter_mut().for_each(|v| *v *= scale);
        // Eigen-residual of the iterate; a small step in the estimate alone
        // can happen mid-transient on strongly non-normal matrices.
        let residual: f64 = y.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        x = y;

        let delta = (next - estimate).abs();
        estimate = next;
        if residual > tol.max(16.0 * n as f64 * f64::EPSILON) {
            last_delta = delta;
            continue;
        }
        // Normalization can leave the iterate jittering by an ulp, which
        // would stall the ratio test below.
        if delta <= 4.0 * f64::EPSILON * estimate.abs().max(1.0) {
            return Ok(SpectralEstimate {
                value: estimate,
                iterations: iter,
                converged: true,
            });
        }
        if last_delta.is_finite() {
            let rate = delta / last_delta;
            if rate < 1.0 && delta * rate / (1.0 - rate) < tol {
                return Ok(SpectralEstimate {
                    value: estimate,
                    iterations: iter,
                    converged: true,
                });
            }
        }
        last_delta = delta;
    }
    Ok(SpectralEstimate {
        value: estimate,
        iterations: max_iter,
        converged: false,
    })
}
