//! Single-input linear agent model `x(k+1) = A x(k) + B u(k)`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Moduli within this distance of 1 are treated as lying on the unit circle.
pub const UNIT_CIRCLE_TOL: f64 = 1e-9;
/// Relative singular-value threshold of the PBH rank test.
pub const RANK_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl DynamicsModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!("B has {} rows, A has {n}", b.len())));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model entries must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        Self::new(linalg::matrix_from_rows(a)?, DVector::from_row_slice(b))
    }

    /// Scalar agent `x' = a x + b u`.
    pub fn scalar(a: f64, b: f64) -> Self {
        Self { a: DMatrix::from_element(1, 1, a), b: DVector::from_element(1, b) }
    }

    /// Discrete-time double integrator with force input.
    pub fn double_integrator() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            b: DVector::from_row_slice(&[0.0, 1.0]),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn step(&self, x: &DVector<f64>, u: f64) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, model dimension is {}",
                x.len(),
                self.state_dim()
            )));
        }
        Ok(&self.a * x + &self.b * u)
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex<f64>>> {
        linalg::eigenvalues(&self.a)
    }

    /// Ascending moduli of the eigenvalues of `A`.
    pub fn eigenvalue_moduli(&self) -> Result<Vec<f64>> {
        let mut moduli: Vec<f64> = self.eigenvalues()?.iter().map(|z| z.norm()).collect();
        moduli.sort_by(f64::total_cmp);
        Ok(moduli)
    }

    /// Product of the moduli of the eigenvalues outside the unit circle.
    pub fn mahler_measure(&self) -> Result<f64> {
        Ok(self
            .eigenvalue_moduli()?
            .into_iter()
            .filter(|m| *m > 1.0 + UNIT_CIRCLE_TOL)
            .product())
    }

    /// PBH test on every eigenvalue with modulus at least one: the matrix
    /// `[A - λI | B]` must keep full row rank.
    pub fn is_stabilizable(&self) -> Result<bool> {
        let n = self.state_dim();
        let scale = self.a.clone().svd(false, false).singular_values.max().max(f64::MIN_POSITIVE);
        let threshold = RANK_TOL * scale;
        for lambda in self.eigenvalues()? {
            if lambda.norm() < 1.0 - UNIT_CIRCLE_TOL {
                continue;
            }
            let pbh = DMatrix::from_fn(n, n + 1, |i, j| {
                if j < n {
                    let diag = if i == j { lambda } else { Complex::new(0.0, 0.0) };
                    Complex::new(self.a[(i, j)], 0.0) - diag
                } else {
                    Complex::new(self.b[i], 0.0)
                }
            });
            let sv = pbh.svd(false, false).singular_values;
            if sv.min() <= threshold {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
