//! Modified algebraic Riccati equation
//!
//! ```text
//! P = AᵀPA − (1 − δ²) AᵀPB (BᵀPB)⁻¹ BᵀPA + Q
//! ```
//!
//! solved by plain fixed-point iteration from `P₀ = Q`. For a stabilizable
//! single-input pair the equation has a unique positive-definite solution
//! whenever `δ² < 1 / M(A)²`, where `M(A)` is the Mahler measure.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// Iterates with a Frobenius norm above this are declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Smallest acceptable value of the scalar `BᵀPB`.
pub const SINGULAR_INNER_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MareProblem {
    pub model: DynamicsModel,
    pub q: DMatrix<f64>,
    pub delta_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MareSolution {
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl MareProblem {
    pub fn new(model: DynamicsModel, q: DMatrix<f64>, delta_sq: f64) -> Result<Self> {
        validate_weight(&q, model.state_dim())?;
        if !(delta_sq.is_finite() && delta_sq >= 0.0) {
            return Err(Error::InvalidInput(format!("delta_sq must be >= 0, got {delta_sq}")));
        }
        Ok(Self { model, q, delta_sq })
    }
}

/// Checks that `Q` is `n x n`, symmetric and positive definite.
pub fn validate_weight(q: &DMatrix<f64>, n: usize) -> Result<()> {
    if q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!("Q must be {n}x{n}, got {:?}", q.shape())));
    }
    if linalg::max_asymmetry(q) > 1e-12 {
        return Err(Error::InvalidInput("Q must be symmetric".into()));
    }
    let min_eig = linalg::symmetric_eigenvalues(q)?[0];
    if min_eig <= 0.0 {
        return Err(Error::InvalidInput(format!("Q must be positive definite (min eigenvalue {min_eig})")));
    }
    Ok(())
}

/// Supremum of the `δ²` values for which a solution is guaranteed: `1 / M(A)²`.
pub fn admissible_delta_bound(model: &DynamicsModel) -> Result<f64> {
    let m = model.mahler_measure()?;
    Ok(1.0 / (m * m))
}

/// One application of the right-hand side of the equation.
pub fn riccati_map(
    model: &DynamicsModel,
    q: &DMatrix<f64>,
    delta_sq: f64,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a = model.a();
    let b = model.b();
    let pb: DVector<f64> = p * b;
    let inner = b.dot(&pb);
    if inner <= SINGULAR_INNER_TOL {
        return Err(Error::SingularInnerTerm { value: inner });
    }
    // AᵀPB as a column
    let v: DVector<f64> = a.transpose() * &pb;
    let mut next = a.transpose() * p * a - (&v * v.transpose()) * ((1.0 - delta_sq) / inner) + q;
    linalg::symmetrize(&mut next);
    Ok(next)
}

/// Frobenius norm of the equation's mismatch at `p`.
pub fn mare_residual(
    model: &DynamicsModel,
    q: &DMatrix<f64>,
    delta_sq: f64,
    p: &DMatrix<f64>,
) -> Result<f64> {
    Ok((riccati_map(model, q, delta_sq, p)? - p).norm())
}

pub fn solve_mare(problem: &MareProblem, opts: SolverOptions) -> Result<MareSolution> {
    solve_mare_from(problem, problem.q.clone(), opts)
}

/// Same as [`solve_mare`] with an explicit starting iterate.
pub fn solve_mare_from(
    problem: &MareProblem,
    p0: DMatrix<f64>,
    opts: SolverOptions,
) -> Result<MareSolution> {
    let model = &problem.model;
    if !model.is_stabilizable()? {
        return Err(Error::NotStabilizable);
    }
    let bound = admissible_delta_bound(model)?;
    let guaranteed = problem.delta_sq < bound;
    if !guaranteed {
        warn!(
            "delta_sq = {} is not below 1/M(A)^2 = {bound}; attempting the iteration anyway",
            problem.delta_sq
        );
    }

    let mut p = p0;
    for iter in 1..=opts.max_iter {
        let next = riccati_map(model, &problem.q, problem.delta_sq, &p)?;
        let norm = next.norm();
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(Error::Diverged { iterations: iter, norm });
        }
        let change = (&next - &p).norm();
        p = next;
        if change <= opts.tol {
            let residual = mare_residual(model, &problem.q, problem.delta_sq, &p)?;
            return Ok(MareSolution { p, residual, iterations: iter });
        }
    }

    if guaranteed {
        Err(Error::NonConvergence(format!(
            "Riccati iteration did not reach tol {} in {} iterations",
            opts.tol, opts.max_iter
        )))
    } else {
        Err(Error::DeltaOutOfRange { delta_sq: problem.delta_sq, lower: 0.0, upper: bound })
    }
}

/// `K = −(BᵀPB)⁻¹ BᵀPA`, returned as the row of the 1 x n gain.
pub fn feedback_gain(model: &DynamicsModel, p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let pb: DVector<f64> = p * model.b();
    let inner = model.b().dot(&pb);
    if inner <= SINGULAR_INNER_TOL {
        return Err(Error::SingularInnerTerm { value: inner });
    }
    Ok(model.a().transpose() * pb * (-1.0 / inner))
}
