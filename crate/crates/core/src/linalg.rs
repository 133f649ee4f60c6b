//! Small dense helpers shared by the analysis modules.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

/// Deflation tolerances tried in turn; nalgebra's QR sweeps can stall at
/// machine epsilon on matrices with clustered eigenvalues.
const EIG_EPS_LADDER: [f64; 4] = [1e-14, 1e-13, 1e-12, 1e-10];
const EIG_MAX_ITER: usize = 100_000;

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// `M = I - 11^T / N`, the projector onto the disagreement subspace.
pub fn consensus_projector(n_agents: usize) -> DMatrix<f64> {
    let inv = 1.0 / n_agents as f64;
    DMatrix::from_fn(n_agents, n_agents, |i, j| if i == j { 1.0 - inv } else { -inv })
}

/// Orthonormal basis of the complement of `1` (Helmert contrasts), N x (N-1).
pub fn consensus_basis(n_agents: usize) -> DMatrix<f64> {
    let mut y = DMatrix::zeros(n_agents, n_agents.saturating_sub(1));
    for c in 0..n_agents.saturating_sub(1) {
        let k = (c + 1) as f64;
        let scale = 1.0 / (k * (k + 1.0)).sqrt();
        for r in 0..=c {
            y[(r, c)] = scale;
        }
        y[(c + 1, c)] = -k * scale;
    }
    y
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let eig = EIG_EPS_LADDER
        .iter()
        .find_map(|&eps| SymmetricEigen::try_new(m.clone(), eps, EIG_MAX_ITER))
        .ok_or_else(|| Error::NonConvergence("symmetric eigensolver".into()))?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Eigenvalues of a general real square matrix (real Schur form).
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = EIG_EPS_LADDER
        .iter()
        .find_map(|&eps| Schur::try_new(m.clone(), eps, EIG_MAX_ITER))
        .ok_or_else(|| Error::NonConvergence("real Schur decomposition".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(Error::DimensionMismatch("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let total: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut offset = 0;
    for b in blocks {
        out.rows_mut(offset, b.len()).copy_from(b);
        offset += b.len();
    }
    out
}
