//! Exact second moments of the stochastic closed loop.
//!
//! With independent white uncertainties the disagreement covariance obeys
//!
//! ```text
//! X(k+1) = Ā X(k) Āᵀ + Σ_s σ_s² G_s X(k) G_sᵀ
//! ```
//!
//! and the loop is mean-square stable exactly when this linear map has
//! spectral radius below one on the relevant subspace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::linalg;
use crate::noise::NoiseDraw;
use crate::simulate::Scenario;

/// `is_ms_stable` requires the radius to sit this far below one.
pub const STABILITY_MARGIN: f64 = 1e-9;
pub const POWER_TOL: f64 = 1e-8;
pub const POWER_MAX_ITER: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentSpace {
    /// `ξ = (M⊗I)x` in `R^{Nn}`; the operator is restricted to `range(M⊗I)`.
    Consensus,
    /// `e = (x_2 − x_1, …, x_N − x_1)` in `R^{(N−1)n}`.
    LeaderError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseGeneratorSet {
    pub space: MomentSpace,
    pub n_agents: usize,
    pub dim: usize,
    pub base: DMatrix<f64>,
    /// `(σ², G)`, one per noise source with nonzero variance, in source order.
    pub generators: Vec<(f64, DMatrix<f64>)>,
    /// Source index of each generator (edge index or agent index).
    pub sources: Vec<usize>,
}

impl NoiseGeneratorSet {
    pub fn state_dim(&self) -> usize {
        self.base.nrows()
    }

    /// Orthonormal basis of the subspace the operator is restricted to.
    pub fn subspace_basis(&self) -> DMatrix<f64> {
        match self.space {
            MomentSpace::Consensus => {
                linalg::kron(&linalg::consensus_basis(self.n_agents), &linalg::identity(self.dim))
            }
            MomentSpace::LeaderError => linalg::identity(self.state_dim()),
        }
    }

    /// Sum of `Δ_s G_s` for one draw; draws on zero-variance sources are ignored.
    pub fn noise_term(&self, draw: &NoiseDraw) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.state_dim(), self.state_dim());
        for ((_, g), &src) in self.generators.iter().zip(&self.sources) {
            out += g * draw.values[src];
        }
        out
    }

    pub fn with_scaled_variances(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.generators.iter_mut().for_each(|(v, _)| *v *= factor);
        out
    }
}

pub fn build_generators(s: &Scenario) -> Result<NoiseGeneratorSet> {
    let n_agents = s.n_agents();
    let dim = s.state_dim();
    if s.gain.k.len() != dim {
        return Err(Error::DimensionMismatch(format!("K has {} entries, state dimension is {dim}", s.gain.k.len())));
    }
    let alpha = s.gain.alpha;
    let bk = s.model.b() * s.gain.k.transpose();
    let t = &s.topology;
    let mut generators = Vec::new();
    let mut sources = Vec::new();

    let (space, base) = match t.mode() {
        Mode::LeaderFollower => {
            let (l1, _) = t.follower_laplacian()?;
            let m = n_agents - 1;
            let base = linalg::kron(&linalg::identity(m), s.model.a()) + linalg::kron(&l1, &bk) * alpha;
            for (idx, e) in t.edges().iter().enumerate() {
                if e.variance == 0.0 {
                    continue;
                }
                let mut graph = DMatrix::zeros(m, m);
                graph[(e.to - 1, e.to - 1)] = 1.0;
                if e.from != 0 {
                    graph[(e.to - 1, e.from - 1)] = -1.0;
                }
                generators.push((e.variance, linalg::kron(&graph, &bk) * alpha));
                sources.push(idx);
            }
            (MomentSpace::LeaderError, base)
        }
        Mode::Undirected => {
            let proj = linalg::consensus_projector(n_agents);
            for (idx, e) in t.edges().iter().enumerate() {
                if e.variance == 0.0 {
                    continue;
                }
                let mut graph = DMatrix::zeros(n_agents, n_agents);
                graph[(e.to, e.to)] = 1.0;
                graph[(e.to, e.from)] = -1.0;
                generators.push((e.variance, linalg::kron(&(&proj * graph), &bk) * alpha));
                sources.push(idx);
            }
            (MomentSpace::Consensus, s.closed_loop_matrix())
        }
        Mode::InputChannel => {
            let proj = linalg::consensus_projector(n_agents);
            let lap = t.laplacian_matrix();
            for (i, &var) in t.input_variances().iter().enumerate() {
                if var == 0.0 {
                    continue;
                }
                let mut graph = DMatrix::zeros(n_agents, n_agents);
                graph.set_row(i, &lap.row(i));
                generators.push((var, linalg::kron(&(&proj * graph), &bk) * alpha));
                sources.push(i);
            }
            (MomentSpace::Consensus, s.closed_loop_matrix())
        }
    };
    Ok(NoiseGeneratorSet { space, n_agents, dim, base, generators, sources })
}

pub fn moment_step(gs: &NoiseGeneratorSet, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut next = &gs.base * x * gs.base.transpose();
    for (var, g) in &gs.generators {
        next += (g * x * g.transpose()) * *var;
    }
    linalg::symmetrize(&mut next);
    next
}

/// Checks the covariance invariants: symmetric and numerically PSD.
pub fn validate_moment(x: &DMatrix<f64>) -> Result<()> {
    let scale = x.amax().max(1.0);
    if linalg::max_asymmetry(x) > 1e-12 * scale {
        return Err(Error::InvalidInput("moment matrix is not symmetric".into()));
    }
    let min_eig = linalg::symmetric_eigenvalues(x)?.first().copied().unwrap_or(0.0);
    if min_eig < -1e-10 * x.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidInput(format!("moment matrix is not PSD (min eigenvalue {min_eig})")));
    }
    Ok(())
}

/// The moment map restricted to the operator's subspace, written as a
/// dense matrix on the orthonormal svec coordinates (`X_ii`, `√2·X_ij`).
pub fn lifted_operator(gs: &NoiseGeneratorSet) -> DMatrix<f64> {
    let v = gs.subspace_basis();
    let vt = v.transpose();
    let reduced = NoiseGeneratorSet {
        space: MomentSpace::LeaderError,
        n_agents: gs.n_agents,
        dim: gs.dim,
        base: &vt * &gs.base * &v,
        generators: gs.generators.iter().map(|(var, g)| (*var, &vt * g * &v)).collect(),
        sources: gs.sources.clone(),
    };
    let m = v.ncols();
    let size = m * (m + 1) / 2;
    let mut op = DMatrix::zeros(size, size);
    let mut basis = DMatrix::zeros(m, m);
    let mut col = 0;
    for i in 0..m {
        for j in i..m {
            basis.fill(0.0);
            if i == j {
                basis[(i, i)] = 1.0;
            } else {
                basis[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                basis[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            op.set_column(col, &svec(&moment_step(&reduced, &basis)));
            col += 1;
        }
    }
    op
}

fn svec(x: &DMatrix<f64>) -> DVector<f64> {
    let m = x.nrows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for i in 0..m {
        for j in i..m {
            out.push(if i == j { x[(i, i)] } else { std::f64::consts::SQRT_2 * x[(i, j)] });
        }
    }
    DVector::from_vec(out)
}

/// Spectral radius of the moment map on the operator's subspace, from the
/// eigenvalues of the dense lifted matrix.
pub fn ms_spectral_radius(gs: &NoiseGeneratorSet) -> Result<f64> {
    let op = lifted_operator(gs);
    if op.nrows() == 0 {
        return Ok(0.0);
    }
    linalg::spectral_radius(&op)
}

/// Independent estimate of the same radius by power iteration on
/// symmetric matrices. Several deterministic PSD starts are run and the
/// largest growth rate is kept.
pub fn ms_spectral_radius_power(gs: &NoiseGeneratorSet, tol: f64, max_iter: usize) -> Result<f64> {
    let v = gs.subspace_basis();
    let m = v.ncols();
    if m == 0 {
        return Ok(0.0);
    }
    let vt = v.transpose();
    let reduced = NoiseGeneratorSet {
        space: MomentSpace::LeaderError,
        n_agents: gs.n_agents,
        dim: gs.dim,
        base: &vt * &gs.base * &v,
        generators: gs.generators.iter().map(|(var, g)| (*var, &vt * g * &v)).collect(),
        sources: gs.sources.clone(),
    };

    const WINDOW: usize = 64;
    let starts: [fn(usize, usize) -> f64; 3] = [
        |i, j| if i == j { 1.0 } else { 0.0 },
        |_, _| 1.0,
        |i, j| ((i * 7 + j * 13) % 11) as f64 / 11.0,
    ];
    let mut best: f64 = 0.0;
    for start in starts {
        let y = DMatrix::from_fn(m, m, start);
        let mut x = &y * y.transpose() + DMatrix::identity(m, m) * 1e-3;
        x /= x.norm();
        let mut prev_rate = f64::NAN;
        let mut log_sum = 0.0;
        let mut steps = 0;
        let mut converged = false;
        for _ in 0..max_iter {
            let next = moment_step(&reduced, &x);
            let norm = next.norm();
            if norm == 0.0 {
                prev_rate = 0.0;
                converged = true;
                break;
            }
            log_sum += norm.ln();
            steps += 1;
            x = next / norm;
            if steps == WINDOW {
                let rate = (log_sum / WINDOW as f64).exp();
                if (rate - prev_rate).abs() <= tol * rate {
                    prev_rate = rate;
                    converged = true;
                    break;
                }
                prev_rate = rate;
                log_sum = 0.0;
                steps = 0;
            }
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "moment power iteration did not settle to {tol} in {max_iter} steps"
            )));
        }
        best = best.max(prev_rate);
    }
    Ok(best)
}

/// Moment of the initial disagreement, `ξ(0)ξ(0)ᵀ` or `e(0)e(0)ᵀ`.
pub fn initial_moment(s: &Scenario) -> DMatrix<f64> {
    let d = s.disagreement(&s.initial_state);
    &d * d.transpose()
}

/// `E‖ξ(k)‖²` (or `E‖e(k)‖²`) for `k = 0..=horizon`.
pub fn exact_msd_trajectory(s: &Scenario, horizon: usize) -> Result<Vec<f64>> {
    let gs = build_generators(s)?;
    let mut x = initial_moment(s);
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(x.trace());
    for _ in 0..horizon {
        x = moment_step(&gs, &x);
        out.push(x.trace());
    }
    Ok(out)
}

pub fn is_ms_stable(s: &Scenario) -> Result<bool> {
    Ok(ms_spectral_radius(&build_generators(s)?)? < 1.0 - STABILITY_MARGIN)
}

/// Largest noise scale `c` for which `family(c)` is still mean-square
/// stable, found by bracketing then bisection to absolute tolerance `tol`.
/// `family` must be monotone in `c` (true when `c` scales every variance).
pub fn critical_noise_scale(
    family: impl Fn(f64) -> Result<NoiseGeneratorSet>,
    tol: f64,
) -> Result<f64> {
    let stable = |c: f64| -> Result<bool> { Ok(ms_spectral_radius(&family(c)?)? < 1.0) };
    if !stable(0.0)? {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while stable(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(f64::INFINITY);
        }
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stable(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
