//! Consensus conditions and protocol gain design.
//!
//! The protocol is `u_i = α Σ_j a_ij (1 + Δ_ij) K (x_i − x_j)`. For every
//! graph mode the design reduces to a scalar test on the extreme eigenvalues
//! of the relevant Laplacian block,
//!
//! ```text
//! (αλ − 1)² + α² σ² λ  <  1 / M(A)²      (edge noise, λ ∈ {λ_low, λ_high})
//! ```
//!
//! after which `K = −(BᵀPB)⁻¹BᵀPA` with `P` the Riccati solution for any
//! `δ²` between the left-hand maximum and `1 / M(A)²`. The left side is
//! convex in λ, so the two extremes bound every intermediate eigenvalue.
//!
//! Input-channel noise multiplies the whole aggregated input `L x`, so its
//! noise term scales with λ² instead of λ; the linear form is still
//! reported for comparison but is not used to decide.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::graph::{Mode, Topology};
use crate::mare::{self, MareProblem, SolverOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumSource {
    /// Nonzero eigenvalues of the symmetric Laplacian.
    Laplacian,
    /// Eigenvalues of the follower block `L1` of a leader-follower graph.
    FollowerBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionExtremes {
    pub low: f64,
    pub high: f64,
    pub source: SpectrumSource,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConditionPoint {
    pub lambda: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub mode: Mode,
    pub spectrum_source: SpectrumSource,
    pub alpha: f64,
    pub lhs_values: Vec<ConditionPoint>,
    pub lhs_max: f64,
    pub rhs: f64,
    pub holds: bool,
    /// σ²_max, σ̃²_max or ϱ² depending on the mode.
    pub sigma_effective: f64,
    pub mahler: f64,
    /// Input-channel mode only: verdict of the bound with a linear-in-λ
    /// noise term, which is weaker than what the moment analysis supports.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linear_noise_form_holds: Option<bool>,
}

/// Gain design produced by [`synthesize`].
#[derive(Clone, Debug, PartialEq)]
pub struct GainDesign {
    pub delta_sq: f64,
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolGain {
    pub alpha: f64,
    /// The 1 x n feedback row `K`, stored as a column.
    pub k: DVector<f64>,
    /// Riccati data the gain came from; `None` for hand-picked gains.
    pub design: Option<GainDesign>,
}

impl ProtocolGain {
    /// A gain not derived from the Riccati equation.
    pub fn manual(alpha: f64, k: DVector<f64>) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha, k, design: None })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthesisOptions {
    /// Riccati weight; identity when absent.
    pub q: Option<DMatrix<f64>>,
    pub alpha: Option<f64>,
    pub delta_sq: Option<f64>,
    pub solver: SolverOptions,
}

/// `max over undirected edges of σ_ij² + σ_ji²`.
pub fn sigma_max_undirected(t: &Topology) -> f64 {
    t.undirected_pairs().iter().map(|p| p.variance_sum).fold(0.0, f64::max)
}

/// Largest of the leader-link variances and follower-pair sums.
pub fn sigma_max_leader_follower(t: &Topology) -> f64 {
    let leader = t.edges().iter().filter(|e| e.from == 0).map(|e| e.variance).fold(0.0, f64::max);
    leader.max(sigma_max_undirected(t))
}

/// `ϱ² = max_i σ̃_i²` for input-channel noise.
pub fn input_variance_max(t: &Topology) -> f64 {
    t.input_variances().iter().copied().fold(0.0, f64::max)
}

pub fn sigma_effective(t: &Topology) -> f64 {
    match t.mode() {
        Mode::Undirected => sigma_max_undirected(t),
        Mode::LeaderFollower => sigma_max_leader_follower(t),
        Mode::InputChannel => input_variance_max(t),
    }
}

/// `(αλ − 1)² + α²σ²λ`
pub fn condition_lhs(alpha: f64, lambda: f64, sigma_sq: f64) -> f64 {
    let d = alpha * lambda - 1.0;
    d * d + alpha * alpha * sigma_sq * lambda
}

/// `(αλ − 1)² + α²ϱ²λ²`
pub fn input_channel_condition_lhs(alpha: f64, lambda: f64, rho_sq: f64) -> f64 {
    let d = alpha * lambda - 1.0;
    d * d + alpha * alpha * rho_sq * lambda * lambda
}

pub fn mode_condition_lhs(mode: Mode, alpha: f64, lambda: f64, sigma_sq: f64) -> f64 {
    match mode {
        Mode::InputChannel => input_channel_condition_lhs(alpha, lambda, sigma_sq),
        _ => condition_lhs(alpha, lambda, sigma_sq),
    }
}

/// `2 / (λ₂ + λ_N + σ²)`: minimizes the larger of the two extreme
/// left-hand sides.
pub fn optimal_alpha(lambda2: f64, lambda_n: f64, sigma_max_sq: f64) -> f64 {
    2.0 / (lambda2 + lambda_n + sigma_max_sq)
}

/// Minimax scaling for the λ² noise term: `2 / ((1 + ϱ²)(λ₂ + λ_N))`.
pub fn optimal_alpha_input_channel(lambda2: f64, lambda_n: f64, rho_sq: f64) -> f64 {
    2.0 / ((1.0 + rho_sq) * (lambda2 + lambda_n))
}

pub fn mode_optimal_alpha(mode: Mode, extremes: ConditionExtremes, sigma_sq: f64) -> f64 {
    match mode {
        Mode::InputChannel => optimal_alpha_input_channel(extremes.low, extremes.high, sigma_sq),
        _ => optimal_alpha(extremes.low, extremes.high, sigma_sq),
    }
}

/// Ideal-channel eigenratio test `(1 − λ₂/λ_N) / (1 + λ₂/λ_N) < 1 / M(A)`.
pub fn noise_free_condition(lambda2: f64, lambda_n: f64, mahler: f64) -> bool {
    let r = lambda2 / lambda_n;
    (1.0 - r) / (1.0 + r) < 1.0 / mahler
}

/// Extreme eigenvalues the condition is evaluated at.
pub fn condition_extremes(t: &Topology) -> Result<ConditionExtremes> {
    t.validate_assumptions()?;
    match t.mode() {
        Mode::Undirected | Mode::InputChannel => {
            let s = t.laplacian_spectrum()?;
            Ok(ConditionExtremes { low: s.lambda2, high: s.lambda_n, source: SpectrumSource::Laplacian })
        }
        Mode::LeaderFollower => {
            let eig = t.follower_spectrum()?;
            Ok(ConditionExtremes {
                low: eig[0],
                high: eig[eig.len() - 1],
                source: SpectrumSource::FollowerBlock,
            })
        }
    }
}

pub fn evaluate_condition(
    mode: Mode,
    extremes: ConditionExtremes,
    sigma_sq: f64,
    alpha: f64,
    mahler: f64,
) -> ConditionReport {
    let rhs = 1.0 / (mahler * mahler);
    let lhs_values: Vec<ConditionPoint> = [extremes.low, extremes.high]
        .into_iter()
        .map(|lambda| ConditionPoint { lambda, value: mode_condition_lhs(mode, alpha, lambda, sigma_sq) })
        .collect();
    let lhs_max = lhs_values.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
    let linear_noise_form_holds = (mode == Mode::InputChannel).then(|| {
        [extremes.low, extremes.high].iter().all(|&l| condition_lhs(alpha, l, sigma_sq) < rhs)
    });
    ConditionReport {
        mode,
        spectrum_source: extremes.source,
        alpha,
        lhs_values,
        lhs_max,
        rhs,
        holds: lhs_max < rhs,
        sigma_effective: sigma_sq,
        mahler,
        linear_noise_form_holds,
    }
}

/// Evaluates the mode's consensus condition at scaling `alpha`.
pub fn check_condition(model: &DynamicsModel, t: &Topology, alpha: f64) -> Result<ConditionReport> {
    let extremes = condition_extremes(t)?;
    let mahler = model.mahler_measure()?;
    Ok(evaluate_condition(t.mode(), extremes, sigma_effective(t), alpha, mahler))
}

/// Scaling factor a synthesis without override would use.
pub fn default_alpha(t: &Topology) -> Result<f64> {
    let extremes = condition_extremes(t)?;
    Ok(mode_optimal_alpha(t.mode(), extremes, sigma_effective(t)))
}

/// Picks α and δ², solves the Riccati equation and forms `K`.
pub fn synthesize(model: &DynamicsModel, t: &Topology, opts: &SynthesisOptions) -> Result<ProtocolGain> {
    let extremes = condition_extremes(t)?;
    if !model.is_stabilizable()? {
        return Err(Error::NotStabilizable);
    }
    let sigma = sigma_effective(t);
    let alpha = match opts.alpha {
        Some(a) if !(a.is_finite() && a > 0.0) => {
            return Err(Error::InvalidInput(format!("alpha must be positive, got {a}")))
        }
        Some(a) => a,
        None => mode_optimal_alpha(t.mode(), extremes, sigma),
    };
    let mahler = model.mahler_measure()?;
    let report = evaluate_condition(t.mode(), extremes, sigma, alpha, mahler);
    if !report.holds {
        return Err(Error::ConditionFails(Box::new(report)));
    }

    let lower = report.lhs_max;
    let upper = report.rhs;
    let delta_sq = match opts.delta_sq {
        Some(d) if !(lower..upper).contains(&d) => {
            return Err(Error::DeltaOutOfRange { delta_sq: d, lower, upper })
        }
        Some(d) => d,
        None => 0.5 * (lower + upper),
    };

    let n = model.state_dim();
    let q = opts.q.clone().unwrap_or_else(|| DMatrix::identity(n, n));
    let problem = MareProblem::new(model.clone(), q.clone(), delta_sq)?;
    let sol = mare::solve_mare(&problem, opts.solver)?;
    let k = mare::feedback_gain(model, &sol.p)?;
    Ok(ProtocolGain {
        alpha,
        k,
        design: Some(GainDesign { delta_sq, p: sol.p, q, residual: sol.residual, iterations: sol.iterations }),
    })
}
