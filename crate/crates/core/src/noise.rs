//! Multiplicative channel uncertainties.
//!
//! Every sample is a pure function of `(seed, source, trial, k)`: the four
//! words form the ChaCha8 key, so streams never depend on how trials are
//! scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{Mode, Topology};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    #[default]
    Gaussian,
    /// Uniform on `[−√(3σ²), √(3σ²)]`, i.e. a random quantization error.
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoiseSpec {
    pub distribution: Distribution,
    pub seed: u64,
}

/// One time step of uncertainties. Values are aligned with
/// `Topology::edges()` for link noise and with agent indices for
/// input-channel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub values: Vec<f64>,
}

impl NoiseDraw {
    pub fn zeros(t: &Topology) -> Self {
        Self { values: vec![0.0; source_count(t)] }
    }
}

/// Number of independent noise sources: directed links, or agents in
/// input-channel mode.
pub fn source_count(t: &Topology) -> usize {
    match t.mode() {
        Mode::InputChannel => t.n_nodes(),
        _ => t.edges().len(),
    }
}

pub fn source_variances(t: &Topology) -> Vec<f64> {
    match t.mode() {
        Mode::InputChannel => t.input_variances().to_vec(),
        _ => t.edges().iter().map(|e| e.variance).collect(),
    }
}

/// Zero-mean, unit-variance sample for one `(source, trial, k)` cell.
pub fn unit_sample(spec: &NoiseSpec, source: u64, trial: u64, k: u64) -> f64 {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&spec.seed.to_le_bytes());
    key[8..16].copy_from_slice(&source.to_le_bytes());
    key[16..24].copy_from_slice(&trial.to_le_bytes());
    key[24..].copy_from_slice(&k.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    match spec.distribution {
        Distribution::Gaussian => rng.sample(StandardNormal),
        Distribution::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
    }
}

/// Fills `out` with one draw, reusing its allocation.
pub fn draw_into(spec: &NoiseSpec, variances: &[f64], trial: u64, k: u64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(variances.iter().enumerate().map(|(s, &var)| {
        if var == 0.0 {
            0.0
        } else {
            var.sqrt() * unit_sample(spec, s as u64, trial, k)
        }
    }));
}

pub fn draw(spec: &NoiseSpec, t: &Topology, trial: u64, k: u64) -> NoiseDraw {
    let mut values = Vec::new();
    draw_into(spec, &source_variances(t), trial, k, &mut values);
    NoiseDraw { values }
}

/// `E[ΠᵀΠ]` for link noise on an undirected graph:
/// `θ_ij = −a_ij(σ_ij² + σ_ji²)`, `θ_ii = Σ_j a_ij(σ_ji² + σ_ij²)`.
pub fn theta_matrix(t: &Topology) -> DMatrix<f64> {
    let n = t.n_nodes();
    let a = t.adjacency_matrix();
    let mut theta = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j || a[(i, j)] == 0.0 {
                continue;
            }
            let s = t.variance(j, i).unwrap_or(0.0) + t.variance(i, j).unwrap_or(0.0);
            theta[(i, j)] = -a[(i, j)] * s;
            theta[(i, i)] += a[(i, j)] * s;
        }
    }
    theta
}

/// Follower-space counterpart of [`theta_matrix`]: the leader link into
/// follower `i` only adds `σ_i1²` to the diagonal.
pub fn theta_hat_matrix(t: &Topology) -> DMatrix<f64> {
    let n = t.n_nodes();
    let a = t.adjacency_matrix();
    let mut theta = DMatrix::zeros(n - 1, n - 1);
    for i in 1..n {
        for j in 1..n {
            if i == j || a[(i, j)] == 0.0 {
                continue;
            }
            let s = t.variance(j, i).unwrap_or(0.0) + t.variance(i, j).unwrap_or(0.0);
            theta[(i - 1, j - 1)] = -a[(i, j)] * s;
            theta[(i - 1, i - 1)] += a[(i, j)] * s;
        }
        theta[(i - 1, i - 1)] += a[(i, 0)] * t.variance(0, i).unwrap_or(0.0);
    }
    theta
}
