//! Closed-loop network simulation and seeded Monte Carlo ensembles.
//!
//! All agents update synchronously from the same snapshot `x(k)`. Trials
//! are grouped in fixed-size chunks; each chunk is reduced in trial order
//! and chunks are merged in chunk order, so the statistics are bitwise
//! identical whether chunks run on one thread or many.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::graph::{Mode, Topology};
use crate::linalg;
use crate::noise::{self, NoiseDraw, NoiseSpec};
use crate::synthesis::ProtocolGain;

const CHUNK_TRIALS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub model: DynamicsModel,
    pub topology: Topology,
    pub gain: ProtocolGain,
    pub noise: NoiseSpec,
    /// Stacked `[x_1(0); …; x_N(0)]`.
    pub initial_state: DVector<f64>,
    pub horizon: usize,
    pub trials: usize,
}

impl Scenario {
    pub fn new(
        model: DynamicsModel,
        topology: Topology,
        gain: ProtocolGain,
        noise: NoiseSpec,
        initial_state: DVector<f64>,
        horizon: usize,
        trials: usize,
    ) -> Result<Self> {
        let n = model.state_dim();
        if gain.k.len() != n {
            return Err(Error::DimensionMismatch(format!("K has {} entries, state dimension is {n}", gain.k.len())));
        }
        if initial_state.len() != topology.n_nodes() * n {
            return Err(Error::DimensionMismatch(format!(
                "initial state has length {}, expected {} agents x {n}",
                initial_state.len(),
                topology.n_nodes()
            )));
        }
        if horizon == 0 || trials == 0 {
            return Err(Error::InvalidInput("horizon and trials must be at least 1".into()));
        }
        Ok(Self { model, topology, gain, noise, initial_state, horizon, trials })
    }

    pub fn n_agents(&self) -> usize {
        self.topology.n_nodes()
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    /// Deterministic closed-loop matrix `I⊗A + αL⊗BK` on the stacked state.
    pub fn closed_loop_matrix(&self) -> DMatrix<f64> {
        let bk = self.model.b() * self.gain.k.transpose();
        linalg::kron(&linalg::identity(self.n_agents()), self.model.a())
            + linalg::kron(&self.topology.laplacian_matrix(), &bk) * self.gain.alpha
    }

    /// Noise part of the stacked closed loop for one draw:
    /// `α(I⊗B)Π(I⊗K)` for link noise, `α(I⊗B)Δ̃(L⊗K)` for input noise.
    pub fn noise_matrix(&self, draw: &NoiseDraw) -> DMatrix<f64> {
        let n_agents = self.n_agents();
        let bk = self.model.b() * self.gain.k.transpose();
        let graph_factor = match self.topology.mode() {
            Mode::InputChannel => {
                DMatrix::from_diagonal(&DVector::from_column_slice(&draw.values))
                    * self.topology.laplacian_matrix()
            }
            _ => {
                let mut pi = DMatrix::zeros(n_agents, n_agents);
                for (e, delta) in self.topology.edges().iter().zip(&draw.values) {
                    pi[(e.to, e.from)] -= delta;
                    pi[(e.to, e.to)] += delta;
                }
                pi
            }
        };
        linalg::kron(&graph_factor, &bk) * self.gain.alpha
    }

    /// `x(k+1)` in matrix form; agrees with [`step`] up to rounding.
    pub fn step_matrix_form(&self, x: &DVector<f64>, draw: &NoiseDraw) -> DVector<f64> {
        (self.closed_loop_matrix() + self.noise_matrix(draw)) * x
    }

    /// Disagreement vector whose squared norm the ensemble tracks: the
    /// consensus error for undirected graphs, the error to the leader for
    /// leader-follower graphs.
    pub fn disagreement(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.topology.mode() {
            Mode::LeaderFollower => relative_to_leader(x, self.n_agents(), self.state_dim()),
            _ => consensus_error(x, self.n_agents(), self.state_dim()),
        }
    }

    pub fn disagreement_dim(&self) -> usize {
        match self.topology.mode() {
            Mode::LeaderFollower => (self.n_agents() - 1) * self.state_dim(),
            _ => self.n_agents() * self.state_dim(),
        }
    }
}

/// `ξ = (M⊗I)x`: every agent's state minus the network average.
pub fn consensus_error(x: &DVector<f64>, n_agents: usize, dim: usize) -> DVector<f64> {
    let mut mean = vec![0.0; dim];
    for i in 0..n_agents {
        for c in 0..dim {
            mean[c] += x[i * dim + c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_agents as f64);
    DVector::from_fn(n_agents * dim, |r, _| x[r] - mean[r % dim])
}

/// `(x_2 − x_1, …, x_N − x_1)`.
pub fn relative_to_leader(x: &DVector<f64>, n_agents: usize, dim: usize) -> DVector<f64> {
    DVector::from_fn((n_agents - 1) * dim, |r, _| x[dim + r] - x[r % dim])
}

pub fn step(s: &Scenario, x: &DVector<f64>, draw: &NoiseDraw) -> DVector<f64> {
    let stepper = Stepper::new(s);
    let mut out = vec![0.0; x.len()];
    stepper.advance(x.as_slice(), &draw.values, &mut out);
    DVector::from_vec(out)
}

pub fn step_undirected(s: &Scenario, x: &DVector<f64>, draw: &NoiseDraw) -> Result<DVector<f64>> {
    expect_mode(s, Mode::Undirected)?;
    Ok(step(s, x, draw))
}

pub fn step_leader_follower(s: &Scenario, x: &DVector<f64>, draw: &NoiseDraw) -> Result<DVector<f64>> {
    expect_mode(s, Mode::LeaderFollower)?;
    Ok(step(s, x, draw))
}

pub fn step_input_channel(s: &Scenario, x: &DVector<f64>, draw: &NoiseDraw) -> Result<DVector<f64>> {
    expect_mode(s, Mode::InputChannel)?;
    Ok(step(s, x, draw))
}

fn expect_mode(s: &Scenario, mode: Mode) -> Result<()> {
    if s.topology.mode() != mode {
        return Err(Error::InvalidInput(format!(
            "expected a {} scenario, got {}",
            mode.as_str(),
            s.topology.mode().as_str()
        )));
    }
    Ok(())
}

/// Agent-wise protocol evaluation on flat slices.
struct Stepper {
    n_agents: usize,
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    k: Vec<f64>,
    alpha: f64,
    input_channel: bool,
    /// For each receiver: `(sender, noise source index)`.
    incoming: Vec<Vec<(usize, usize)>>,
}

impl Stepper {
    fn new(s: &Scenario) -> Self {
        let n_agents = s.n_agents();
        let dim = s.state_dim();
        let mut incoming = vec![Vec::new(); n_agents];
        for (idx, e) in s.topology.edges().iter().enumerate() {
            incoming[e.to].push((e.from, idx));
        }
        Self {
            n_agents,
            dim,
            a: s.model.a().transpose().as_slice().to_vec(),
            b: s.model.b().as_slice().to_vec(),
            k: s.gain.k.as_slice().to_vec(),
            alpha: s.gain.alpha,
            input_channel: s.topology.mode() == Mode::InputChannel,
            incoming,
        }
    }

    fn advance(&self, x: &[f64], draw: &[f64], out: &mut [f64]) {
        let dim = self.dim;
        let kx: Vec<f64> = (0..self.n_agents)
            .map(|i| self.k.iter().zip(&x[i * dim..(i + 1) * dim]).map(|(k, v)| k * v).sum())
            .collect();
        for i in 0..self.n_agents {
            let mut s = 0.0;
            if self.input_channel {
                for &(j, _) in &self.incoming[i] {
                    s += kx[i] - kx[j];
                }
                s *= 1.0 + draw[i];
            } else {
                for &(j, src) in &self.incoming[i] {
                    s += (1.0 + draw[src]) * (kx[i] - kx[j]);
                }
            }
            let u = self.alpha * s;
            let xi = &x[i * dim..(i + 1) * dim];
            for r in 0..dim {
                let row = &self.a[r * dim..(r + 1) * dim];
                let ax: f64 = row.iter().zip(xi).map(|(a, v)| a * v).sum();
                out[i * dim + r] = ax + self.b[r] * u;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    #[default]
    Parallel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleConfig {
    pub execution: Execution,
    pub record_paths: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { execution: Execution::Parallel, record_paths: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n_agents: usize,
    pub dim: usize,
    pub horizon: usize,
    pub trials: usize,
    /// Per trial, the stacked states for `k = 0..=horizon` back to back.
    pub paths: Option<Vec<Vec<f64>>>,
    /// Mean of the squared disagreement norm per step.
    pub msd: Vec<f64>,
    /// Standard error of `msd` (sample standard deviation / √trials).
    pub msd_stderr: Vec<f64>,
    /// Ensemble mean of `x_i(k) − x_1(k)`, `i = 2..N`, per step.
    pub mean_relative: Vec<Vec<f64>>,
}

impl TrajectoryEnsemble {
    /// State of `agent` at step `k` in `trial`, if paths were recorded.
    pub fn state(&self, trial: usize, k: usize, agent: usize) -> Option<&[f64]> {
        let path = self.paths.as_ref()?.get(trial)?;
        let width = self.n_agents * self.dim;
        let start = k * width + agent * self.dim;
        path.get(start..start + self.dim)
    }
}

pub fn run_ensemble(s: &Scenario) -> TrajectoryEnsemble {
    run_ensemble_with(s, EnsembleConfig::default())
}

pub fn run_ensemble_with(s: &Scenario, config: EnsembleConfig) -> TrajectoryEnsemble {
    let stepper = Stepper::new(s);
    let variances = noise::source_variances(&s.topology);
    let n_chunks = s.trials.div_ceil(CHUNK_TRIALS);
    let run_chunk = |c: usize| {
        let start = c * CHUNK_TRIALS;
        let end = (start + CHUNK_TRIALS).min(s.trials);
        simulate_chunk(s, &stepper, &variances, start..end, config.record_paths)
    };

    let chunks: Vec<ChunkStats> = match config.execution {
        Execution::Sequential => (0..n_chunks).map(run_chunk).collect(),
        Execution::Parallel => parallel_map(n_chunks, run_chunk),
    };

    let mut merged = ChunkStats::empty(s.horizon, (s.n_agents() - 1) * s.state_dim());
    for chunk in chunks {
        merged.merge(chunk, config.record_paths);
    }
    let trials = s.trials as f64;
    let msd_stderr = merged
        .m2
        .iter()
        .map(|m2| if s.trials > 1 { (m2 / (trials - 1.0) / trials).sqrt() } else { 0.0 })
        .collect();
    let mean_relative = merged
        .relative_sum
        .iter()
        .map(|row| row.iter().map(|v| v / trials).collect())
        .collect();
    TrajectoryEnsemble {
        n_agents: s.n_agents(),
        dim: s.state_dim(),
        horizon: s.horizon,
        trials: s.trials,
        paths: config.record_paths.then_some(merged.paths),
        msd: merged.mean,
        msd_stderr,
        mean_relative,
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Stacked states `x(0..=horizon)` of one trial.
pub fn simulate_trial(s: &Scenario, trial: u64) -> Vec<DVector<f64>> {
    simulate_path(s, trial, false)
}

/// Noise-free trajectory of the closed loop.
pub fn simulate_deterministic(s: &Scenario) -> Vec<DVector<f64>> {
    simulate_path(s, 0, true)
}

fn simulate_path(s: &Scenario, trial: u64, noise_free: bool) -> Vec<DVector<f64>> {
    let stepper = Stepper::new(s);
    let variances = noise::source_variances(&s.topology);
    let zeros = vec![0.0; variances.len()];
    let mut draw = Vec::new();
    let mut path = vec![s.initial_state.clone()];
    for k in 0..s.horizon {
        let mut next = vec![0.0; s.initial_state.len()];
        let values = if noise_free {
            &zeros
        } else {
            noise::draw_into(&s.noise, &variances, trial, k as u64, &mut draw);
            &draw
        };
        stepper.advance(path[k].as_slice(), values, &mut next);
        path.push(DVector::from_vec(next));
    }
    path
}

struct ChunkStats {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    relative_sum: Vec<Vec<f64>>,
    paths: Vec<Vec<f64>>,
}

impl ChunkStats {
    fn empty(horizon: usize, rel_width: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; horizon + 1],
            m2: vec![0.0; horizon + 1],
            relative_sum: vec![vec![0.0; rel_width]; horizon + 1],
            paths: Vec::new(),
        }
    }

    fn push(&mut self, k: usize, value: f64) {
        // Welford; `count` is bumped once per trial by the caller
        let n = self.count as f64;
        let delta = value - self.mean[k];
        self.mean[k] += delta / n;
        self.m2[k] += delta * (value - self.mean[k]);
    }

    /// Chan et al. pairwise merge; `other` always comes later in trial order.
    fn merge(&mut self, other: ChunkStats, keep_paths: bool) {
        if other.count == 0 {
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        for k in 0..self.mean.len() {
            let delta = other.mean[k] - self.mean[k];
            self.mean[k] += delta * nb / n;
            self.m2[k] += other.m2[k] + delta * delta * na * nb / n;
            for (acc, v) in self.relative_sum[k].iter_mut().zip(&other.relative_sum[k]) {
                *acc += v;
            }
        }
        self.count += other.count;
        if keep_paths {
            self.paths.extend(other.paths);
        }
    }
}

fn simulate_chunk(
    s: &Scenario,
    stepper: &Stepper,
    variances: &[f64],
    trials: std::ops::Range<usize>,
    record_paths: bool,
) -> ChunkStats {
    let n_agents = s.n_agents();
    let dim = s.state_dim();
    let width = n_agents * dim;
    let leader_mode = s.topology.mode() == Mode::LeaderFollower;
    let mut stats = ChunkStats::empty(s.horizon, (n_agents - 1) * dim);
    let mut draw = Vec::with_capacity(variances.len());
    let mut x = s.initial_state.as_slice().to_vec();
    let mut next = vec![0.0; width];

    for trial in trials {
        stats.count += 1;
        x.copy_from_slice(s.initial_state.as_slice());
        let mut path = Vec::new();
        if record_paths {
            path.reserve(width * (s.horizon + 1));
        }
        for k in 0..=s.horizon {
            if k > 0 {
                noise::draw_into(&s.noise, variances, trial as u64, (k - 1) as u64, &mut draw);
                stepper.advance(&x, &draw, &mut next);
                std::mem::swap(&mut x, &mut next);
            }
            if record_paths {
                path.extend_from_slice(&x);
            }
            let sq = if leader_mode {
                squared_error_to_leader(&x, n_agents, dim)
            } else {
                squared_consensus_error(&x, n_agents, dim)
            };
            stats.push(k, sq);
            let rel = &mut stats.relative_sum[k];
            for r in 0..(n_agents - 1) * dim {
                rel[r] += x[dim + r] - x[r % dim];
            }
        }
        if record_paths {
            stats.paths.push(path);
        }
    }
    stats
}

fn squared_consensus_error(x: &[f64], n_agents: usize, dim: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..dim {
        let mean = (0..n_agents).map(|i| x[i * dim + c]).sum::<f64>() / n_agents as f64;
        total += (0..n_agents).map(|i| (x[i * dim + c] - mean).powi(2)).sum::<f64>();
    }
    total
}

fn squared_error_to_leader(x: &[f64], n_agents: usize, dim: usize) -> f64 {
    (dim..n_agents * dim).map(|r| (x[r] - x[r % dim]).powi(2)).sum()
}
