//! Communication graphs: adjacency, Laplacian and incidence matrices,
//! Laplacian spectra and the structural checks the consensus results need.
//!
//! Nodes are 0-indexed internally. A directed edge `from -> to` means agent
//! `to` receives information from agent `from`, so it sets `a[to][from] = 1`
//! and carries the variance of the uncertainty `to` sees on that link. In
//! leader-follower mode node 0 is the leader.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Assumption, Error, Result};
use crate::linalg;

/// Threshold below which the second Laplacian eigenvalue counts as zero.
pub const CONNECTIVITY_TOL: f64 = 1e-8;
/// Minimum eigenvalue the follower block must clear.
pub const FOLLOWER_BLOCK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Undirected,
    LeaderFollower,
    InputChannel,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Undirected => "undirected",
            Mode::LeaderFollower => "leader-follower",
            Mode::InputChannel => "input-channel",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Variance of the multiplicative uncertainty on this directed link.
    pub variance: f64,
}

/// An unordered pair `{head, tail}` with `head < tail`, as used by the
/// incidence matrix. `variance_sum` is the sum over both directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UndirectedPair {
    pub head: usize,
    pub tail: usize,
    pub variance_sum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    n_nodes: usize,
    mode: Mode,
    edges: Vec<Edge>,
    input_variances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<f64>,
    pub lambda2: f64,
    pub lambda_n: f64,
    pub eigenratio: f64,
}

impl Topology {
    /// Validates and stores a topology. Edges are kept sorted by
    /// `(to, from)` so every derived matrix is deterministic.
    pub fn new(
        n_nodes: usize,
        mode: Mode,
        mut edges: Vec<Edge>,
        input_variances: Vec<f64>,
    ) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidTopology("a graph needs at least one node".into()));
        }
        for e in &edges {
            if e.from >= n_nodes || e.to >= n_nodes {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} references a node outside 1..={n_nodes}",
                    e.from + 1,
                    e.to + 1
                )));
            }
            if e.from == e.to {
                return Err(Error::InvalidTopology(format!("self-loop at node {}", e.from + 1)));
            }
            if !(e.variance.is_finite() && e.variance >= 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} has invalid variance {}",
                    e.from + 1,
                    e.to + 1,
                    e.variance
                )));
            }
        }
        edges.sort_by_key(|e| (e.to, e.from));
        if let Some(w) = edges.windows(2).find(|w| w[0].to == w[1].to && w[0].from == w[1].from) {
            return Err(Error::InvalidTopology(format!(
                "duplicate edge {} -> {}",
                w[0].from + 1,
                w[0].to + 1
            )));
        }

        let has = |from: usize, to: usize| edges.iter().any(|e| e.from == from && e.to == to);
        for e in &edges {
            let needs_reverse = match mode {
                Mode::Undirected | Mode::InputChannel => true,
                Mode::LeaderFollower => {
                    if e.to == 0 {
                        return Err(Error::InvalidTopology(format!(
                            "the leader (node 1) cannot receive from node {}",
                            e.from + 1
                        )));
                    }
                    e.from != 0
                }
            };
            if needs_reverse && !has(e.to, e.from) {
                return Err(Error::InvalidTopology(format!(
                    "edge {} -> {} has no reverse edge",
                    e.from + 1,
                    e.to + 1
                )));
            }
        }

        match mode {
            Mode::InputChannel => {
                if input_variances.len() != n_nodes {
                    return Err(Error::InvalidTopology(format!(
                        "input-channel mode needs {n_nodes} input variances, got {}",
                        input_variances.len()
                    )));
                }
                if input_variances.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidTopology("input variances must be >= 0".into()));
                }
            }
            _ => {
                if !input_variances.is_empty() {
                    return Err(Error::InvalidTopology(
                        "input variances are only meaningful in input-channel mode".into(),
                    ));
                }
            }
        }

        Ok(Self { n_nodes, mode, edges, input_variances })
    }

    /// Undirected graph from unordered pairs (0-indexed); both directions
    /// get the same variance.
    pub fn undirected(n_nodes: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        Self::new(n_nodes, Mode::Undirected, mirrored(pairs), Vec::new())
    }

    pub fn cycle(n_nodes: usize, variance: f64) -> Result<Self> {
        let pairs: Vec<_> = (0..n_nodes).map(|i| (i, (i + 1) % n_nodes, variance)).collect();
        Self::undirected(n_nodes, &pairs)
    }

    pub fn complete(n_nodes: usize, variance: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        for i in 0..n_nodes {
            for j in (i + 1)..n_nodes {
                pairs.push((i, j, variance));
            }
        }
        Self::undirected(n_nodes, &pairs)
    }

    /// Leader-follower graph. `leader_links` are `(follower, variance)`
    /// for followers hearing the leader; `follower_pairs` are undirected.
    pub fn leader_follower(
        n_nodes: usize,
        leader_links: &[(usize, f64)],
        follower_pairs: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut edges = mirrored(follower_pairs);
        edges.extend(leader_links.iter().map(|&(to, variance)| Edge { from: 0, to, variance }));
        Self::new(n_nodes, Mode::LeaderFollower, edges, Vec::new())
    }

    /// Undirected graph whose noise sits on each agent's input channel.
    pub fn input_channel(
        n_nodes: usize,
        pairs: &[(usize, usize)],
        input_variances: Vec<f64>,
    ) -> Result<Self> {
        let pairs: Vec<_> = pairs.iter().map(|&(i, j)| (i, j, 0.0)).collect();
        Self::new(n_nodes, Mode::InputChannel, mirrored(&pairs), input_variances)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn input_variances(&self) -> &[f64] {
        &self.input_variances
    }

    /// Variance of the link `from -> to`, if present.
    pub fn variance(&self, from: usize, to: usize) -> Option<f64> {
        self.edges.iter().find(|e| e.from == from && e.to == to).map(|e| e.variance)
    }

    /// Same graph with every edge and input variance multiplied by `factor`.
    pub fn scaled_variances(&self, factor: f64) -> Result<Self> {
        let edges = self.edges.iter().map(|e| Edge { variance: e.variance * factor, ..*e }).collect();
        let inputs = self.input_variances.iter().map(|v| v * factor).collect();
        Self::new(self.n_nodes, self.mode, edges, inputs)
    }

    /// Same structure with node `i` renamed to `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n_nodes {
            return Err(Error::DimensionMismatch("permutation length".into()));
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { from: perm[e.from], to: perm[e.to], variance: e.variance })
            .collect();
        let mut inputs = vec![0.0; self.input_variances.len()];
        for (i, v) in self.input_variances.iter().enumerate() {
            inputs[perm[i]] = *v;
        }
        Self::new(self.n_nodes, self.mode, edges, inputs)
    }

    /// `a[i][j] = 1` iff `j -> i` is an edge.
    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for e in &self.edges {
            a[(e.to, e.from)] = 1.0;
        }
        a
    }

    pub fn laplacian_matrix(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency_matrix();
        for i in 0..self.n_nodes {
            let degree: f64 = -l.row(i).sum();
            l[(i, i)] = degree;
        }
        l
    }

    /// Unordered pairs with `head < tail`. In leader-follower mode only the
    /// follower subgraph is listed.
    pub fn undirected_pairs(&self) -> Vec<UndirectedPair> {
        let mut pairs = Vec::new();
        for e in &self.edges {
            if e.from < e.to && !(self.mode == Mode::LeaderFollower && e.from == 0) {
                let back = self.variance(e.to, e.from).unwrap_or(0.0);
                pairs.push(UndirectedPair { head: e.from, tail: e.to, variance_sum: e.variance + back });
            }
        }
        pairs.sort_by_key(|p| (p.head, p.tail));
        pairs
    }

    /// Laplacian of the undirected pairs weighted by `weights` (one per
    /// entry of [`Topology::undirected_pairs`]).
    pub fn weighted_laplacian(&self, weights: &[f64]) -> Result<DMatrix<f64>> {
        let pairs = self.undirected_pairs();
        if weights.len() != pairs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} edges",
                weights.len(),
                pairs.len()
            )));
        }
        let mut l = DMatrix::zeros(self.n_nodes, self.n_nodes);
        for (p, w) in pairs.iter().zip(weights) {
            l[(p.head, p.head)] += w;
            l[(p.tail, p.tail)] += w;
            l[(p.head, p.tail)] -= w;
            l[(p.tail, p.head)] -= w;
        }
        Ok(l)
    }

    /// Node-by-edge incidence matrix, head (smaller index) = +1, tail = -1.
    /// For leader-follower graphs this is the follower subgraph's incidence,
    /// with rows indexed by followers 2..N.
    pub fn incidence_matrix(&self) -> Result<DMatrix<f64>> {
        let pairs = self.undirected_pairs();
        let offset = match self.mode {
            Mode::Undirected => 0,
            Mode::LeaderFollower => 1,
            Mode::InputChannel => {
                return Err(Error::InvalidInput(
                    "incidence matrix is not defined for input-channel topologies".into(),
                ))
            }
        };
        let mut d = DMatrix::zeros(self.n_nodes - offset, pairs.len());
        for (c, p) in pairs.iter().enumerate() {
            d[(p.head - offset, c)] = 1.0;
            d[(p.tail - offset, c)] = -1.0;
        }
        Ok(d)
    }

    /// `[B̄ | D_s]` over the followers together with the matching column
    /// variances: one unit column per leader link, then the follower
    /// incidence. Leader-follower mode only.
    pub fn leader_augmented_incidence(&self) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if self.mode != Mode::LeaderFollower {
            return Err(Error::InvalidInput("augmented incidence needs a leader-follower graph".into()));
        }
        let leader_links: Vec<&Edge> = self.edges.iter().filter(|e| e.from == 0).collect();
        let pairs = self.undirected_pairs();
        let d_s = self.incidence_matrix()?;
        let n_f = self.n_nodes - 1;
        let cols = leader_links.len() + pairs.len();
        let mut d = DMatrix::zeros(n_f, cols);
        let mut weights = DVector::zeros(cols);
        for (c, e) in leader_links.iter().enumerate() {
            d[(e.to - 1, c)] = 1.0;
            weights[c] = e.variance;
        }
        for (c, p) in pairs.iter().enumerate() {
            d.set_column(leader_links.len() + c, &d_s.column(c));
            weights[leader_links.len() + c] = p.variance_sum;
        }
        Ok((d, weights))
    }

    /// Connectivity of the underlying undirected graph (breadth-first).
    pub fn is_connected(&self) -> bool {
        let mut neighbors = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            neighbors[e.from].push(e.to);
            neighbors[e.to].push(e.from);
        }
        reachable_count(&neighbors, 0) == self.n_nodes
    }

    /// Every node reachable from the leader along directed edges.
    pub fn has_leader_spanning_tree(&self) -> bool {
        let mut out = vec![Vec::new(); self.n_nodes];
        for e in &self.edges {
            out[e.from].push(e.to);
        }
        reachable_count(&out, 0) == self.n_nodes
    }

    /// Sorted Laplacian spectrum of a connected undirected graph.
    pub fn laplacian_spectrum(&self) -> Result<SpectralSummary> {
        if self.mode == Mode::LeaderFollower {
            return Err(Error::InvalidInput(
                "Laplacian of a leader-follower graph is not symmetric; use follower_spectrum".into(),
            ));
        }
        if self.n_nodes < 2 {
            return Err(Error::InvalidTopology("spectrum needs at least two nodes".into()));
        }
        let eigenvalues = linalg::symmetric_eigenvalues(&self.laplacian_matrix())?;
        let lambda2 = eigenvalues[1];
        if !self.is_connected() || lambda2 < CONNECTIVITY_TOL {
            return Err(Error::DisconnectedGraph { lambda2 });
        }
        let lambda_n = eigenvalues[self.n_nodes - 1];
        Ok(SpectralSummary { lambda2, lambda_n, eigenratio: lambda2 / lambda_n, eigenvalues })
    }

    /// Splits the Laplacian as `[[0, 0], [L2, L1]]` around the leader.
    pub fn follower_laplacian(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_leader_follower()?;
        let l = self.laplacian_matrix();
        let n_f = self.n_nodes - 1;
        let l1 = l.view((1, 1), (n_f, n_f)).into_owned();
        let l2 = l.view((1, 0), (n_f, 1)).into_owned();
        let min_eig = linalg::symmetric_eigenvalues(&l1)?[0];
        if min_eig < FOLLOWER_BLOCK_TOL {
            return Err(Error::AssumptionViolated {
                assumption: Assumption::LeaderSpanningTree,
                detail: format!("follower block has eigenvalue {min_eig:.3e}"),
            });
        }
        Ok((l1, l2))
    }

    /// Sorted eigenvalues of the follower block `L1`; all positive.
    pub fn follower_spectrum(&self) -> Result<Vec<f64>> {
        let (l1, _) = self.follower_laplacian()?;
        linalg::symmetric_eigenvalues(&l1)
    }

    /// Checks the structural assumption matching the topology's mode.
    pub fn validate_assumptions(&self) -> Result<()> {
        match self.mode {
            Mode::Undirected | Mode::InputChannel => {
                if self.n_nodes < 2 || !self.is_connected() {
                    return Err(Error::AssumptionViolated {
                        assumption: Assumption::UndirectedConnected,
                        detail: if self.n_nodes < 2 {
                            "at least two agents are required".into()
                        } else {
                            "the communication graph is not connected".into()
                        },
                    });
                }
                Ok(())
            }
            Mode::LeaderFollower => self.follower_laplacian().map(|_| ()),
        }
    }

    fn check_leader_follower(&self) -> Result<()> {
        if self.mode != Mode::LeaderFollower {
            return Err(Error::InvalidInput("expected a leader-follower topology".into()));
        }
        if self.n_nodes < 2 || !self.has_leader_spanning_tree() {
            return Err(Error::AssumptionViolated {
                assumption: Assumption::LeaderSpanningTree,
                detail: "some follower is not reachable from the leader".into(),
            });
        }
        Ok(())
    }
}

fn mirrored(pairs: &[(usize, usize, f64)]) -> Vec<Edge> {
    pairs
        .iter()
        .flat_map(|&(i, j, variance)| {
            [Edge { from: i, to: j, variance }, Edge { from: j, to: i, variance }]
        })
        .collect()
}

fn reachable_count(neighbors: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; neighbors.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count
}
