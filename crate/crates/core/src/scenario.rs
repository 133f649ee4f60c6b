//! TOML scenario files.
//!
//! Nodes are numbered from 1 in files. An edge `[i, j, v]` means agent `j`
//! receives from agent `i` over a link with uncertainty variance `v`.
//! For undirected and input-channel graphs a missing reverse edge is added
//! with the same variance. In leader-follower graphs node 1 is the leader;
//! edges out of it are one-way and all other edges are mirrored as above.
//!
//! ```toml
//! [model]
//! A = [[1.0, 1.0], [0.0, 1.0]]
//! B = [0.0, 1.0]
//!
//! [topology]
//! n_nodes = 3
//! mode = "undirected"
//! edges = [[1, 2, 0.5], [2, 3, 0.5]]
//!
//! [simulation]
//! initial_states = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::graph::{Edge, Mode, Topology};
use crate::linalg;
use crate::noise::{Distribution, NoiseSpec};
use crate::simulate::Scenario;
use crate::synthesis::{self, ProtocolGain, SynthesisOptions};

pub const DEFAULT_HORIZON: usize = 60;
pub const DEFAULT_TRIALS: usize = 1000;

const BUILTIN_EXAMPLE: &str = include_str!("../fixtures/cycle6_double_integrator.toml");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub model: ModelSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub simulation: SimulationSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EdgeEntry {
    Weighted(usize, usize, f64),
    Plain(usize, usize),
}

impl EdgeEntry {
    fn parts(&self) -> (usize, usize, f64) {
        match *self {
            EdgeEntry::Weighted(i, j, v) => (i, j, v),
            EdgeEntry::Plain(i, j) => (i, j, 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub n_nodes: usize,
    pub mode: Mode,
    #[serde(default)]
    pub edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_variances: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_sq: Option<f64>,
    #[serde(default, rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Fixed feedback row; skips the Riccati design when present.
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub initial_states: Vec<Vec<f64>>,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    /// Checks everything that can be checked without solving anything.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let n = model.state_dim();
        let topology = self.topology()?;
        if self.simulation.initial_states.len() != topology.n_nodes() {
            return Err(Error::Scenario(format!(
                "{} initial states given for {} agents",
                self.simulation.initial_states.len(),
                topology.n_nodes()
            )));
        }
        if let Some(bad) = self.simulation.initial_states.iter().find(|x| x.len() != n) {
            return Err(Error::Scenario(format!("initial state of length {} for state dimension {n}", bad.len())));
        }
        if self.simulation.horizon == 0 || self.simulation.trials == 0 {
            return Err(Error::Scenario("horizon and trials must be at least 1".into()));
        }
        if let Some(q) = &self.protocol.q {
            crate::mare::validate_weight(&linalg::matrix_from_rows(q)?, n)?;
        }
        if let Some(k) = &self.protocol.k {
            if k.len() != n {
                return Err(Error::Scenario(format!("K has {} entries, state dimension is {n}", k.len())));
            }
        }
        if let Some(a) = self.protocol.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Scenario(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DynamicsModel> {
        DynamicsModel::from_rows(&self.model.a, &self.model.b)
    }

    pub fn topology(&self) -> Result<Topology> {
        let t = &self.topology;
        let mut edges: Vec<Edge> = Vec::new();
        for entry in &t.edges {
            let (i, j, variance) = entry.parts();
            if i == 0 || j == 0 {
                return Err(Error::Scenario(format!("node indices start at 1, got edge [{i}, {j}]")));
            }
            edges.push(Edge { from: i - 1, to: j - 1, variance });
        }
        let listed: Vec<(usize, usize)> = edges.iter().map(|e| (e.from, e.to)).collect();
        let mirrors: Vec<Edge> = edges
            .iter()
            .filter(|e| !(t.mode == Mode::LeaderFollower && e.from == 0))
            .filter(|e| !listed.contains(&(e.to, e.from)))
            .map(|e| Edge { from: e.to, to: e.from, variance: e.variance })
            .collect();
        edges.extend(mirrors);
        Topology::new(t.n_nodes, t.mode, edges, t.input_variances.clone().unwrap_or_default())
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec { distribution: self.noise.distribution, seed: self.noise.seed }
    }

    pub fn synthesis_options(&self) -> Result<SynthesisOptions> {
        Ok(SynthesisOptions {
            q: self.protocol.q.as_deref().map(linalg::matrix_from_rows).transpose()?,
            alpha: self.protocol.alpha,
            delta_sq: self.protocol.delta_sq,
            ..SynthesisOptions::default()
        })
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.simulation.initial_states.iter().map(Vec::len).sum(),
            self.simulation.initial_states.iter().flatten().copied(),
        )
    }

    /// The protocol gain: the fixed `K` if one is given, otherwise the
    /// Riccati design (which fails when the consensus condition does).
    pub fn gain(&self) -> Result<ProtocolGain> {
        let model = self.model()?;
        let topology = self.topology()?;
        match &self.protocol.k {
            Some(k) => {
                let alpha = match self.protocol.alpha {
                    Some(a) => a,
                    None => synthesis::default_alpha(&topology)?,
                };
                ProtocolGain::manual(alpha, DVector::from_row_slice(k))
            }
            None => synthesis::synthesize(&model, &topology, &self.synthesis_options()?),
        }
    }

    pub fn scenario_with_gain(&self, gain: ProtocolGain) -> Result<Scenario> {
        Scenario::new(
            self.model()?,
            self.topology()?,
            gain,
            self.noise_spec(),
            self.initial_state(),
            self.simulation.horizon,
            self.simulation.trials,
        )
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.scenario_with_gain(self.gain()?)
    }
}

/// The built-in six-agent double-integrator example on a 6-cycle.
pub fn builtin_example() -> ScenarioFile {
    ScenarioFile::parse(BUILTIN_EXAMPLE).expect("embedded fixture is valid")
}

pub fn builtin_example_text() -> &'static str {
    BUILTIN_EXAMPLE
}

/// Rows of a matrix, for writing it back to a scenario file.
pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    linalg::matrix_to_rows(m)
}
