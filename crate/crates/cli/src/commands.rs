use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use robust_consensus::mare::{self, MareProblem};
use robust_consensus::moments::{self, build_generators, critical_noise_scale, ms_spectral_radius};
use robust_consensus::scenario::{builtin_example, builtin_example_text, rows_of};
use robust_consensus::simulate::run_ensemble;
use robust_consensus::synthesis::{self, condition_extremes, SpectrumSource};
use robust_consensus::{
    Assumption, ConditionReport, DynamicsModel, Error, Mode, ProtocolGain, Scenario, ScenarioFile, Topology,
    TrajectoryEnsemble,
};

use crate::error::CliError;
use crate::output;

pub fn load(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ScenarioFile::parse(&text)?)
}

#[derive(Debug, Serialize)]
pub struct Analysis {
    pub mode: Mode,
    pub n_nodes: usize,
    pub spectrum_source: SpectrumSource,
    /// Laplacian eigenvalues, or those of the follower block in
    /// leader-follower mode.
    pub eigenvalues: Vec<f64>,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub eigenratio: f64,
    pub mahler: f64,
    pub sigma_effective: f64,
    pub alpha_star: f64,
    /// `[lower, upper)` for δ² when the condition holds at `alpha_star`.
    pub admissible_delta_sq: Option<[f64; 2]>,
    pub condition: ConditionReport,
    pub noise_free: bool,
    /// Eigenratio test for ideal channels, reported for noise-free files.
    pub ideal_channel_condition: Option<bool>,
}

pub fn analyze(file: &ScenarioFile) -> Result<Analysis, CliError> {
    let model = file.model()?;
    let t = file.topology()?;
    if !model.is_stabilizable()? {
        return Err(Error::AssumptionViolated {
            assumption: Assumption::Stabilizable,
            detail: "some unstable mode of A is not reachable from B".into(),
        }
        .into());
    }
    let extremes = condition_extremes(&t)?;
    let eigenvalues = match t.mode() {
        Mode::LeaderFollower => t.follower_spectrum()?,
        _ => t.laplacian_spectrum()?.eigenvalues,
    };
    let alpha_star = synthesis::default_alpha(&t)?;
    let condition = synthesis::check_condition(&model, &t, alpha_star)?;
    let noise_free = synthesis::sigma_effective(&t) == 0.0;
    Ok(Analysis {
        mode: t.mode(),
        n_nodes: t.n_nodes(),
        spectrum_source: extremes.source,
        eigenvalues,
        lambda_low: extremes.low,
        lambda_high: extremes.high,
        eigenratio: extremes.low / extremes.high,
        mahler: condition.mahler,
        sigma_effective: condition.sigma_effective,
        alpha_star,
        admissible_delta_sq: condition.holds.then_some([condition.lhs_max, condition.rhs]),
        noise_free,
        ideal_channel_condition: noise_free
            .then(|| synthesis::noise_free_condition(extremes.low, extremes.high, condition.mahler)),
        condition,
    })
}

#[derive(Debug, Serialize)]
pub struct GainArtifact {
    pub alpha: f64,
    pub delta_sq: f64,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub riccati_residual: f64,
    pub riccati_iterations: usize,
    pub condition: ConditionReport,
}

/// Riccati design from the file's protocol section; a fixed `K` in the
/// file is ignored here.
pub fn synthesize(file: &ScenarioFile) -> Result<GainArtifact, CliError> {
    let model = file.model()?;
    let t = file.topology()?;
    let gain = synthesis::synthesize(&model, &t, &file.synthesis_options()?)?;
    let design = gain.design.expect("synthesized gains carry their design");
    let condition = synthesis::check_condition(&model, &t, gain.alpha)?;
    Ok(GainArtifact {
        alpha: gain.alpha,
        delta_sq: design.delta_sq,
        k: gain.k.iter().copied().collect(),
        p: rows_of(&design.p),
        q: rows_of(&design.q),
        riccati_residual: design.residual,
        riccati_iterations: design.iterations,
        condition,
    })
}

pub struct SimulationOverrides {
    pub trials: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: Option<u64>,
}

impl SimulationOverrides {
    pub fn apply(&self, file: &mut ScenarioFile) {
        if let Some(t) = self.trials {
            file.simulation.trials = t;
        }
        if let Some(h) = self.horizon {
            file.simulation.horizon = h;
        }
        if let Some(s) = self.seed {
            file.noise.seed = s;
        }
    }
}

pub fn simulate(file: &ScenarioFile) -> Result<TrajectoryEnsemble, CliError> {
    let s = file.scenario()?;
    info!("running {} trials over {} steps", s.trials, s.horizon);
    Ok(run_ensemble(&s))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainSource {
    /// `K` given in the file.
    Fixed,
    /// Riccati design inside the admissible δ² interval.
    Synthesized,
    /// Riccati gain computed even though the consensus condition fails.
    RiccatiFallback,
}

#[derive(Debug, Serialize)]
pub struct Verdict {
    pub mode: Mode,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    pub gain_source: GainSource,
    pub spectral_radius: f64,
    pub is_ms_stable: bool,
    pub condition_holds: bool,
    /// Stable per the moment operator although the condition fails.
    pub conservative_flag: bool,
    pub condition_report: ConditionReport,
}

/// Gain for verification. Without a fixed `K`, a design that the condition
/// rules out still gets a Riccati gain so the oracle has something to judge.
fn verification_gain(file: &ScenarioFile) -> Result<(ProtocolGain, GainSource), CliError> {
    if file.protocol.k.is_some() {
        return Ok((file.gain()?, GainSource::Fixed));
    }
    match file.gain() {
        Ok(g) => Ok((g, GainSource::Synthesized)),
        Err(Error::ConditionFails(_) | Error::DeltaOutOfRange { .. }) => {
            let model = file.model()?;
            let t = file.topology()?;
            let alpha = match file.protocol.alpha {
                Some(a) => a,
                None => synthesis::default_alpha(&t)?,
            };
            let rhs = 1.0 / model.mahler_measure()?.powi(2);
            let delta_sq = file.protocol.delta_sq.unwrap_or(0.5 * rhs);
            let n = model.state_dim();
            let q = file.synthesis_options()?.q.unwrap_or_else(|| DMatrix::identity(n, n));
            let sol = mare::solve_mare(&MareProblem::new(model.clone(), q, delta_sq)?, Default::default())?;
            let k = mare::feedback_gain(&model, &sol.p)?;
            Ok((ProtocolGain::manual(alpha, k)?, GainSource::RiccatiFallback))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn verify(file: &ScenarioFile) -> Result<Verdict, CliError> {
    let (gain, gain_source) = verification_gain(file)?;
    let s = file.scenario_with_gain(gain)?;
    let spectral_radius = ms_spectral_radius(&build_generators(&s)?)?;
    let is_ms_stable = moments::is_ms_stable(&s)?;
    let report = synthesis::check_condition(&s.model, &s.topology, s.gain.alpha)?;
    Ok(Verdict {
        mode: s.topology.mode(),
        alpha: s.gain.alpha,
        k: s.gain.k.iter().copied().collect(),
        gain_source,
        spectral_radius,
        is_ms_stable,
        condition_holds: report.holds,
        conservative_flag: is_ms_stable && !report.holds,
        condition_report: report,
    })
}

const PRINTED_P: [[f64; 2]; 2] = [[31.9, 152.1], [152.1, 1464.3]];
const PRINTED_K: [f64; 2] = [-0.1038, -1.1038];
const PRINTED_ALPHA: f64 = 0.25;
const PRINTED_LHS: f64 = 0.75;
/// δ² as stated alongside the printed Riccati solution.
const STATED_DELTA_SQ: f64 = 0.9;
const COMPLETE_GRAPH_REFERENCE: [(usize, f64); 3] = [(2, 1.0), (3, 1.5), (4, 16.0 / 7.0)];

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub quantity: &'static str,
    pub computed: Vec<f64>,
    pub reference: Vec<f64>,
    /// "relative" or "absolute", elementwise.
    pub tolerance_kind: &'static str,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub pass: bool,
}

impl Comparison {
    fn new(quantity: &'static str, computed: Vec<f64>, reference: Vec<f64>, relative: bool, tolerance: f64) -> Self {
        let max_deviation = computed
            .iter()
            .zip(&reference)
            .map(|(c, r)| if relative { (c - r).abs() / r.abs() } else { (c - r).abs() })
            .fold(0.0, f64::max);
        Comparison {
            quantity,
            computed,
            reference,
            tolerance_kind: if relative { "relative" } else { "absolute" },
            tolerance,
            max_deviation,
            pass: max_deviation <= tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OracleAgreement {
    pub worst_z: f64,
    pub worst_step: usize,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Decay {
    pub final_over_initial: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Threshold {
    pub n_agents: usize,
    pub alpha: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// Largest per-direction variance that keeps the moment operator stable.
    pub measured: f64,
    pub reference: f64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub seed: u64,
    pub trials: usize,
    pub horizon: usize,
    pub delta_sq_used: f64,
    pub comparisons: Vec<Comparison>,
    /// The same Riccati equation solved at the δ² stated with the printed
    /// solution.
    pub riccati_at_stated_delta_sq: Comparison,
    pub stated_delta_sq: f64,
    pub msd_vs_oracle: OracleAgreement,
    pub mean_relative_decay: Decay,
    pub spectral_radius: f64,
    pub is_ms_stable: bool,
    pub condition_holds: bool,
    /// Single integrators on complete graphs at the noise-free design.
    pub complete_graph_thresholds: Vec<Threshold>,
    pub files: Vec<&'static str>,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    rows_of(m).into_iter().flatten().collect()
}

fn complete_graph_threshold(n: usize, reference: f64) -> Result<Threshold, Error> {
    let alpha = 1.0 / n as f64;
    let k = -1.0;
    let s = Scenario::new(
        DynamicsModel::scalar(1.0, 1.0),
        Topology::complete(n, 1.0)?,
        ProtocolGain::manual(alpha, DVector::from_element(1, k))?,
        Default::default(),
        DVector::from_fn(n, |i, _| i as f64),
        1,
        1,
    )?;
    let base = build_generators(&s)?;
    let measured = critical_noise_scale(|c| Ok(base.with_scaled_variances(c)), 1e-10)?;
    Ok(Threshold { n_agents: n, alpha, k, measured, reference })
}

pub fn reproduce(dir: &Path) -> Result<Manifest, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let file = builtin_example();
    output::write_file(&dir.join("scenario.toml"), builtin_example_text())?;

    let analysis = analyze(&file)?;
    output::write_file(&dir.join("analysis.json"), &output::to_json(&analysis)?)?;

    let gain = synthesize(&file)?;
    output::write_file(&dir.join("gain.json"), &output::to_json(&gain)?)?;

    let s = file.scenario()?;
    let ens = run_ensemble(&s);
    output::write_ensemble(dir, &ens)?;
    let exact = moments::exact_msd_trajectory(&s, s.horizon)?;
    output::write_moments(&dir.join("moments.csv"), &ens, &exact)?;

    let verdict = verify(&file)?;
    output::write_file(&dir.join("verify.json"), &output::to_json(&verdict)?)?;

    let p = DMatrix::from_row_iterator(2, 2, gain.p.iter().flatten().copied());
    let printed_p: Vec<f64> = PRINTED_P.iter().flatten().copied().collect();
    let lhs: Vec<f64> = analysis.condition.lhs_values.iter().map(|v| v.value).collect();
    let comparisons = vec![
        Comparison::new("P", flat(&p), printed_p.clone(), true, 0.01),
        Comparison::new("K", gain.k.clone(), PRINTED_K.to_vec(), false, 1e-3),
        Comparison::new("alpha", vec![gain.alpha], vec![PRINTED_ALPHA], false, 1e-12),
        Comparison::new("condition_lhs", lhs, vec![PRINTED_LHS; 2], false, 1e-12),
    ];

    let q = file.synthesis_options()?.q.unwrap_or_else(|| DMatrix::identity(2, 2));
    let stated = mare::solve_mare(&MareProblem::new(file.model()?, q, STATED_DELTA_SQ)?, Default::default())?;
    let riccati_at_stated_delta_sq = Comparison::new("P", flat(&stated.p), printed_p, true, 0.01);

    let (mut worst_z, mut worst_step) = (0.0, 0);
    for k in 1..=ens.horizon {
        let z = (ens.msd[k] - exact[k]).abs() / ens.msd_stderr[k];
        if z > worst_z {
            (worst_z, worst_step) = (z, k);
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let decay = norm(&ens.mean_relative[ens.horizon]) / norm(&ens.mean_relative[0]);

    let complete_graph_thresholds = COMPLETE_GRAPH_REFERENCE
        .iter()
        .map(|&(n, r)| complete_graph_threshold(n, r))
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = Manifest {
        seed: file.noise.seed,
        trials: s.trials,
        horizon: s.horizon,
        delta_sq_used: gain.delta_sq,
        comparisons,
        riccati_at_stated_delta_sq,
        stated_delta_sq: STATED_DELTA_SQ,
        msd_vs_oracle: OracleAgreement { worst_z, worst_step, tolerance: 3.0, pass: worst_z <= 3.0 },
        mean_relative_decay: Decay { final_over_initial: decay, tolerance: 0.01, pass: decay < 0.01 },
        spectral_radius: verdict.spectral_radius,
        is_ms_stable: verdict.is_ms_stable,
        condition_holds: verdict.condition_holds,
        complete_graph_thresholds,
        files: vec![
            "scenario.toml",
            "analysis.json",
            "gain.json",
            "trajectories.csv",
            "summary.csv",
            "moments.csv",
            "verify.json",
            "manifest.json",
        ],
    };
    output::write_file(&dir.join("manifest.json"), &output::to_json(&manifest)?)?;
    Ok(manifest)
}
