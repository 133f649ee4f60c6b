use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use robust_consensus::TrajectoryEnsemble;

use crate::commands::{Analysis, Manifest};
use crate::error::CliError;

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut text = contents.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

/// `trajectories.csv` (trial, k, agent, state_component_index, value) and
/// `summary.csv` (k, msd, msd_stderr, then one mean relative state column
/// per follower and component). Agents and components are 1-indexed.
pub fn write_ensemble(dir: &Path, ens: &TrajectoryEnsemble) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let mut w = csv_writer(&dir.join("trajectories.csv"))?;
    w.write_record(["trial", "k", "agent", "state_component_index", "value"])?;
    for trial in 0..ens.trials {
        for k in 0..=ens.horizon {
            for agent in 0..ens.n_agents {
                let Some(x) = ens.state(trial, k, agent) else { continue };
                for (c, v) in x.iter().enumerate() {
                    w.write_record(&[
                        trial.to_string(),
                        k.to_string(),
                        (agent + 1).to_string(),
                        (c + 1).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io(dir.join("trajectories.csv"), e))?;

    let mut w = csv_writer(&dir.join("summary.csv"))?;
    let mut header = vec!["k".to_string(), "msd".to_string(), "msd_stderr".to_string()];
    for agent in 2..=ens.n_agents {
        for c in 1..=ens.dim {
            header.push(format!("rel_{agent}_{c}"));
        }
    }
    w.write_record(&header)?;
    for k in 0..=ens.horizon {
        let mut row = vec![k.to_string(), ens.msd[k].to_string(), ens.msd_stderr[k].to_string()];
        row.extend(ens.mean_relative[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(dir.join("summary.csv"), e))
}

/// Monte Carlo msd next to the exact second-moment recursion.
pub fn write_moments(path: &Path, ens: &TrajectoryEnsemble, exact: &[f64]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(["k", "exact_msd", "msd", "msd_stderr", "z"])?;
    for k in 0..=ens.horizon {
        let z = if ens.msd_stderr[k] > 0.0 { (ens.msd[k] - exact[k]) / ens.msd_stderr[k] } else { 0.0 };
        w.write_record(&[
            k.to_string(),
            exact[k].to_string(),
            ens.msd[k].to_string(),
            ens.msd_stderr[k].to_string(),
            z.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn analysis_text(a: &Analysis) -> String {
    let mut s = String::new();
    let eig: Vec<String> = a.eigenvalues.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(s, "mode: {}", a.mode.as_str());
    let _ = writeln!(s, "agents: {}", a.n_nodes);
    let _ = writeln!(s, "eigenvalues: [{}]", eig.join(", "));
    let _ = writeln!(s, "extremes: {:.6} .. {:.6} (eigenratio {:.6})", a.lambda_low, a.lambda_high, a.eigenratio);
    let _ = writeln!(s, "Mahler measure: {:.6}", a.mahler);
    let _ = writeln!(s, "noise level: {:.6}", a.sigma_effective);
    let _ = writeln!(s, "alpha*: {:.6}", a.alpha_star);
    let c = &a.condition;
    let _ = writeln!(
        s,
        "condition: lhs {:.6} vs rhs {:.6} -> {}",
        c.lhs_max,
        c.rhs,
        if c.holds { "holds" } else { "fails" }
    );
    if let Some(lin) = c.linear_noise_form_holds {
        let _ = writeln!(s, "linear noise form: {}", if lin { "holds" } else { "fails" });
    }
    match a.admissible_delta_sq {
        Some([lo, hi]) => {
            let _ = writeln!(s, "admissible delta^2: [{lo:.6}, {hi:.6})");
        }
        None => {
            let _ = writeln!(s, "admissible delta^2: empty");
        }
    }
    if let Some(ideal) = a.ideal_channel_condition {
        let _ = writeln!(s, "ideal-channel eigenratio test: {}", if ideal { "holds" } else { "fails" });
    }
    s
}

pub fn manifest_text(m: &Manifest) -> String {
    let mut s = String::new();
    let mark = |ok: bool| if ok { "ok  " } else { "FAIL" };
    for c in &m.comparisons {
        let _ = writeln!(
            s,
            "{} {:<14} max {} deviation {:.3e} (tol {:e})",
            mark(c.pass),
            c.quantity,
            c.tolerance_kind,
            c.max_deviation,
            c.tolerance
        );
    }
    let r = &m.riccati_at_stated_delta_sq;
    let _ = writeln!(
        s,
        "{} P at delta^2 = {}: max relative deviation {:.3e} (used delta^2 = {})",
        mark(r.pass),
        m.stated_delta_sq,
        r.max_deviation,
        m.delta_sq_used
    );
    let _ = writeln!(
        s,
        "{} msd vs exact moments: worst |z| {:.2} at k = {}",
        mark(m.msd_vs_oracle.pass),
        m.msd_vs_oracle.worst_z,
        m.msd_vs_oracle.worst_step
    );
    let _ = writeln!(
        s,
        "{} mean relative state decay: {:.3e}",
        mark(m.mean_relative_decay.pass),
        m.mean_relative_decay.final_over_initial
    );
    let _ = writeln!(
        s,
        "spectral radius {:.6}, ms-stable {}, condition holds {}",
        m.spectral_radius, m.is_ms_stable, m.condition_holds
    );
    for t in &m.complete_graph_thresholds {
        let _ = writeln!(
            s,
            "complete graph N = {}: measured variance threshold {:.6}, reference {:.6}",
            t.n_agents, t.measured, t.reference
        );
    }
    s
}
