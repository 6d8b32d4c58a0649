//! Files written by `run`: data files, `manifest.json` and `timing.json`.
//!
//! Everything except `timing.json` is a deterministic function of the
//! config, so two runs of the same config are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use semiflow::measures::fmt17;
use semiflow::newton::write_trajectory_csv;
use semiflow::VERSION;

use crate::config::Scenario;
use crate::error::{numeric, CliError, CliResult};
use crate::scenario::Outcome;

pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

fn derived(outcome: &Outcome) -> Value {
    match outcome {
        Outcome::Newton(r) => {
            let s0 = &r.states[0];
            json!({
                "particles": s0.len(),
                "dim": s0.dim,
                "modulus": r.potential.modulus(),
                "mass_weighted_modulus": r.potential.mass_weighted_modulus(&s0.masses),
                "output_times": r.states.len(),
            })
        }
        Outcome::Vlasov(r) => json!({
            "particles": r.f0.len(),
            "dim": r.f0.space_dim(),
            "interaction": r.interaction.spec(),
            "modulus": r.interaction.modulus(),
            "growth": r.interaction.growth(),
            "kinetic_budget": semiflow::jeans_vlasov::kinetic_budget(&r.f0, &r.interaction),
            "output_times": r.states.len(),
        }),
        Outcome::Sticky(fm) => json!({
            "particles": fm.len(),
            "interaction": fm.data().potential().spec(),
            "modulus": fm.data().potential().modulus(),
            "events": fm.events.len(),
            "segments": fm.segments.len(),
        }),
        Outcome::Elasto(r) => json!({
            "modes": r.basis.len(),
            "dim": r.basis.dim(),
            "quad_order": r.basis.quad_order(),
            "largest_eigenvalue": r.basis.largest_eigenvalue(),
            "energy_modulus": r.energy.modulus(),
            "discrete_modulus": r.energy.modulus() * r.basis.largest_eigenvalue(),
            "coercivity": r.energy.coercivity(),
            "orthonormality_defect": r.basis.orthonormality_defect(),
            "initial_energy": r.report.energy[0],
            "output_times": r.series.states.len(),
        }),
    }
}

/// Renders every deterministic artifact as `(file name, bytes)`, data files
/// first and the manifest last.
pub fn render(scenario: &Scenario, outcome: &Outcome) -> CliResult<Vec<(String, Vec<u8>)>> {
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut buf = Vec::new();
    match outcome {
        Outcome::Newton(r) => {
            write_trajectory_csv(&r.states, &mut buf).map_err(numeric)?;
            files.push(("trajectory.csv".into(), std::mem::take(&mut buf)));
        }
        Outcome::Vlasov(r) => {
            write_trajectory_csv(&r.states, &mut buf).map_err(numeric)?;
            files.push(("trajectory.csv".into(), std::mem::take(&mut buf)));
            let last = r.series.snapshots.last().expect("series starts with f0");
            last.measure.write_csv(&mut buf).map_err(numeric)?;
            files.push(("final_phase.csv".into(), std::mem::take(&mut buf)));
        }
        Outcome::Sticky(fm) => {
            fm.write_csv(&mut buf).map_err(numeric)?;
            files.push(("flow_map.csv".into(), std::mem::take(&mut buf)));
            fm.write_events_json(&mut buf).map_err(numeric)?;
            files.push(("events.json".into(), std::mem::take(&mut buf)));
        }
        Outcome::Elasto(r) => {
            r.series.write_csv(r.basis.dim(), &mut buf).map_err(numeric)?;
            files.push(("modes.csv".into(), std::mem::take(&mut buf)));
            let mut text = String::from("t,energy,dissipation,residual\n");
            for k in 0..r.report.times.len() {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt17(r.report.times[k]),
                    fmt17(r.report.energy[k]),
                    fmt17(r.report.dissipation[k]),
                    fmt17(r.report.residual[k])
                ));
            }
            files.push(("energy.csv".into(), text.into_bytes()));
            if let Some(y) = &r.young {
                y.write_json(&mut buf).map_err(numeric)?;
                files.push(("young.json".into(), std::mem::take(&mut buf)));
            }
        }
    }
    let outputs: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    let manifest = json!({
        "library_version": VERSION,
        "kind": scenario.config.kind,
        "seed": scenario.config.seed,
        "config": scenario.config,
        "derived": derived(outcome),
        "outputs": outputs,
        "timing_file": TIMING,
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    files.push((MANIFEST.into(), text.into_bytes()));
    Ok(files)
}

/// Writes all artifacts plus `timing.json` into `dir`.
pub fn write_run(scenario: &Scenario, outcome: &Outcome, dir: &Path, wall_seconds: f64) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, bytes) in render(scenario, outcome)? {
        let path = dir.join(&name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
    }
    let timing = json!({ "wall_time_seconds": wall_seconds, "threads": rayon::current_num_threads() });
    let path = dir.join(TIMING);
    fs::write(&path, format!("{timing}\n")).map_err(|e| CliError::io(&path, e))?;
    written.push(path);
    Ok(written)
}
