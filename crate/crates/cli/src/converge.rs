//! Distances between runs along a resolution ladder.
//!
//! Particle runs are compared through their spatial densities at common
//! output times: `wasserstein1_1d` on the line, `bl_distance` with the
//! seeded dictionary otherwise. Elasto runs are compared with
//! `cauchy_gradient_check`, which covers the whole time interval.

use std::str::FromStr;

use semiflow::galerkin::{cauchy_gradient_check, GalerkinRun};
use semiflow::measures::{bl_distance, fmt17, wasserstein1_1d};
use semiflow::{EmpiricalMeasure, LipschitzDictionary, ParticleSystemState};

use crate::config::{Scenario, ScenarioKind};
use crate::error::{numeric, CliError, CliResult};
use crate::scenario::{execute, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LadderParam {
    Particles,
    Dt,
    Modes,
}

impl FromStr for LadderParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "particles" => Ok(Self::Particles),
            "dt" => Ok(Self::Dt),
            "modes" => Ok(Self::Modes),
            other => Err(format!("unknown ladder parameter `{other}` (particles, dt, modes)")),
        }
    }
}

impl LadderParam {
    pub fn default_for(kind: ScenarioKind) -> Self {
        if kind == ScenarioKind::Elasto {
            Self::Modes
        } else {
            Self::Particles
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Self::Particles => "particles",
            Self::Dt => "dt",
            Self::Modes => "modes",
        }
    }
}

/// Distance between two consecutive ladder runs at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderRow {
    pub coarse: f64,
    pub fine: f64,
    pub t: f64,
    pub distance: f64,
}

fn with_value(base: &Scenario, param: LadderParam, value: f64) -> CliResult<Scenario> {
    let mut c = base.config.clone();
    let count = || -> CliResult<usize> {
        if value >= 1.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(CliError::config(format!("ladder value {value} is not a positive integer")))
        }
    };
    match (param, c.kind) {
        (LadderParam::Dt, _) => c.time.dt = value,
        (LadderParam::Particles, ScenarioKind::Newton) => c.newton.as_mut().expect("validated").particles = Some(count()?),
        (LadderParam::Particles, ScenarioKind::Vlasov) => c.vlasov.as_mut().expect("validated").particles = Some(count()?),
        (LadderParam::Particles, ScenarioKind::Sticky) => {
            let s = c.sticky.as_mut().expect("validated");
            if s.positions.is_some() {
                return Err(CliError::config("a particle ladder needs seeded sticky data (`particles`)"));
            }
            s.particles = Some(count()?);
        }
        (LadderParam::Modes, ScenarioKind::Elasto) => c.elasto.as_mut().expect("validated").modes = count()?,
        (p, k) => return Err(CliError::config(format!("ladder parameter `{}` does not apply to kind `{}`", p.as_str(), k.as_str()))),
    }
    Scenario::from_config(c, base.base_dir.clone())
}

fn density(state: &ParticleSystemState) -> CliResult<EmpiricalMeasure> {
    let total: f64 = state.masses.iter().sum();
    let w = state.masses.iter().map(|m| m / total).collect();
    EmpiricalMeasure::from_flat(state.dim, state.positions.clone(), w).map_err(numeric)
}

enum Sampled {
    Particles(Vec<(f64, EmpiricalMeasure)>),
    Elasto(GalerkinRun),
}

fn sample(outcome: Outcome) -> CliResult<Sampled> {
    match outcome {
        Outcome::Newton(r) => Ok(Sampled::Particles(r.states.iter().map(|s| Ok((s.time, density(s)?))).collect::<CliResult<_>>()?)),
        Outcome::Vlasov(r) => Ok(Sampled::Particles(r.states.iter().map(|s| Ok((s.time, density(s)?))).collect::<CliResult<_>>()?)),
        Outcome::Sticky(fm) => {
            let mut out = Vec::new();
            for k in 1..=10 {
                let t = fm.t_final * k as f64 / 10.0;
                out.push((t, fm.density_at(t).map_err(numeric)?));
            }
            Ok(Sampled::Particles(out))
        }
        Outcome::Elasto(r) => Ok(Sampled::Elasto(GalerkinRun { basis: (*r.basis).clone(), series: r.series })),
    }
}

fn distance(a: &EmpiricalMeasure, b: &EmpiricalMeasure, dict: &LipschitzDictionary) -> CliResult<f64> {
    if a.dim() == 1 {
        wasserstein1_1d(a, b).map_err(numeric)
    } else {
        bl_distance(a, b, dict).map_err(numeric)
    }
}

/// Runs the ladder and returns the distances between consecutive entries.
pub fn convergence_study(base: &Scenario, param: LadderParam, ladder: &[f64]) -> CliResult<Vec<LadderRow>> {
    if ladder.len() < 2 {
        return Err(CliError::config("a ladder needs at least two entries"));
    }
    let mut runs = Vec::with_capacity(ladder.len());
    for &v in ladder {
        runs.push(sample(execute(&with_value(base, param, v)?)?)?);
    }
    let mut rows = Vec::new();
    for (k, pair) in runs.windows(2).enumerate() {
        let (coarse, fine) = (ladder[k], ladder[k + 1]);
        match (&pair[0], &pair[1]) {
            (Sampled::Particles(a), Sampled::Particles(b)) => {
                let dim = a[0].1.dim();
                let dict = LipschitzDictionary::with_default_size(dim, base.config.seed).map_err(numeric)?;
                for (t, ma) in a {
                    if let Some((_, mb)) = b.iter().find(|(tb, _)| (tb - t).abs() <= 1e-9) {
                        rows.push(LadderRow { coarse, fine, t: *t, distance: distance(ma, mb, &dict)? });
                    }
                }
            }
            (Sampled::Elasto(a), Sampled::Elasto(b)) => {
                let (small, large) = if a.basis.len() <= b.basis.len() { (a, b) } else { (b, a) };
                let d = cauchy_gradient_check(small, large).map_err(|e| CliError::config(e.to_string()))?;
                rows.push(LadderRow { coarse, fine, t: base.config.time.t_final, distance: d });
            }
            _ => unreachable!("all ladder runs share a kind"),
        }
    }
    Ok(rows)
}

/// CSV with header `parameter,coarse,fine,t,distance`.
pub fn rows_to_csv(param: LadderParam, rows: &[LadderRow]) -> String {
    let mut s = String::from("parameter,coarse,fine,t,distance\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", param.as_str(), r.coarse, r.fine, fmt17(r.t), fmt17(r.distance)));
    }
    s
}
