//! Builds library objects from a [`Scenario`] and runs them in memory.

use std::fs::File;
use std::path::Path;
use std::sync::Arc;

use semiflow::galerkin::{
    bump_field, discrete_semiconvex_potential, energy_report, evolve_galerkin, project_initial, young_histogram, BoxDomain,
    EigenBasis, EnergyReport, GalerkinSeries, StoredEnergy, YoungHistogram,
};
use semiflow::jeans_vlasov::{lift_potential, sample_initial, simulate, InitialDistribution, InteractionPotential, PhaseMeasure, VlasovSeries};
use semiflow::newton::integrate;
use semiflow::sticky::{evolve, seeded_initial_data, FlowMap, StickyConfig, StickyInitialData};
use semiflow::{EmpiricalMeasure, ParticleSystemState, SemiconvexPotential};

use crate::config::{FieldSpec, NewtonPotentialSpec, Scenario, ScenarioKind, StickySection};
use crate::error::{numeric, setup, CliError, CliResult};

pub struct NewtonRun {
    pub potential: SemiconvexPotential,
    pub states: Vec<ParticleSystemState>,
}

pub struct VlasovRun {
    pub interaction: InteractionPotential,
    pub f0: PhaseMeasure,
    pub series: VlasovSeries,
    pub potential: SemiconvexPotential,
    pub states: Vec<ParticleSystemState>,
}

pub struct ElastoRun {
    pub basis: Arc<EigenBasis>,
    pub energy: StoredEnergy,
    pub series: GalerkinSeries,
    pub report: EnergyReport,
    pub young: Option<YoungHistogram>,
}

pub enum Outcome {
    Newton(NewtonRun),
    Vlasov(VlasovRun),
    Sticky(FlowMap),
    Elasto(ElastoRun),
}

impl Outcome {
    /// Trajectory states of particle runs.
    pub fn states(&self) -> Option<(&SemiconvexPotential, &[ParticleSystemState])> {
        match self {
            Outcome::Newton(r) => Some((&r.potential, &r.states)),
            Outcome::Vlasov(r) => Some((&r.potential, &r.states)),
            _ => None,
        }
    }
}

fn initial_phase(initial: &Option<InitialDistribution>, file: &Option<std::path::PathBuf>, particles: Option<usize>, seed: u64) -> CliResult<PhaseMeasure> {
    if let Some(path) = file {
        let measure = EmpiricalMeasure::read_csv(File::open(path).map_err(|e| CliError::io(path, e))?).map_err(setup)?;
        if let Some(n) = particles {
            if n != measure.len() {
                return Err(CliError::config(format!("particles = {n} but {} holds {} points", path.display(), measure.len())));
            }
        }
        return PhaseMeasure::new(measure, 0.0).map_err(setup);
    }
    let spec = initial.as_ref().ok_or_else(|| CliError::config("initial data missing"))?;
    let n = match (particles, spec) {
        (Some(n), _) => n,
        (None, InitialDistribution::Points { points, .. }) => points.len(),
        (None, _) => return Err(CliError::config("`particles` is required for sampled initial data")),
    };
    sample_initial(spec, n, seed).map_err(setup)
}

fn interaction(dim: usize, spec: &semiflow::jeans_vlasov::InteractionSpec, modulus: Option<f64>) -> CliResult<InteractionPotential> {
    let w = InteractionPotential::from_spec(dim, spec).map_err(setup)?;
    match modulus {
        Some(m) => w.with_modulus(m).map_err(setup),
        None => Ok(w),
    }
}

pub fn sticky_data(section: &StickySection, seed: u64) -> CliResult<StickyInitialData> {
    let w = interaction(1, &section.interaction, section.modulus)?;
    if let Some(n) = section.particles {
        return seeded_initial_data(n, seed, w).map_err(setup);
    }
    let positions = section.positions.clone().unwrap_or_default();
    let n = positions.len();
    let masses = section.masses.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
    match (&section.velocities, &section.profile) {
        (Some(v), None) => StickyInitialData::new(positions, v.clone(), masses, w),
        (None, Some(p)) => StickyInitialData::from_profile(positions, masses, p.clone(), w),
        _ => return Err(CliError::config("explicit sticky data needs exactly one of `velocities` or `profile`")),
    }
    .map_err(setup)
}

fn field_coefficients(field: &FieldSpec, basis: &EigenBasis) -> CliResult<Vec<f64>> {
    let d = basis.dim();
    let mut c = vec![0.0; basis.len() * d];
    match field {
        FieldSpec::Zero => {}
        FieldSpec::Bump { amplitude, direction } => {
            if direction.len() != d {
                return Err(CliError::config(format!("bump direction needs {d} entries")));
            }
            let dir: Vec<f64> = direction.iter().map(|x| x * amplitude).collect();
            c = project_initial(bump_field(basis.domain(), &dir), basis).coefficients;
        }
        FieldSpec::Mode { mode, component, amplitude } => {
            if *mode >= basis.len() || *component >= d {
                return Err(CliError::config(format!("mode {mode}/component {component} outside the basis")));
            }
            c[mode * d + component] = *amplitude;
        }
    }
    Ok(c)
}

/// Runs the scenario. Construction problems are configuration errors,
/// failures while integrating are numerical ones.
pub fn execute(scenario: &Scenario) -> CliResult<Outcome> {
    let cfg = &scenario.config;
    let integ = cfg.integrator();
    let t_final = cfg.time.t_final;
    match cfg.kind {
        ScenarioKind::Newton => {
            let s = cfg.newton.as_ref().expect("validated");
            let f0 = initial_phase(&s.initial, &s.initial_file, s.particles, cfg.seed)?;
            let state0 = f0.to_state().map_err(setup)?;
            let (d, n) = (state0.dim, state0.len());
            let potential = match &s.potential {
                NewtonPotentialSpec::Free => SemiconvexPotential::zero(d, n),
                NewtonPotentialSpec::Harmonic { stiffness } => SemiconvexPotential::harmonic(d, n, *stiffness),
                NewtonPotentialSpec::Pair { interaction: spec, modulus } => lift_potential(&interaction(d, spec, *modulus)?, &state0.masses),
            }
            .map_err(setup)?;
            let states = integrate(&potential, &state0, t_final, &integ).map_err(numeric)?;
            Ok(Outcome::Newton(NewtonRun { potential, states }))
        }
        ScenarioKind::Vlasov => {
            let s = cfg.vlasov.as_ref().expect("validated");
            let f0 = initial_phase(&s.initial, &s.initial_file, s.particles, cfg.seed)?;
            let w = interaction(f0.space_dim(), &s.interaction, s.modulus)?;
            let potential = lift_potential(&w, f0.masses()).map_err(setup)?;
            let series = simulate(&f0, &w, t_final, &integ).map_err(numeric)?;
            let states = series.snapshots.iter().map(PhaseMeasure::to_state).collect::<semiflow::Result<Vec<_>>>().map_err(numeric)?;
            Ok(Outcome::Vlasov(VlasovRun { interaction: w, f0, series, potential, states }))
        }
        ScenarioKind::Sticky => {
            let s = cfg.sticky.as_ref().expect("validated");
            let data = sticky_data(s, cfg.seed)?;
            let config = StickyConfig { integrator: integ, eps_event: cfg.tolerances.eps_event, eps_merge: cfg.tolerances.eps_merge };
            Ok(Outcome::Sticky(evolve(&data, t_final, &config).map_err(numeric)?))
        }
        ScenarioKind::Elasto => {
            let s = cfg.elasto.as_ref().expect("validated");
            let domain = BoxDomain::new(s.lengths.clone()).map_err(setup)?;
            let d = domain.dim();
            let basis = Arc::new(EigenBasis::new(domain, s.modes, s.quad_order).map_err(setup)?);
            let energy = StoredEnergy::from_spec(d, &s.energy).map_err(setup)?;
            let mut e1 = vec![0.0; d];
            e1[0] = 1.0;
            let default_bump = FieldSpec::Bump { amplitude: 1.0, direction: e1 };
            let g = field_coefficients(s.displacement.as_ref().unwrap_or(&default_bump), &basis)?;
            let h = field_coefficients(s.velocity.as_ref().unwrap_or(&FieldSpec::Zero), &basis)?;
            let series = evolve_galerkin(&g, &h, &energy, &basis, t_final, &integ, s.mu).map_err(numeric)?;
            let report = energy_report(&series, &energy, &basis).map_err(numeric)?;
            let young = match &s.young {
                Some(spec) => Some(young_histogram(&series, &basis, spec).map_err(setup)?),
                None => None,
            };
            Ok(Outcome::Elasto(ElastoRun { basis, energy, series, report, young }))
        }
    }
}

/// The discrete potential of an elasto run as a Newton potential.
pub fn elasto_potential(run: &ElastoRun) -> CliResult<SemiconvexPotential> {
    discrete_semiconvex_potential(run.basis.clone(), run.energy.clone()).map_err(setup)
}

/// Loads and runs a config file.
pub fn execute_file(path: &Path) -> CliResult<(Scenario, Outcome)> {
    let scenario = Scenario::load(path)?;
    let outcome = execute(&scenario)?;
    Ok((scenario, outcome))
}
