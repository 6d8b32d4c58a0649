//! Invariant suites and the `verify` command.
//!
//! Every check reports its largest violation; a check passes when that
//! violation is within its tolerance. A target passes when all checks do.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use semiflow::galerkin::{check_stored_energy, discrete_potential, energy_report, read_modes_csv, EigenBasis, EnergySpec, GalerkinSeries};
use semiflow::jeans_vlasov::{moment_bounds_check, weak_residual, BuiltinTest, InteractionSpec};
use semiflow::newton::{apriori_velocity_bound, check_semiconvexity, read_trajectory_csv, CheckReport};
use semiflow::oracles::{linear_wave_modes, quadratic_flow, QuadraticFlowSpec};
use semiflow::sticky::{
    averaging_check, conditional_velocity_check, energy_series, entropy_check, monotonicity_gap, qspp_check, read_events_json,
    read_flow_map_csv, time_zero_bound_check, FlowMap,
};
use semiflow::{ParticleSystemState, Scheme, SemiconvexPotential};

use crate::artifacts::{render, MANIFEST};
use crate::config::{
    ElastoSection, FieldSpec, NewtonPotentialSpec, NewtonSection, Scenario, ScenarioConfig, ScenarioKind, StickySection, TimeSection,
    Tolerances, VlasovSection, SCHEMA_VERSION,
};
use crate::error::{numeric, CliError, CliResult};
use crate::scenario::{elasto_potential, execute, ElastoRun, Outcome, VlasovRun};

#[derive(Debug, Clone, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub max_violation: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub passed: bool,
}

impl CheckRow {
    pub fn new(name: impl Into<String>, max_violation: f64, tolerance: f64, samples: usize) -> Self {
        Self { name: name.into(), max_violation, tolerance, samples, passed: max_violation <= tolerance }
    }

    fn from_report(name: impl Into<String>, r: &CheckReport, tolerance: f64) -> Self {
        Self::new(name, r.max_violation, tolerance, r.samples)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub target: String,
    pub passed: bool,
    pub checks: Vec<CheckRow>,
}

impl VerifyReport {
    fn new(target: impl Into<String>, checks: Vec<CheckRow>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Self { target: target.into(), passed, checks }
    }
}

/// Groups of checks; suites select families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Apriori,
    Moments,
    Oracle,
    Entropy,
    Qspp,
    Energy,
    Averaging,
    Galerkin,
}

const ALL_FAMILIES: [Family; 8] =
    [Family::Apriori, Family::Moments, Family::Oracle, Family::Entropy, Family::Qspp, Family::Energy, Family::Averaging, Family::Galerkin];

pub const SUITES: [&str; 9] = ["entropy", "qspp", "moments", "energy", "averaging", "oracle-match", "galerkin-identities", "apriori", "all"];

fn relative_excess(lhs: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (lhs - bound) / bound
    } else {
        lhs - bound
    }
}

/// Runs every family that applies to the outcome's kind.
pub fn checks(scenario: &Scenario, outcome: &Outcome, families: &[Family]) -> CliResult<Vec<CheckRow>> {
    let tol = &scenario.config.tolerances;
    let seed = scenario.config.seed;
    let mut rows = Vec::new();
    let want = |f: Family| families.contains(&f);
    match outcome {
        Outcome::Newton(r) => {
            if want(Family::Apriori) {
                rows.extend(apriori_rows(&r.potential, &r.states, tol, seed)?);
            }
        }
        Outcome::Vlasov(r) => {
            if want(Family::Apriori) {
                rows.extend(apriori_rows(&r.potential, &r.states, tol, seed)?);
            }
            if want(Family::Moments) {
                rows.extend(moment_rows(r, tol)?);
            }
            if want(Family::Oracle) {
                rows.extend(quadratic_oracle_rows(r, scenario, tol)?);
            }
        }
        Outcome::Sticky(fm) => {
            let times: Vec<f64> = scenario.config.sticky.as_ref().expect("validated").check_times.iter().copied().filter(|t| *t <= fm.t_final).collect();
            if want(Family::Entropy) {
                rows.extend(entropy_rows(fm, &times, tol)?);
            }
            if want(Family::Qspp) {
                rows.extend(qspp_rows(fm, tol)?);
            }
            if want(Family::Energy) {
                rows.extend(sticky_energy_rows(fm, tol));
            }
            if want(Family::Averaging) {
                rows.extend(averaging_rows(fm, &times, tol)?);
            }
        }
        Outcome::Elasto(r) => {
            if want(Family::Galerkin) {
                rows.extend(galerkin_rows(r, scenario, tol)?);
            }
            if want(Family::Oracle) {
                rows.extend(mode_oracle_rows(r, scenario, tol)?);
            }
        }
    }
    Ok(rows)
}

fn apriori_rows(potential: &SemiconvexPotential, states: &[ParticleSystemState], tol: &Tolerances, seed: u64) -> CliResult<Vec<CheckRow>> {
    let s0 = &states[0];
    let mut worst = f64::NEG_INFINITY;
    for s in states {
        let bound = apriori_velocity_bound(s0, potential, s.time - s0.time).map_err(numeric)?;
        worst = worst.max(relative_excess(s.weighted_speed_sq(), bound.pointwise));
    }
    let semi = check_semiconvexity(potential, 64, seed).map_err(numeric)?;
    Ok(vec![
        CheckRow::new("apriori_velocity_bound", worst, tol.check, states.len()),
        CheckRow::from_report("semiconvexity", &semi, tol.check),
    ])
}

fn moment_rows(r: &VlasovRun, tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    let report = moment_bounds_check(&r.series, &r.interaction, &r.f0).map_err(numeric)?;
    let mut rows = vec![
        CheckRow::from_report("kinetic_energy_bound", &report.kinetic, tol.check),
        CheckRow::from_report("second_moment_bound", &report.second_moment, tol.check),
    ];
    let t_end = *r.series.times().last().expect("nonempty");
    let d = r.f0.space_dim();
    let mut tests = vec![("one".to_string(), BuiltinTest::One)];
    for k in 0..d {
        tests.push((format!("x{}", k + 1), BuiltinTest::X(k)));
        tests.push((format!("v{}", k + 1), BuiltinTest::V(k)));
    }
    for (name, psi) in tests {
        let res = weak_residual(&r.series, &r.interaction, &psi, t_end).map_err(numeric)?;
        rows.push(CheckRow::new(format!("weak_residual[{name}]"), res, tol.rounding, r.series.snapshots.len()));
    }
    Ok(rows)
}

fn quadratic_oracle_rows(r: &VlasovRun, scenario: &Scenario, tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    let InteractionSpec::Quadratic { kappa } = *r.interaction.spec() else {
        return Ok(vec![]);
    };
    if scenario.config.integrator().scheme != Scheme::Rk4 {
        return Ok(vec![]);
    }
    let (mx, mv) = r.f0.means();
    let spec = QuadraticFlowSpec::new(kappa, mx, mv).map_err(numeric)?;
    let mut worst = 0.0f64;
    let mut samples = 0;
    for s in &r.states {
        for i in 0..r.f0.len() {
            let (x, v) = quadratic_flow(r.f0.x(i), r.f0.v(i), s.time, &spec).map_err(numeric)?;
            for k in 0..x.len() {
                worst = worst.max((x[k] - s.position(i)[k]).abs()).max((v[k] - s.velocity(i)[k]).abs());
            }
            samples += 1;
        }
    }
    Ok(vec![CheckRow::new("quadratic_flow_oracle", worst, tol.oracle, samples)])
}

fn entropy_rows(fm: &FlowMap, times: &[f64], tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    if fm.data().potential().modulus() <= 0.0 {
        return Ok(vec![]);
    }
    times.iter().map(|&t| Ok(CheckRow::from_report(format!("entropy@{t}"), &entropy_check(fm, t).map_err(numeric)?, tol.check))).collect()
}

/// `T·2^{-k}` for `k = 0..=4`, increasing.
fn dyadic_times(t_final: f64) -> Vec<f64> {
    (0..=4).rev().map(|k| t_final / f64::powi(2.0, k)).collect()
}

fn qspp_rows(fm: &FlowMap, tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    let grid = dyadic_times(fm.t_final);
    let mut rows = Vec::new();
    if fm.data().potential().modulus() > 0.0 {
        let (mut worst, mut samples) = (f64::NEG_INFINITY, 0);
        for (a, &s) in grid.iter().enumerate() {
            for &t in &grid[a + 1..] {
                let r = qspp_check(fm, s, t).map_err(numeric)?;
                worst = worst.max(r.max_violation);
                samples += r.samples;
            }
        }
        rows.push(CheckRow::new("qspp", worst, tol.check, samples));
    }
    if fm.data().has_variation() {
        let (mut worst, mut samples) = (f64::NEG_INFINITY, 0);
        for &t in &grid {
            let r = time_zero_bound_check(fm, t).map_err(numeric)?;
            worst = worst.max(r.max_violation);
            samples += r.samples;
        }
        rows.push(CheckRow::new("time_zero_bound", worst, tol.check, samples));
    }
    Ok(rows)
}

/// Every cluster of a segment lies inside one cluster of the next segment.
fn separations(fm: &FlowMap) -> usize {
    let mut count = 0;
    for pair in fm.segments.windows(2) {
        for c in &pair[0].clusters {
            let slot = pair[1].slot_of[c.members[0]];
            count += c.members.iter().filter(|&&i| pair[1].slot_of[i] != slot).count();
        }
    }
    count
}

fn sticky_energy_rows(fm: &FlowMap, tol: &Tolerances) -> Vec<CheckRow> {
    let series = energy_series(fm);
    let mut rows = vec![CheckRow::new("energy_nonincreasing", series.max_increase(), tol.check, series.samples.len())];
    let inelastic: Vec<f64> = series.drops.iter().filter(|d| d.inelastic).map(|d| d.before - d.after).collect();
    if let Some(min) = inelastic.iter().copied().reduce(f64::min) {
        let mut row = CheckRow::new("strict_drop_at_inelastic_merge", -min, 0.0, inelastic.len());
        row.passed = min > 0.0;
        rows.push(row);
    }
    let momentum = fm.events.iter().map(|e| e.momentum_defect()).fold(0.0, f64::max);
    rows.push(CheckRow::new("momentum_at_events", momentum, 1e-12, fm.events.len()));
    rows.push(CheckRow::new("merged_never_separate", separations(fm) as f64, 0.0, fm.segments.len()));
    rows
}

fn averaging_rows(fm: &FlowMap, times: &[f64], tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    let mut grid: Vec<f64> = std::iter::once(0.0).chain(times.iter().copied()).filter(|&t| !fm.at_event(t)).collect();
    grid.dedup();
    let (mut avg, mut n_avg) = (0.0f64, 0);
    for (a, &s) in grid.iter().enumerate() {
        for &t in &grid[a + 1..] {
            let tests: [fn(f64) -> f64; 3] = [|_| 1.0, |x| x, |x| (3.0 * x).sin()];
            for g in tests {
                avg = avg.max(averaging_check(fm, g, s, t).map_err(numeric)?);
                n_avg += 1;
            }
        }
    }
    let (mut cond, mut mono) = (0.0f64, 0.0f64);
    for &t in &grid {
        cond = cond.max(conditional_velocity_check(fm, t).map_err(numeric)?);
        mono = mono.max(-monotonicity_gap(fm, t).map_err(numeric)?);
    }
    Ok(vec![
        CheckRow::new("averaging_identity", avg, tol.check, n_avg),
        CheckRow::new("conditional_velocity", cond, tol.check, grid.len()),
        CheckRow::new("flow_map_monotone", mono, tol.check, grid.len()),
    ])
}

fn galerkin_rows(r: &ElastoRun, scenario: &Scenario, tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    let seed = scenario.config.seed;
    let mu = r.series.mu;
    let b = &r.basis;
    let mut rows = vec![
        CheckRow::new("orthonormality", b.orthonormality_defect(), tol.rounding, b.len() * b.len()),
        CheckRow::new("stiffness", b.stiffness_defect() / b.largest_eigenvalue(), tol.rounding, b.len() * b.len()),
    ];
    let se = check_stored_energy(&r.energy, 500, seed).map_err(numeric)?;
    rows.push(CheckRow::from_report("energy_coercivity", &se.coercivity, tol.check));
    rows.push(CheckRow::from_report("energy_monotonicity", &se.monotonicity, tol.check));
    rows.push(CheckRow::from_report("energy_growth", &se.growth, tol.check));
    let potential = elasto_potential(r)?;
    rows.push(CheckRow::from_report("discrete_semiconvexity", &check_semiconvexity(&potential, 64, seed).map_err(numeric)?, tol.check));
    rows.push(gradient_row(r, seed)?);
    rows.push(quadrature_row(r, tol)?);
    if mu > 0.0 {
        rows.push(CheckRow::new("damped_energy_identity", r.report.max_residual, tol.energy, r.report.times.len()));
    } else {
        rows.push(CheckRow::new("energy_conservation", r.report.max_relative_residual, tol.energy, r.report.times.len()));
    }
    if let Some(y) = &r.young {
        let ne = b.dim() * b.dim();
        let mut worst = 0.0f64;
        for cell in &y.cells {
            let hm = y.histogram_mean(cell);
            for e in 0..ne {
                worst = worst.max((hm[e] - cell.mean[e]).abs() / y.bin_width(e));
            }
        }
        if b.dim() == 1 {
            worst = worst.max(young_cell_average_defect(r, y));
        }
        rows.push(CheckRow::new("young_mean_within_bin", worst, 1.0, y.cells.len()));
        let bound = 1.0 + r.report.energy[0] / (r.energy.coercivity() * b.domain().volume());
        rows.push(CheckRow::new("young_second_moment_bound", relative_excess(y.global_second_moment(), bound), tol.check, y.cells.len()));
    }
    Ok(rows)
}

/// Largest `|histogram mean − cell average of u_x| / bin width` in one
/// dimension, where the cell average is `(u(x1) − u(x0))/(x1 − x0)`
/// averaged in time with trapezoid weights.
fn young_cell_average_defect(r: &ElastoRun, y: &semiflow::galerkin::YoungHistogram) -> f64 {
    let times = r.series.times();
    let mut worst = 0.0f64;
    let (mut u0, mut u1) = ([0.0], [0.0]);
    for cell in &y.cells {
        let [x0, x1] = cell.bounds[0];
        let [t0, t1] = cell.bounds[1];
        let idx: Vec<usize> = (0..times.len()).filter(|&k| times[k] >= t0 - 1e-12 && times[k] <= t1 + 1e-12).collect();
        let w = semiflow::quadrature::trapezoid_weights(&idx.iter().map(|&k| times[k]).collect::<Vec<_>>());
        let mut avg = 0.0;
        for (&k, wk) in idx.iter().zip(&w) {
            r.basis.displacement_at(&r.series.states[k].a, &[x0], &mut u0);
            r.basis.displacement_at(&r.series.states[k].a, &[x1], &mut u1);
            avg += wk * (u1[0] - u0[0]) / (x1 - x0);
        }
        avg /= t1 - t0;
        worst = worst.max((y.histogram_mean(cell)[0] - avg).abs() / y.bin_width(0));
    }
    worst
}

/// Discrete potential along the run, re-evaluated with twice the
/// quadrature order; a large change means the grid under-resolves `F(Du)`.
fn quadrature_row(r: &ElastoRun, tol: &Tolerances) -> CliResult<CheckRow> {
    let b = &r.basis;
    let fine = EigenBasis::new(b.domain().clone(), b.len(), Some(2 * b.quad_order())).map_err(numeric)?;
    let states = &r.series.states;
    let step = (states.len() / 10).max(1);
    let scale = r.report.energy[0].abs().max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut samples = 0;
    for s in states.iter().step_by(step).chain(states.last()) {
        let coarse = discrete_potential(&s.a, b, &r.energy).map_err(numeric)?.0;
        let refined = discrete_potential(&s.a, &fine, &r.energy).map_err(numeric)?.0;
        worst = worst.max((coarse - refined).abs() / scale);
        samples += 1;
    }
    Ok(CheckRow::new("quadrature_resolution", worst, tol.energy, samples))
}

fn gradient_row(r: &ElastoRun, seed: u64) -> CliResult<CheckRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let width = r.basis.len() * r.basis.dim();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let points = 5;
    for _ in 0..points {
        let y: Vec<f64> = (0..width).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let (_, g) = discrete_potential(&y, &r.basis, &r.energy).map_err(numeric)?;
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        for k in 0..width {
            let (mut yp, mut ym) = (y.clone(), y.clone());
            yp[k] += h;
            ym[k] -= h;
            let vp = discrete_potential(&yp, &r.basis, &r.energy).map_err(numeric)?.0;
            let vm = discrete_potential(&ym, &r.basis, &r.energy).map_err(numeric)?.0;
            worst = worst.max(((vp - vm) / (2.0 * h) - g[k]).abs() / scale);
        }
    }
    Ok(CheckRow::new("potential_gradient", worst, 1e-5, points))
}

fn mode_oracle_rows(r: &ElastoRun, scenario: &Scenario, tol: &Tolerances) -> CliResult<Vec<CheckRow>> {
    if *r.energy.spec() != EnergySpec::Quadratic {
        return Ok(vec![]);
    }
    if r.series.mu == 0.0 && scenario.config.integrator().scheme != Scheme::Rk4 {
        return Ok(vec![]);
    }
    let d = r.basis.dim();
    let lambdas: Vec<f64> = (0..r.basis.len() * d).map(|k| r.basis.eigenvalues()[k / d]).collect();
    let first = &r.series.states[0];
    let mut worst = 0.0f64;
    for s in &r.series.states {
        let (a, ad) = linear_wave_modes(&first.a, &first.adot, &lambdas, s.time, r.series.mu).map_err(numeric)?;
        for k in 0..a.len() {
            worst = worst.max((a[k] - s.a[k]).abs()).max((ad[k] - s.adot[k]).abs() / lambdas[k].sqrt());
        }
    }
    Ok(vec![CheckRow::new("linear_wave_oracle", worst, tol.mode_oracle, r.series.states.len())])
}

fn time(t_final: f64, dt: f64, scheme: Option<Scheme>) -> TimeSection {
    TimeSection { t_final, dt, scheme, output_stride: None, max_steps: 10_000_000 }
}

fn base(kind: ScenarioKind, seed: u64, time: TimeSection) -> ScenarioConfig {
    ScenarioConfig {
        version: SCHEMA_VERSION,
        kind,
        name: None,
        seed,
        time,
        output: Default::default(),
        tolerances: Tolerances::default(),
        newton: None,
        vlasov: None,
        sticky: None,
        elasto: None,
    }
}

fn sticky_suite_configs() -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    for seed in 1..=12u64 {
        let mut c = base(ScenarioKind::Sticky, seed, time(2.0, 1e-3, None));
        c.sticky = Some(StickySection {
            particles: Some(4 + (seed as usize * 7) % 29),
            positions: None,
            velocities: None,
            profile: None,
            masses: None,
            interaction: InteractionSpec::Quadratic { kappa: 1.0 },
            modulus: Some(1.0),
            check_times: vec![0.1, 0.5, 1.0, 2.0],
        });
        out.push(c);
    }
    out
}

fn gaussian(d: usize) -> semiflow::jeans_vlasov::InitialDistribution {
    semiflow::jeans_vlasov::InitialDistribution::Gaussian { mean_x: vec![0.0; d], mean_v: vec![0.0; d], std_x: vec![1.0; d], std_v: vec![0.5; d] }
}

fn vlasov_config(seed: u64, particles: usize, interaction: InteractionSpec, time: TimeSection) -> ScenarioConfig {
    let mut c = base(ScenarioKind::Vlasov, seed, time);
    c.vlasov = Some(VlasovSection { particles: Some(particles), initial: Some(gaussian(1)), initial_file: None, interaction, modulus: None });
    c
}

fn interactions() -> [InteractionSpec; 3] {
    [InteractionSpec::Quadratic { kappa: 1.0 }, InteractionSpec::Quadratic { kappa: -1.0 }, InteractionSpec::GaussianWell { depth: 1.0, width: 0.5 }]
}

fn elasto_config(seed: u64, energy: EnergySpec, mu: f64, lengths: Vec<f64>, modes: usize, young: bool) -> ScenarioConfig {
    let d = lengths.len();
    let mut c = base(ScenarioKind::Elasto, seed, time(2.0, 1e-3, Some(Scheme::Rk4)));
    let mut dir = vec![0.0; d];
    dir[0] = 1.0;
    c.elasto = Some(ElastoSection {
        lengths,
        modes,
        quad_order: None,
        energy,
        mu,
        displacement: Some(FieldSpec::Bump { amplitude: 1.0, direction: dir }),
        velocity: None,
        young: young.then(|| semiflow::galerkin::YoungSpec::uniform(d, 4, 4)),
    });
    c
}

/// Built-in configurations and families of a suite.
pub fn suite(name: &str) -> Option<Vec<(ScenarioConfig, Vec<Family>)>> {
    let sticky = |f: Family| sticky_suite_configs().into_iter().map(|c| (c, vec![f])).collect::<Vec<_>>();
    let runs = match name {
        "entropy" => sticky(Family::Entropy),
        "qspp" => sticky(Family::Qspp),
        "energy" => sticky(Family::Energy),
        "averaging" => sticky(Family::Averaging),
        "moments" => (1..=6u64)
            .flat_map(|seed| interactions().into_iter().map(move |w| (vlasov_config(seed, 32, w, time(2.0, 1e-3, None)), vec![Family::Moments])))
            .collect(),
        "oracle-match" => {
            let mut v: Vec<_> = [1.0, -1.0, 0.0]
                .into_iter()
                .map(|kappa| {
                    let c = vlasov_config(11, 64, InteractionSpec::Quadratic { kappa }, time(2.0, 1e-3, Some(Scheme::Rk4)));
                    (c, vec![Family::Oracle])
                })
                .collect();
            for mu in [0.0, 0.1] {
                v.push((elasto_config(3, EnergySpec::Quadratic, mu, vec![1.0], 8, false), vec![Family::Oracle]));
            }
            v
        }
        "galerkin-identities" => {
            let nonconvex = EnergySpec::Nonconvex { alpha: 0.5, b: vec![2.0] };
            let mut v: Vec<_> = [0.0, 0.1]
                .into_iter()
                .map(|mu| (elasto_config(5, nonconvex.clone(), mu, vec![1.0], 8, true), vec![Family::Galerkin]))
                .collect();
            let nonconvex2 = EnergySpec::Nonconvex { alpha: 0.3, b: vec![1.0, 0.5, -0.5, 1.5] };
            v.push((elasto_config(6, nonconvex2, 0.1, vec![1.0, 1.0], 6, true), vec![Family::Galerkin]));
            v
        }
        "apriori" => {
            let mut v = Vec::new();
            for seed in 1..=5u64 {
                let mut c = base(ScenarioKind::Newton, seed, time(2.0, 1e-3, None));
                c.newton = Some(NewtonSection {
                    particles: Some(8),
                    initial: Some(gaussian(2)),
                    initial_file: None,
                    potential: NewtonPotentialSpec::Harmonic { stiffness: -1.0 },
                });
                v.push((c, vec![Family::Apriori]));
                for w in interactions() {
                    v.push((vlasov_config(seed, 16, w, time(2.0, 1e-3, None)), vec![Family::Apriori]));
                }
            }
            v
        }
        "all" => SUITES[..SUITES.len() - 1].iter().flat_map(|s| suite(s).expect("known suite")).collect(),
        _ => return None,
    };
    Some(runs)
}

pub fn verify_suite(name: &str) -> CliResult<VerifyReport> {
    let runs = suite(name).ok_or_else(|| CliError::config(format!("unknown suite `{name}` (known: {})", SUITES.join(", "))))?;
    let mut rows = Vec::new();
    for (config, families) in runs {
        let tag = format!("{}#{}", config.kind.as_str(), config.seed);
        let scenario = Scenario::from_config(config, Default::default())?;
        let outcome = execute(&scenario)?;
        for mut row in checks(&scenario, &outcome, &families)? {
            row.name = format!("{tag}:{}", row.name);
            rows.push(row);
        }
    }
    Ok(VerifyReport::new(name, rows))
}

pub fn verify_config(path: &Path) -> CliResult<VerifyReport> {
    let scenario = Scenario::load(path)?;
    let outcome = execute(&scenario)?;
    Ok(VerifyReport::new(path.display().to_string(), checks(&scenario, &outcome, &ALL_FAMILIES)?))
}

/// Re-runs the config recorded in a run directory, compares every
/// deterministic artifact byte for byte and re-checks the stored data.
pub fn verify_run_dir(dir: &Path) -> CliResult<VerifyReport> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| CliError::io(&manifest_path, e))?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", manifest_path.display())))?;
    let config: ScenarioConfig = serde_json::from_value(manifest["config"].clone()).map_err(|e| CliError::config(format!("manifest config: {e}")))?;
    let scenario = Scenario::from_config(config, dir.to_path_buf())?;
    let outcome = execute(&scenario)?;
    let tol = scenario.config.tolerances.clone();
    let mut rows = Vec::new();
    let expected = render(&scenario, &outcome)?;
    let mismatched = expected.iter().filter(|(name, bytes)| fs::read(dir.join(name)).map(|b| &b != bytes).unwrap_or(true)).count();
    rows.push(CheckRow::new("artifacts_reproduce", mismatched as f64, 0.0, expected.len()));

    let parse_fail = |name: &str| CheckRow { name: format!("parse:{name}"), max_violation: f64::INFINITY, tolerance: 0.0, samples: 0, passed: false };
    match &outcome {
        Outcome::Newton(_) | Outcome::Vlasov(_) => {
            let (potential, states) = outcome.states().expect("particle run");
            let stored = fs::File::open(dir.join("trajectory.csv")).ok().and_then(|f| read_trajectory_csv(f, &states[0].masses).ok());
            match stored {
                Some(stored) if !stored.is_empty() => rows.extend(apriori_rows(potential, &stored, &tol, scenario.config.seed)?),
                _ => rows.push(parse_fail("trajectory.csv")),
            }
        }
        Outcome::Sticky(_) => {
            match fs::File::open(dir.join("events.json")).ok().and_then(|f| read_events_json(f).ok()) {
                Some(events) => {
                    let m = events.iter().map(|e| e.momentum_defect()).fold(0.0, f64::max);
                    rows.push(CheckRow::new("stored_momentum_at_events", m, 1e-12, events.len()));
                }
                None => rows.push(parse_fail("events.json")),
            }
            if fs::File::open(dir.join("flow_map.csv")).ok().and_then(|f| read_flow_map_csv(f).ok()).is_none() {
                rows.push(parse_fail("flow_map.csv"));
            }
        }
        Outcome::Elasto(r) => {
            let d = r.basis.dim();
            match fs::File::open(dir.join("modes.csv")).ok().and_then(|f| read_modes_csv(f, d, r.basis.len()).ok()) {
                Some(states) if states.len() == r.series.states.len() => {
                    let stored = GalerkinSeries { states, ..r.series.clone() };
                    let rep = energy_report(&stored, &r.energy, &r.basis).map_err(numeric)?;
                    let (name, v) = if stored.mu > 0.0 { ("stored_damped_energy_identity", rep.max_residual) } else { ("stored_energy_conservation", rep.max_relative_residual) };
                    rows.push(CheckRow::new(name, v, tol.energy, rep.times.len()));
                }
                _ => rows.push(parse_fail("modes.csv")),
            }
        }
    }
    Ok(VerifyReport::new(dir.display().to_string(), rows))
}

/// Dispatches on a suite name, a run directory or a config file.
pub fn verify(target: &str) -> CliResult<VerifyReport> {
    if SUITES.contains(&target) {
        return verify_suite(target);
    }
    let path = Path::new(target);
    if path.is_dir() {
        verify_run_dir(path)
    } else if path.is_file() {
        verify_config(path)
    } else {
        Err(CliError::config(format!("`{target}` is neither a suite ({}) nor an existing config or run directory", SUITES.join(", "))))
    }
}
