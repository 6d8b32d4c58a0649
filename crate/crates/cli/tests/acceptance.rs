//! Acceptance checks. Every criterion is evaluated against an oracle that is
//! computed here, independently of the library code under test.

use std::error::Error;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semiflow::galerkin::{
    bump_field, cauchy_gradient_check, discrete_potential, evolve_galerkin, project_initial, young_histogram, BoxDomain, EigenBasis,
    GalerkinRun, GalerkinSeries, GalerkinState, StoredEnergy, YoungSpec,
};
use semiflow::jeans_vlasov::{lift_potential, sample_initial, simulate, InitialDistribution, InteractionPotential, PhaseMeasure, VlasovSeries};
use semiflow::newton::{apriori_velocity_bound, integrate};
use semiflow::oracles::{linear_wave_modes, quadratic_flow, QuadraticFlowSpec};
use semiflow::sticky::{evolve, seeded_initial_data, FlowMap, StickyConfig, StickyInitialData, V0Profile};
use semiflow::{IntegratorConfig, ParticleSystemState, SemiconvexPotential};

type Verdict = Result<(bool, String), Box<dyn Error>>;

// ---------------------------------------------------------------- oracles

fn simpson<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// Nodes and weights of composite Simpson on `[0, ℓ]`.
fn simpson_rule(len: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = len / panels as f64;
    (0..=panels)
        .map(|k| {
            let w = if k == 0 || k == panels { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            (k as f64 * h, w * h / 3.0)
        })
        .collect()
}

fn trapezoid(times: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; times.len()];
    for k in 1..times.len() {
        let h = 0.5 * (times[k] - times[k - 1]);
        w[k - 1] += h;
        w[k] += h;
    }
    w
}

/// `(χ(t), χ'(t))` with `χ(t) = ∫_0^t e^{(L+1)(t²−s²)/2} ds`.
fn chi_oracle(t: f64, l: f64) -> (f64, f64) {
    let a = l + 1.0;
    let chi = if t == 0.0 { 0.0 } else { simpson(|s| (0.5 * a * (t * t - s * s)).exp(), 0.0, t, 4000) };
    (chi, 1.0 + a * t * chi)
}

#[derive(Debug, Clone, Copy)]
enum Pair {
    Quadratic(f64),
    Well { depth: f64, width: f64 },
}

impl Pair {
    fn cycle(k: u64) -> Self {
        [Pair::Quadratic(1.0), Pair::Quadratic(-1.0), Pair::Well { depth: 1.0, width: 0.5 }][(k % 3) as usize]
    }

    fn dw(&self, z: &[f64], out: &mut [f64]) {
        let r2: f64 = z.iter().map(|c| c * c).sum();
        let s = match *self {
            Pair::Quadratic(k) => k,
            Pair::Well { depth, width } => depth / (width * width) * (-0.5 * r2 / (width * width)).exp(),
        };
        out.iter_mut().zip(z).for_each(|(o, z)| *o = s * z);
    }

    /// Lower bound of the Hessian, negated.
    fn modulus(&self) -> f64 {
        match *self {
            Pair::Quadratic(k) => (-k).max(0.0),
            Pair::Well { depth, width } => 2.0 * depth * (-1.5f64).exp() / (width * width),
        }
    }

    fn build(&self, dim: usize) -> semiflow::Result<InteractionPotential> {
        match *self {
            Pair::Quadratic(k) => InteractionPotential::quadratic(dim, k),
            Pair::Well { depth, width } => InteractionPotential::gaussian_well(dim, depth, width),
        }
    }
}

/// Mean-field force `Σ_j m_j DW(x_i − x_j)` per particle.
fn forces(pair: Pair, f: &PhaseMeasure) -> Vec<f64> {
    let d = f.space_dim();
    let n = f.len();
    let mut out = vec![0.0; n * d];
    let (mut z, mut g) = (vec![0.0; d], vec![0.0; d]);
    for i in 0..n {
        for j in 0..n {
            for k in 0..d {
                z[k] = f.x(i)[k] - f.x(j)[k];
            }
            pair.dw(&z, &mut g);
            for k in 0..d {
                out[i * d + k] += f.masses()[j] * g[k];
            }
        }
    }
    out
}

fn gaussian(d: usize) -> InitialDistribution {
    InitialDistribution::Gaussian { mean_x: vec![0.0; d], mean_v: vec![0.0; d], std_x: vec![1.0; d], std_v: vec![0.5; d] }
}

fn kinetic(f: &PhaseMeasure) -> f64 {
    (0..f.len()).map(|i| f.masses()[i] * f.v(i).iter().map(|c| c * c).sum::<f64>()).sum()
}

fn second_moment(f: &PhaseMeasure) -> f64 {
    (0..f.len()).map(|i| f.masses()[i] * f.x(i).iter().map(|c| c * c).sum::<f64>()).sum()
}

/// Sine eigenfunctions on a box, evaluated from their closed form.
struct Sines {
    modes: Vec<Vec<usize>>,
    lengths: Vec<f64>,
}

impl Sines {
    fn of(basis: &EigenBasis) -> Self {
        Self { modes: basis.modes().to_vec(), lengths: basis.domain().lengths().to_vec() }
    }

    fn dim(&self) -> usize {
        self.lengths.len()
    }

    fn eigenvalue(&self, j: usize) -> f64 {
        self.modes[j].iter().zip(&self.lengths).map(|(&k, l)| (k as f64 * PI / l).powi(2)).sum()
    }

    /// Field `u(x)` and gradient `Du(x)` (row-major) for coefficients `y[j*d + a]`.
    fn eval(&self, y: &[f64], x: &[f64], u: &mut [f64], du: &mut [f64]) {
        let d = self.dim();
        u.fill(0.0);
        du.fill(0.0);
        let (mut s, mut c) = (vec![0.0; d], vec![0.0; d]);
        for (j, k) in self.modes.iter().enumerate() {
            for a in 0..d {
                let w = k[a] as f64 * PI / self.lengths[a];
                let norm = (2.0 / self.lengths[a]).sqrt();
                s[a] = norm * (w * x[a]).sin();
                c[a] = norm * w * (w * x[a]).cos();
            }
            let phi: f64 = s.iter().product();
            for a in 0..d {
                let ya = y[j * d + a];
                u[a] += ya * phi;
                for b in 0..d {
                    let g: f64 = (0..d).map(|e| if e == b { c[e] } else { s[e] }).product();
                    du[a * d + b] += ya * g;
                }
            }
        }
    }

    /// Tensor Simpson grid over the box.
    fn grid(&self, panels: usize) -> Vec<(Vec<f64>, f64)> {
        let mut pts = vec![(Vec::new(), 1.0)];
        for &l in &self.lengths {
            let rule = simpson_rule(l, panels);
            pts = pts
                .into_iter()
                .flat_map(|(x, w): (Vec<f64>, f64)| {
                    rule.iter().map(move |&(xi, wi)| {
                        let mut y = x.clone();
                        y.push(xi);
                        (y, w * wi)
                    })
                })
                .collect();
        }
        pts
    }
}

/// `½|A|² + α cos(B·A)`.
#[derive(Debug, Clone)]
struct Stored {
    alpha: f64,
    b: Vec<f64>,
}

impl Stored {
    fn f(&self, a: &[f64]) -> f64 {
        let dot: f64 = self.b.iter().zip(a).map(|(b, a)| b * a).sum();
        0.5 * a.iter().map(|c| c * c).sum::<f64>() + self.alpha * dot.cos()
    }

    fn build(&self, dim: usize) -> semiflow::Result<StoredEnergy> {
        if self.alpha == 0.0 {
            StoredEnergy::quadratic(dim)
        } else {
            StoredEnergy::nonconvex(dim, self.alpha, self.b.clone())
        }
    }
}

/// `½∫|u_t|² + ∫F(Du)` on a Simpson grid.
fn field_energy(sines: &Sines, grid: &[(Vec<f64>, f64)], state: &GalerkinState, stored: &Stored) -> f64 {
    let d = sines.dim();
    let (mut u, mut du, mut ut, mut scratch) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d], vec![0.0; d * d]);
    let mut total = 0.0;
    for (x, w) in grid {
        sines.eval(&state.a, x, &mut u, &mut du);
        sines.eval(&state.adot, x, &mut ut, &mut scratch);
        total += w * (0.5 * ut.iter().map(|c| c * c).sum::<f64>() + stored.f(&du));
    }
    total
}

// ------------------------------------------------------------- criteria

fn quadratic_flow_oracle() -> Verdict {
    let mut worst = 0.0f64;
    let mut slowest = 0.0f64;
    for (k, kappa) in [1.0, -1.0, 0.0].into_iter().enumerate() {
        let spec = InitialDistribution::Gaussian { mean_x: vec![0.3, -0.1], mean_v: vec![-0.2, 0.4], std_x: vec![1.0; 2], std_v: vec![0.5; 2] };
        let f0 = sample_initial(&spec, 64, 100 + k as u64)?;
        let w = InteractionPotential::quadratic(2, kappa)?;
        let start = Instant::now();
        let series = simulate(&f0, &w, 2.0, &IntegratorConfig::rk4(1e-3).with_stride(10))?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        let mut mx = vec![0.0; 2];
        let mut mv = vec![0.0; 2];
        for i in 0..f0.len() {
            for c in 0..2 {
                mx[c] += f0.masses()[i] * f0.x(i)[c];
                mv[c] += f0.masses()[i] * f0.v(i)[c];
            }
        }
        let oracle = QuadraticFlowSpec::new(kappa, mx, mv)?;
        for snap in &series.snapshots {
            for i in 0..f0.len() {
                let (x, v) = quadratic_flow(f0.x(i), f0.v(i), snap.time, &oracle)?;
                for c in 0..2 {
                    worst = worst.max((x[c] - snap.x(i)[c]).abs()).max((v[c] - snap.v(i)[c]).abs());
                }
            }
        }
    }
    Ok((worst <= 1e-6 && slowest <= 10.0, format!("max error {worst:.2e} (tol 1e-6), slowest run {slowest:.2}s (limit 10s)")))
}

fn apriori_velocity_bound_holds() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut disagreement = 0.0f64;
    let mut samples = 0usize;
    let mut check = |traj: &[ParticleSystemState], s0: &ParticleSystemState, pot: &SemiconvexPotential, budget: f64, l: f64| -> semiflow::Result<()> {
        for st in traj {
            let lhs = st.weighted_speed_sq();
            let (_, chi_p) = chi_oracle(st.time, l);
            let oracle = budget * chi_p;
            let lib = apriori_velocity_bound(s0, pot, st.time)?.pointwise;
            worst = worst.max((lhs - oracle) / oracle).max((lhs - lib) / lib);
            disagreement = disagreement.max((lib - oracle).abs() / oracle);
            samples += 1;
        }
        Ok(())
    };
    let config = IntegratorConfig::verlet(1e-3).with_stride(10);
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, d) = (8, 2);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
        let k = [-1.0, 0.5, 0.0, -0.25][(seed % 4) as usize];
        let pot = SemiconvexPotential::harmonic(d, n, k)?;
        let s0 = ParticleSystemState::new(d, x.clone(), v, m.clone())?;
        let m_min = m.iter().cloned().fold(f64::INFINITY, f64::min);
        let l = (-k).max(0.0) / m_min;
        let budget = s0.weighted_speed_sq() + (0..n).map(|i| k * k * x[i * d..(i + 1) * d].iter().map(|c| c * c).sum::<f64>() / m[i]).sum::<f64>();
        let traj = integrate(&pot, &s0, 2.0, &config)?;
        check(&traj, &s0, &pot, budget, l)?;
    }
    for seed in 50..100u64 {
        let d = 1 + (seed % 2) as usize;
        let pair = Pair::cycle(seed);
        let f0 = sample_initial(&gaussian(d), 16, seed)?;
        let w = pair.build(d)?;
        let s0 = f0.to_state()?;
        let pot = lift_potential(&w, &s0.masses)?;
        let total: f64 = s0.masses.iter().sum();
        let force = forces(pair, &f0);
        let budget = kinetic(&f0) + (0..f0.len()).map(|i| f0.masses()[i] * force[i * d..(i + 1) * d].iter().map(|c| c * c).sum::<f64>()).sum::<f64>();
        let traj = integrate(&pot, &s0, 2.0, &config)?;
        check(&traj, &s0, &pot, budget, pair.modulus() * total)?;
    }
    let pass = worst <= 1e-8 && disagreement <= 1e-8;
    Ok((pass, format!("100 runs, {samples} samples, max relative excess {worst:.2e} (tol 1e-8), library vs oracle bound {disagreement:.1e}")))
}

fn moment_bounds_hold() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for seed in 0..50u64 {
        let d = 1 + (seed % 2) as usize;
        let pair = Pair::cycle(seed);
        let f0 = sample_initial(&gaussian(d), 32, 1000 + seed)?;
        let series = simulate(&f0, &pair.build(d)?, 2.0, &IntegratorConfig::verlet(1e-3).with_stride(10))?;
        let mut cross = 0.0;
        let (mut z, mut g) = (vec![0.0; d], vec![0.0; d]);
        for i in 0..f0.len() {
            for j in 0..f0.len() {
                for k in 0..d {
                    z[k] = f0.x(i)[k] - f0.x(j)[k];
                }
                pair.dw(&z, &mut g);
                cross += f0.masses()[i] * f0.masses()[j] * g.iter().map(|c| c * c).sum::<f64>();
            }
        }
        let k0 = kinetic(&f0) + cross;
        let x0 = second_moment(&f0);
        for snap in &series.snapshots {
            let (chi, chi_p) = chi_oracle(snap.time, pair.modulus());
            let rk = (kinetic(snap) - k0 * chi_p) / (k0 * chi_p);
            let bound_x = x0 + k0 * snap.time * chi;
            let rx = (0.5 * second_moment(snap) - bound_x) / bound_x;
            for r in [rk, rx] {
                worst = worst.max(r);
                if r > 1e-8 {
                    violations += 1;
                }
            }
        }
    }
    Ok((violations == 0, format!("50 runs, {violations} violations, max relative excess {worst:.2e} (tol 1e-8)")))
}

#[derive(Debug, Clone, Copy)]
enum Psi {
    One,
    X(usize),
    V(usize),
    XV,
}

impl Psi {
    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        match *self {
            Psi::One => 1.0,
            Psi::X(k) => x[k],
            Psi::V(k) => v[k],
            Psi::XV => x.iter().zip(v).map(|(a, b)| a * b).sum(),
        }
    }

    /// `v·D_xψ − F·D_vψ`.
    fn transport(&self, x: &[f64], v: &[f64], force: &[f64]) -> f64 {
        match *self {
            Psi::One => 0.0,
            Psi::X(k) => v[k],
            Psi::V(k) => -force[k],
            Psi::XV => v.iter().map(|c| c * c).sum::<f64>() - force.iter().zip(x).map(|(f, x)| f * x).sum::<f64>(),
        }
    }
}

fn weak_residual_oracle(series: &VlasovSeries, pair: Pair, psi: Psi) -> f64 {
    let snaps = &series.snapshots;
    let weights = trapezoid(&series.times());
    let integrate_psi = |f: &PhaseMeasure| (0..f.len()).map(|i| f.masses()[i] * psi.value(f.x(i), f.v(i))).sum::<f64>();
    let d = snaps[0].space_dim();
    let mut integral = 0.0;
    for (f, w) in snaps.iter().zip(&weights) {
        let force = forces(pair, f);
        integral += w * (0..f.len()).map(|i| f.masses()[i] * psi.transport(f.x(i), f.v(i), &force[i * d..(i + 1) * d])).sum::<f64>();
    }
    (integrate_psi(&snaps[snaps.len() - 1]) - integrate_psi(&snaps[0]) - integral).abs()
}

fn weak_residual_decay() -> Verdict {
    let mut worst_rounding = 0.0f64;
    let mut worst_ratio = 0.0f64;
    let mut runs = 0;
    for seed in 0..10u64 {
        let d = 1 + (seed % 2) as usize;
        let pair = Pair::cycle(seed);
        let f0 = sample_initial(&gaussian(d), 32, 2000 + seed)?;
        let w = pair.build(d)?;
        let coarse = simulate(&f0, &w, 2.0, &IntegratorConfig::verlet(4e-3).with_stride(10))?;
        let fine = simulate(&f0, &w, 2.0, &IntegratorConfig::verlet(1e-3).with_stride(10))?;
        let mut exact = vec![Psi::One];
        for k in 0..d {
            exact.push(Psi::X(k));
            exact.push(Psi::V(k));
        }
        for psi in exact {
            for s in [&coarse, &fine] {
                worst_rounding = worst_rounding.max(weak_residual_oracle(s, pair, psi));
            }
        }
        let ratio = weak_residual_oracle(&fine, pair, Psi::XV) / weak_residual_oracle(&coarse, pair, Psi::XV);
        worst_ratio = worst_ratio.max(ratio);
        runs += 1;
    }
    let pass = worst_rounding <= 1e-10 && worst_ratio <= 0.25;
    Ok((pass, format!("{runs} runs, residual ratio for x·v {worst_ratio:.4} (limit 0.25), residuals for 1, x, v {worst_rounding:.1e} (limit 1e-10)")))
}

/// Seeded sticky runs with up to 32 particles and the interaction strength used.
fn seeded_sticky() -> &'static [(f64, FlowMap)] {
    static RUNS: OnceLock<Vec<(f64, FlowMap)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..100u64)
            .map(|seed| {
                let n = 2 + (7 * seed as usize) % 31;
                let kappa = [0.0, 1.0, -1.0][(seed % 3) as usize];
                let data = seeded_initial_data(n, seed, InteractionPotential::quadratic(1, kappa).unwrap()).unwrap();
                (kappa, evolve(&data, 2.0, &StickyConfig::default()).unwrap())
            })
            .collect()
    })
}

fn sticky_merge_correctness() -> Verdict {
    let pair = StickyInitialData::new(vec![-1.0, 1.0], vec![1.0, -1.0], vec![0.5, 0.5], InteractionPotential::zero(1)?)?;
    let fm = evolve(&pair, 2.0, &StickyConfig::default())?;
    let (event_err, post) = match fm.events.as_slice() {
        [e] => ((e.time - 1.0).abs(), e.post_velocity.abs()),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    let mut momentum = 0.0f64;
    let mut separations = 0;
    let mut events = 0;
    for (_, fm) in seeded_sticky() {
        let m = fm.data().masses();
        for e in &fm.events {
            let mut before = 0.0;
            let mut after = 0.0;
            for &i in &e.merged_indices {
                let p = fm.eval(i, e.time)?;
                before += m[i] * p.velocity_left;
                after += m[i] * p.velocity_right;
            }
            momentum = momentum.max((before - after).abs()).max(e.momentum_defect());
            events += 1;
        }
        for w in fm.segments.windows(2) {
            let n = fm.len();
            for i in 0..n {
                for j in i + 1..n {
                    if w[0].slot_of[i] == w[0].slot_of[j] && w[1].slot_of[i] != w[1].slot_of[j] {
                        separations += 1;
                    }
                }
            }
        }
        for t in fm.sample_times() {
            let pos = fm.positions_at(t)?;
            for (c, x, _) in fm.clusters_at(t)? {
                separations += c.members.iter().filter(|&&i| pos[i] != x).count();
            }
        }
    }
    let pass = event_err <= 1e-8 && post <= 1e-12 && momentum <= 1e-12 && separations == 0;
    Ok((
        pass,
        format!("pair: event time error {event_err:.1e}, post velocity {post:.1e}; 100 runs, {events} events, momentum defect {momentum:.1e} (tol 1e-12), {separations} separations"),
    ))
}

/// Sticky runs with `W(z) = z²/2` declared with modulus one, together with
/// their piecewise-linear initial velocity knots.
fn entropy_runs() -> &'static [(Vec<[f64; 2]>, FlowMap)] {
    static RUNS: OnceLock<Vec<(Vec<[f64; 2]>, FlowMap)>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (0..20u64)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
                let n = 4 + (5 * seed as usize) % 29;
                let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                x.sort_by(f64::total_cmp);
                for k in 1..n {
                    x[k] = x[k].max(x[k - 1] + 1e-5);
                }
                let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
                let total: f64 = raw.iter().sum();
                let m = raw.iter().map(|r| r / total).collect();
                let mut kx: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.2..1.2)).collect();
                kx.sort_by(f64::total_cmp);
                let knots: Vec<[f64; 2]> = kx.iter().map(|&x| [x, -x + rng.gen_range(-0.6..0.6)]).collect();
                let w = InteractionPotential::quadratic(1, 1.0).unwrap().with_modulus(1.0).unwrap();
                let data = StickyInitialData::from_profile(x, m, V0Profile::PiecewiseLinear { knots: knots.clone() }, w).unwrap();
                (knots, evolve(&data, 2.0, &StickyConfig::default()).unwrap())
            })
            .collect()
    })
}

fn knot_velocity(knots: &[[f64; 2]], x: f64) -> f64 {
    if x <= knots[0][0] {
        return knots[0][1];
    }
    for k in knots.windows(2) {
        if x <= k[1][0] {
            return k[0][1] + (k[1][1] - k[0][1]) * (x - k[0][0]) / (k[1][0] - k[0][0]);
        }
    }
    knots[knots.len() - 1][1]
}

/// `∫_a^b |v0'|` by summing increments between breakpoints.
fn knot_variation(knots: &[[f64; 2]], a: f64, b: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(knots.iter().map(|k| k[0]).filter(|&x| x > a && x < b));
    pts.push(b);
    pts.windows(2).map(|p| (knot_velocity(knots, p[1]) - knot_velocity(knots, p[0])).abs()).sum()
}

fn entropy_inequality() -> Verdict {
    let mut worst = f64::NEG_INFINITY;
    let mut pairs = 0usize;
    for (_, fm) in entropy_runs() {
        for t in [0.1, 0.5, 1.0, 2.0] {
            let cl = fm.clusters_at(t)?;
            let coef = 1.0 / t.tanh();
            for a in 0..cl.len() {
                for b in a + 1..cl.len() {
                    let dx = cl[b].1 - cl[a].1;
                    let rhs = coef * dx * dx;
                    worst = worst.max(((cl[b].2 - cl[a].2) * dx - rhs) / rhs);
                    pairs += 1;
                }
            }
        }
    }
    Ok((worst <= 1e-8, format!("20 runs, {pairs} cluster pairs, max relative excess {worst:.2e} (tol 1e-8)")))
}

fn qspp_and_time_zero_bound() -> Verdict {
    let grid: Vec<f64> = (0..6).map(|k| 2.0 * 0.5f64.powi(k)).collect();
    let mut qspp = f64::NEG_INFINITY;
    let mut tzero = f64::NEG_INFINITY;
    for (knots, fm) in entropy_runs() {
        let x0 = fm.data().positions();
        let n = x0.len();
        for &t in &grid {
            let pt = fm.positions_at(t)?;
            for &s in grid.iter().filter(|&&s| s < t) {
                let ps = fm.positions_at(s)?;
                for i in 0..n {
                    for j in i + 1..n {
                        let before = (ps[i] - ps[j]).abs() / s.sinh();
                        let after = (pt[i] - pt[j]).abs() / t.sinh();
                        qspp = qspp.max(if before > 0.0 { (after - before) / before } else { after });
                    }
                }
            }
            for i in 0..n {
                for j in 0..i {
                    let bound = t.cosh() * (x0[i] - x0[j]) + t.sinh() * knot_variation(knots, x0[j], x0[i]);
                    tzero = tzero.max((pt[i] - pt[j] - bound) / bound);
                }
            }
        }
    }
    Ok((qspp <= 1e-8 && tzero <= 1e-8, format!("dyadic grid of {} times, quotient excess {qspp:.2e}, time-zero excess {tzero:.2e} (tol 1e-8)", grid.len())))
}

fn sticky_energy_monotone() -> Verdict {
    let mut increase = f64::NEG_INFINITY;
    let mut min_drop = f64::INFINITY;
    let mut inelastic = 0;
    for (kappa, fm) in seeded_sticky() {
        let energy = |t: f64| -> semiflow::Result<f64> {
            let cl = fm.clusters_at(t)?;
            let mut e = 0.0;
            for (a, xa, va) in &cl {
                e += 0.5 * a.mass * va * va;
                for (b, xb, _) in &cl {
                    e += 0.25 * kappa * a.mass * b.mass * (xa - xb).powi(2);
                }
            }
            Ok(e)
        };
        let times = fm.sample_times();
        let mut prev = energy(times[0])?;
        for &t in &times[1..] {
            let e = energy(t)?;
            increase = increase.max((e - prev) / prev.abs().max(1.0));
            prev = e;
        }
        let m = fm.data().masses();
        for e in &fm.events {
            let spread = e.pre_velocities.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) - e.pre_velocities.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if spread <= 1e-12 {
                continue;
            }
            let (mut before, mut after) = (0.0, 0.0);
            for &i in &e.merged_indices {
                let p = fm.eval(i, e.time)?;
                before += 0.5 * m[i] * p.velocity_left.powi(2);
                after += 0.5 * m[i] * p.velocity_right.powi(2);
            }
            min_drop = min_drop.min(before - after);
            inelastic += 1;
        }
    }
    let pass = increase <= 1e-8 && inelastic > 0 && min_drop > 0.0;
    Ok((pass, format!("100 runs, max relative increase {increase:.1e} (tol 1e-8), {inelastic} inelastic merges, smallest drop {min_drop:.2e}")))
}

fn unit_interval(n: usize) -> semiflow::Result<EigenBasis> {
    EigenBasis::new(BoxDomain::unit(1)?, n, None)
}

fn linear_wave_oracle() -> Verdict {
    let mut worst_a = 0.0f64;
    let mut worst_adot = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [1, 4, 8] {
        let basis = unit_interval(n)?;
        let sines = Sines::of(&basis);
        let lambdas: Vec<f64> = (0..n).map(|j| sines.eigenvalue(j)).collect();
        let g = project_initial(bump_field(basis.domain(), &[1.0]), &basis).coefficients;
        let h: Vec<f64> = lambdas.iter().map(|l| rng.gen_range(-1.0..1.0) * 10.0 / l).collect();
        for mu in [0.0, 0.1] {
            let series = evolve_galerkin(&g, &h, &StoredEnergy::quadratic(1)?, &basis, 2.0, &IntegratorConfig::rk4(1e-3).with_stride(10), mu)?;
            for s in &series.states {
                let (a, ad) = linear_wave_modes(&g, &h, &lambdas, s.time, mu)?;
                for j in 0..n {
                    worst_a = worst_a.max((a[j] - s.a[j]).abs());
                    worst_adot = worst_adot.max((ad[j] - s.adot[j]).abs());
                }
            }
        }
    }
    Ok((worst_a <= 1e-8, format!("modes 1, 4, 8 and damping 0, 0.1: coefficient error {worst_a:.1e} (tol 1e-8), rate error {worst_adot:.1e}")))
}

fn run_elasto(basis: &EigenBasis, stored: &Stored, direction: &[f64], mu: f64, stride: usize) -> semiflow::Result<GalerkinSeries> {
    let g = project_initial(bump_field(basis.domain(), direction), basis).coefficients;
    let h = vec![0.0; g.len()];
    evolve_galerkin(&g, &h, &stored.build(basis.dim())?, basis, 2.0, &IntegratorConfig::rk4(1e-3).with_stride(stride), mu)
}

/// The nonconvex energies exercised below, each with `α|B|² ≤ 2`.
fn nonconvex_cases() -> semiflow::Result<Vec<(EigenBasis, Stored, Vec<f64>, usize)>> {
    Ok(vec![
        (unit_interval(8)?, Stored { alpha: 0.5, b: vec![2.0] }, vec![1.0], 1024),
        (EigenBasis::new(BoxDomain::unit(2)?, 6, None)?, Stored { alpha: 0.3, b: vec![1.0, 0.5, -0.5, 1.5] }, vec![4.0, -2.0], 192),
    ])
}

fn energy_identities() -> Verdict {
    let mut drift = 0.0f64;
    let mut damped = 0.0f64;
    for (basis, stored, dir, panels) in nonconvex_cases()? {
        let sines = Sines::of(&basis);
        let grid = sines.grid(panels);
        let d = basis.dim();
        for mu in [0.0, 0.1] {
            let series = run_elasto(&basis, &stored, &dir, mu, 1)?;
            let rate: Vec<f64> = series
                .states
                .iter()
                .map(|s| mu * (0..basis.len()).map(|j| sines.eigenvalue(j) * (0..d).map(|a| s.adot[j * d + a].powi(2)).sum::<f64>()).sum::<f64>())
                .collect();
            let e0 = field_energy(&sines, &grid, &series.states[0], &stored);
            let h = series.states[1].time - series.states[0].time;
            let mut dissipated = 0.0;
            for k in (0..series.states.len()).step_by(2) {
                if k > 0 {
                    dissipated += h / 3.0 * (rate[k - 2] + 4.0 * rate[k - 1] + rate[k]);
                }
                if k % 100 == 0 || k + 1 == series.states.len() {
                    let e = field_energy(&sines, &grid, &series.states[k], &stored);
                    let r = (e + dissipated - e0).abs() / e0.abs();
                    if mu == 0.0 {
                        drift = drift.max(r);
                    } else {
                        damped = damped.max(r);
                    }
                }
            }
        }
    }
    Ok((drift <= 1e-6 && damped <= 1e-6, format!("d=1 and d=2: undamped drift {drift:.1e}, damped residual {damped:.1e} (tol 1e-6)")))
}

fn potential_gradient_matches_differences() -> Verdict {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (basis, stored, _, _) in nonconvex_cases()? {
        let energy = stored.build(basis.dim())?;
        let width = basis.len() * basis.dim();
        for _ in 0..10 {
            let y: Vec<f64> = (0..width).map(|k| rng.gen_range(-1.0..1.0) / (1.0 + (k / basis.dim()) as f64)).collect();
            let (_, grad) = discrete_potential(&y, &basis, &energy)?;
            let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let h = 1e-5;
            for k in 0..width {
                let (mut up, mut down) = (y.clone(), y.clone());
                up[k] += h;
                down[k] -= h;
                let fd = (discrete_potential(&up, &basis, &energy)?.0 - discrete_potential(&down, &basis, &energy)?.0) / (2.0 * h);
                worst = worst.max((fd - grad[k]).abs() / scale);
            }
        }
    }
    Ok((worst <= 1e-5, format!("20 points, max relative error {worst:.1e} (tol 1e-5)")))
}

fn cauchy_trend() -> Verdict {
    let stored = Stored { alpha: 0.5, b: vec![2.0] };
    let ladder = [4, 8, 16, 32];
    let runs: Vec<GalerkinRun> = ladder
        .iter()
        .map(|&n| {
            let basis = unit_interval(n)?;
            let series = run_elasto(&basis, &stored, &[1.0], 0.1, 10)?;
            Ok(GalerkinRun { basis, series })
        })
        .collect::<semiflow::Result<_>>()?;
    let mut distances = Vec::new();
    let mut mismatch = 0.0f64;
    for w in runs.windows(2) {
        let d = cauchy_gradient_check(&w[0], &w[1])?;
        let sines = Sines::of(&w[1].basis);
        let weights = trapezoid(&w[1].series.times());
        let mut total = 0.0;
        for ((s, l), wt) in w[0].series.states.iter().zip(&w[1].series.states).zip(&weights) {
            let space: f64 = (0..l.a.len()).map(|j| sines.eigenvalue(j) * (l.a[j] - s.a.get(j).copied().unwrap_or(0.0)).powi(2)).sum();
            total += wt * space;
        }
        mismatch = mismatch.max((d - total.sqrt()).abs() / total.sqrt());
        distances.push(d);
    }
    let decreasing = distances.windows(2).all(|p| p[1] < p[0]);
    let shown: Vec<String> = distances.iter().map(|d| format!("{d:.4}")).collect();
    Ok((decreasing && mismatch <= 1e-8, format!("ladder 4,8,16,32 distances [{}], spectral oracle mismatch {mismatch:.1e}", shown.join(", "))))
}

/// Space-time average of `∂_b u_a` over a cell, from boundary values of `u`.
fn cell_average(sines: &Sines, series: &GalerkinSeries, bounds: &[[f64; 2]], a: usize, b: usize) -> f64 {
    let d = sines.dim();
    let (t0, t1) = (bounds[d][0], bounds[d][1]);
    let states: Vec<&GalerkinState> = series.states.iter().filter(|s| s.time >= t0 - 1e-12 && s.time <= t1 + 1e-12).collect();
    let weights = trapezoid(&states.iter().map(|s| s.time).collect::<Vec<_>>());
    let (mut u, mut du) = (vec![0.0; d], vec![0.0; d * d]);
    let mut jump = |y: &[f64], x: &mut Vec<f64>| {
        x[b] = bounds[b][1];
        sines.eval(y, x, &mut u, &mut du);
        let hi = u[a];
        x[b] = bounds[b][0];
        sines.eval(y, x, &mut u, &mut du);
        hi - u[a]
    };
    let mut total = 0.0;
    for (s, wt) in states.iter().zip(&weights) {
        let flux = if d == 1 {
            jump(&s.a, &mut vec![0.0])
        } else {
            let other = 1 - b;
            let (lo, hi) = (bounds[other][0], bounds[other][1]);
            simpson(
                |z| {
                    let mut x = vec![0.0; 2];
                    x[other] = z;
                    jump(&s.a, &mut x)
                },
                lo,
                hi,
                64,
            )
        };
        total += wt * flux;
    }
    let volume: f64 = bounds.iter().map(|r| r[1] - r[0]).product();
    total / volume
}

fn young_mean_condition() -> Verdict {
    let mut worst_ratio = 0.0f64;
    let mut cells = 0;
    let mut moment_ok = true;
    let mut details = Vec::new();
    for ((basis, stored, dir, panels), cells_per_axis) in nonconvex_cases()?.into_iter().zip([4, 2]) {
        let series = run_elasto(&basis, &stored, &dir, 0.1, 10)?;
        let d = basis.dim();
        let young = young_histogram(&series, &basis, &YoungSpec::uniform(d, cells_per_axis, 4))?;
        let sines = Sines::of(&basis);
        for cell in &young.cells {
            let hist = young.histogram_mean(cell);
            for a in 0..d {
                for b in 0..d {
                    let e = a * d + b;
                    let reference = cell_average(&sines, &series, &cell.bounds, a, b);
                    worst_ratio = worst_ratio.max((hist[e] - reference).abs() / young.bin_width(e));
                }
            }
            cells += 1;
        }
        let grid = sines.grid(panels.min(128));
        let volume: f64 = basis.domain().lengths().iter().product();
        let bound = 1.0 + field_energy(&sines, &grid, &series.states[0], &stored) / (0.5 * volume);
        let weights = trapezoid(&series.times());
        let (mut u, mut du) = (vec![0.0; d], vec![0.0; d * d]);
        let mut direct = 0.0;
        for (s, wt) in series.states.iter().zip(&weights) {
            for (x, w) in &grid {
                sines.eval(&s.a, x, &mut u, &mut du);
                direct += wt * w * du.iter().map(|c| c * c).sum::<f64>();
            }
        }
        direct /= 2.0 * volume;
        let binned = young.global_second_moment();
        moment_ok &= binned <= bound && direct <= bound;
        details.push(format!("d={d}: second moment {binned:.4}/{direct:.4} <= {bound:.4}"));
    }
    Ok((worst_ratio <= 1.0 && moment_ok, format!("{cells} cells, max |mean error|/bin width {worst_ratio:.3}; {}", details.join("; "))))
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism_across_threads() -> Verdict {
    let tmp = tempfile::tempdir()?;
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let vlasov = tmp.path().join("vlasov_large.toml");
    fs::write(
        &vlasov,
        r#"version = 1
kind = "vlasov"
seed = 11
[time]
t_final = 0.25
dt = 1e-3
[vlasov]
particles = 512
interaction = { type = "gaussian_well", depth = 1.0, width = 0.5 }
[vlasov.initial]
type = "gaussian"
mean_x = [0.0, 0.0]
mean_v = [0.0, 0.0]
std_x = [1.0, 1.0]
std_v = [0.5, 0.5]
"#,
    )?;
    let configs = [vlasov, repo.join("newton_free.toml"), repo.join("sticky_seeded.toml"), repo.join("elasto_damped.toml")];
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for (k, cfg) in configs.iter().enumerate() {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let out = tmp.path().join(format!("run{k}-{threads}"));
            let status = Command::new(env!("CARGO_BIN_EXE_semiflow"))
                .args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                .env("SEMIFLOW_THREADS", threads)
                .output()?
                .status;
            if !status.success() {
                return Ok((false, format!("{} failed with {status}", cfg.display())));
            }
            outputs.push(data_files(&out));
        }
        compared += outputs[0].len();
        if outputs[0] != outputs[1] {
            mismatches.push(cfg.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    Ok((mismatches.is_empty(), format!("4 scenarios, {compared} files compared between 1 and 4 threads, mismatches: {mismatches:?}")))
}

// ----------------------------------------------------------------- driver

type Criterion = (&'static str, fn() -> Verdict);

const CRITERIA: [Criterion; 14] = [
    ("quadratic_flow_oracle", quadratic_flow_oracle),
    ("apriori_velocity_bound", apriori_velocity_bound_holds),
    ("vlasov_moment_bounds", moment_bounds_hold),
    ("weak_residual_decay", weak_residual_decay),
    ("sticky_merge_correctness", sticky_merge_correctness),
    ("entropy_inequality", entropy_inequality),
    ("qspp_and_time_zero_bound", qspp_and_time_zero_bound),
    ("sticky_energy_monotone", sticky_energy_monotone),
    ("galerkin_linear_wave_oracle", linear_wave_oracle),
    ("galerkin_energy_identities", energy_identities),
    ("discrete_potential_gradient", potential_gradient_matches_differences),
    ("galerkin_cauchy_trend", cauchy_trend),
    ("young_mean_condition", young_mean_condition),
    ("determinism_across_threads", determinism_across_threads),
];

fn main() -> ExitCode {
    let mut failed = 0;
    for (k, (name, check)) in CRITERIA.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        let status = if pass { "PASS" } else { "FAIL" };
        println!("{status} {:>2} {name}: {detail} [{:.1}s]", k + 1, start.elapsed().as_secs_f64());
        if !pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", CRITERIA.len() - failed, CRITERIA.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
