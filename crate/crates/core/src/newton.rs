//! Newton systems `m_i γ̈_i = −D_{x_i}V(γ_1, …, γ_N)` with semiconvex `V`.
//!
//! Positions of the `N` particles in `R^d` are stored flat, particle-major:
//! `x[i * d + k]` is coordinate `k` of particle `i`.
//!
//! Besides the integrators this module provides the a-priori velocity bound
//!
//! ```text
//! Σ m_i |γ̇_i(t)|² ≤ (Σ m_i |v_i|² + Σ |D_{x_i}V(x)|² / m_i) · χ'(t)
//! ```
//!
//! with `χ(t) = e^{(L+1)t²/2} ∫_0^t e^{−(L+1)s²/2} ds`, where `L` is the modulus
//! for which `y ↦ V(y) + (L/2) Σ m_i |y_i|²` is convex.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::fmt17;
use crate::quadrature::integrate_adaptive;

/// Energy and gradient of a potential on `(R^d)^N`.
pub trait Potential: Send + Sync {
    fn energy(&self, x: &[f64]) -> f64;
    /// Writes the full gradient `DV(x)` into `out` (same layout as `x`).
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

struct ClosurePotential<E, G> {
    energy: E,
    gradient: G,
}

impl<E, G> Potential for ClosurePotential<E, G>
where
    E: Fn(&[f64]) -> f64 + Send + Sync,
    G: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn energy(&self, x: &[f64]) -> f64 {
        (self.energy)(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient)(x, out)
    }
}

/// How the semiconvexity modulus is measured.
#[derive(Debug, Clone, PartialEq)]
pub enum ModulusWeighting {
    /// `V(y) + (L/2)|y|²` is convex.
    Unweighted,
    /// `V(y) + (L/2) Σ m_i |y_i|²` is convex for these masses.
    MassWeighted(Vec<f64>),
}

/// A potential `V` on `(R^d)^N` with a declared semiconvexity modulus.
#[derive(Clone)]
pub struct SemiconvexPotential {
    dim: usize,
    n_particles: usize,
    inner: Arc<dyn Potential>,
    modulus: f64,
    weighting: ModulusWeighting,
    translation_invariant: bool,
}

impl std::fmt::Debug for SemiconvexPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemiconvexPotential")
            .field("dim", &self.dim)
            .field("n_particles", &self.n_particles)
            .field("modulus", &self.modulus)
            .field("weighting", &self.weighting)
            .field("translation_invariant", &self.translation_invariant)
            .finish()
    }
}

impl SemiconvexPotential {
    pub fn new(dim: usize, n_particles: usize, inner: Arc<dyn Potential>, modulus: f64) -> Result<Self> {
        if dim == 0 || n_particles == 0 {
            return Err(invalid("potential needs d >= 1 and N >= 1"));
        }
        if !(modulus >= 0.0 && modulus.is_finite()) {
            return Err(invalid(format!("semiconvexity modulus must be >= 0, got {modulus}")));
        }
        Ok(Self {
            dim,
            n_particles,
            inner,
            modulus,
            weighting: ModulusWeighting::Unweighted,
            translation_invariant: false,
        })
    }

    /// Potential from an energy closure and a gradient closure.
    pub fn from_fns<E, G>(dim: usize, n_particles: usize, energy: E, gradient: G, modulus: f64) -> Result<Self>
    where
        E: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::new(dim, n_particles, Arc::new(ClosurePotential { energy, gradient }), modulus)
    }

    /// `V ≡ 0`.
    pub fn zero(dim: usize, n_particles: usize) -> Result<Self> {
        Ok(Self::from_fns(dim, n_particles, |_| 0.0, |_, g| g.fill(0.0), 0.0)?.with_translation_invariance(true))
    }

    /// External harmonic field `V(x) = (k/2)|x|²`, semiconvex with modulus `max(0, −k)`.
    pub fn harmonic(dim: usize, n_particles: usize, k: f64) -> Result<Self> {
        Self::from_fns(
            dim,
            n_particles,
            move |x| 0.5 * k * x.iter().map(|c| c * c).sum::<f64>(),
            move |x, g| g.iter_mut().zip(x).for_each(|(g, x)| *g = k * x),
            (-k).max(0.0),
        )
    }

    /// Declares that the modulus is relative to the mass-weighted quadratic.
    pub fn with_mass_weights(mut self, masses: Vec<f64>) -> Result<Self> {
        if masses.len() != self.n_particles {
            return Err(Error::DimensionMismatch(masses.len(), self.n_particles));
        }
        self.weighting = ModulusWeighting::MassWeighted(masses);
        Ok(self)
    }

    pub fn with_translation_invariance(mut self, flag: bool) -> Self {
        self.translation_invariant = flag;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn weighting(&self) -> &ModulusWeighting {
        &self.weighting
    }

    pub fn is_translation_invariant(&self) -> bool {
        self.translation_invariant
    }

    pub fn energy(&self, x: &[f64]) -> f64 {
        self.inner.energy(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out)
    }

    /// Modulus `L` valid for `y ↦ V(y) + (L/2) Σ m_i |y_i|²`.
    ///
    /// An unweighted modulus is converted conservatively as `L / min_i m_i`.
    pub fn mass_weighted_modulus(&self, masses: &[f64]) -> f64 {
        match &self.weighting {
            ModulusWeighting::MassWeighted(_) => self.modulus,
            ModulusWeighting::Unweighted => {
                let m_min = masses.iter().cloned().fold(f64::INFINITY, f64::min);
                self.modulus / m_min
            }
        }
    }
}

/// Positions, velocities and masses of `N` particles in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystemState {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub masses: Vec<f64>,
    pub time: f64,
}

impl ParticleSystemState {
    pub fn new(dim: usize, positions: Vec<f64>, velocities: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let state = Self { dim, positions, velocities, masses, time: 0.0 };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.masses.len();
        if self.dim == 0 || n == 0 {
            return Err(invalid("a particle system needs d >= 1 and N >= 1"));
        }
        if self.positions.len() != n * self.dim {
            return Err(Error::DimensionMismatch(self.positions.len(), n * self.dim));
        }
        if self.velocities.len() != n * self.dim {
            return Err(Error::DimensionMismatch(self.velocities.len(), n * self.dim));
        }
        for (index, &value) in self.masses.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        if self.positions.iter().chain(&self.velocities).any(|c| !c.is_finite()) || !self.time.is_finite() {
            return Err(invalid("non-finite coordinate in particle state"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ m_i |v_i|²` (twice the kinetic energy).
    pub fn weighted_speed_sq(&self) -> f64 {
        (0..self.len())
            .map(|i| self.masses[i] * self.velocity(i).iter().map(|c| c * c).sum::<f64>())
            .sum()
    }

    pub fn momentum(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for i in 0..self.len() {
            for (pk, vk) in p.iter_mut().zip(self.velocity(i)) {
                *pk += self.masses[i] * vk;
            }
        }
        p
    }
}

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Scheme {
    #[default]
    #[serde(rename = "velocity-verlet")]
    VelocityVerlet,
    #[serde(rename = "rk4")]
    Rk4,
}

/// Fixed-step integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub scheme: Scheme,
    pub max_steps: usize,
    /// Record every `output_stride`-th step (the final step is always recorded).
    pub output_stride: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { dt: 1e-3, scheme: Scheme::VelocityVerlet, max_steps: 10_000_000, output_stride: 1 }
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self { dt, scheme: Scheme::Rk4, ..Self::default() }
    }

    pub fn verlet(dt: f64) -> Self {
        Self { dt, scheme: Scheme::VelocityVerlet, ..Self::default() }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.output_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.output_stride == 0 {
            return Err(invalid("output_stride must be >= 1"));
        }
        Ok(())
    }

    /// Uniform grid `(n_steps, h)` with `n_steps · h = t_final`, `h ≤ dt`.
    pub fn grid(&self, t_final: f64) -> Result<(usize, f64)> {
        self.validate()?;
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid(format!("final time must be positive, got {t_final}")));
        }
        let n = (t_final / self.dt - 1e-9).ceil().max(1.0) as usize;
        if n > self.max_steps {
            return Err(Error::StepBudget { max_steps: self.max_steps, t_final });
        }
        Ok((n, t_final / n as f64))
    }
}

/// Second-order system `ẍ = a(x, ẋ)` with optional auxiliary integrals
/// `q̇ = r(x, ẋ)` carried along by the stepper.
pub(crate) trait SecondOrderSystem {
    fn accel(&self, x: &[f64], v: &[f64], a: &mut [f64]);

    /// Rate of the auxiliary integrals; `a` is the acceleration at `(x, v)`.
    fn aux_rate(&self, _x: &[f64], _v: &[f64], _a: &[f64], _out: &mut [f64]) {}
}

/// Explicit fixed-step integrator with reusable scratch buffers.
pub(crate) struct Stepper {
    scheme: Scheme,
    n: usize,
    naux: usize,
    a: Vec<f64>,
    a_valid: bool,
    k: [Vec<f64>; 8],
    q: [Vec<f64>; 4],
    xs: Vec<f64>,
    vs: Vec<f64>,
}

impl Stepper {
    pub(crate) fn new(scheme: Scheme, n: usize, naux: usize) -> Self {
        let z = || vec![0.0; n];
        let za = || vec![0.0; naux];
        Self {
            scheme,
            n,
            naux,
            a: z(),
            a_valid: false,
            k: [z(), z(), z(), z(), z(), z(), z(), z()],
            q: [za(), za(), za(), za()],
            xs: z(),
            vs: z(),
        }
    }

    pub(crate) fn step<S: SecondOrderSystem>(&mut self, sys: &S, x: &mut [f64], v: &mut [f64], aux: &mut [f64], h: f64) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(aux.len(), self.naux);
        match self.scheme {
            Scheme::VelocityVerlet => self.verlet(sys, x, v, aux, h),
            Scheme::Rk4 => self.rk4(sys, x, v, aux, h),
        }
    }

    fn verlet<S: SecondOrderSystem>(&mut self, sys: &S, x: &mut [f64], v: &mut [f64], aux: &mut [f64], h: f64) {
        if !self.a_valid {
            sys.accel(x, v, &mut self.a);
        }
        if self.naux > 0 {
            sys.aux_rate(x, v, &self.a, &mut self.q[0]);
        }
        for i in 0..self.n {
            v[i] += 0.5 * h * self.a[i];
            x[i] += h * v[i];
        }
        sys.accel(x, v, &mut self.a);
        for i in 0..self.n {
            v[i] += 0.5 * h * self.a[i];
        }
        self.a_valid = true;
        if self.naux > 0 {
            sys.aux_rate(x, v, &self.a, &mut self.q[1]);
            for j in 0..self.naux {
                aux[j] += 0.5 * h * (self.q[0][j] + self.q[1][j]);
            }
        }
    }

    fn rk4<S: SecondOrderSystem>(&mut self, sys: &S, x: &mut [f64], v: &mut [f64], aux: &mut [f64], h: f64) {
        let n = self.n;
        let [k1x, k1v, k2x, k2v, k3x, k3v, k4x, k4v] = &mut self.k;
        let [q1, q2, q3, q4] = &mut self.q;
        let (xs, vs) = (&mut self.xs, &mut self.vs);

        k1x.copy_from_slice(v);
        sys.accel(x, v, k1v);
        if self.naux > 0 {
            sys.aux_rate(x, v, k1v, q1);
        }

        for i in 0..n {
            xs[i] = x[i] + 0.5 * h * k1x[i];
            vs[i] = v[i] + 0.5 * h * k1v[i];
        }
        k2x.copy_from_slice(vs);
        sys.accel(xs, vs, k2v);
        if self.naux > 0 {
            sys.aux_rate(xs, vs, k2v, q2);
        }

        for i in 0..n {
            xs[i] = x[i] + 0.5 * h * k2x[i];
            vs[i] = v[i] + 0.5 * h * k2v[i];
        }
        k3x.copy_from_slice(vs);
        sys.accel(xs, vs, k3v);
        if self.naux > 0 {
            sys.aux_rate(xs, vs, k3v, q3);
        }

        for i in 0..n {
            xs[i] = x[i] + h * k3x[i];
            vs[i] = v[i] + h * k3v[i];
        }
        k4x.copy_from_slice(vs);
        sys.accel(xs, vs, k4v);
        if self.naux > 0 {
            sys.aux_rate(xs, vs, k4v, q4);
        }

        let c = h / 6.0;
        for i in 0..n {
            x[i] += c * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]);
            v[i] += c * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        for j in 0..self.naux {
            aux[j] += c * (q1[j] + 2.0 * q2[j] + 2.0 * q3[j] + q4[j]);
        }
        self.a_valid = false;
    }
}

struct NewtonSystem<'a> {
    potential: &'a SemiconvexPotential,
    masses: &'a [f64],
    dim: usize,
}

impl SecondOrderSystem for NewtonSystem<'_> {
    fn accel(&self, x: &[f64], _v: &[f64], a: &mut [f64]) {
        self.potential.gradient(x, a);
        for (i, m) in self.masses.iter().enumerate() {
            for c in &mut a[i * self.dim..(i + 1) * self.dim] {
                *c = -*c / m;
            }
        }
    }
}

/// Integrates the Newton system from `state0` up to `t_final`.
///
/// Returns the states at every `output_stride`-th step of the uniform grid,
/// starting with the initial state and always ending at `t_final`.
pub fn integrate(
    potential: &SemiconvexPotential,
    state0: &ParticleSystemState,
    t_final: f64,
    config: &IntegratorConfig,
) -> Result<Vec<ParticleSystemState>> {
    state0.validate()?;
    if potential.dim() != state0.dim || potential.n_particles() != state0.len() {
        return Err(invalid(format!(
            "potential is for N={} in d={}, state has N={} in d={}",
            potential.n_particles(),
            potential.dim(),
            state0.len(),
            state0.dim
        )));
    }
    let (n_steps, h) = config.grid(t_final)?;
    let system = NewtonSystem { potential, masses: &state0.masses, dim: state0.dim };
    let mut stepper = Stepper::new(config.scheme, state0.positions.len(), 0);
    let mut x = state0.positions.clone();
    let mut v = state0.velocities.clone();
    let t0 = state0.time;
    let mut out = Vec::with_capacity(n_steps / config.output_stride + 2);
    out.push(state0.clone());
    for step in 1..=n_steps {
        stepper.step(&system, &mut x, &mut v, &mut [], h);
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        if step % config.output_stride == 0 || step == n_steps {
            out.push(ParticleSystemState {
                dim: state0.dim,
                positions: x.clone(),
                velocities: v.clone(),
                masses: state0.masses.clone(),
                time: t0 + step as f64 * h,
            });
        }
    }
    Ok(out)
}

/// `Σ (m_i/2)|v_i|² + V(x)`.
pub fn total_energy(state: &ParticleSystemState, potential: &SemiconvexPotential) -> f64 {
    0.5 * state.weighted_speed_sq() + potential.energy(&state.positions)
}

/// `χ(t) = e^{(L+1)t²/2} ∫_0^t e^{−(L+1)s²/2} ds`, evaluated as
/// `∫_0^t e^{(L+1)(t²−s²)/2} ds` by adaptive quadrature.
pub fn chi(t: f64, modulus: f64) -> Result<f64> {
    check_chi_args(t, modulus)?;
    let a = modulus + 1.0;
    let scale = (0.5 * a * t * t).exp().max(1.0);
    Ok(integrate_adaptive(|s| (0.5 * a * (t * t - s * s)).exp(), 0.0, t, 1e-12 * scale))
}

/// `χ'(t) = 1 + (L+1) t χ(t)`.
pub fn chi_prime(t: f64, modulus: f64) -> Result<f64> {
    Ok(1.0 + (modulus + 1.0) * t * chi(t, modulus)?)
}

fn check_chi_args(t: f64, modulus: f64) -> Result<()> {
    if !(t >= 0.0) || !(modulus >= 0.0) {
        return Err(invalid(format!("chi needs t >= 0 and L >= 0, got t={t}, L={modulus}")));
    }
    Ok(())
}

/// Memoized `χ` for repeated evaluation on a fixed time grid.
#[derive(Debug, Default)]
pub struct ChiCache {
    values: HashMap<(u64, u64), f64>,
}

impl ChiCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn chi(&mut self, t: f64, modulus: f64) -> Result<f64> {
        check_chi_args(t, modulus)?;
        let key = (t.to_bits(), modulus.to_bits());
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = chi(t, modulus)?;
        self.values.insert(key, v);
        Ok(v)
    }

    pub fn chi_prime(&mut self, t: f64, modulus: f64) -> Result<f64> {
        Ok(1.0 + (modulus + 1.0) * t * self.chi(t, modulus)?)
    }
}

/// Right-hand sides of the a-priori velocity estimates at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBound {
    /// Bound on `Σ m_i |γ̇_i(t)|²`.
    pub pointwise: f64,
    /// Bound on `∫_0^t Σ m_i |γ̇_i(s)|² ds`.
    pub integral: f64,
    /// `Σ m_i|v_i|² + Σ |D_{x_i}V(x)|²/m_i` at the initial state.
    pub initial_budget: f64,
    /// Mass-weighted modulus used for `χ`.
    pub modulus: f64,
}

/// Initial budget `Σ m_i|v_i|² + Σ |D_{x_i}V(x)|²/m_i`.
pub fn initial_budget(state0: &ParticleSystemState, potential: &SemiconvexPotential) -> f64 {
    let mut grad = vec![0.0; state0.positions.len()];
    potential.gradient(&state0.positions, &mut grad);
    let d = state0.dim;
    let force_term: f64 = state0
        .masses
        .iter()
        .enumerate()
        .map(|(i, m)| grad[i * d..(i + 1) * d].iter().map(|g| g * g).sum::<f64>() / m)
        .sum();
    state0.weighted_speed_sq() + force_term
}

pub fn apriori_velocity_bound(
    state0: &ParticleSystemState,
    potential: &SemiconvexPotential,
    t: f64,
) -> Result<VelocityBound> {
    let modulus = potential.mass_weighted_modulus(&state0.masses);
    let budget = initial_budget(state0, potential);
    let c = chi(t, modulus)?;
    Ok(VelocityBound {
        pointwise: budget * (1.0 + (modulus + 1.0) * t * c),
        integral: budget * c,
        initial_budget: budget,
        modulus,
    })
}

/// Outcome of a sampled check: largest violation seen and whether it is
/// within the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckReport {
    pub max_violation: f64,
    pub samples: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckReport {
    pub fn new(max_violation: f64, samples: usize, tolerance: f64) -> Self {
        Self { max_violation, samples, tolerance, passed: max_violation <= tolerance }
    }
}

/// Half-width of the sampling box used by the semiconvexity checker.
pub const SEMICONVEXITY_BOX: f64 = 3.0;

/// Samples random pairs `x, y` and reports the largest
/// `−[(DV(x) − DV(y))·(x − y) + L|x − y|²_m]`, where `|·|_m` is the
/// mass-weighted norm when the modulus is declared that way.
pub fn check_semiconvexity(potential: &SemiconvexPotential, sample_count: usize, seed: u64) -> Result<CheckReport> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be >= 1"));
    }
    let d = potential.dim();
    let n = potential.n_particles() * d;
    let weights: Vec<f64> = match potential.weighting() {
        ModulusWeighting::Unweighted => vec![1.0; n],
        ModulusWeighting::MassWeighted(m) => m.iter().flat_map(|&mi| std::iter::repeat_n(mi, d)).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-SEMICONVEXITY_BOX..SEMICONVEXITY_BOX)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-SEMICONVEXITY_BOX..SEMICONVEXITY_BOX)).collect();
        potential.gradient(&x, &mut gx);
        potential.gradient(&y, &mut gy);
        let mut monotone = 0.0;
        let mut dist = 0.0;
        for k in 0..n {
            let dx = x[k] - y[k];
            monotone += (gx[k] - gy[k]) * dx;
            dist += weights[k] * dx * dx;
        }
        worst = worst.max(-(monotone + potential.modulus() * dist));
    }
    Ok(CheckReport::new(worst, sample_count, 1e-8))
}

/// Writes states as CSV `t,i,x1..xd,v1..vd`, one row per particle per time.
pub fn write_trajectory_csv<W: Write>(states: &[ParticleSystemState], writer: W) -> Result<()> {
    let Some(first) = states.first() else {
        return Err(invalid("empty trajectory"));
    };
    let d = first.dim;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string(), "i".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend((1..=d).map(|k| format!("v{k}")));
    w.write_record(&header)?;
    for s in states {
        for i in 0..s.len() {
            let mut row = vec![fmt17(s.time), i.to_string()];
            row.extend(s.position(i).iter().map(|&c| fmt17(c)));
            row.extend(s.velocity(i).iter().map(|&c| fmt17(c)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_trajectory_csv`]. Masses are not part of
/// the file and must be supplied.
pub fn read_trajectory_csv<R: Read>(reader: R, masses: &[f64]) -> Result<Vec<ParticleSystemState>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.len() < 4 || header.len() % 2 != 0 || &header[0] != "t" || &header[1] != "i" {
        return Err(Error::Parse("expected header `t,i,x1..xd,v1..vd`".into()));
    }
    let d = (header.len() - 2) / 2;
    let n = masses.len();
    let mut states: Vec<ParticleSystemState> = Vec::new();
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}")));
    for rec in r.records() {
        let rec = rec?;
        let t = parse(&rec[0])?;
        let i: usize = rec[1].trim().parse().map_err(|e| Error::Parse(format!("particle index: {e}")))?;
        if i >= n {
            return Err(Error::UnknownIndex(i));
        }
        if i == 0 {
            states.push(ParticleSystemState {
                dim: d,
                positions: Vec::with_capacity(n * d),
                velocities: Vec::with_capacity(n * d),
                masses: masses.to_vec(),
                time: t,
            });
        }
        let s = states.last_mut().ok_or_else(|| Error::Parse("rows must start at particle 0".into()))?;
        if s.positions.len() != i * d || s.time != t {
            return Err(Error::Parse(format!("out-of-order row for particle {i} at t={t}")));
        }
        for k in 0..d {
            s.positions.push(parse(&rec[2 + k])?);
            s.velocities.push(parse(&rec[2 + d + k])?);
        }
    }
    for s in &states {
        s.validate()?;
    }
    Ok(states)
}
