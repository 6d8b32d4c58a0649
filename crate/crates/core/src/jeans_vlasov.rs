//! Particle solutions of the Jeans-Vlasov equation
//! `∂ₜf + v·D_xf − (DW*ρ)·D_vf = 0`.
//!
//! An empirical phase measure `f_t = Σ m_i δ_{(γ_i(t), γ̇_i(t))}` is a weak
//! solution when the particles follow `γ̈_i = −Σ_j m_j DW(γ_i − γ_j)`.
//! This module builds such solutions and measures how well the discrete
//! series satisfies the weak identity and the kinetic/second-moment bounds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::EmpiricalMeasure;
use crate::newton::{self, CheckReport, IntegratorConfig, ParticleSystemState, Potential, SemiconvexPotential};
use crate::quadrature::trapezoid_weights;

/// Particle count from which force loops are split across threads.
const PARALLEL_THRESHOLD: usize = 256;

/// Tolerance for matching a requested time against stored snapshot times.
const TIME_MATCH_TOL: f64 = 1e-9;

/// Serializable description of a built-in interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InteractionSpec {
    /// `W(z) = (κ/2)|z|²`.
    Quadratic { kappa: f64 },
    /// `W ≡ 0`.
    Zero,
    /// `W(z) = −depth·exp(−|z|²/(2·width²))`.
    GaussianWell { depth: f64, width: f64 },
    Custom,
}

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Even, `C¹` interaction potential `W` on `R^d` with semiconvexity
/// modulus `L` and linear growth constant `C` (`|DW(z)| ≤ C(1+|z|)`).
#[derive(Clone)]
pub struct InteractionPotential {
    dim: usize,
    w: ScalarFn,
    dw: VectorFn,
    modulus: f64,
    growth: f64,
    spec: InteractionSpec,
}

impl std::fmt::Debug for InteractionPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InteractionPotential")
            .field("dim", &self.dim)
            .field("modulus", &self.modulus)
            .field("growth", &self.growth)
            .field("spec", &self.spec)
            .finish()
    }
}

impl InteractionPotential {
    pub fn new<W, D>(dim: usize, w: W, dw: D, modulus: f64, growth: f64) -> Result<Self>
    where
        W: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("interaction dimension must be >= 1"));
        }
        if !(modulus >= 0.0 && modulus.is_finite()) || !(growth >= 0.0 && growth.is_finite()) {
            return Err(invalid(format!("need L >= 0 and C >= 0, got L={modulus}, C={growth}")));
        }
        Ok(Self { dim, w: Arc::new(w), dw: Arc::new(dw), modulus, growth, spec: InteractionSpec::Custom })
    }

    pub fn from_spec(dim: usize, spec: &InteractionSpec) -> Result<Self> {
        match *spec {
            InteractionSpec::Quadratic { kappa } => Self::quadratic(dim, kappa),
            InteractionSpec::Zero => Self::zero(dim),
            InteractionSpec::GaussianWell { depth, width } => Self::gaussian_well(dim, depth, width),
            InteractionSpec::Custom => Err(invalid("a custom interaction cannot be built from its spec")),
        }
    }

    pub fn quadratic(dim: usize, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() {
            return Err(invalid("kappa must be finite"));
        }
        let mut p = Self::new(
            dim,
            move |z| 0.5 * kappa * z.iter().map(|c| c * c).sum::<f64>(),
            move |z, out| out.iter_mut().zip(z).for_each(|(o, z)| *o = kappa * z),
            (-kappa).max(0.0),
            kappa.abs(),
        )?;
        p.spec = InteractionSpec::Quadratic { kappa };
        Ok(p)
    }

    pub fn zero(dim: usize) -> Result<Self> {
        let mut p = Self::new(dim, |_| 0.0, |_, out| out.fill(0.0), 0.0, 0.0)?;
        p.spec = InteractionSpec::Zero;
        Ok(p)
    }

    /// Attractive Gaussian well. Its Hessian is bounded below by
    /// `−2·depth·e^{−3/2}/width²`, and `|DW| ≤ depth·e^{−1/2}/width`.
    pub fn gaussian_well(dim: usize, depth: f64, width: f64) -> Result<Self> {
        if !(depth >= 0.0) || !(width > 0.0) {
            return Err(invalid("gaussian well needs depth >= 0 and width > 0"));
        }
        let s2 = width * width;
        let mut p = Self::new(
            dim,
            move |z| -depth * (-0.5 * z.iter().map(|c| c * c).sum::<f64>() / s2).exp(),
            move |z, out| {
                let e = depth / s2 * (-0.5 * z.iter().map(|c| c * c).sum::<f64>() / s2).exp();
                out.iter_mut().zip(z).for_each(|(o, z)| *o = e * z);
            },
            2.0 * depth * (-1.5f64).exp() / s2,
            depth * (-0.5f64).exp() / width,
        )?;
        p.spec = InteractionSpec::GaussianWell { depth, width };
        Ok(p)
    }

    /// Replaces the declared modulus by a larger one. All bounds built on
    /// `L` stay valid when `L` grows.
    pub fn with_modulus(mut self, modulus: f64) -> Result<Self> {
        if !(modulus >= self.modulus) || !modulus.is_finite() {
            return Err(invalid(format!("modulus can only be raised (from {} to {modulus})", self.modulus)));
        }
        self.modulus = modulus;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn spec(&self) -> &InteractionSpec {
        &self.spec
    }

    pub fn w(&self, z: &[f64]) -> f64 {
        (self.w)(z)
    }

    pub fn dw(&self, z: &[f64], out: &mut [f64]) {
        (self.dw)(z, out)
    }

    /// Scalar shortcuts for `d = 1`.
    pub fn w1(&self, z: f64) -> f64 {
        (self.w)(&[z])
    }

    pub fn dw1(&self, z: f64) -> f64 {
        let mut out = [0.0];
        (self.dw)(&[z], &mut out);
        out[0]
    }

    /// Samples evenness, `DW(0) = 0`, linear growth and one-sided
    /// monotonicity of `DW` on `[−R, R]^d`.
    pub fn validate(&self, sample_count: usize, seed: u64) -> Result<InteractionReport> {
        if sample_count == 0 {
            return Err(invalid("sample_count must be >= 1"));
        }
        let d = self.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut g1, mut g2) = (vec![0.0; d], vec![0.0; d]);
        let mut even = 0.0f64;
        let mut growth = f64::NEG_INFINITY;
        let mut semi = f64::NEG_INFINITY;
        self.dw(&vec![0.0; d], &mut g1);
        let origin = g1.iter().map(|c| c * c).sum::<f64>().sqrt();
        for _ in 0..sample_count {
            let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let zn: Vec<f64> = z.iter().map(|c| -c).collect();
            even = even.max((self.w(&z) - self.w(&zn)).abs());
            self.dw(&z, &mut g1);
            let norm_z = z.iter().map(|c| c * c).sum::<f64>().sqrt();
            let norm_g = g1.iter().map(|c| c * c).sum::<f64>().sqrt();
            growth = growth.max(norm_g - self.growth * (1.0 + norm_z));
            self.dw(&y, &mut g2);
            let mut mono = 0.0;
            let mut dist = 0.0;
            for k in 0..d {
                mono += (g1[k] - g2[k]) * (z[k] - y[k]);
                dist += (z[k] - y[k]).powi(2);
            }
            semi = semi.max(-(mono + self.modulus * dist));
        }
        Ok(InteractionReport {
            evenness: CheckReport::new(even, sample_count, 1e-10),
            origin_force: CheckReport::new(origin, 1, 1e-12),
            growth: CheckReport::new(growth, sample_count, 1e-8),
            semiconvexity: CheckReport::new(semi, sample_count, 1e-8),
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InteractionReport {
    pub evenness: CheckReport,
    pub origin_force: CheckReport,
    pub growth: CheckReport,
    pub semiconvexity: CheckReport,
}

impl InteractionReport {
    pub fn passed(&self) -> bool {
        self.evenness.passed && self.origin_force.passed && self.growth.passed && self.semiconvexity.passed
    }
}

fn check_masses(masses: &[f64]) -> Result<()> {
    if masses.is_empty() {
        return Err(invalid("need at least one particle"));
    }
    for (index, &value) in masses.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveWeight { index, value });
        }
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// Writes `(DW * ρ)(x_i) = Σ_j m_j DW(x_i − x_j)` for every particle `i`.
pub fn mean_field_force(w: &InteractionPotential, positions: &[f64], masses: &[f64], out: &mut [f64]) {
    let d = w.dim();
    let n = masses.len();
    let row = |i: usize, acc: &mut [f64]| {
        let mut z = vec![0.0; d];
        let mut g = vec![0.0; d];
        acc.fill(0.0);
        let xi = &positions[i * d..(i + 1) * d];
        for j in 0..n {
            if j == i {
                continue;
            }
            for k in 0..d {
                z[k] = xi[k] - positions[j * d + k];
            }
            w.dw(&z, &mut g);
            for k in 0..d {
                acc[k] += masses[j] * g[k];
            }
        }
    };
    if n >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(d).enumerate().for_each(|(i, acc)| row(i, acc));
    } else {
        out.chunks_mut(d).enumerate().for_each(|(i, acc)| row(i, acc));
    }
}

/// `½ Σ_{i,j} m_i m_j W(x_i − x_j)`.
pub fn interaction_energy(w: &InteractionPotential, positions: &[f64], masses: &[f64]) -> f64 {
    let d = w.dim();
    let n = masses.len();
    let mut z = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            for k in 0..d {
                z[k] = positions[i * d + k] - positions[j * d + k];
            }
            row += masses[j] * w.w(&z);
        }
        total += masses[i] * row;
    }
    0.5 * total
}

struct LiftedPotential {
    w: InteractionPotential,
    masses: Vec<f64>,
}

impl Potential for LiftedPotential {
    fn energy(&self, x: &[f64]) -> f64 {
        interaction_energy(&self.w, x, &self.masses)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        mean_field_force(&self.w, x, &self.masses, out);
        let d = self.w.dim();
        for (i, m) in self.masses.iter().enumerate() {
            out[i * d..(i + 1) * d].iter_mut().for_each(|c| *c *= m);
        }
    }
}

/// `V(x) = ½ Σ m_i m_j W(x_i − x_j)` with the modulus of `W`, mass-weighted.
pub fn lift_potential(w: &InteractionPotential, masses: &[f64]) -> Result<SemiconvexPotential> {
    check_masses(masses)?;
    let lifted = LiftedPotential { w: w.clone(), masses: masses.to_vec() };
    Ok(SemiconvexPotential::new(w.dim(), masses.len(), Arc::new(lifted), w.modulus())?
        .with_mass_weights(masses.to_vec())?
        .with_translation_invariance(true))
}

/// Empirical measure on `R^d × R^d` at a time stamp; points are `(x, v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMeasure {
    pub measure: EmpiricalMeasure,
    pub time: f64,
}

impl PhaseMeasure {
    pub fn new(measure: EmpiricalMeasure, time: f64) -> Result<Self> {
        if measure.dim() % 2 != 0 {
            return Err(invalid(format!("phase space dimension must be even, got {}", measure.dim())));
        }
        Ok(Self { measure, time })
    }

    pub fn from_state(state: &ParticleSystemState) -> Result<Self> {
        let d = state.dim;
        let mut coords = Vec::with_capacity(2 * d * state.len());
        for i in 0..state.len() {
            coords.extend_from_slice(state.position(i));
            coords.extend_from_slice(state.velocity(i));
        }
        Self::new(EmpiricalMeasure::from_flat(2 * d, coords, state.masses.clone())?, state.time)
    }

    pub fn to_state(&self) -> Result<ParticleSystemState> {
        let d = self.space_dim();
        let n = self.len();
        let mut x = Vec::with_capacity(n * d);
        let mut v = Vec::with_capacity(n * d);
        for i in 0..n {
            let p = self.measure.point(i);
            x.extend_from_slice(&p[..d]);
            v.extend_from_slice(&p[d..]);
        }
        let mut s = ParticleSystemState::new(d, x, v, self.measure.weights().to_vec())?;
        s.time = self.time;
        Ok(s)
    }

    pub fn space_dim(&self) -> usize {
        self.measure.dim() / 2
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        self.measure.weights()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.measure.point(i)[..self.space_dim()]
    }

    pub fn v(&self, i: usize) -> &[f64] {
        &self.measure.point(i)[self.space_dim()..]
    }

    /// Spatial marginal `ρ_t`.
    pub fn spatial_marginal(&self) -> Result<EmpiricalMeasure> {
        self.measure.project(0, self.space_dim())
    }

    /// Velocity marginal.
    pub fn velocity_marginal(&self) -> Result<EmpiricalMeasure> {
        self.measure.project(self.space_dim(), self.space_dim())
    }

    /// `(∫|x|² df, ∫|v|² df)`.
    pub fn second_moments(&self) -> (f64, f64) {
        let mut mx = 0.0;
        let mut mv = 0.0;
        for (i, m) in self.masses().iter().enumerate() {
            mx += m * self.x(i).iter().map(|c| c * c).sum::<f64>();
            mv += m * self.v(i).iter().map(|c| c * c).sum::<f64>();
        }
        (mx, mv)
    }

    /// `(∫x df, ∫v df)`.
    pub fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.space_dim();
        let mut mx = vec![0.0; d];
        let mut mv = vec![0.0; d];
        for (i, m) in self.masses().iter().enumerate() {
            for k in 0..d {
                mx[k] += m * self.x(i)[k];
                mv[k] += m * self.v(i)[k];
            }
        }
        (mx, mv)
    }
}

/// Snapshots of the particle solution on the output grid.
#[derive(Debug, Clone)]
pub struct VlasovSeries {
    pub snapshots: Vec<PhaseMeasure>,
}

impl VlasovSeries {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// Index of the snapshot at time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let (Some(first), Some(last)) = (self.snapshots.first(), self.snapshots.last()) else {
            return Err(invalid("empty series"));
        };
        if t < first.time - TIME_MATCH_TOL || t > last.time + TIME_MATCH_TOL {
            return Err(Error::TimeOutOfRange { t, start: first.time, end: last.time });
        }
        self.snapshots
            .iter()
            .position(|s| (s.time - t).abs() <= TIME_MATCH_TOL)
            .ok_or(Error::NotOnGrid { t })
    }
}

/// Evolves the particles of `f0` under the mean-field force of `w`.
pub fn simulate(f0: &PhaseMeasure, w: &InteractionPotential, t_final: f64, config: &IntegratorConfig) -> Result<VlasovSeries> {
    if f0.space_dim() != w.dim() {
        return Err(Error::DimensionMismatch(f0.space_dim(), w.dim()));
    }
    let state0 = f0.to_state()?;
    let potential = lift_potential(w, &state0.masses)?;
    let traj = newton::integrate(&potential, &state0, t_final, config)?;
    let snapshots = traj.iter().map(PhaseMeasure::from_state).collect::<Result<Vec<_>>>()?;
    Ok(VlasovSeries { snapshots })
}

/// A `C¹` test function on phase space.
pub trait PhaseTestFunction {
    fn value(&self, x: &[f64], v: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], v: &[f64], out: &mut [f64]);
    fn grad_v(&self, x: &[f64], v: &[f64], out: &mut [f64]);
}

/// Polynomial test functions of degree at most two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinTest {
    One,
    /// `x_k`.
    X(usize),
    /// `v_k`.
    V(usize),
    /// `x·v`.
    XV,
    /// `|x|²`.
    X2,
    /// `|v|²`.
    V2,
}

impl PhaseTestFunction for BuiltinTest {
    fn value(&self, x: &[f64], v: &[f64]) -> f64 {
        match *self {
            BuiltinTest::One => 1.0,
            BuiltinTest::X(k) => x[k],
            BuiltinTest::V(k) => v[k],
            BuiltinTest::XV => x.iter().zip(v).map(|(a, b)| a * b).sum(),
            BuiltinTest::X2 => x.iter().map(|a| a * a).sum(),
            BuiltinTest::V2 => v.iter().map(|a| a * a).sum(),
        }
    }

    fn grad_x(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match *self {
            BuiltinTest::X(k) => out[k] = 1.0,
            BuiltinTest::XV => out.copy_from_slice(v),
            BuiltinTest::X2 => out.iter_mut().zip(x).for_each(|(o, x)| *o = 2.0 * x),
            _ => {}
        }
    }

    fn grad_v(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match *self {
            BuiltinTest::V(k) => out[k] = 1.0,
            BuiltinTest::XV => out.copy_from_slice(x),
            BuiltinTest::V2 => out.iter_mut().zip(v).for_each(|(o, v)| *o = 2.0 * v),
            _ => {}
        }
    }
}

/// `∫ (v·D_xψ − (DW*ρ)·D_vψ) df` for one snapshot.
fn transport_integrand(f: &PhaseMeasure, w: &InteractionPotential, psi: &dyn PhaseTestFunction) -> Result<f64> {
    let d = f.space_dim();
    let n = f.len();
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        x.extend_from_slice(f.x(i));
    }
    let mut force = vec![0.0; n * d];
    mean_field_force(w, &x, f.masses(), &mut force);
    let (mut gx, mut gv) = (vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for (i, m) in f.masses().iter().enumerate() {
        psi.grad_x(f.x(i), f.v(i), &mut gx);
        psi.grad_v(f.x(i), f.v(i), &mut gv);
        let mut s = 0.0;
        for k in 0..d {
            s += f.v(i)[k] * gx[k] - force[i * d + k] * gv[k];
        }
        total += m * s;
    }
    Ok(total)
}

fn integrate_test(f: &PhaseMeasure, psi: &dyn PhaseTestFunction) -> f64 {
    f.masses().iter().enumerate().map(|(i, m)| m * psi.value(f.x(i), f.v(i))).sum()
}

/// Residual of the weak identity at snapshot time `t`, with the time
/// integral taken by the trapezoid rule on the stored snapshots.
pub fn weak_residual(series: &VlasovSeries, w: &InteractionPotential, psi: &dyn PhaseTestFunction, t: f64) -> Result<f64> {
    let end = series.index_of(t)?;
    let snaps = &series.snapshots[..=end];
    let times: Vec<f64> = snaps.iter().map(|s| s.time).collect();
    let weights = trapezoid_weights(&times);
    let mut integral = 0.0;
    for (s, wt) in snaps.iter().zip(&weights) {
        if *wt != 0.0 {
            integral += wt * transport_integrand(s, w, psi)?;
        }
    }
    let lhs = integrate_test(&snaps[end], psi) - integrate_test(&snaps[0], psi);
    Ok((lhs - integral).abs())
}

/// `∫|v|² df₀ + ∬|DW(x−y)|² dρ₀dρ₀`.
pub fn kinetic_budget(f0: &PhaseMeasure, w: &InteractionPotential) -> f64 {
    let d = f0.space_dim();
    let n = f0.len();
    let (_, v2) = f0.second_moments();
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut cross = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            for k in 0..d {
                z[k] = f0.x(i)[k] - f0.x(j)[k];
            }
            w.dw(&z, &mut g);
            row += f0.masses()[j] * g.iter().map(|c| c * c).sum::<f64>();
        }
        cross += f0.masses()[i] * row;
    }
    v2 + cross
}

/// Per-time sides of the two moment bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSample {
    pub t: f64,
    pub kinetic: f64,
    pub kinetic_bound: f64,
    pub half_second_moment: f64,
    pub second_moment_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub samples: Vec<MomentSample>,
    pub kinetic: CheckReport,
    pub second_moment: CheckReport,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.kinetic.passed && self.second_moment.passed
    }
}

/// Relative excess of `lhs` over `bound`; absolute when the bound is zero.
pub(crate) fn relative_excess(lhs: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        (lhs - bound) / bound
    } else {
        lhs - bound
    }
}

/// Checks `∫|v|²df_t ≤ K·χ'(t)` and `∫½|x|²df_t ≤ ∫|x|²df₀ + K·t·χ(t)`
/// with `K` from [`kinetic_budget`] at every snapshot.
pub fn moment_bounds_check(series: &VlasovSeries, w: &InteractionPotential, f0: &PhaseMeasure) -> Result<MomentReport> {
    let budget = kinetic_budget(f0, w);
    let (x2_0, _) = f0.second_moments();
    let l = w.modulus();
    let mut cache = newton::ChiCache::new();
    let mut samples = Vec::with_capacity(series.snapshots.len());
    let (mut worst_k, mut worst_x) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for s in &series.snapshots {
        let t = s.time - f0.time;
        let (x2, v2) = s.second_moments();
        let chi = cache.chi(t, l)?;
        let sample = MomentSample {
            t: s.time,
            kinetic: v2,
            kinetic_bound: budget * (1.0 + (l + 1.0) * t * chi),
            half_second_moment: 0.5 * x2,
            second_moment_bound: x2_0 + budget * t * chi,
        };
        worst_k = worst_k.max(relative_excess(sample.kinetic, sample.kinetic_bound));
        worst_x = worst_x.max(relative_excess(sample.half_second_moment, sample.second_moment_bound));
        samples.push(sample);
    }
    let n = samples.len();
    Ok(MomentReport {
        samples,
        kinetic: CheckReport::new(worst_k, n, 1e-8),
        second_moment: CheckReport::new(worst_x, n, 1e-8),
    })
}

/// Distribution of initial phase-space data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialDistribution {
    /// Independent normal coordinates.
    Gaussian { mean_x: Vec<f64>, mean_v: Vec<f64>, std_x: Vec<f64>, std_v: Vec<f64> },
    /// Uniform on the box `[lo, hi]` in phase space (length `2d`).
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Weighted points `(x, v)`; equal weights when omitted.
    Points { points: Vec<Vec<f64>>, weights: Option<Vec<f64>> },
}

impl InitialDistribution {
    pub fn phase_dim(&self) -> Result<usize> {
        let d2 = match self {
            Self::Gaussian { mean_x, mean_v, std_x, std_v } => {
                let d = mean_x.len();
                if mean_v.len() != d || std_x.len() != d || std_v.len() != d {
                    return Err(invalid("gaussian spec needs equal-length mean/std vectors"));
                }
                if std_x.iter().chain(std_v).any(|s| !(*s >= 0.0)) {
                    return Err(invalid("standard deviations must be >= 0"));
                }
                2 * d
            }
            Self::UniformBox { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(invalid("uniform box needs lo <= hi of equal length"));
                }
                lo.len()
            }
            Self::Points { points, .. } => points.first().map(|p| p.len()).unwrap_or(0),
        };
        if d2 == 0 || d2 % 2 != 0 {
            return Err(invalid(format!("phase dimension must be positive and even, got {d2}")));
        }
        Ok(d2)
    }

    /// Population value of `(∫|x|², ∫|v|²)` when it is known in closed form.
    pub fn population_second_moments(&self) -> Option<(f64, f64)> {
        match self {
            Self::Gaussian { mean_x, mean_v, std_x, std_v } => {
                let sx: f64 = mean_x.iter().zip(std_x).map(|(m, s)| m * m + s * s).sum();
                let sv: f64 = mean_v.iter().zip(std_v).map(|(m, s)| m * m + s * s).sum();
                Some((sx, sv))
            }
            Self::UniformBox { lo, hi } => {
                let d = lo.len() / 2;
                let m2 = |a: f64, b: f64| (a * a + a * b + b * b) / 3.0;
                let sx = (0..d).map(|k| m2(lo[k], hi[k])).sum();
                let sv = (d..2 * d).map(|k| m2(lo[k], hi[k])).sum();
                Some((sx, sv))
            }
            Self::Points { .. } => None,
        }
    }
}

/// Draws `n` equally weighted samples. Samples are generated particle by
/// particle, so the first `n` samples for a seed do not depend on the total.
/// A point list of exactly `n` points is returned as given.
pub fn sample_initial(spec: &InitialDistribution, n: usize, seed: u64) -> Result<PhaseMeasure> {
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let d2 = spec.phase_dim()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n * d2);
    match spec {
        InitialDistribution::Gaussian { mean_x, mean_v, std_x, std_v } => {
            let mut normals = Vec::with_capacity(d2);
            for (m, s) in mean_x.iter().zip(std_x).chain(mean_v.iter().zip(std_v)) {
                normals.push(Normal::new(*m, *s).map_err(|e| invalid(e.to_string()))?);
            }
            for _ in 0..n {
                for nd in &normals {
                    coords.push(nd.sample(&mut rng));
                }
            }
        }
        InitialDistribution::UniformBox { lo, hi } => {
            for _ in 0..n {
                for (a, b) in lo.iter().zip(hi) {
                    coords.push(if a < b { rng.gen_range(*a..*b) } else { *a });
                }
            }
        }
        InitialDistribution::Points { points, weights } => {
            if points.iter().any(|p| p.len() != d2) {
                return Err(invalid("all points must have the same dimension"));
            }
            let w = match weights {
                Some(w) => w.clone(),
                None => vec![1.0 / points.len() as f64; points.len()],
            };
            if n == points.len() {
                return PhaseMeasure::new(EmpiricalMeasure::new(points.clone(), w)?, 0.0);
            }
            let table = EmpiricalMeasure::new(points.clone(), w)?;
            let cdf: Vec<f64> = table
                .weights()
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect();
            for _ in 0..n {
                let u: f64 = rng.gen();
                let idx = cdf.partition_point(|c| *c <= u).min(points.len() - 1);
                coords.extend_from_slice(table.point(idx));
            }
        }
    }
    PhaseMeasure::new(EmpiricalMeasure::from_flat(d2, coords, vec![1.0 / n as f64; n])?, 0.0)
}
