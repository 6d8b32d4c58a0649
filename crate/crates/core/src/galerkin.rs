//! Galerkin approximation of elastodynamics `u_tt = div DF(Du) + μΔu_t`
//! with homogeneous Dirichlet data on a box `(0,ℓ₁)×…×(0,ℓ_d)`.
//!
//! The displacement `u: U → R^d` is sought as `u = Σ_j a_j(t) φ_j` with the
//! sine-product eigenfunctions of `−Δ`. The coefficients solve the Newton
//! system `ä_j = −D_{y_j}V(a) − μλ_j ȧ_j` for the discrete potential
//! `V(y) = ∫_U F(Σ_j y_j ⊗ Dφ_j)`, evaluated by tensor Gauss-Legendre
//! quadrature. Only boxes are supported: there the eigenpairs are explicit.
//!
//! Matrices in `M^{d×d}` are stored row-major; `(Du)_{ab} = ∂_b u_a`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measures::fmt17;
use crate::newton::{CheckReport, IntegratorConfig, Scheme, SecondOrderSystem, SemiconvexPotential, Stepper};
use crate::quadrature::{gauss_legendre, trapezoid_weights};

/// Axis-aligned box `(0,ℓ₁)×…×(0,ℓ_d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    lengths: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(invalid(format!("box side lengths must be positive, got {lengths:?}")));
        }
        Ok(Self { lengths })
    }

    pub fn unit(dim: usize) -> Result<Self> {
        Self::new(vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }
}

/// Sine-product eigenfunctions tabulated on a tensor Gauss-Legendre grid.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    domain: BoxDomain,
    modes: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
    quad_order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    orthonormality_defect: f64,
    stiffness_defect: f64,
}

/// Default Gauss-Legendre order per axis for a largest axis wavenumber `k_max`.
/// Nonlinear stored energies need far more nodes than the `k_max + 1`
/// that make the quadratic case exact.
pub fn default_quad_order(k_max: usize) -> usize {
    4 * k_max + 32
}

/// The `n_modes` smallest eigenvalues of the box, ties broken by the
/// lexicographic order of the multi-index.
fn select_modes(domain: &BoxDomain, n_modes: usize) -> Vec<(f64, Vec<usize>)> {
    let d = domain.dim();
    let mut all = Vec::new();
    let mut k = vec![1usize; d];
    loop {
        let lambda = PI * PI * k.iter().zip(domain.lengths()).map(|(&ki, l)| (ki as f64 / l).powi(2)).sum::<f64>();
        all.push((lambda, k.clone()));
        let mut axis = 0;
        loop {
            if axis == d {
                all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
                all.truncate(n_modes);
                return all;
            }
            k[axis] += 1;
            if k[axis] <= n_modes {
                break;
            }
            k[axis] = 1;
            axis += 1;
        }
    }
}

impl EigenBasis {
    /// Builds the first `n_modes` eigenfunctions. `quad_order` defaults to
    /// [`default_quad_order`] and must be at least the largest wavenumber + 2.
    pub fn new(domain: BoxDomain, n_modes: usize, quad_order: Option<usize>) -> Result<Self> {
        if n_modes == 0 {
            return Err(invalid("need at least one mode"));
        }
        let d = domain.dim();
        let picked = select_modes(&domain, n_modes);
        let k_max = picked.iter().flat_map(|(_, k)| k.iter().copied()).max().unwrap_or(1);
        let q = quad_order.unwrap_or_else(|| default_quad_order(k_max));
        if q < k_max + 2 {
            return Err(invalid(format!("quadrature order {q} is below the largest wavenumber {k_max} + 2")));
        }
        let axes: Vec<(Vec<f64>, Vec<f64>)> = domain.lengths().iter().map(|&l| gauss_legendre(q, 0.0, l)).collect::<Result<_>>()?;
        let n_nodes = q.pow(d as u32);
        let mut nodes = Vec::with_capacity(n_nodes * d);
        let mut weights = Vec::with_capacity(n_nodes);
        let mut idx = vec![0usize; d];
        for _ in 0..n_nodes {
            let mut w = 1.0;
            for a in 0..d {
                nodes.push(axes[a].0[idx[a]]);
                w *= axes[a].1[idx[a]];
            }
            weights.push(w);
            for slot in idx.iter_mut() {
                *slot += 1;
                if *slot < q {
                    break;
                }
                *slot = 0;
            }
        }
        let (eigenvalues, modes): (Vec<f64>, Vec<Vec<usize>>) = picked.into_iter().unzip();
        let mut basis = Self {
            domain,
            modes,
            eigenvalues,
            quad_order: q,
            nodes,
            weights,
            phi: Vec::new(),
            dphi: Vec::new(),
            orthonormality_defect: 0.0,
            stiffness_defect: 0.0,
        };
        let m = basis.len();
        basis.phi = vec![0.0; m * n_nodes];
        basis.dphi = vec![0.0; m * n_nodes * d];
        let mut grad = vec![0.0; d];
        for j in 0..m {
            for p in 0..n_nodes {
                let x = basis.nodes[p * d..(p + 1) * d].to_vec();
                basis.phi[j * n_nodes + p] = basis.phi_at(j, &x);
                basis.dphi_at(j, &x, &mut grad);
                basis.dphi[(j * n_nodes + p) * d..(j * n_nodes + p + 1) * d].copy_from_slice(&grad);
            }
        }
        let (mut ortho, mut stiff) = (0.0f64, 0.0f64);
        for j in 0..m {
            for k in 0..m {
                let (mut mass, mut st) = (0.0, 0.0);
                for p in 0..n_nodes {
                    let w = basis.weights[p];
                    mass += w * basis.phi[j * n_nodes + p] * basis.phi[k * n_nodes + p];
                    let gj = &basis.dphi[(j * n_nodes + p) * d..(j * n_nodes + p + 1) * d];
                    let gk = &basis.dphi[(k * n_nodes + p) * d..(k * n_nodes + p + 1) * d];
                    st += w * gj.iter().zip(gk).map(|(a, b)| a * b).sum::<f64>();
                }
                let delta = if j == k { 1.0 } else { 0.0 };
                ortho = ortho.max((mass - delta).abs());
                stiff = stiff.max((st - delta * basis.eigenvalues[j]).abs());
            }
        }
        basis.orthonormality_defect = ortho;
        basis.stiffness_defect = stiff;
        Ok(basis)
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Vec<usize>] {
        &self.modes
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn largest_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.len() - 1]
    }

    pub fn quad_order(&self) -> usize {
        self.quad_order
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.len()
    }

    pub fn node(&self, p: usize) -> &[f64] {
        &self.nodes[p * self.dim()..(p + 1) * self.dim()]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max_{j,k} |∫φ_jφ_k − δ_jk|` on the grid.
    pub fn orthonormality_defect(&self) -> f64 {
        self.orthonormality_defect
    }

    /// `max_{j,k} |∫Dφ_j·Dφ_k − λ_jδ_jk|` on the grid.
    pub fn stiffness_defect(&self) -> f64 {
        self.stiffness_defect
    }

    pub fn phi_at(&self, j: usize, x: &[f64]) -> f64 {
        self.modes[j]
            .iter()
            .zip(self.domain.lengths())
            .zip(x)
            .map(|((&k, &l), &xi)| (2.0 / l).sqrt() * (k as f64 * PI * xi / l).sin())
            .product()
    }

    pub fn dphi_at(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let ls = self.domain.lengths();
        let k = &self.modes[j];
        for b in 0..d {
            let mut v = 1.0;
            for a in 0..d {
                let c = (2.0 / ls[a]).sqrt();
                let w = k[a] as f64 * PI / ls[a];
                v *= if a == b { c * w * (w * x[a]).cos() } else { c * (w * x[a]).sin() };
            }
            out[b] = v;
        }
    }

    /// `Σ_j y_j φ_j(x)` for coefficients stored `y[j*d + a]`.
    pub fn displacement_at(&self, y: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        out.fill(0.0);
        for j in 0..self.len() {
            let p = self.phi_at(j, x);
            for a in 0..d {
                out[a] += y[j * d + a] * p;
            }
        }
    }

    /// `Σ_j y_j ⊗ Dφ_j(x)`.
    pub fn gradient_at(&self, y: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut g = vec![0.0; d];
        out.fill(0.0);
        for j in 0..self.len() {
            self.dphi_at(j, x, &mut g);
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] += y[j * d + a] * g[b];
                }
            }
        }
    }

    /// `Σ_{j<m} y_j ⊗ Dφ_j` at grid node `p`, using the first `m = y.len()/d` modes.
    fn gradient_at_node(&self, y: &[f64], p: usize, out: &mut [f64]) {
        let d = self.dim();
        let n = self.n_nodes();
        out.fill(0.0);
        for j in 0..y.len() / d {
            let g = &self.dphi[(j * n + p) * d..(j * n + p + 1) * d];
            for a in 0..d {
                let ya = y[j * d + a];
                if ya != 0.0 {
                    for b in 0..d {
                        out[a * d + b] += ya * g[b];
                    }
                }
            }
        }
    }
}

/// Serializable description of a built-in stored energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnergySpec {
    /// `F(A) = ½|A|²`.
    Quadratic,
    /// `F(A) = ½|A|² + α cos(B·A)` with `B` row-major.
    Nonconvex { alpha: f64, b: Vec<f64> },
    Custom,
}

type MatrixScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type MatrixMapFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Stored energy `F` on `M^{d×d}` with modulus `L` (`F + (L/2)|A|²` convex),
/// coercivity constant `c` and growth constant `C`.
#[derive(Clone)]
pub struct StoredEnergy {
    dim: usize,
    f: MatrixScalarFn,
    df: MatrixMapFn,
    modulus: f64,
    coercivity: f64,
    growth: f64,
    spec: EnergySpec,
}

impl std::fmt::Debug for StoredEnergy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoredEnergy")
            .field("dim", &self.dim)
            .field("modulus", &self.modulus)
            .field("coercivity", &self.coercivity)
            .field("growth", &self.growth)
            .field("spec", &self.spec)
            .finish()
    }
}

impl StoredEnergy {
    pub fn new<F, D>(dim: usize, f: F, df: D, modulus: f64, coercivity: f64, growth: f64) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(invalid("energy dimension must be >= 1"));
        }
        if !(modulus >= 0.0 && modulus.is_finite()) {
            return Err(invalid(format!("modulus must be >= 0, got {modulus}")));
        }
        if !(coercivity > 0.0 && coercivity <= 1.0) {
            return Err(invalid(format!("coercivity constant must lie in (0, 1], got {coercivity}")));
        }
        if !(growth >= 0.0 && growth.is_finite()) {
            return Err(invalid(format!("growth constant must be >= 0, got {growth}")));
        }
        Ok(Self { dim, f: Arc::new(f), df: Arc::new(df), modulus, coercivity, growth, spec: EnergySpec::Custom })
    }

    pub fn from_spec(dim: usize, spec: &EnergySpec) -> Result<Self> {
        match spec {
            EnergySpec::Quadratic => Self::quadratic(dim),
            EnergySpec::Nonconvex { alpha, b } => Self::nonconvex(dim, *alpha, b.clone()),
            EnergySpec::Custom => Err(invalid("a custom energy cannot be built from its spec")),
        }
    }

    pub fn quadratic(dim: usize) -> Result<Self> {
        let mut e = Self::new(
            dim,
            |a| 0.5 * a.iter().map(|c| c * c).sum::<f64>(),
            |a, out| out.copy_from_slice(a),
            0.0,
            0.5,
            1.0,
        )?;
        e.spec = EnergySpec::Quadratic;
        Ok(e)
    }

    /// `½|A|² + α cos(B·A)` for `0 ≤ α ≤ ½`: `L = max(0, α|B|² − 1)`,
    /// `c = ½`, `C = max(1, α|B|)`.
    pub fn nonconvex(dim: usize, alpha: f64, b: Vec<f64>) -> Result<Self> {
        if !(0.0..=0.5).contains(&alpha) {
            return Err(invalid(format!("alpha must lie in [0, 1/2], got {alpha}")));
        }
        if b.len() != dim * dim || b.iter().any(|c| !c.is_finite()) {
            return Err(invalid(format!("B must be a finite {dim}x{dim} matrix")));
        }
        let b2: f64 = b.iter().map(|c| c * c).sum();
        let bf = b.clone();
        let bd = b.clone();
        let mut e = Self::new(
            dim,
            move |a| 0.5 * a.iter().map(|c| c * c).sum::<f64>() + alpha * a.iter().zip(&bf).map(|(x, y)| x * y).sum::<f64>().cos(),
            move |a, out| {
                let s = alpha * a.iter().zip(&bd).map(|(x, y)| x * y).sum::<f64>().sin();
                for ((o, x), y) in out.iter_mut().zip(a).zip(&bd) {
                    *o = x - s * y;
                }
            },
            (alpha * b2 - 1.0).max(0.0),
            0.5,
            (alpha * b2.sqrt()).max(1.0),
        )?;
        e.spec = EnergySpec::Nonconvex { alpha, b };
        Ok(e)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modulus(&self) -> f64 {
        self.modulus
    }

    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn f(&self, a: &[f64]) -> f64 {
        (self.f)(a)
    }

    pub fn df(&self, a: &[f64], out: &mut [f64]) {
        (self.df)(a, out)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StoredEnergyReport {
    pub coercivity: CheckReport,
    pub monotonicity: CheckReport,
    pub growth: CheckReport,
}

impl StoredEnergyReport {
    pub fn passed(&self) -> bool {
        self.coercivity.passed && self.monotonicity.passed && self.growth.passed
    }
}

/// Samples coercivity, one-sided monotonicity of `DF` and linear growth
/// on `[−4, 4]^{d×d}`.
pub fn check_stored_energy(energy: &StoredEnergy, sample_count: usize, seed: u64) -> Result<StoredEnergyReport> {
    if sample_count == 0 {
        return Err(invalid("sample_count must be >= 1"));
    }
    let n = energy.dim() * energy.dim();
    let c = energy.coercivity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ga, mut gb) = (vec![0.0; n], vec![0.0; n]);
    let (mut coer, mut mono, mut grow) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..sample_count {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let a2: f64 = a.iter().map(|x| x * x).sum();
        let fa = energy.f(&a);
        coer = coer.max(c * (a2 - 1.0) - fa).max(fa - (a2 + 1.0) / c);
        energy.df(&a, &mut ga);
        energy.df(&b, &mut gb);
        let (mut m, mut dist) = (0.0, 0.0);
        for k in 0..n {
            m += (ga[k] - gb[k]) * (a[k] - b[k]);
            dist += (a[k] - b[k]).powi(2);
        }
        mono = mono.max(-(m + energy.modulus() * dist));
        let norm_g = ga.iter().map(|x| x * x).sum::<f64>().sqrt();
        grow = grow.max(norm_g - energy.growth() * (a2.sqrt() + 1.0));
    }
    Ok(StoredEnergyReport {
        coercivity: CheckReport::new(coer, sample_count, 1e-8),
        monotonicity: CheckReport::new(mono, sample_count, 1e-8),
        growth: CheckReport::new(grow, sample_count, 1e-8),
    })
}

fn check_pair(basis: &EigenBasis, energy: &StoredEnergy) -> Result<()> {
    if basis.dim() != energy.dim() {
        return Err(Error::DimensionMismatch(basis.dim(), energy.dim()));
    }
    Ok(())
}

/// `V(y) = Σ_q w_q F(A_q)` and `(D_{y_j}V)_a = Σ_q w_q Σ_b DF(A_q)_{ab} ∂_bφ_j`
/// with `A_q = Σ_j y_j ⊗ Dφ_j(x_q)`.
pub fn discrete_potential(y: &[f64], basis: &EigenBasis, energy: &StoredEnergy) -> Result<(f64, Vec<f64>)> {
    check_pair(basis, energy)?;
    let d = basis.dim();
    if y.len() != basis.len() * d {
        return Err(Error::DimensionMismatch(y.len(), basis.len() * d));
    }
    let mut grad = vec![0.0; y.len()];
    let v = potential_and_gradient(y, basis, energy, Some(&mut grad));
    Ok((v, grad))
}

fn potential_and_gradient(y: &[f64], basis: &EigenBasis, energy: &StoredEnergy, grad: Option<&mut [f64]>) -> f64 {
    let d = basis.dim();
    let n = basis.n_nodes();
    let m = basis.len();
    let mut a = vec![0.0; d * d];
    let mut s = vec![0.0; d * d];
    let mut total = 0.0;
    match grad {
        None => {
            for p in 0..n {
                basis.gradient_at_node(y, p, &mut a);
                total += basis.weights[p] * energy.f(&a);
            }
        }
        Some(grad) => {
            grad.fill(0.0);
            for p in 0..n {
                basis.gradient_at_node(y, p, &mut a);
                let w = basis.weights[p];
                total += w * energy.f(&a);
                energy.df(&a, &mut s);
                for j in 0..m {
                    let g = &basis.dphi[(j * n + p) * d..(j * n + p + 1) * d];
                    for r in 0..d {
                        let mut acc = 0.0;
                        for b in 0..d {
                            acc += s[r * d + b] * g[b];
                        }
                        grad[j * d + r] += w * acc;
                    }
                }
            }
        }
    }
    total
}

/// The discrete potential as a Newton potential on `(R^d)^N`, with
/// modulus `L·λ_N`.
pub fn discrete_semiconvex_potential(basis: Arc<EigenBasis>, energy: StoredEnergy) -> Result<SemiconvexPotential> {
    check_pair(&basis, &energy)?;
    let modulus = energy.modulus() * basis.largest_eigenvalue();
    let (b1, e1) = (basis.clone(), energy.clone());
    SemiconvexPotential::from_fns(
        basis.dim(),
        basis.len(),
        move |y| potential_and_gradient(y, &b1, &e1, None),
        move |y, g| {
            potential_and_gradient(y, &basis, &energy, Some(g));
        },
        modulus,
    )
}

/// Result of projecting a vector field onto the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `g_j = ∫ g φ_j`, stored `[j*d + a]`.
    pub coefficients: Vec<f64>,
    /// `‖g − Σ g_j φ_j‖_{L²}` on the grid.
    pub l2_error: f64,
}

pub fn project_initial<G: Fn(&[f64], &mut [f64])>(g: G, basis: &EigenBasis) -> Projection {
    let d = basis.dim();
    let n = basis.n_nodes();
    let mut values = vec![0.0; n * d];
    for p in 0..n {
        g(basis.node(p), &mut values[p * d..(p + 1) * d]);
    }
    let mut coefficients = vec![0.0; basis.len() * d];
    for j in 0..basis.len() {
        for p in 0..n {
            let w = basis.weights[p] * basis.phi[j * n + p];
            for a in 0..d {
                coefficients[j * d + a] += w * values[p * d + a];
            }
        }
    }
    let mut err = 0.0;
    for p in 0..n {
        for a in 0..d {
            let mut rec = 0.0;
            for j in 0..basis.len() {
                rec += coefficients[j * d + a] * basis.phi[j * n + p];
            }
            err += basis.weights[p] * (values[p * d + a] - rec).powi(2);
        }
    }
    Projection { coefficients, l2_error: err.sqrt() }
}

/// Coefficients and their time derivatives at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinState {
    pub time: f64,
    pub a: Vec<f64>,
    pub adot: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GalerkinSeries {
    pub states: Vec<GalerkinState>,
    /// `μ∫_0^t Σ_j λ_j |ȧ_j|² ds` at each state.
    pub dissipation: Vec<f64>,
    pub mu: f64,
    pub energy: EnergySpec,
}

impl GalerkinSeries {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    /// Writes `t,mode,component,a,adot`.
    pub fn write_csv<W: Write>(&self, dim: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "mode", "component", "a", "adot"])?;
        for s in &self.states {
            for (k, (a, ad)) in s.a.iter().zip(&s.adot).enumerate() {
                w.write_record([fmt17(s.time), (k / dim).to_string(), (k % dim).to_string(), fmt17(*a), fmt17(*ad)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the CSV written by [`GalerkinSeries::write_csv`] into states.
pub fn read_modes_csv<R: Read>(reader: R, dim: usize, n_modes: usize) -> Result<Vec<GalerkinState>> {
    #[derive(Deserialize)]
    struct Row {
        t: f64,
        mode: usize,
        component: usize,
        a: f64,
        adot: f64,
    }
    let mut r = csv::Reader::from_reader(reader);
    let mut out: Vec<GalerkinState> = Vec::new();
    let width = dim * n_modes;
    for row in r.deserialize::<Row>() {
        let row = row?;
        if row.mode >= n_modes || row.component >= dim {
            return Err(Error::Parse(format!("mode {} component {} out of range", row.mode, row.component)));
        }
        let k = row.mode * dim + row.component;
        if k == 0 {
            out.push(GalerkinState { time: row.t, a: Vec::with_capacity(width), adot: Vec::with_capacity(width) });
        }
        let s = out.last_mut().ok_or_else(|| Error::Parse("rows must start at mode 0".into()))?;
        if s.a.len() != k || s.time != row.t {
            return Err(Error::Parse(format!("out-of-order row at t={}", row.t)));
        }
        s.a.push(row.a);
        s.adot.push(row.adot);
    }
    if out.iter().any(|s| s.a.len() != width) {
        return Err(Error::Parse("incomplete time slice".into()));
    }
    Ok(out)
}

struct ModeSystem<'a> {
    basis: &'a EigenBasis,
    energy: &'a StoredEnergy,
    mu: f64,
}

impl SecondOrderSystem for ModeSystem<'_> {
    fn accel(&self, y: &[f64], v: &[f64], out: &mut [f64]) {
        potential_and_gradient(y, self.basis, self.energy, Some(out));
        let d = self.basis.dim();
        for (k, o) in out.iter_mut().enumerate() {
            *o = -*o - self.mu * self.basis.eigenvalues[k / d] * v[k];
        }
    }

    fn aux_rate(&self, _y: &[f64], v: &[f64], _a: &[f64], out: &mut [f64]) {
        let d = self.basis.dim();
        out[0] = self.mu * v.iter().enumerate().map(|(k, x)| self.basis.eigenvalues[k / d] * x * x).sum::<f64>();
    }
}

/// Integrates the mode system from `(g_j, h_j)`. Damped runs (`μ > 0`)
/// always use rk4; undamped runs use the configured scheme.
pub fn evolve_galerkin(
    g: &[f64],
    h: &[f64],
    energy: &StoredEnergy,
    basis: &EigenBasis,
    t_final: f64,
    config: &IntegratorConfig,
    mu: f64,
) -> Result<GalerkinSeries> {
    check_pair(basis, energy)?;
    let width = basis.len() * basis.dim();
    if g.len() != width || h.len() != width {
        return Err(Error::DimensionMismatch(g.len().max(h.len()), width));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(invalid(format!("damping must be >= 0, got {mu}")));
    }
    let (n_steps, dt) = config.grid(t_final)?;
    let scheme = if mu > 0.0 { Scheme::Rk4 } else { config.scheme };
    let sys = ModeSystem { basis, energy, mu };
    let mut stepper = Stepper::new(scheme, width, 1);
    let (mut a, mut ad) = (g.to_vec(), h.to_vec());
    let mut diss = [0.0];
    let mut states = vec![GalerkinState { time: 0.0, a: a.clone(), adot: ad.clone() }];
    let mut dissipation = vec![0.0];
    for step in 1..=n_steps {
        stepper.step(&sys, &mut a, &mut ad, &mut diss, dt);
        if a.iter().chain(&ad).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        if step % config.output_stride == 0 || step == n_steps {
            states.push(GalerkinState { time: step as f64 * dt, a: a.clone(), adot: ad.clone() });
            dissipation.push(diss[0]);
        }
    }
    Ok(GalerkinSeries { states, dissipation, mu, energy: energy.spec().clone() })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub energy: Vec<f64>,
    pub dissipation: Vec<f64>,
    /// `|E(t) + D(t) − E(0)|`.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// `max_t |E(t) + D(t) − E(0)| / |E(0)|`.
    pub max_relative_residual: f64,
}

/// `E(t) = ½Σ|ȧ_j|² + V(a)` with the dissipation ledger and the residual
/// of the energy identity.
pub fn energy_report(series: &GalerkinSeries, energy: &StoredEnergy, basis: &EigenBasis) -> Result<EnergyReport> {
    check_pair(basis, energy)?;
    let mut e = Vec::with_capacity(series.states.len());
    for s in &series.states {
        let kinetic = 0.5 * s.adot.iter().map(|x| x * x).sum::<f64>();
        e.push(kinetic + potential_and_gradient(&s.a, basis, energy, None));
    }
    let e0 = e.first().copied().unwrap_or(0.0);
    let residual: Vec<f64> = e.iter().zip(&series.dissipation).map(|(e, d)| (e + d - e0).abs()).collect();
    let max_residual = residual.iter().copied().fold(0.0, f64::max);
    let max_relative_residual = if e0 != 0.0 { max_residual / e0.abs() } else { max_residual };
    Ok(EnergyReport { times: series.times(), energy: e, dissipation: series.dissipation.clone(), residual, max_residual, max_relative_residual })
}

/// Space-time cells and bin geometry of a gradient histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YoungSpec {
    /// Number of cells along each axis.
    pub space_cells: Vec<usize>,
    pub time_cells: usize,
    /// Bins per matrix entry; 32 for `d = 1` and 8 otherwise when absent.
    pub bins_per_entry: Option<usize>,
    /// Gauss-Legendre nodes per cell and axis.
    pub nodes_per_cell: usize,
}

impl YoungSpec {
    pub fn uniform(dim: usize, cells_per_axis: usize, time_cells: usize) -> Self {
        Self { space_cells: vec![cells_per_axis; dim], time_cells, bins_per_entry: None, nodes_per_cell: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoungCell {
    /// `[lo, hi]` per space axis, then the time interval.
    pub bounds: Vec<[f64; 2]>,
    /// Occupied bins as multi-indices.
    pub bins: Vec<Vec<usize>>,
    /// Weight in each occupied bin; sums to one.
    pub counts: Vec<f64>,
    /// Weighted mean of the sampled gradients.
    pub mean: Vec<f64>,
    /// Weighted mean of `|Du|²`.
    pub second_moment: f64,
}

/// Per-cell histograms of `Du^N` over a common uniform bin grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YoungHistogram {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins_per_entry: usize,
    pub cells: Vec<YoungCell>,
}

impl YoungHistogram {
    pub fn bin_width(&self, entry: usize) -> f64 {
        (self.hi[entry] - self.lo[entry]) / self.bins_per_entry as f64
    }

    /// Mean of the histogram of `cell` using bin centers.
    pub fn histogram_mean(&self, cell: &YoungCell) -> Vec<f64> {
        let mut m = vec![0.0; self.lo.len()];
        for (bin, w) in cell.bins.iter().zip(&cell.counts) {
            for (e, &k) in bin.iter().enumerate() {
                m[e] += w * (self.lo[e] + (k as f64 + 0.5) * self.bin_width(e));
            }
        }
        m
    }

    /// `(1/(T|U|)) ∫∫ |Du|²` assembled from the cells.
    pub fn global_second_moment(&self) -> f64 {
        let mut total = 0.0;
        let mut volume = 0.0;
        for c in &self.cells {
            let v: f64 = c.bounds.iter().map(|b| b[1] - b[0]).product();
            total += v * c.second_moment;
            volume += v;
        }
        total / volume
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer(writer, self).map_err(|e| Error::Io(e.into()))
    }
}

/// Histograms of `Du^N(x, t)` per space-time cell. Space samples are
/// Gauss-Legendre nodes of each cell, time samples the stored states with
/// trapezoid weights.
pub fn young_histogram(series: &GalerkinSeries, basis: &EigenBasis, spec: &YoungSpec) -> Result<YoungHistogram> {
    let d = basis.dim();
    let ne = d * d;
    if series.states.is_empty() {
        return Err(invalid("empty series"));
    }
    if spec.space_cells.len() != d || spec.space_cells.contains(&0) || spec.time_cells == 0 || spec.nodes_per_cell == 0 {
        return Err(invalid("cell counts must be positive, one per axis"));
    }
    let nb = spec.bins_per_entry.unwrap_or(if d == 1 { 32 } else { 8 });
    if nb == 0 {
        return Err(invalid("need at least one bin per entry"));
    }
    let times = series.times();
    let last = times.len() - 1;
    let cuts: Vec<usize> = (0..=spec.time_cells).map(|c| (c as f64 * last as f64 / spec.time_cells as f64).round() as usize).collect();

    let mut space_cells: Vec<Vec<[f64; 2]>> = vec![Vec::new()];
    for a in 0..d {
        let h = basis.domain().lengths()[a] / spec.space_cells[a] as f64;
        let mut next = Vec::new();
        for prefix in &space_cells {
            for c in 0..spec.space_cells[a] {
                let mut b = prefix.clone();
                b.push([c as f64 * h, (c + 1) as f64 * h]);
                next.push(b);
            }
        }
        space_cells = next;
    }

    struct Raw {
        bounds: Vec<[f64; 2]>,
        weights: Vec<f64>,
        values: Vec<f64>,
    }
    let mut raws = Vec::new();
    let mut grad = vec![0.0; ne];
    for tc in 0..spec.time_cells {
        let (k0, k1) = (cuts[tc], cuts[tc + 1]);
        for sc in &space_cells {
            let mut bounds = sc.clone();
            bounds.push([times[k0], times[k1]]);
            if k1 <= k0 {
                return Err(Error::EmptyCell(format!("{bounds:?}")));
            }
            let tw = trapezoid_weights(&times[k0..=k1]);
            let axes: Vec<(Vec<f64>, Vec<f64>)> = sc.iter().map(|b| gauss_legendre(spec.nodes_per_cell, b[0], b[1])).collect::<Result<_>>()?;
            let mut weights = Vec::new();
            let mut values = Vec::new();
            let nodes_total = spec.nodes_per_cell.pow(d as u32);
            let mut x = vec![0.0; d];
            for (k, w_t) in (k0..=k1).zip(&tw) {
                let state = &series.states[k];
                for p in 0..nodes_total {
                    let mut rem = p;
                    let mut w = *w_t;
                    for a in 0..d {
                        let i = rem % spec.nodes_per_cell;
                        rem /= spec.nodes_per_cell;
                        x[a] = axes[a].0[i];
                        w *= axes[a].1[i];
                    }
                    basis.gradient_at(&state.a, &x, &mut grad);
                    weights.push(w);
                    values.extend_from_slice(&grad);
                }
            }
            raws.push(Raw { bounds, weights, values });
        }
    }

    let mut lo = vec![f64::INFINITY; ne];
    let mut hi = vec![f64::NEG_INFINITY; ne];
    for r in &raws {
        for chunk in r.values.chunks(ne) {
            for e in 0..ne {
                lo[e] = lo[e].min(chunk[e]);
                hi[e] = hi[e].max(chunk[e]);
            }
        }
    }
    for e in 0..ne {
        let span = hi[e] - lo[e];
        if span < 1e-12 {
            lo[e] -= 0.5;
            hi[e] += 0.5;
        } else {
            lo[e] -= 1e-9 * span;
            hi[e] += 1e-9 * span;
        }
    }

    let mut cells = Vec::with_capacity(raws.len());
    for r in raws {
        let total: f64 = r.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::EmptyCell(format!("{:?}", r.bounds)));
        }
        let mut hist: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        let mut mean = vec![0.0; ne];
        let mut second = 0.0;
        for (w, chunk) in r.weights.iter().zip(r.values.chunks(ne)) {
            let wn = w / total;
            let bin: Vec<usize> = (0..ne)
                .map(|e| (((chunk[e] - lo[e]) / (hi[e] - lo[e]) * nb as f64).floor() as usize).min(nb - 1))
                .collect();
            *hist.entry(bin).or_insert(0.0) += wn;
            for e in 0..ne {
                mean[e] += wn * chunk[e];
            }
            second += wn * chunk.iter().map(|c| c * c).sum::<f64>();
        }
        let (bins, counts) = hist.into_iter().unzip();
        cells.push(YoungCell { bounds: r.bounds, bins, counts, mean, second_moment: second });
    }
    Ok(YoungHistogram { lo, hi, bins_per_entry: nb, cells })
}

/// A finished Galerkin run with its basis.
#[derive(Debug, Clone)]
pub struct GalerkinRun {
    pub basis: EigenBasis,
    pub series: GalerkinSeries,
}

/// `‖Du^N − Du^{N'}‖` in `L²(U × (0,T))`, both fields evaluated on the
/// grid of the larger basis and the common output times.
pub fn cauchy_gradient_check(small: &GalerkinRun, large: &GalerkinRun) -> Result<f64> {
    let (bs, bl) = (&small.basis, &large.basis);
    if bs.domain() != bl.domain() {
        return Err(invalid("runs live on different domains"));
    }
    if bs.len() > bl.len() || bs.modes() != &bl.modes()[..bs.len()] {
        return Err(invalid("the smaller basis must be a leading part of the larger one"));
    }
    if small.series.mu != large.series.mu || small.series.energy != large.series.energy {
        return Err(invalid("runs differ in damping or stored energy"));
    }
    let ts = small.series.times();
    let tl = large.series.times();
    if ts.len() != tl.len() || ts.iter().zip(&tl).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(invalid("runs have different output times"));
    }
    let d = bl.dim();
    let weights = trapezoid_weights(&tl);
    let mut diff = vec![0.0; bl.len() * d];
    let mut ga = vec![0.0; d * d];
    let mut total = 0.0;
    for ((ss, sl), wt) in small.series.states.iter().zip(&large.series.states).zip(&weights) {
        diff.copy_from_slice(&sl.a);
        let mut space = 0.0;
        for k in 0..ss.a.len() {
            diff[k] -= ss.a[k];
        }
        for p in 0..bl.n_nodes() {
            bl.gradient_at_node(&diff, p, &mut ga);
            space += bl.weights[p] * ga.iter().map(|c| c * c).sum::<f64>();
        }
        total += wt * space;
    }
    Ok(total.sqrt())
}

/// `Π x_i(ℓ_i − x_i)` times `direction`; the default initial displacement.
pub fn bump_field(domain: &BoxDomain, direction: &[f64]) -> impl Fn(&[f64], &mut [f64]) {
    let lengths = domain.lengths().to_vec();
    let direction = direction.to_vec();
    move |x, out| {
        let s: f64 = x.iter().zip(&lengths).map(|(x, l)| x * (l - x)).product();
        out.iter_mut().zip(&direction).for_each(|(o, d)| *o = s * d);
    }
}
