//! Sticky particles on the line.
//!
//! Particles follow `γ̈_i = −Σ_j m_j W'(γ_i − γ_j)` until two of them meet;
//! colliding particles then move together as one cluster whose velocity is
//! fixed by momentum conservation. The resulting flow map `X(t): x_i ↦ γ_i(t)`
//! pushes `ρ₀ = Σ m_i δ_{x_i}` forward to a weak solution of the pressureless
//! Euler system with interaction `W`.
//!
//! Collisions are located by bisection on the step map and merged as
//! connected runs of clusters whose gap is below `eps_merge`.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::jeans_vlasov::InteractionPotential;
use crate::measures::{fmt17, EmpiricalMeasure};
use crate::newton::{CheckReport, IntegratorConfig, Scheme, SecondOrderSystem, Stepper};
use crate::quadrature::trapezoid_weights;

/// Built-in initial velocity profiles with a known total variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum V0Profile {
    /// `v0(x) = slope·x + intercept`.
    Affine { slope: f64, intercept: f64 },
    /// Linear interpolation through `(x, v)` knots, constant outside.
    PiecewiseLinear { knots: Vec<[f64; 2]> },
}

impl V0Profile {
    pub fn validate(&self) -> Result<()> {
        match self {
            V0Profile::Affine { slope, intercept } => {
                if !slope.is_finite() || !intercept.is_finite() {
                    return Err(invalid("affine profile must be finite"));
                }
            }
            V0Profile::PiecewiseLinear { knots } => {
                if knots.is_empty() {
                    return Err(invalid("piecewise-linear profile needs at least one knot"));
                }
                if knots.windows(2).any(|k| !(k[0][0] < k[1][0])) {
                    return Err(invalid("knots must have strictly increasing x"));
                }
                if knots.iter().flatten().any(|c| !c.is_finite()) {
                    return Err(invalid("knots must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn velocity(&self, x: f64) -> f64 {
        match self {
            V0Profile::Affine { slope, intercept } => slope * x + intercept,
            V0Profile::PiecewiseLinear { knots } => {
                let first = knots[0];
                let last = knots[knots.len() - 1];
                if x <= first[0] {
                    return first[1];
                }
                if x >= last[0] {
                    return last[1];
                }
                let k = knots.partition_point(|k| k[0] <= x);
                let (a, b) = (knots[k - 1], knots[k]);
                a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// `∫_lo^hi |v0'|` for `lo ≤ hi`.
    pub fn variation(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        match self {
            V0Profile::Affine { slope, .. } => slope.abs() * (hi - lo),
            V0Profile::PiecewiseLinear { knots } => knots
                .windows(2)
                .map(|k| {
                    let overlap = (hi.min(k[1][0]) - lo.max(k[0][0])).max(0.0);
                    overlap * ((k[1][1] - k[0][1]) / (k[1][0] - k[0][0])).abs()
                })
                .sum(),
        }
    }
}

type VariationFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Ordered initial positions with velocities, masses and interaction.
#[derive(Clone)]
pub struct StickyInitialData {
    positions: Vec<f64>,
    velocities: Vec<f64>,
    masses: Vec<f64>,
    variation: Option<VariationFn>,
    potential: InteractionPotential,
}

impl std::fmt::Debug for StickyInitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StickyInitialData")
            .field("positions", &self.positions)
            .field("velocities", &self.velocities)
            .field("masses", &self.masses)
            .field("has_variation", &self.variation.is_some())
            .field("potential", &self.potential)
            .finish()
    }
}

impl StickyInitialData {
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>, masses: Vec<f64>, potential: InteractionPotential) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(invalid("need at least one particle"));
        }
        if velocities.len() != n || masses.len() != n {
            return Err(Error::DimensionMismatch(velocities.len().max(masses.len()), n));
        }
        if potential.dim() != 1 {
            return Err(invalid("sticky particles live on the line; interaction must be one-dimensional"));
        }
        if positions.iter().chain(&velocities).any(|c| !c.is_finite()) {
            return Err(invalid("initial data must be finite"));
        }
        if positions.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(invalid("positions must be strictly increasing"));
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
        Ok(Self { positions, velocities, masses, variation: None, potential })
    }

    /// Velocities sampled from `profile`, whose total variation is attached.
    pub fn from_profile(positions: Vec<f64>, masses: Vec<f64>, profile: V0Profile, potential: InteractionPotential) -> Result<Self> {
        profile.validate()?;
        let velocities = positions.iter().map(|&x| profile.velocity(x)).collect();
        let data = Self::new(positions, velocities, masses, potential)?;
        Ok(data.with_variation(move |a, b| profile.variation(a, b)))
    }

    /// Attaches `(lo, hi) ↦ ∫_lo^hi |v0'|`.
    pub fn with_variation<F>(mut self, variation: F) -> Self
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        self.variation = Some(Arc::new(variation));
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Whether the total variation of `v0` is known (needed by the time-zero bound).
    pub fn has_variation(&self) -> bool {
        self.variation.is_some()
    }

    pub fn potential(&self) -> &InteractionPotential {
        &self.potential
    }

    pub fn initial_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::from_flat(1, self.positions.clone(), self.masses.clone())
    }
}

/// Seeded test data: `n` ordered points in `[−1, 1]`, random masses and a
/// compressive piecewise-linear velocity profile, so that clusters form.
pub fn seeded_initial_data(n: usize, seed: u64, potential: InteractionPotential) -> Result<StickyInitialData> {
    if n == 0 {
        return Err(invalid("need at least one particle"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    positions.sort_by(f64::total_cmp);
    for k in 1..n {
        if positions[k] <= positions[k - 1] + 1e-6 {
            positions[k] = positions[k - 1] + 1e-6;
        }
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    let masses: Vec<f64> = raw.iter().map(|m| m / total).collect();
    let knots: Vec<[f64; 2]> = (0..6)
        .map(|k| {
            let x = -1.25 + 0.5 * k as f64;
            [x, -1.5 * x + rng.gen_range(-0.5..0.5)]
        })
        .collect();
    StickyInitialData::from_profile(positions, masses, V0Profile::PiecewiseLinear { knots }, potential)
}

/// Step size and collision tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StickyConfig {
    pub integrator: IntegratorConfig,
    /// Width of the final bisection bracket for a collision time.
    pub eps_event: f64,
    /// Clusters closer than this at a collision are merged.
    pub eps_merge: f64,
}

impl Default for StickyConfig {
    fn default() -> Self {
        Self { integrator: IntegratorConfig { scheme: Scheme::Rk4, ..IntegratorConfig::default() }, eps_event: 1e-10, eps_merge: 1e-9 }
    }
}

impl StickyConfig {
    pub fn with_dt(dt: f64) -> Self {
        let mut c = Self::default();
        c.integrator.dt = dt;
        c
    }
}

/// A cluster alive during one segment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterInfo {
    /// Smallest initial index among the members.
    pub id: usize,
    pub members: Vec<usize>,
    pub mass: f64,
}

/// Cluster positions, velocities, accelerations and accumulated force
/// impulse (since the segment start) at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub impulse: Vec<f64>,
}

/// Time interval without collisions.
#[derive(Debug, Clone)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    /// Clusters in spatial order.
    pub clusters: Vec<ClusterInfo>,
    /// Cluster slot of every initial particle.
    pub slot_of: Vec<usize>,
    /// `∫_0^start` of the acceleration of every particle.
    pub impulse_at_start: Vec<f64>,
    pub samples: Vec<Sample>,
}

/// One collision: all listed particles form a single cluster afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    pub merged_indices: Vec<usize>,
    pub pre_velocities: Vec<f64>,
    pub pre_masses: Vec<f64>,
    pub post_velocity: f64,
    pub position: f64,
}

impl MergeEvent {
    /// `|Σ M_c V_c(t−) − (Σ M_c)·V(t+)|`.
    pub fn momentum_defect(&self) -> f64 {
        let before: f64 = self.pre_masses.iter().zip(&self.pre_velocities).map(|(m, v)| m * v).sum();
        let mass: f64 = self.pre_masses.iter().sum();
        (before - mass * self.post_velocity).abs()
    }
}

/// Sticky trajectories of all particles on `[0, T]`.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub segments: Vec<Segment>,
    pub events: Vec<MergeEvent>,
    pub t_final: f64,
    pub config: StickyConfig,
    data: StickyInitialData,
}

/// Position and one-sided velocities of a particle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPoint {
    pub position: f64,
    pub velocity_left: f64,
    pub velocity_right: f64,
}

struct ClusterSystem<'a> {
    masses: &'a [f64],
    w: &'a InteractionPotential,
}

impl SecondOrderSystem for ClusterSystem<'_> {
    fn accel(&self, x: &[f64], _v: &[f64], a: &mut [f64]) {
        for c in 0..x.len() {
            let mut f = 0.0;
            for d in 0..x.len() {
                if d != c {
                    f += self.masses[d] * self.w.dw1(x[c] - x[d]);
                }
            }
            a[c] = -f;
        }
    }

    fn aux_rate(&self, _x: &[f64], _v: &[f64], a: &[f64], out: &mut [f64]) {
        out.copy_from_slice(a);
    }
}

#[derive(Clone)]
struct Phase {
    x: Vec<f64>,
    v: Vec<f64>,
    impulse: Vec<f64>,
}

impl Phase {
    fn min_gap(&self) -> f64 {
        self.x.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min)
    }
}

/// Cubic Hermite interpolation of `p` on `[t0, t1]` with slopes `m0`, `m1`;
/// returns value and derivative at `t`.
fn hermite(t0: f64, t1: f64, p0: f64, p1: f64, m0: f64, m1: f64, t: f64) -> (f64, f64) {
    let h = t1 - t0;
    if h <= 0.0 {
        return (p0, m0);
    }
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    let value = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * h * m1;
    let slope = ((6.0 * s2 - 6.0 * s) * p0 + (-6.0 * s2 + 6.0 * s) * p1) / h + (3.0 * s2 - 4.0 * s + 1.0) * m0 + (3.0 * s2 - 2.0 * s) * m1;
    (value, slope)
}

/// Smallest value in `(0, 1)` of the cubic Hermite interpolant of a gap,
/// with its location.
fn hermite_min(p0: f64, p1: f64, m0: f64, m1: f64) -> Option<(f64, f64)> {
    let a = 2.0 * p0 + m0 - 2.0 * p1 + m1;
    let b = -3.0 * p0 - 2.0 * m0 + 3.0 * p1 - m1;
    let c = m0;
    let eval = |s: f64| ((a * s + b) * s + c) * s + p0;
    let (qa, qb, qc) = (3.0 * a, 2.0 * b, c);
    let mut roots = Vec::with_capacity(2);
    if qa.abs() < 1e-300 {
        if qb != 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let r = disc.sqrt();
            roots.push((-qb - r) / (2.0 * qa));
            roots.push((-qb + r) / (2.0 * qa));
        }
    }
    roots
        .into_iter()
        .filter(|s| *s > 0.0 && *s < 1.0)
        .map(|s| (eval(s), s))
        .min_by(|x, y| x.0.total_cmp(&y.0))
}

struct Evolver<'a> {
    data: &'a StickyInitialData,
    config: StickyConfig,
    parent: Vec<usize>,
    steps: usize,
}

impl Evolver<'_> {
    fn find(&mut self, i: usize) -> usize {
        let mut root = i;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = i;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi] = lo;
    }

    fn advance(&self, masses: &[f64], start: &Phase, h: f64) -> Phase {
        let sys = ClusterSystem { masses, w: &self.data.potential };
        let mut stepper = Stepper::new(self.config.integrator.scheme, start.x.len(), start.x.len());
        let mut p = start.clone();
        stepper.step(&sys, &mut p.x, &mut p.v, &mut p.impulse, h);
        p
    }

    fn accel(&self, masses: &[f64], p: &Phase) -> Vec<f64> {
        let sys = ClusterSystem { masses, w: &self.data.potential };
        let mut a = vec![0.0; p.x.len()];
        sys.accel(&p.x, &p.v, &mut a);
        a
    }

    fn count_step(&mut self, t_final: f64) -> Result<()> {
        self.steps += 1;
        if self.steps > self.config.integrator.max_steps {
            return Err(Error::StepBudget { max_steps: self.config.integrator.max_steps, t_final });
        }
        Ok(())
    }

    /// Offset in `(0, h]` of the first collision during the step, if any.
    fn locate_event(&mut self, masses: &[f64], start: &Phase, end: &Phase, h: f64, t_final: f64) -> Result<Option<f64>> {
        let eps_merge = self.config.eps_merge;
        let mut hi = None;
        if end.min_gap() <= 0.0 {
            hi = Some(h);
        } else {
            let mut best: Option<(f64, f64)> = None;
            for k in 0..start.x.len().saturating_sub(1) {
                let g0 = start.x[k + 1] - start.x[k];
                let g1 = end.x[k + 1] - end.x[k];
                let d0 = (start.v[k + 1] - start.v[k]) * h;
                let d1 = (end.v[k + 1] - end.v[k]) * h;
                if let Some((value, s)) = hermite_min(g0, g1, d0, d1) {
                    if value <= eps_merge && best.is_none_or(|b| s < b.1) {
                        best = Some((value, s));
                    }
                }
            }
            if let Some((_, s)) = best {
                let tau = s * h;
                self.count_step(t_final)?;
                let mid = self.advance(masses, start, tau);
                let gap = mid.min_gap();
                if gap <= 0.0 {
                    hi = Some(tau);
                } else if gap <= eps_merge {
                    return Ok(Some(tau));
                }
            }
        }
        let Some(mut hi) = hi else { return Ok(None) };
        let mut lo = 0.0;
        while hi - lo > self.config.eps_event {
            let mid = 0.5 * (lo + hi);
            self.count_step(t_final)?;
            if self.advance(masses, start, mid).min_gap() <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(Some(hi))
    }
}

fn sample_of(t: f64, p: &Phase, a: Vec<f64>) -> Sample {
    Sample { t, x: p.x.clone(), v: p.v.clone(), a, impulse: p.impulse.clone() }
}

/// Runs the sticky particle dynamics up to `t_final`.
pub fn evolve(data: &StickyInitialData, t_final: f64, config: &StickyConfig) -> Result<FlowMap> {
    if !(config.eps_event > 0.0) || !(config.eps_merge > 0.0) {
        return Err(invalid("event tolerances must be positive"));
    }
    let (n_steps, h) = config.integrator.grid(t_final)?;
    let n = data.len();
    let mut ev = Evolver { data, config: *config, parent: (0..n).collect(), steps: 0 };

    let mut clusters: Vec<ClusterInfo> = (0..n).map(|i| ClusterInfo { id: i, members: vec![i], mass: data.masses[i] }).collect();
    let mut phase = Phase { x: data.positions.clone(), v: data.velocities.clone(), impulse: vec![0.0; n] };
    let mut impulse_at_start = vec![0.0; n];
    let mut segments = Vec::new();
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut k = 0usize;

    let new_segment = |t: f64, clusters: &[ClusterInfo], impulse: &[f64]| {
        let mut slot_of = vec![0; n];
        for (s, c) in clusters.iter().enumerate() {
            for &i in &c.members {
                slot_of[i] = s;
            }
        }
        Segment { start: t, end: t, clusters: clusters.to_vec(), slot_of, impulse_at_start: impulse.to_vec(), samples: Vec::new() }
    };

    let mut masses: Vec<f64> = clusters.iter().map(|c| c.mass).collect();
    let mut seg = new_segment(t, &clusters, &impulse_at_start);
    seg.samples.push(sample_of(t, &phase, ev.accel(&masses, &phase)));

    loop {
        // merge everything that touches at the current time
        if phase.min_gap() <= config.eps_merge {
            seg.end = t;
            let mut merged: Vec<ClusterInfo> = Vec::new();
            let mut next = Phase { x: Vec::new(), v: Vec::new(), impulse: Vec::new() };
            let mut run_start = 0;
            for c in 0..clusters.len() {
                let closes_run = c + 1 == clusters.len() || phase.x[c + 1] - phase.x[c] > config.eps_merge;
                if !closes_run {
                    continue;
                }
                let run = run_start..=c;
                run_start = c + 1;
                let mass: f64 = run.clone().map(|r| clusters[r].mass).sum();
                let mom: f64 = run.clone().map(|r| clusters[r].mass * phase.v[r]).sum();
                let pos: f64 = run.clone().map(|r| clusters[r].mass * phase.x[r]).sum::<f64>() / mass;
                let vel = mom / mass;
                let mut members: Vec<usize> = run.clone().flat_map(|r| clusters[r].members.iter().copied()).collect();
                members.sort_unstable();
                if run.clone().count() > 1 {
                    for r in run.clone() {
                        ev.union(clusters[*run.start()].id, clusters[r].id);
                    }
                    events.push(MergeEvent {
                        time: t,
                        merged_indices: members.clone(),
                        pre_velocities: run.clone().map(|r| phase.v[r]).collect(),
                        pre_masses: run.clone().map(|r| clusters[r].mass).collect(),
                        post_velocity: vel,
                        position: pos,
                    });
                }
                let id = ev.find(members[0]);
                merged.push(ClusterInfo { id, members, mass });
                next.x.push(pos);
                next.v.push(vel);
                next.impulse.push(0.0);
            }
            if events.len() > n.saturating_sub(1) {
                return Err(Error::Internal(format!("{} merges among {n} particles", events.len())));
            }
            for (s, c) in clusters.iter().enumerate() {
                for &i in &c.members {
                    impulse_at_start[i] += phase.impulse[s];
                }
            }
            segments.push(seg);
            clusters = merged;
            phase = next;
            masses = clusters.iter().map(|c| c.mass).collect();
            seg = new_segment(t, &clusters, &impulse_at_start);
            seg.samples.push(sample_of(t, &phase, ev.accel(&masses, &phase)));
        }
        if k >= n_steps {
            break;
        }
        let t_next = if k + 1 == n_steps { t_final } else { (k + 1) as f64 * h };
        let step = t_next - t;
        ev.count_step(t_final)?;
        let trial = ev.advance(&masses, &phase, step);
        if trial.x.iter().chain(&trial.v).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        match ev.locate_event(&masses, &phase, &trial, step, t_final)? {
            None => {
                phase = trial;
                t = t_next;
                k += 1;
            }
            Some(offset) => {
                if step - offset < 0.5 * config.eps_event {
                    phase = trial;
                    t = t_next;
                    k += 1;
                } else {
                    ev.count_step(t_final)?;
                    phase = ev.advance(&masses, &phase, offset);
                    t += offset;
                }
                if phase.min_gap() > config.eps_merge {
                    return Err(Error::Internal(format!("located collision at t={t} left no touching clusters")));
                }
            }
        }
        seg.samples.push(sample_of(t, &phase, ev.accel(&masses, &phase)));
    }
    seg.end = t;
    segments.push(seg);
    Ok(FlowMap { segments, events, t_final, config: *config, data: data.clone() })
}

/// Cluster state at time `t` taken from one side of a collision.
struct ClusterView<'a> {
    segment: &'a Segment,
    x: Vec<f64>,
    v: Vec<f64>,
    impulse: Vec<f64>,
}

impl FlowMap {
    pub fn data(&self) -> &StickyInitialData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.events.iter().map(|e| e.time).collect();
        times.dedup();
        times
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.t_final + 1e-12) {
            return Err(Error::TimeOutOfRange { t, start: 0.0, end: self.t_final });
        }
        Ok(())
    }

    pub fn at_event(&self, t: f64) -> bool {
        let tol = 10.0 * self.config.eps_event;
        self.events.iter().any(|e| (e.time - t).abs() <= tol)
    }

    /// Segment holding `t`; `right` picks the later one at a collision time.
    fn segment_at(&self, t: f64, right: bool) -> &Segment {
        let idx = if right {
            self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
        } else {
            self.segments.partition_point(|s| s.end < t).min(self.segments.len() - 1)
        };
        &self.segments[idx]
    }

    fn view(&self, t: f64, right: bool) -> ClusterView<'_> {
        let seg = self.segment_at(t, right);
        let samples = &seg.samples;
        let k = samples.partition_point(|s| s.t <= t);
        let nc = seg.clusters.len();
        if k == 0 || samples[k - 1].t == t || k == samples.len() {
            let s = &samples[k.saturating_sub(1).min(samples.len() - 1)];
            return ClusterView { segment: seg, x: s.x.clone(), v: s.v.clone(), impulse: s.impulse.clone() };
        }
        let (s0, s1) = (&samples[k - 1], &samples[k]);
        let mut view = ClusterView { segment: seg, x: vec![0.0; nc], v: vec![0.0; nc], impulse: vec![0.0; nc] };
        for c in 0..nc {
            view.x[c] = hermite(s0.t, s1.t, s0.x[c], s1.x[c], s0.v[c], s1.v[c], t).0;
            view.v[c] = hermite(s0.t, s1.t, s0.v[c], s1.v[c], s0.a[c], s1.a[c], t).0;
            view.impulse[c] = hermite(s0.t, s1.t, s0.impulse[c], s1.impulse[c], s0.a[c], s1.a[c], t).0;
        }
        view
    }

    /// `X(x_i, t)` with one-sided velocities of particle `index`.
    pub fn eval(&self, index: usize, t: f64) -> Result<FlowPoint> {
        if index >= self.len() {
            return Err(Error::UnknownIndex(index));
        }
        self.check_time(t)?;
        let right = self.view(t, true);
        let left = self.view(t, false);
        let sr = right.segment.slot_of[index];
        let sl = left.segment.slot_of[index];
        Ok(FlowPoint { position: right.x[sr], velocity_left: left.v[sl], velocity_right: right.v[sr] })
    }

    /// Same as [`FlowMap::eval`] but addressed by the initial position.
    pub fn eval_at(&self, y: f64, t: f64) -> Result<FlowPoint> {
        let index = self
            .data
            .positions
            .iter()
            .position(|&x| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
            .ok_or_else(|| invalid(format!("{y} is not an initial position")))?;
        self.eval(index, t)
    }

    /// Positions `γ_i(t)` of every particle.
    pub fn positions_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let view = self.view(t, true);
        Ok(view.segment.slot_of.iter().map(|&s| view.x[s]).collect())
    }

    /// Right-limit velocities `γ̇_i(t+)`.
    pub fn velocities_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let view = self.view(t, true);
        Ok(view.segment.slot_of.iter().map(|&s| view.v[s]).collect())
    }

    /// `J_i(t) = ∫_0^t γ̈_i`, the accumulated force per unit mass.
    pub fn impulses_at(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let view = self.view(t, true);
        Ok((0..self.len()).map(|i| view.segment.impulse_at_start[i] + view.impulse[view.segment.slot_of[i]]).collect())
    }

    /// Clusters alive right after `t` with positions and velocities.
    pub fn clusters_at(&self, t: f64) -> Result<Vec<(ClusterInfo, f64, f64)>> {
        self.check_time(t)?;
        let view = self.view(t, true);
        Ok(view.segment.clusters.iter().enumerate().map(|(c, info)| (info.clone(), view.x[c], view.v[c])).collect())
    }

    /// `ρ_t = X(t)_# ρ₀`.
    pub fn density_at(&self, t: f64) -> Result<EmpiricalMeasure> {
        let pos = self.positions_at(t)?;
        let mut index = 0usize;
        self.data.initial_measure()?.push_forward(|_| {
            let p = pos[index];
            index += 1;
            Some(vec![p])
        })
    }

    /// All stored times: grid times and both sides of every collision.
    pub fn sample_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.segments.iter().flat_map(|s| s.samples.iter().map(|x| x.t)).collect();
        times.dedup();
        times
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "cluster_id", "position", "velocity_left", "velocity_right", "mass"])?;
        for (si, seg) in self.segments.iter().enumerate() {
            let last = seg.samples.len() - 1;
            let prev = si.checked_sub(1).map(|p| &self.segments[p]);
            for (k, s) in seg.samples.iter().enumerate() {
                if k == last && si + 1 < self.segments.len() {
                    continue;
                }
                for (c, info) in seg.clusters.iter().enumerate() {
                    let left = match (k, prev) {
                        (0, Some(p)) => p.samples[p.samples.len() - 1].v[p.slot_of[info.id]],
                        _ => s.v[c],
                    };
                    w.write_record([
                        fmt17(s.t),
                        info.id.to_string(),
                        fmt17(s.x[c]),
                        fmt17(left),
                        fmt17(s.v[c]),
                        fmt17(info.mass),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.events).map_err(|e| Error::Io(e.into()))
    }
}

/// One row of the flow-map CSV.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct FlowMapRow {
    pub t: f64,
    pub cluster_id: usize,
    pub position: f64,
    pub velocity_left: f64,
    pub velocity_right: f64,
    pub mass: f64,
}

pub fn read_flow_map_csv<R: Read>(reader: R) -> Result<Vec<FlowMapRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<FlowMapRow>, _>>()?;
    Ok(rows)
}

pub fn read_events_json<R: Read>(reader: R) -> Result<Vec<MergeEvent>> {
    serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))
}

/// `E = ½ Σ M_c V_c² + ½ Σ M_c M_d W(X_c − X_d)` over clusters.
pub fn cluster_energy(w: &InteractionPotential, masses: &[f64], x: &[f64], v: &[f64]) -> f64 {
    let mut e = 0.0;
    for c in 0..x.len() {
        e += 0.5 * masses[c] * v[c] * v[c];
        let mut row = 0.0;
        for d in 0..x.len() {
            row += masses[d] * w.w1(x[c] - x[d]);
        }
        e += 0.5 * masses[c] * row;
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyDrop {
    pub time: f64,
    pub before: f64,
    pub after: f64,
    /// Whether the merging clusters had different velocities.
    pub inelastic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergySeries {
    /// `(t, E(t+))` at every stored time.
    pub samples: Vec<(f64, f64)>,
    pub drops: Vec<EnergyDrop>,
}

impl EnergySeries {
    /// Largest increase between consecutive samples.
    pub fn max_increase(&self) -> f64 {
        self.samples.windows(2).map(|p| p[1].1 - p[0].1).fold(0.0, f64::max)
    }

    /// Smallest decrease `before − after` among inelastic collisions.
    pub fn min_inelastic_drop(&self) -> Option<f64> {
        self.drops.iter().filter(|d| d.inelastic).map(|d| d.before - d.after).min_by(f64::total_cmp)
    }

    pub fn check(&self) -> CheckReport {
        let mut worst = self.max_increase();
        if let Some(d) = self.min_inelastic_drop() {
            if d <= 0.0 {
                worst = worst.max(1.0);
            }
        }
        CheckReport::new(worst, self.samples.len(), 1e-8)
    }
}

pub fn energy_series(fm: &FlowMap) -> EnergySeries {
    let w = fm.data.potential();
    let mut samples = Vec::new();
    let mut drops = Vec::new();
    for (si, seg) in fm.segments.iter().enumerate() {
        let masses: Vec<f64> = seg.clusters.iter().map(|c| c.mass).collect();
        for (k, s) in seg.samples.iter().enumerate() {
            let e = cluster_energy(w, &masses, &s.x, &s.v);
            if k + 1 == seg.samples.len() && si + 1 < fm.segments.len() {
                let next = &fm.segments[si + 1];
                let nm: Vec<f64> = next.clusters.iter().map(|c| c.mass).collect();
                let after = cluster_energy(w, &nm, &next.samples[0].x, &next.samples[0].v);
                let inelastic = fm
                    .events
                    .iter()
                    .filter(|e| e.time == s.t)
                    .any(|e| e.pre_velocities.iter().any(|v| (v - e.pre_velocities[0]).abs() > 1e-12));
                drops.push(EnergyDrop { time: s.t, before: e, after, inelastic });
                continue;
            }
            samples.push((s.t, e));
        }
    }
    EnergySeries { samples, drops }
}

fn require_positive_modulus(fm: &FlowMap) -> Result<f64> {
    let l = fm.data.potential().modulus();
    if !(l > 0.0) {
        return Err(invalid("this check needs a positive semiconvexity modulus"));
    }
    Ok(l)
}

/// Largest `[(v(x)−v(y))(x−y) − √L coth(√L t)(x−y)²] / (1 + (x−y)²)` over
/// cluster pairs at time `t`, clamped at zero.
pub fn entropy_check(fm: &FlowMap, t: f64) -> Result<CheckReport> {
    if !(t > 0.0) {
        return Err(invalid("the entropy bound needs t > 0"));
    }
    let l = require_positive_modulus(fm)?;
    let clusters = fm.clusters_at(t)?;
    let r = l.sqrt();
    let coef = r / (r * t).tanh();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            let dx = clusters[b].1 - clusters[a].1;
            let lhs = (clusters[b].2 - clusters[a].2) * dx;
            worst = worst.max((lhs - coef * dx * dx) / (1.0 + dx * dx));
            pairs += 1;
        }
    }
    Ok(CheckReport::new(worst, pairs, 1e-8))
}

/// Largest increase of `|γ_i − γ_j| / sinh(√L τ)` from `τ = s` to `τ = t`
/// over particle pairs, clamped at zero.
pub fn qspp_check(fm: &FlowMap, s: f64, t: f64) -> Result<CheckReport> {
    if !(s > 0.0) || !(s <= t) {
        return Err(invalid(format!("need 0 < s <= t, got s={s}, t={t}")));
    }
    let r = require_positive_modulus(fm)?.sqrt();
    let (ps, pt) = (fm.positions_at(s)?, fm.positions_at(t)?);
    let (ss, st) = ((r * s).sinh(), (r * t).sinh());
    let n = ps.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((pt[i] - pt[j]).abs() / st - (ps[i] - ps[j]).abs() / ss);
        }
    }
    Ok(CheckReport::new(worst, n * n.saturating_sub(1) / 2, 1e-8))
}

/// Largest `γ_i(t) − γ_j(t) − [cosh(√L t)(x_i − x_j) + sinh(√L t)/√L · ∫_{x_j}^{x_i}|v0'|]`
/// over ordered pairs `x_j < x_i`, clamped at zero. `L = 0` uses the limits.
pub fn time_zero_bound_check(fm: &FlowMap, t: f64) -> Result<CheckReport> {
    let variation = fm.data.variation.clone().ok_or_else(|| invalid("the time-zero bound needs the variation of v0"))?;
    let l = fm.data.potential().modulus();
    let r = l.sqrt();
    let (ch, sh) = if r > 0.0 { ((r * t).cosh(), (r * t).sinh() / r) } else { (1.0, t) };
    let pos = fm.positions_at(t)?;
    let x = &fm.data.positions;
    let n = x.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let bound = ch * (x[i] - x[j]) + sh * variation(x[j], x[i]);
            worst = worst.max(pos[i] - pos[j] - bound);
        }
    }
    Ok(CheckReport::new(worst, n * n.saturating_sub(1) / 2, 1e-8))
}

/// `|Σ m_i g(γ_i(t)) [γ̇_i(t+) − γ̇_i(s+) − (J_i(t) − J_i(s))]|`.
pub fn averaging_check<G: Fn(f64) -> f64>(fm: &FlowMap, g: G, s: f64, t: f64) -> Result<f64> {
    if !(s >= 0.0) || !(s < t) {
        return Err(invalid(format!("need 0 <= s < t, got s={s}, t={t}")));
    }
    for tau in [s, t] {
        if fm.at_event(tau) {
            return Err(Error::AtEvent { t: tau });
        }
    }
    let (xt, vt, jt) = (fm.positions_at(t)?, fm.velocities_at(t)?, fm.impulses_at(t)?);
    let (vs, js) = (fm.velocities_at(s)?, fm.impulses_at(s)?);
    let total: f64 = fm
        .data
        .masses
        .iter()
        .enumerate()
        .map(|(i, m)| m * g(xt[i]) * (vt[i] - vs[i] - (jt[i] - js[i])))
        .sum();
    Ok(total.abs())
}

/// Largest `|V_c(t) − Σ_{i∈c} m_i (v_i + J_i(t)) / M_c|` over clusters.
pub fn conditional_velocity_check(fm: &FlowMap, t: f64) -> Result<f64> {
    if fm.at_event(t) {
        return Err(Error::AtEvent { t });
    }
    let jt = fm.impulses_at(t)?;
    let mut worst = 0.0f64;
    for (info, _, v) in fm.clusters_at(t)? {
        let avg: f64 = info.members.iter().map(|&i| fm.data.masses[i] * (fm.data.velocities[i] + jt[i])).sum::<f64>() / info.mass;
        worst = worst.max((v - avg).abs());
    }
    Ok(worst)
}

/// Smallest `X(x_{i+1}, t) − X(x_i, t)`; nonnegative when the flow map is monotone.
pub fn monotonicity_gap(fm: &FlowMap, t: f64) -> Result<f64> {
    let pos = fm.positions_at(t)?;
    Ok(pos.windows(2).map(|p| p[1] - p[0]).fold(f64::INFINITY, f64::min))
}

/// A `C¹` test function `φ(x, t)` for the pressureless Euler system.
pub trait SpaceTimeTest {
    fn value(&self, x: f64, t: f64) -> f64;
    fn dt(&self, x: f64, t: f64) -> f64;
    fn dx(&self, x: f64, t: f64) -> f64;
}

/// Spatial factor of a [`CutoffTest`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialProfile {
    Constant(f64),
    Linear,
    Sine { frequency: f64 },
}

/// `φ(x, t) = p(x)·(1 − t/T_c)²` for `t < T_c`, zero afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffTest {
    pub profile: SpatialProfile,
    pub cutoff: f64,
}

impl CutoffTest {
    fn envelope(&self, t: f64) -> (f64, f64) {
        if t >= self.cutoff {
            (0.0, 0.0)
        } else {
            let r = 1.0 - t / self.cutoff;
            (r * r, -2.0 * r / self.cutoff)
        }
    }

    fn spatial(&self, x: f64) -> (f64, f64) {
        match self.profile {
            SpatialProfile::Constant(c) => (c, 0.0),
            SpatialProfile::Linear => (x, 1.0),
            SpatialProfile::Sine { frequency } => ((frequency * x).sin(), frequency * (frequency * x).cos()),
        }
    }
}

impl SpaceTimeTest for CutoffTest {
    fn value(&self, x: f64, t: f64) -> f64 {
        self.spatial(x).0 * self.envelope(t).0
    }

    fn dt(&self, x: f64, t: f64) -> f64 {
        self.spatial(x).0 * self.envelope(t).1
    }

    fn dx(&self, x: f64, t: f64) -> f64 {
        self.spatial(x).1 * self.envelope(t).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EulerResidual {
    pub mass: f64,
    pub momentum: f64,
}

/// Residuals of the weak mass and momentum identities on `[0, T]`; `φ`
/// must vanish at `T`. The time integral is a trapezoid rule per segment.
pub fn euler_weak_residual(fm: &FlowMap, phi: &dyn SpaceTimeTest) -> Result<EulerResidual> {
    let d = &fm.data;
    let mut mass = 0.0;
    let mut momentum = 0.0;
    for i in 0..d.len() {
        let p0 = phi.value(d.positions[i], 0.0);
        mass += d.masses[i] * p0;
        momentum += d.masses[i] * d.velocities[i] * p0;
    }
    for seg in &fm.segments {
        let times: Vec<f64> = seg.samples.iter().map(|s| s.t).collect();
        let weights = trapezoid_weights(&times);
        for (s, w) in seg.samples.iter().zip(&weights) {
            if *w == 0.0 {
                continue;
            }
            let (mut fm_mass, mut fm_mom) = (0.0, 0.0);
            for (c, info) in seg.clusters.iter().enumerate() {
                let (x, v, a) = (s.x[c], s.v[c], s.a[c]);
                let (p, pt, px) = (phi.value(x, s.t), phi.dt(x, s.t), phi.dx(x, s.t));
                fm_mass += info.mass * (pt + v * px);
                fm_mom += info.mass * (v * pt + v * v * px + p * a);
            }
            mass += w * fm_mass;
            momentum += w * fm_mom;
        }
    }
    Ok(EulerResidual { mass: mass.abs(), momentum: momentum.abs() })
}
