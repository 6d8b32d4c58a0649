//! Empirical probability measures.
//!
//! An [`EmpiricalMeasure`] is a finite convex combination of Dirac masses in
//! `R^n`. It is the common currency of the crate: phase-space snapshots of a
//! particle system, spatial marginals, sticky-particle push-forwards and
//! initial data are all stored this way.
//!
//! Narrow convergence is diagnosed with a truncated bounded-Lipschitz metric
//! `Σ_j 2^{-j} |∫h_j dμ − ∫h_j dν|` over a seeded [`LipschitzDictionary`]
//! (a lower-bound surrogate for the full countable family), and in one
//! dimension with the exact 1-Wasserstein distance.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

/// Tolerance below which a weight sum is silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-9;

/// Weighted point cloud representing a probability measure on `R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// Builds a measure from explicit points and weights.
    ///
    /// Weights must be strictly positive. If they sum to 1 within
    /// [`RENORMALIZE_TOL`] they are rescaled to sum to 1; a larger deviation is
    /// an error.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("a measure needs at least one support point"));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch(points.len(), weights.len()));
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(invalid("support points must have dimension >= 1"));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch(dim, p.len()));
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Builds a measure from row-major coordinates (`len = n_points * dim`).
    pub fn from_flat(dim: usize, coords: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.is_empty() {
            return Err(invalid("empty measure"));
        }
        if coords.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch(coords.len(), dim * weights.len()));
        }
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(invalid(format!("non-finite coordinate in point {}", i / dim)));
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > RENORMALIZE_TOL {
            return Err(Error::NotNormalized(total));
        }
        if total != 1.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        Ok(Self { dim, coords, weights })
    }

    /// Equal-weight measure on the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    /// Dirac mass at `p`.
    pub fn dirac(p: Vec<f64>) -> Result<Self> {
        Self::new(vec![p], vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinates.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Image measure `map_# μ`. Weights are carried over unchanged.
    ///
    /// The map returns `None` (or a non-finite point) to signal failure; the
    /// error names the offending support index.
    pub fn push_forward<F>(&self, mut map: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Option<Vec<f64>>,
    {
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut out_dim = None;
        for (index, p) in self.points().enumerate() {
            let image = map(p).ok_or(Error::MapFailed { index })?;
            if image.is_empty() || image.iter().any(|c| !c.is_finite()) {
                return Err(Error::MapFailed { index });
            }
            match out_dim {
                None => out_dim = Some(image.len()),
                Some(d) if d != image.len() => return Err(Error::DimensionMismatch(d, image.len())),
                _ => {}
            }
            coords.extend(image);
        }
        Ok(Self {
            dim: out_dim.unwrap_or(self.dim),
            coords,
            weights: self.weights.clone(),
        })
    }

    /// Coordinate projection onto the contiguous block `start..start + len`.
    pub fn project(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.dim {
            return Err(invalid(format!(
                "projection {}..{} out of range for dimension {}",
                start,
                start + len,
                self.dim
            )));
        }
        self.push_forward(|p| Some(p[start..start + len].to_vec()))
    }

    /// Writes the measure as CSV with header `w,p1,...,pn`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim).map(|k| format!("p{k}")));
        w.write_record(&header)?;
        for (i, p) in self.points().enumerate() {
            let mut row = vec![fmt17(self.weights[i])];
            row.extend(p.iter().map(|&c| fmt17(c)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`EmpiricalMeasure::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("w") || header.len() < 2 {
            return Err(Error::Parse("expected header `w,p1,...,pn`".into()));
        }
        for (k, name) in header.iter().enumerate().skip(1) {
            if name != format!("p{k}") {
                return Err(Error::Parse(format!("unexpected column `{name}`")));
            }
        }
        let dim = header.len() - 1;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut vals = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("`{s}`: {e}")))
            });
            weights.push(vals.next().ok_or_else(|| Error::Parse("empty row".into()))??);
            for v in vals {
                coords.push(v?);
            }
        }
        Self::from_flat(dim, coords, weights)
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `∫ g dμ = Σ_i w_i g(p_i)`.
pub fn moment<G: Fn(&[f64]) -> f64>(mu: &EmpiricalMeasure, g: G) -> f64 {
    mu.points().zip(&mu.weights).map(|(p, w)| w * g(p)).sum()
}

/// Tail integral `∫_{g ≥ R} g dμ` used for uniform-integrability diagnostics.
pub fn tail_mass<G: Fn(&[f64]) -> f64>(mu: &EmpiricalMeasure, g: G, radius: f64) -> Result<f64> {
    if !(radius >= 0.0) {
        return Err(invalid(format!("tail radius must be >= 0, got {radius}")));
    }
    Ok(mu
        .points()
        .zip(&mu.weights)
        .filter_map(|(p, w)| {
            let v = g(p);
            (v >= radius).then_some(w * v)
        })
        .sum())
}

/// A finite seeded family of functions `h_j(x) = tanh(a_j·x + b_j)` with
/// `|a_j| ≤ 1`, so that `‖h_j‖_∞ ≤ 1` and `Lip(h_j) ≤ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzDictionary {
    dim: usize,
    seed: u64,
    slopes: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl LipschitzDictionary {
    pub const DEFAULT_SIZE: usize = 32;

    pub fn new(dim: usize, size: usize, seed: u64) -> Result<Self> {
        if dim == 0 || size == 0 {
            return Err(invalid("dictionary needs dim >= 1 and size >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut slopes = Vec::with_capacity(size);
        let mut offsets = Vec::with_capacity(size);
        for _ in 0..size {
            let mut a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = a.iter().map(|c| c * c).sum::<f64>().sqrt();
            let radius: f64 = rng.gen_range(0.05..1.0);
            if norm > 0.0 {
                a.iter_mut().for_each(|c| *c *= radius / norm);
            }
            slopes.push(a);
            offsets.push(rng.gen_range(-2.0..2.0));
        }
        Ok(Self { dim, seed, slopes, offsets })
    }

    pub fn with_default_size(dim: usize, seed: u64) -> Result<Self> {
        Self::new(dim, Self::DEFAULT_SIZE, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Evaluates `h_j(x)`.
    pub fn eval(&self, j: usize, x: &[f64]) -> f64 {
        let s: f64 = self.slopes[j].iter().zip(x).map(|(a, c)| a * c).sum();
        (s + self.offsets[j]).tanh().clamp(-1.0, 1.0)
    }
}

/// Truncated bounded-Lipschitz distance `Σ_{j=1}^K 2^{-j} |∫h_j dμ − ∫h_j dν|`.
pub fn bl_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, dict: &LipschitzDictionary) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(mu.dim(), nu.dim()));
    }
    if mu.dim() != dict.dim() {
        return Err(Error::DimensionMismatch(mu.dim(), dict.dim()));
    }
    let mut total = 0.0;
    let mut scale = 0.5;
    for j in 0..dict.len() {
        let a = moment(mu, |p| dict.eval(j, p));
        let b = moment(nu, |p| dict.eval(j, p));
        total += scale * (a - b).abs();
        scale *= 0.5;
    }
    Ok(total)
}

/// Exact 1-Wasserstein distance between two measures on the line,
/// computed as `∫ |F_μ − F_ν| dx` over the merged sorted support.
pub fn wasserstein1_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::DimensionMismatch(mu.dim(), 1));
    }
    if nu.dim() != 1 {
        return Err(Error::DimensionMismatch(nu.dim(), 1));
    }
    // (position, signed weight): +w for mu, -w for nu
    let mut atoms: Vec<(f64, f64)> = mu
        .coords()
        .iter()
        .zip(mu.weights())
        .map(|(&x, &w)| (x, w))
        .chain(nu.coords().iter().zip(nu.weights()).map(|(&x, &w)| (x, -w)))
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf_gap = 0.0;
    let mut total = 0.0;
    for pair in atoms.windows(2) {
        cdf_gap += pair[0].1;
        total += cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point(a: f64, wa: f64, b: f64, wb: f64) -> EmpiricalMeasure {
        EmpiricalMeasure::new(vec![vec![a], vec![b]], vec![wa, wb]).unwrap()
    }

    #[test]
    fn construction_rejects_bad_weights() {
        assert!(matches!(
            EmpiricalMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.0]),
            Err(Error::NonPositiveWeight { index: 1, .. })
        ));
        assert!(matches!(
            EmpiricalMeasure::new(vec![vec![0.0], vec![1.0]], vec![0.5, 0.6]),
            Err(Error::NotNormalized(_))
        ));
        assert!(EmpiricalMeasure::new(vec![], vec![]).is_err());
        assert!(EmpiricalMeasure::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn small_weight_drift_is_renormalized() {
        let mu = two_point(0.0, 0.5 + 4e-10, 1.0, 0.5);
        assert_abs_diff_eq!(mu.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn push_forward_of_dirac_and_linear_map() {
        let d = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        let moved = d.push_forward(|p| Some(vec![p[0] + 3.0])).unwrap();
        assert_eq!(moved.point(0), &[3.0]);

        let mu = two_point(0.0, 0.5, 1.0, 0.5);
        let doubled = mu.push_forward(|p| Some(vec![2.0 * p[0]])).unwrap();
        assert_eq!(doubled, two_point(0.0, 0.5, 2.0, 0.5));
    }

    #[test]
    fn push_forward_failure_names_the_point() {
        let mu = EmpiricalMeasure::uniform(vec![vec![1.0], vec![-1.0], vec![2.0]]).unwrap();
        let err = mu
            .push_forward(|p| (p[0] > 0.0).then(|| vec![p[0].ln()]))
            .unwrap_err();
        assert!(matches!(err, Error::MapFailed { index: 1 }));
    }

    #[test]
    fn moments_and_tails() {
        let d3 = EmpiricalMeasure::dirac(vec![3.0]).unwrap();
        assert_eq!(moment(&d3, |p| p[0] * p[0]), 9.0);
        assert_eq!(moment(&two_point(0.0, 0.5, 2.0, 0.5), |p| p[0]), 1.0);

        let d0 = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        let d2 = EmpiricalMeasure::dirac(vec![2.0]).unwrap();
        assert_eq!(tail_mass(&d0, |p| p[0].abs(), 1.0).unwrap(), 0.0);
        assert_eq!(tail_mass(&d2, |p| p[0].abs(), 1.0).unwrap(), 2.0);
        assert!(tail_mass(&d2, |p| p[0].abs(), -1.0).is_err());
    }

    #[test]
    fn second_moment_matches_accumulation_loop() {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = Normal::new(0.0, 1.5).unwrap();
        let xs: Vec<f64> = (0..100).map(|_| normal.sample(&mut rng)).collect();
        let mu = EmpiricalMeasure::uniform(xs.iter().map(|&x| vec![x]).collect()).unwrap();
        let mut acc = 0.0;
        for x in &xs {
            acc += x * x;
        }
        acc /= 100.0;
        assert_abs_diff_eq!(moment(&mu, |p| p[0] * p[0]), acc, epsilon = 1e-12);
    }

    #[test]
    fn heavy_tail_sweep_is_monotone() {
        // Pareto-like sample x_k = k^2
        let pts: Vec<Vec<f64>> = (1..=50).map(|k| vec![(k * k) as f64 / 50.0]).collect();
        let mu = EmpiricalMeasure::uniform(pts).unwrap();
        let sweep: Vec<f64> = [1.0, 2.0, 4.0, 8.0, 100.0]
            .iter()
            .map(|&r| tail_mass(&mu, |p| p[0].abs(), r).unwrap())
            .collect();
        assert!(sweep.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*sweep.last().unwrap(), 0.0);
    }

    #[test]
    fn dictionary_is_bounded_and_lipschitz() {
        let dict = LipschitzDictionary::new(3, 64, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            for j in 0..dict.len() {
                assert!(dict.eval(j, &x).abs() <= 1.0);
                assert!((dict.eval(j, &x) - dict.eval(j, &y)).abs() <= dist + 1e-9);
            }
        }
    }

    #[test]
    fn bl_distance_against_direct_sum() {
        let dict = LipschitzDictionary::with_default_size(1, 2024).unwrap();
        let d0 = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        let d1 = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        assert_eq!(bl_distance(&d0, &d0, &dict).unwrap(), 0.0);
        let got = bl_distance(&d0, &d1, &dict).unwrap();
        let mut oracle = 0.0;
        for j in 0..32 {
            let a = dict.slopes[j][0];
            let b = dict.offsets[j];
            oracle += 2f64.powi(-(j as i32 + 1)) * ((a * 0.0 + b).tanh() - (a * 1.0 + b).tanh()).abs();
        }
        assert!(got > 0.0);
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-15);
        let d2 = EmpiricalMeasure::dirac(vec![0.0, 1.0]).unwrap();
        assert!(matches!(bl_distance(&d0, &d2, &dict), Err(Error::DimensionMismatch(1, 2))));
    }

    #[test]
    fn w1_simple_cases() {
        let d0 = EmpiricalMeasure::dirac(vec![0.0]).unwrap();
        let d1 = EmpiricalMeasure::dirac(vec![1.0]).unwrap();
        assert_eq!(wasserstein1_1d(&d0, &d1).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&d0, &d0).unwrap(), 0.0);
        let p2 = EmpiricalMeasure::dirac(vec![0.0, 0.0]).unwrap();
        assert!(wasserstein1_1d(&p2, &p2).is_err());
    }

    #[test]
    fn csv_layout() {
        let mu = two_point(0.1, 0.25, -2.0, 0.75);
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("w,p1\n"));
        assert!(text.contains("1.0000000000000001e-1"));
        assert_eq!(EmpiricalMeasure::read_csv(&buf[..]).unwrap(), mu);
        assert!(EmpiricalMeasure::read_csv("x,p1\n1,0\n".as_bytes()).is_err());
    }
}
