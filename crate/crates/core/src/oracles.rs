//! Closed-form reference solutions.
//!
//! * Mean-field flow of a quadratic interaction `W(z) = (κ/2)|z|²`: every
//!   particle is pulled towards the center of mass, which moves linearly.
//! * Modes of the linear damped wave equation `ä = −λa − μλȧ`.

use crate::error::{invalid, Error, Result};

/// Interaction strength and the initial means `∫x df₀`, `∫v df₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFlowSpec {
    pub kappa: f64,
    pub mean_x: Vec<f64>,
    pub mean_v: Vec<f64>,
}

impl QuadraticFlowSpec {
    pub fn new(kappa: f64, mean_x: Vec<f64>, mean_v: Vec<f64>) -> Result<Self> {
        if mean_x.len() != mean_v.len() {
            return Err(Error::DimensionMismatch(mean_x.len(), mean_v.len()));
        }
        if !kappa.is_finite() || mean_x.iter().chain(&mean_v).any(|c| !c.is_finite()) {
            return Err(invalid("quadratic flow spec must be finite"));
        }
        Ok(Self { kappa, mean_x, mean_v })
    }
}

/// `(c(t), s(t), ċ(t), ṡ(t))` for the centered flow `c·(x−x̄) + s·(v−v̄)`.
fn propagator(kappa: f64, t: f64) -> (f64, f64, f64, f64) {
    if kappa > 0.0 {
        let w = kappa.sqrt();
        let (sn, cs) = (w * t).sin_cos();
        (cs, sn / w, -w * sn, cs)
    } else if kappa < 0.0 {
        let w = (-kappa).sqrt();
        let (sh, ch) = ((w * t).sinh(), (w * t).cosh());
        (ch, sh / w, w * sh, ch)
    } else {
        (1.0, t, 0.0, 1.0)
    }
}

/// Position and velocity at time `t` of the particle that started at `(x, v)`.
pub fn quadratic_flow(x: &[f64], v: &[f64], t: f64, spec: &QuadraticFlowSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    let d = spec.mean_x.len();
    if x.len() != d || v.len() != d {
        return Err(Error::DimensionMismatch(x.len().max(v.len()), d));
    }
    let (c, s, cd, sd) = propagator(spec.kappa, t);
    let mut pos = Vec::with_capacity(d);
    let mut vel = Vec::with_capacity(d);
    for k in 0..d {
        let dx = x[k] - spec.mean_x[k];
        let dv = v[k] - spec.mean_v[k];
        pos.push(dx * c + dv * s + spec.mean_x[k] + t * spec.mean_v[k]);
        vel.push(dx * cd + dv * sd + spec.mean_v[k]);
    }
    Ok((pos, vel))
}

/// Exact solution of `ä = −λa − μλȧ`, `a(0) = g`, `ȧ(0) = h`.
pub fn damped_mode(g: f64, h: f64, lambda: f64, mu: f64, t: f64) -> Result<(f64, f64)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("eigenvalue must be positive, got {lambda}")));
    }
    if !(mu >= 0.0) {
        return Err(invalid(format!("damping must be >= 0, got {mu}")));
    }
    let beta = 0.5 * mu * lambda;
    let disc = beta * beta - lambda;
    // Relative gap used to decide the critically damped branch.
    let critical = disc.abs() <= 1e-12 * lambda;
    if critical {
        let decay = (-beta * t).exp();
        let c = h + beta * g;
        let a = decay * (g + c * t);
        let ad = decay * (c - beta * (g + c * t));
        return Ok((a, ad));
    }
    if disc < 0.0 {
        let w = (-disc).sqrt();
        let decay = (-beta * t).exp();
        let (sn, cs) = (w * t).sin_cos();
        let b = (h + beta * g) / w;
        let a = decay * (g * cs + b * sn);
        let ad = decay * ((-g * w + b * (-beta)) * sn + (b * w - beta * g) * cs);
        Ok((a, ad))
    } else {
        let root = disc.sqrt();
        let r1 = -beta + root;
        let r2 = -beta - root;
        let c1 = (h - r2 * g) / (r1 - r2);
        let c2 = g - c1;
        let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
        Ok((c1 * e1 + c2 * e2, c1 * r1 * e1 + c2 * r2 * e2))
    }
}

/// Applies [`damped_mode`] entrywise; `g`, `h` and `lambdas` share a length.
pub fn linear_wave_modes(g: &[f64], h: &[f64], lambdas: &[f64], t: f64, mu: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if g.len() != lambdas.len() || h.len() != lambdas.len() {
        return Err(Error::DimensionMismatch(g.len().max(h.len()), lambdas.len()));
    }
    let mut a = Vec::with_capacity(g.len());
    let mut ad = Vec::with_capacity(g.len());
    for ((&g, &h), &l) in g.iter().zip(h).zip(lambdas) {
        let (x, y) = damped_mode(g, h, l, mu, t)?;
        a.push(x);
        ad.push(y);
    }
    Ok((a, ad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn spec1(kappa: f64, mx: f64, mv: f64) -> QuadraticFlowSpec {
        QuadraticFlowSpec::new(kappa, vec![mx], vec![mv]).unwrap()
    }

    #[test]
    fn centered_particle_stays_put() {
        for t in [0.0, 0.3, 2.0] {
            let (x, v) = quadratic_flow(&[1.0], &[0.0], t, &spec1(1.0, 1.0, 0.0)).unwrap();
            assert_eq!(x, vec![1.0]);
            assert_eq!(v, vec![0.0]);
        }
    }

    #[test]
    fn free_flow() {
        let (x, v) = quadratic_flow(&[2.0], &[3.0], 4.0, &spec1(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(x, vec![14.0]);
        assert_eq!(v, vec![3.0]);
    }

    #[test]
    fn symmetric_pair_oscillates() {
        let s = spec1(1.0, 0.0, 0.0);
        for t in [0.1, 1.0, 2.5] {
            let (xp, _) = quadratic_flow(&[1.0], &[0.0], t, &s).unwrap();
            let (xm, _) = quadratic_flow(&[-1.0], &[0.0], t, &s).unwrap();
            assert_abs_diff_eq!(xp[0], t.cos(), epsilon = 1e-15);
            assert_abs_diff_eq!(xm[0], -t.cos(), epsilon = 1e-15);
        }
    }

    #[test]
    fn second_derivative_matches_mean_field_force() {
        let h = 1e-5;
        for kappa in [2.0, -1.5, 0.0] {
            let s = QuadraticFlowSpec::new(kappa, vec![0.3, -0.2], vec![0.1, 0.4]).unwrap();
            let (x0, v0) = (vec![1.0, 0.5], vec![-0.7, 0.2]);
            for t in [0.5, 1.0, 1.7] {
                let xm = quadratic_flow(&x0, &v0, t - h, &s).unwrap().0;
                let xc = quadratic_flow(&x0, &v0, t, &s).unwrap().0;
                let xp = quadratic_flow(&x0, &v0, t + h, &s).unwrap().0;
                for k in 0..2 {
                    let acc = (xp[k] - 2.0 * xc[k] + xm[k]) / (h * h);
                    let center = s.mean_x[k] + t * s.mean_v[k];
                    assert!((acc + kappa * (xc[k] - center)).abs() <= 1e-4, "kappa {kappa}");
                }
                // velocity is the exact derivative
                let vc = quadratic_flow(&x0, &v0, t, &s).unwrap().1;
                for k in 0..2 {
                    assert!(((xp[k] - xm[k]) / (2.0 * h) - vc[k]).abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn negative_time_rejected() {
        assert!(quadratic_flow(&[0.0], &[0.0], -1.0, &spec1(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn pure_cosine_mode() {
        let (a, ad) = damped_mode(1.0, 0.0, 1.0, 0.0, PI).unwrap();
        assert_abs_diff_eq!(a, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ad, 0.0, epsilon = 1e-15);
        assert_eq!(damped_mode(0.0, 0.0, 3.0, 0.2, 1.3).unwrap(), (0.0, 0.0));
        assert!(damped_mode(1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(linear_wave_modes(&[1.0], &[0.0], &[-1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn undamped_mode_conserves_energy() {
        let (g, h, l) = (0.7, -1.3, 5.0);
        let e0 = l * g * g + h * h;
        for k in 0..50 {
            let (a, ad) = damped_mode(g, h, l, 0.0, 0.1 * k as f64).unwrap();
            assert_abs_diff_eq!(l * a * a + ad * ad, e0, epsilon = 1e-12);
        }
    }

    fn rk4_reference(g: f64, h: f64, l: f64, mu: f64, t: f64, dt: f64) -> (f64, f64) {
        let f = |a: f64, b: f64| (b, -l * a - mu * l * b);
        let n = (t / dt).round() as usize;
        let dt = t / n as f64;
        let (mut a, mut b) = (g, h);
        for _ in 0..n {
            let k1 = f(a, b);
            let k2 = f(a + 0.5 * dt * k1.0, b + 0.5 * dt * k1.1);
            let k3 = f(a + 0.5 * dt * k2.0, b + 0.5 * dt * k2.1);
            let k4 = f(a + dt * k3.0, b + dt * k3.1);
            a += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            b += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        }
        (a, b)
    }

    #[test]
    fn all_damping_regimes_match_reference_integration() {
        let pi2 = PI * PI;
        // under-, critically and over-damped
        for (l, mu) in [(pi2, 0.1), (4.0, 1.0), (64.0 * pi2, 0.1), (2.0, 3.0)] {
            let (a, ad) = damped_mode(1.0, 0.5, l, mu, 1.0).unwrap();
            let (ra, rad) = rk4_reference(1.0, 0.5, l, mu, 1.0, 1e-5);
            assert_abs_diff_eq!(a, ra, epsilon = 1e-8);
            assert_abs_diff_eq!(ad, rad, epsilon = 1e-8 * l.max(1.0));
        }
    }
}
