use std::f64::consts::PI;

use proptest::prelude::*;

use semiflow::galerkin::{check_stored_energy, discrete_potential, project_initial, BoxDomain, EigenBasis, StoredEnergy};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn basis_is_orthonormal_on_random_boxes(lengths in prop::collection::vec(0.5..2.0f64, 1..=2), n in 1usize..10) {
        let basis = EigenBasis::new(BoxDomain::new(lengths.clone()).unwrap(), n, None).unwrap();
        prop_assert!(basis.orthonormality_defect() <= 1e-10);
        prop_assert!(basis.stiffness_defect() <= 1e-10 * basis.largest_eigenvalue());
        for (k, lambda) in basis.modes().iter().zip(basis.eigenvalues()) {
            let exact: f64 = k.iter().zip(&lengths).map(|(&k, l)| (k as f64 * PI / l).powi(2)).sum();
            prop_assert!((lambda - exact).abs() <= 1e-12 * exact);
        }
        prop_assert!(basis.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn nonconvex_energy_meets_its_declared_constants(
        alpha in 0.0..=0.5f64,
        b in prop::collection::vec(-2.0..2.0f64, 4),
        seed in 0u64..100,
    ) {
        let e = StoredEnergy::nonconvex(2, alpha, b).unwrap();
        prop_assert!(check_stored_energy(&e, 200, seed).unwrap().passed());
    }

    #[test]
    fn quadratic_potential_is_the_stiffness_form(coeffs in prop::collection::vec(-1.0..1.0f64, 6)) {
        let basis = EigenBasis::new(BoxDomain::unit(1).unwrap(), 6, None).unwrap();
        let (v, grad) = discrete_potential(&coeffs, &basis, &StoredEnergy::quadratic(1).unwrap()).unwrap();
        let exact: f64 = coeffs.iter().zip(basis.eigenvalues()).map(|(a, l)| 0.5 * l * a * a).sum();
        prop_assert!((v - exact).abs() <= 1e-10 * (1.0 + exact));
        for ((g, a), l) in grad.iter().zip(&coeffs).zip(basis.eigenvalues()) {
            prop_assert!((g - l * a).abs() <= 1e-9 * (1.0 + l));
        }
    }
}

#[test]
fn projection_recovers_a_finite_sine_sum() {
    let domain = BoxDomain::new(vec![1.0, 2.0]).unwrap();
    let basis = EigenBasis::new(domain, 8, None).unwrap();
    let target: Vec<f64> = (0..16).map(|k| ((k * 7 % 5) as f64 - 2.0) / 3.0).collect();
    let field = |x: &[f64], out: &mut [f64]| basis.displacement_at(&target, x, out);
    let p = project_initial(field, &basis);
    assert!(p.l2_error <= 1e-12);
    for (a, b) in p.coefficients.iter().zip(&target) {
        assert!((a - b).abs() <= 1e-12);
    }
}
