use std::f64::consts::PI;
use std::sync::Arc;

use coulomb_core::divform::{gamma, gamma_direct, rotation_matrix};
use coulomb_core::fields::SphereField;
use coulomb_core::mesh::DiscMesh;
use coulomb_core::pde::FemSolver;
use coulomb_core::preimage::preimages;
use coulomb_core::sphere::{cap_measure, SpherePoint, SphereQuadrature, SphereRegion};
use coulomb_core::surfaces::{enneper_gauss_closure, lambda};
use coulomb_core::{Matrix3, Vector3};
use proptest::prelude::*;

/// `∫_D g(|X|) dX` by composite Simpson in `r` on the integrand `2πr g(r)`;
/// `panels` must be even.
fn radial_integral(g: impl Fn(f64) -> f64, panels: usize) -> f64 {
    let h = 1.0 / panels as f64;
    let mut s = g(1.0);
    for i in 1..panels {
        let r = i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * r * g(r);
    }
    2.0 * PI * s * h / 3.0
}

fn rotation(a: f64, b: f64, c: f64) -> Matrix3<f64> {
    let rz = |t: f64| Matrix3::new(t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0);
    let rx = |t: f64| Matrix3::new(1.0, 0.0, 0.0, 0.0, t.cos(), -t.sin(), 0.0, t.sin(), t.cos());
    rz(a) * rx(b) * rz(c)
}

#[test]
fn enneper_abs_phi_matches_radial_oracle() {
    let eps = 0.5;
    let oracle = radial_integral(|r| 4.0 * eps * eps / lambda(eps, r, 0.0).powi(2), 20_000);
    let mesh = Arc::new(DiscMesh::new(5).unwrap());
    let field = SphereField::sample(mesh, enneper_gauss_closure(eps)).unwrap();
    let rel = (field.abs_phi_integral() - oracle).abs() / oracle;
    assert!(rel < 0.01, "rel {rel}");
    // Φ < 0 everywhere for this orientation.
    assert!(field.phi().iter().all(|&p| p < 0.0));
}

#[test]
fn poisson_recovers_paraboloid() {
    // −Δu = 4 with u = 0 on the circle: u = 1 − |X|².
    let mesh = Arc::new(DiscMesh::new(5).unwrap());
    let solver = FemSolver::new(mesh.clone()).unwrap();
    let rhs = mesh.sample_centroids(|_, _| 4.0);
    let sol = solver.solve_dirichlet(&rhs).unwrap();
    let err = mesh
        .nodes()
        .iter()
        .zip(sol.f.iter())
        .map(|(p, u)| (u - (1.0 - p[0] * p[0] - p[1] * p[1])).abs())
        .fold(0.0, f64::max);
    assert!(err < 5e-3, "max nodal error {err}");
    assert!(sol.residual < 1e-10);
    // ‖∇u‖² = ∫ 4|X|² = 2π.
    assert!((sol.gradient_norm.powi(2) - 2.0 * PI).abs() < 0.02 * 2.0 * PI);
}

#[test]
fn sphere_measures() {
    let quad = SphereQuadrature::new(4).unwrap();
    assert!((quad.total_weight() - 4.0 * PI).abs() < 1e-10);
    let rho = PI / 4.0;
    let cap = SphereRegion::cap(&quad, SpherePoint::south(), rho).unwrap();
    assert!((cap.measure() - 2.0 * PI * (1.0 - rho.cos())).abs() < 1e-12);
    assert!((cap_measure(rho) - cap.measure()).abs() < 1e-12);
    let rel = (cap.empirical_measure() - cap.measure()).abs() / cap.measure();
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn enneper_image_is_injective_with_negative_degree() {
    let mesh = Arc::new(DiscMesh::new(4).unwrap());
    let field = SphereField::sample(mesh, enneper_gauss_closure(0.5)).unwrap();
    // n₃ ranges over (−1, 0.6]; pick targets strictly inside.
    for (polar, az) in [(2.0, 0.3), (2.5, 1.9), (1.6, -2.2)] {
        let c = preimages(&field, &SpherePoint::from_angles(polar, az));
        assert_eq!((c.card(), c.degree()), (1, -1), "{polar} {az}");
    }
    let omitted = preimages(&field, &SpherePoint::from_angles(0.3, 1.0));
    assert_eq!(omitted.card(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn rotation_family_sends_target_to_north(polar in 0.05f64..3.09, az in -PI..PI) {
        let np = SpherePoint::from_angles(polar, az);
        let u = rotation_matrix(&np).unwrap();
        let m = u.matrix();
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
        prop_assert!((u.apply(np.as_vector()) - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn gamma_forms_agree_and_are_bounded(
        a in (0.1f64..3.0, -PI..PI),
        b in (0.1f64..3.0, -PI..PI),
        xi in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let n = SpherePoint::from_angles(a.0, a.1);
        let np = SpherePoint::from_angles(b.0, b.1);
        prop_assume!(n.chord(&np) > 1e-3);
        let xi = Vector3::from(xi);
        let g = gamma(&n, &np, &xi).unwrap();
        let d = gamma_direct(n.as_vector(), np.as_vector(), &xi);
        prop_assert!((g - d).abs() <= 1e-9 * (1.0 + d.abs()));
        prop_assert!(g.abs() <= 2.0 * xi.norm() / n.chord(&np) * (1.0 + 1e-12));
    }

    #[test]
    fn energy_and_jacobian_invariant_under_rotation(
        a in -PI..PI, b in -PI..PI, c in -PI..PI, eps in 0.3f64..1.5,
    ) {
        let mesh = Arc::new(DiscMesh::new(3).unwrap());
        let field = SphereField::sample(mesh, enneper_gauss_closure(eps)).unwrap();
        let turned = field.rotated(rotation(a, b, c)).unwrap();
        let e = field.dirichlet_energy();
        prop_assert!((turned.dirichlet_energy() - e).abs() < 1e-10 * e);
        for (p, q) in field.phi().iter().zip(turned.phi().iter()) {
            prop_assert!((p - q).abs() < 1e-9 * p.abs().max(1.0));
        }
    }

    #[test]
    fn reflection_flips_jacobian(eps in 0.3f64..1.5) {
        let mesh = Arc::new(DiscMesh::new(3).unwrap());
        let field = SphereField::sample(mesh, enneper_gauss_closure(eps)).unwrap();
        let mirror = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let flipped = field.rotated(mirror).unwrap();
        for (p, q) in field.phi().iter().zip(flipped.phi().iter()) {
            prop_assert!((p + q).abs() < 1e-9 * p.abs().max(1.0));
        }
    }
}
