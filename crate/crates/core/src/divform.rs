//! Divergence form of the Jacobian density.
//!
//! For a target `n′ ∈ S² ∖ {±k}` the rotation `U(n′)` maps `n′` to the north
//! pole `k`. With `m = U(n′)n`,
//!
//! ```text
//! Γ(n, n′, ξ) = (m₁(U(n′)ξ)₂ − m₂(U(n′)ξ)₁) / (1 − m₃)
//! ```
//!
//! and the potentials `ω_i = Γ(n, n′, ∂ᵢn)` satisfy `Φ = ∂₂ω₁ − ∂₁ω₂` away
//! from the preimage of `n′`. Since the first two rows of `U(n′)` complete
//! `n′` to a positive orthonormal basis, `Γ(n, n′, ξ) = n′·(n × ξ)/(1 − n·n′)`;
//! the averaged potentials are evaluated in that form.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::fields::{ElementJet, SphereField};
use crate::mesh::{ElementScalar, NodalScalar};
use crate::sphere::{integrate_singular_vec, Singularity, SphereFace, SpherePoint, SphereQuadrature, SphereRegion};
use crate::{Error, Result};

/// Smallest admissible `λ′ = 1 − n′₃²`.
pub const POLE_LAMBDA_MIN: f64 = 1e-12;

/// Default margin between the admissible region and the field image.
pub const DEFAULT_MARGIN: f64 = 0.05;

/// Orthogonal matrix with determinant one taking `n′` to `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

/// `U(n′)`, given through its transpose
///
/// ```text
/// U(n′)ᵀ = ( λ′^{-1/2} n′₁n′₃   −λ′^{-1/2} n′₂   n′₁ )
///          ( λ′^{-1/2} n′₂n′₃    λ′^{-1/2} n′₁   n′₂ )
///          ( −λ′^{1/2}           0               n′₃ )
/// ```
///
/// with `λ′ = 1 − n′₃²`.
pub fn rotation_matrix(np: &SpherePoint) -> Result<RotationMatrix> {
    let n = np.as_vector();
    let lam = 1.0 - n.z * n.z;
    if lam < POLE_LAMBDA_MIN {
        return Err(Error::PoleDegeneracy { lambda: lam });
    }
    let s = lam.sqrt();
    let r = 1.0 / s;
    let ut = Matrix3::new(r * n.x * n.z, -r * n.y, n.x, r * n.y * n.z, r * n.x, n.y, -s, 0.0, n.z);
    Ok(RotationMatrix(ut.transpose()))
}

/// `Γ(n, n′, ξ)` through the rotation `U(n′)`.
pub fn gamma(n: &SpherePoint, np: &SpherePoint, xi: &Vector3<f64>) -> Result<f64> {
    let u = rotation_matrix(np)?;
    let dist = n.chord(np);
    if dist < 1e-12 {
        return Err(Error::Domain(format!("Γ undefined at n = n′ (|n − n′| = {dist:e})")));
    }
    let m = u.apply(n.as_vector());
    let ux = u.apply(xi);
    // 1 − m₃ = 1 − n·n′ = |n − n′|²/2, stable near n′.
    Ok((m.x * ux.y - m.y * ux.x) / (0.5 * dist * dist))
}

/// `Γ` in rotation-free form; no pole or coincidence checks.
#[inline]
pub fn gamma_direct(n: &Vector3<f64>, np: &Vector3<f64>, xi: &Vector3<f64>) -> f64 {
    np.dot(&n.cross(xi)) / (0.5 * (n - np).norm_squared())
}

/// Per-element potentials for a single target.
#[derive(Debug, Clone)]
pub struct OmegaField {
    pub omega1: ElementScalar,
    pub omega2: ElementScalar,
    /// Elements whose centroid value coincides with the target (values set
    /// to zero there).
    pub singular: Vec<usize>,
    /// Elements where `|ω_i| ≤ 2|∂ᵢn|/|n̄ − n′|` fails.
    pub bound_violations: Vec<usize>,
}

/// `ω_i = Γ(n̄, n′, ∂ᵢn)` on every element. In strict mode a centroid value
/// equal to `n′` is an error.
pub fn omega(field: &SphereField, np: &SpherePoint, strict: bool) -> Result<OmegaField> {
    let u = rotation_matrix(np)?;
    let target = *np.as_vector();
    let mut out = OmegaField {
        omega1: ElementScalar(Vec::with_capacity(field.jets().len())),
        omega2: ElementScalar(Vec::with_capacity(field.jets().len())),
        singular: Vec::new(),
        bound_violations: Vec::new(),
    };
    for (t, jet) in field.jets().iter().enumerate() {
        let dist = (jet.nbar - target).norm();
        if dist < 1e-12 {
            if strict {
                return Err(Error::Singularity { element: t });
            }
            out.singular.push(t);
            out.omega1.0.push(0.0);
            out.omega2.0.push(0.0);
            continue;
        }
        let m = u.apply(&jet.nbar);
        let g = |xi: &Vector3<f64>| {
            let ux = u.apply(xi);
            (m.x * ux.y - m.y * ux.x) / (0.5 * dist * dist)
        };
        let (w1, w2) = (g(&jet.d1), g(&jet.d2));
        let tol = 1.0 + 1e-12;
        if w1.abs() > tol * 2.0 * jet.d1.norm() / dist || w2.abs() > tol * 2.0 * jet.d2.norm() / dist {
            out.bound_violations.push(t);
        }
        out.omega1.0.push(w1);
        out.omega2.0.push(w2);
    }
    Ok(out)
}

/// An averaging region away from the image of a field.
#[derive(Debug, Clone)]
pub struct AdmissibleRegion {
    pub region: SphereRegion,
    /// Required margin to the image samples and the poles.
    pub sigma: f64,
    /// Smallest distance from a retained node to an image sample.
    pub min_distance: f64,
    /// `δ = 4π − ∫|∂₁n × ∂₂n|`.
    pub delta: f64,
}

/// Uniform 3D hash grid over points of the unit sphere.
struct PointGrid {
    cell: f64,
    dims: usize,
    buckets: Vec<Vec<Vector3<f64>>>,
}

impl PointGrid {
    fn new(points: impl Iterator<Item = Vector3<f64>>, cell: f64) -> Self {
        let dims = (2.0 / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); dims * dims * dims];
        let mut grid = Self {
            cell,
            dims,
            buckets: Vec::new(),
        };
        for p in points {
            buckets[grid.index(grid.coords(&p))].push(p);
        }
        grid.buckets = buckets;
        grid
    }

    fn coords(&self, p: &Vector3<f64>) -> [usize; 3] {
        let c = |v: f64| (((v + 1.0) / self.cell).floor().max(0.0) as usize).min(self.dims - 1);
        [c(p.x), c(p.y), c(p.z)]
    }

    fn index(&self, c: [usize; 3]) -> usize {
        (c[0] * self.dims + c[1]) * self.dims + c[2]
    }

    /// Distance to the nearest stored point, capped at `cap`.
    fn nearest_within(&self, p: &Vector3<f64>, cap: f64) -> f64 {
        let c = self.coords(p);
        let r = (cap / self.cell).ceil() as usize;
        let range = |a: usize| a.saturating_sub(r)..=(a + r).min(self.dims - 1);
        let mut best = cap;
        for i in range(c[0]) {
            for j in range(c[1]) {
                for k in range(c[2]) {
                    for q in &self.buckets[self.index([i, j, k])] {
                        best = best.min((p - q).norm());
                    }
                }
            }
        }
        best
    }
}

/// Region of quadrature nodes at distance greater than `sigma` from every
/// element-centroid value of the field and from `±k`.
pub fn admissible_region(field: &SphereField, quadrature: &SphereQuadrature, sigma: f64) -> Result<AdmissibleRegion> {
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(Error::Argument(format!("margin σ = {sigma} outside (0, 1)")));
    }
    let delta = field.area_functional().delta;
    if delta <= 0.0 {
        return Err(Error::HypothesisViolation(format!(
            "image area exceeds 4π (δ = {delta})"
        )));
    }
    let grid = PointGrid::new(field.jets().iter().map(|j| j.nbar), sigma);
    let kept: Vec<(SphereFace, f64)> = quadrature
        .faces()
        .par_iter()
        .filter_map(|face| {
            let s = face.node;
            let pole = (s - Vector3::z()).norm().min((s + Vector3::z()).norm());
            let d = grid.nearest_within(&s, sigma * 1.5);
            (d > sigma && pole > sigma).then_some((*face, d))
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::HypothesisViolation(
            "no sphere region avoids the field image with the required margin".into(),
        ));
    }
    let min_distance = kept.iter().map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let faces: Vec<SphereFace> = kept.into_iter().map(|(f, _)| f).collect();
    let grid = std::sync::Arc::new(grid);
    let region = SphereRegion::from_faces(faces, move |s| {
        let pole = (s - Vector3::z()).norm().min((s + Vector3::z()).norm());
        pole > sigma && grid.nearest_within(s, sigma * 1.5) > sigma
    });
    Ok(AdmissibleRegion {
        region,
        sigma,
        min_distance,
        delta,
    })
}

/// Averaged potentials `Ω_i = (1/μ)∫_A ω_i(n, n′) dS_{n′}` with their bound
/// certificates.
#[derive(Debug, Clone)]
pub struct DivergenceForm {
    pub omega1: ElementScalar,
    pub omega2: ElementScalar,
    /// `μ = meas(A)`.
    pub region_measure: f64,
    /// `δ` of the field when built under the area hypothesis.
    pub delta: Option<f64>,
    /// Per element `min_i ((8π/μ)|∂ᵢn| − |Ω_i|)`; negative means the
    /// certificate fails.
    pub slack: Vec<f64>,
    /// `(‖Ω₁‖, ‖Ω₂‖)` in `L²(D₁)`.
    pub l2: [f64; 2],
    /// Accumulated singular-quadrature error bound (zero without
    /// singular handling).
    pub quadrature_error: f64,
}

impl DivergenceForm {
    pub fn certificate_holds(&self) -> bool {
        self.slack.iter().all(|&s| s >= 0.0)
    }

    /// CSV with header `element,phi,omega1,omega2,slack`.
    pub fn write_csv<W: Write>(&self, field: &SphereField, mut w: W) -> Result<()> {
        writeln!(w, "element,phi,omega1,omega2,slack")?;
        for (t, jet) in field.jets().iter().enumerate() {
            writeln!(
                w,
                "{t},{},{},{},{}",
                jet.phi(),
                self.omega1[t],
                self.omega2[t],
                self.slack[t]
            )?;
        }
        Ok(())
    }
}

/// `V(n̄) = ∫_A (s − n̄)/(1 − s·n̄) dS_s`, so that the averaged potentials are
/// `Ω_i = (n̄ × ∂ᵢn)·V(n̄)/μ`. The integrand is bounded by `2/|s − n̄|`.
fn kernel_direct(faces: &[SphereFace], nbar: &Vector3<f64>) -> Vector3<f64> {
    let mut v = Vector3::zeros();
    for face in faces {
        let s = face.node;
        let d = s - nbar;
        v += d * (face.weight / (0.5 * d.norm_squared()));
    }
    v
}

fn finish(field: &SphereField, kernels: Vec<(Vector3<f64>, f64)>, mu: f64, delta: Option<f64>) -> DivergenceForm {
    let jets = field.jets();
    let mut omega1 = Vec::with_capacity(jets.len());
    let mut omega2 = Vec::with_capacity(jets.len());
    let mut slack = Vec::with_capacity(jets.len());
    let mut l2 = [0.0; 2];
    let mut quadrature_error = 0.0;
    for ((jet, (v, err)), g) in jets.iter().zip(kernels).zip(field.mesh().geometry()) {
        let w1 = jet.nbar.cross(&jet.d1).dot(&v) / mu;
        let w2 = jet.nbar.cross(&jet.d2).dot(&v) / mu;
        let c = 8.0 * PI / mu;
        slack.push((c * jet.d1.norm() - w1.abs()).min(c * jet.d2.norm() - w2.abs()));
        l2[0] += w1 * w1 * g.area;
        l2[1] += w2 * w2 * g.area;
        quadrature_error += err * (jet.d1.norm() + jet.d2.norm()) * g.area / mu;
        omega1.push(w1);
        omega2.push(w2);
    }
    DivergenceForm {
        omega1: ElementScalar(omega1),
        omega2: ElementScalar(omega2),
        region_measure: mu,
        delta,
        slack,
        l2: [l2[0].sqrt(), l2[1].sqrt()],
        quadrature_error,
    }
}

/// Averages over a region separated from the image (no singular handling).
pub fn averaged_omega(field: &SphereField, k: &AdmissibleRegion) -> Result<DivergenceForm> {
    let faces = k.region.faces();
    let mu = k.region.measure();
    if mu <= 0.0 {
        return Err(Error::Argument("averaging region has zero measure".into()));
    }
    let kernels: Vec<(Vector3<f64>, f64)> = field
        .jets()
        .par_iter()
        .enumerate()
        .map(|(t, jet)| {
            let close = faces.iter().any(|f| (f.node - jet.nbar).norm() < 1e-12);
            if close {
                Err(Error::Singularity { element: t })
            } else {
                Ok((kernel_direct(faces, &jet.nbar), 0.0))
            }
        })
        .collect::<Result<_>>()?;
    Ok(finish(field, kernels, mu, Some(k.delta)))
}

/// Averages over an arbitrary region with positive measure, resolving the
/// `1/|s − n̄|` singularity of the kernel by local subdivision wherever `n̄`
/// lies in or near the region.
pub fn averaged_omega_singular(field: &SphereField, region: &SphereRegion, rel_tol: f64) -> Result<DivergenceForm> {
    let mu = region.measure();
    if mu <= 0.0 {
        return Err(Error::Argument(format!("region measure μ = {mu} must be positive")));
    }
    let spacing = region.faces().first().map_or(0.0, SphereFace::diameter);
    let kernels: Vec<(Vector3<f64>, f64)> = field
        .jets()
        .par_iter()
        .map(|jet| singular_kernel(region, jet, spacing, rel_tol))
        .collect::<Result<_>>()?;
    Ok(finish(field, kernels, mu, None))
}

fn singular_kernel(region: &SphereRegion, jet: &ElementJet, spacing: f64, rel_tol: f64) -> Result<(Vector3<f64>, f64)> {
    let nbar = jet.nbar;
    let near = region
        .faces()
        .iter()
        .any(|f| (f.node - nbar).norm() < 2.0 * f.diameter().max(spacing));
    if !near {
        return Ok((kernel_direct(region.faces(), &nbar), 0.0));
    }
    let sing = Singularity {
        point: nbar,
        rel_tol,
        max_depth: 12,
    };
    let (v, err) = integrate_singular_vec(
        |s| {
            let d = s - nbar;
            let q = 0.5 * d.norm_squared();
            if q == 0.0 {
                [f64::NAN; 3]
            } else {
                [d.x / q, d.y / q, d.z / q]
            }
        },
        region,
        sing,
    )?;
    Ok((Vector3::new(v[0], v[1], v[2]), err))
}

/// `∫Φζ − ∫(Ω₂∂₁ζ − Ω₁∂₂ζ)` for a test function vanishing on the boundary.
pub fn weak_identity_residual(field: &SphereField, form: &DivergenceForm, zeta: &NodalScalar) -> Result<f64> {
    let mesh = field.mesh();
    if let Some(&b) = mesh.boundary_nodes().iter().find(|&&i| zeta[i].abs() > 1e-14) {
        return Err(Error::Argument(format!(
            "test function is {} at boundary node {b}",
            zeta[b]
        )));
    }
    Ok(phi_moment(field, zeta) - omega_term(field, form, zeta))
}

/// `∫Φζ dX` with `ζ` averaged per element.
pub fn phi_moment(field: &SphereField, zeta: &NodalScalar) -> f64 {
    let mesh = field.mesh();
    let zbar = mesh.element_mean(zeta);
    field
        .jets()
        .iter()
        .zip(mesh.geometry())
        .zip(zbar.iter())
        .map(|((j, g), z)| j.phi() * z * g.area)
        .sum()
}

/// `∫(Ω₂∂₁ζ − Ω₁∂₂ζ) dX`.
pub fn omega_term(field: &SphereField, form: &DivergenceForm, zeta: &NodalScalar) -> f64 {
    let mesh = field.mesh();
    let dz = mesh.element_gradient(zeta);
    dz.iter()
        .zip(mesh.geometry())
        .enumerate()
        .map(|(t, (d, g))| (form.omega2[t] * d[0] - form.omega1[t] * d[1]) * g.area)
        .sum()
}

/// Outcome of the full averaging pipeline under the area hypothesis.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionReport {
    pub delta: f64,
    pub sigma: f64,
    pub region_measure: f64,
    pub min_distance: f64,
    pub omega_l2: [f64; 2],
    pub grad_n_l2: [f64; 2],
    /// `(8π/meas K)‖∂ᵢn‖` for each `i`.
    pub omega_bound: [f64; 2],
    pub certificate_holds: bool,
    pub min_slack: f64,
}

/// Builds `K` and `Ω_i` for a field with image area below `4π`.
pub fn decompose(
    field: &SphereField,
    quadrature: &SphereQuadrature,
    sigma: f64,
) -> Result<(DivergenceForm, DecompositionReport)> {
    let k = admissible_region(field, quadrature, sigma)?;
    let form = averaged_omega(field, &k)?;
    let grad = field.partial_norms();
    let mu = k.region.measure();
    let report = DecompositionReport {
        delta: k.delta,
        sigma,
        region_measure: mu,
        min_distance: k.min_distance,
        omega_l2: form.l2,
        grad_n_l2: grad,
        omega_bound: [8.0 * PI / mu * grad[0], 8.0 * PI / mu * grad[1]],
        certificate_holds: form.certificate_holds(),
        min_slack: form.slack.iter().copied().fold(f64::INFINITY, f64::min),
    };
    Ok((form, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bumps::quartic_bump;
    use crate::mesh::DiscMesh;
    use crate::surfaces::enneper_gauss_closure;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn unit() -> impl Strategy<Value = SpherePoint> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, t)| {
            let r = (1.0 - z * z).sqrt();
            SpherePoint::from_xyz(r * t.cos(), r * t.sin(), z).unwrap()
        })
    }

    proptest! {
        #[test]
        fn rotation_is_special_orthogonal(np in unit()) {
            prop_assume!(1.0 - np.as_vector().z.powi(2) > 1e-6);
            let u = rotation_matrix(&np).unwrap();
            let m = u.matrix();
            prop_assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
            prop_assert!((u.apply(np.as_vector()) - Vector3::z()).norm() < 1e-12);
        }

        #[test]
        fn gamma_forms_agree(n in unit(), np in unit(), x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
            prop_assume!(1.0 - np.as_vector().z.powi(2) > 1e-6 && n.chord(&np) > 1e-6);
            let xi = Vector3::new(x, y, z);
            let a = gamma(&n, &np, &xi).unwrap();
            let b = gamma_direct(n.as_vector(), np.as_vector(), &xi);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
            prop_assert!(a.abs() <= 2.0 * xi.norm() / n.chord(&np) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rotation_of_first_axis() {
        let u = rotation_matrix(&SpherePoint::from_xyz(1.0, 0.0, 0.0).unwrap()).unwrap();
        assert!((u.apply(&Vector3::x()) - Vector3::z()).norm() < 1e-15);
        assert!(matches!(
            rotation_matrix(&SpherePoint::north()),
            Err(Error::PoleDegeneracy { .. })
        ));
    }

    #[test]
    fn gamma_trivial_cases() {
        let np = SpherePoint::from_xyz(0.3, -0.4, 0.5).unwrap();
        let n = SpherePoint::new(-np.into_vector()).unwrap();
        assert!(gamma(&n, &np, &Vector3::new(1.0, 2.0, 3.0)).unwrap().abs() < 1e-15);
        let m = SpherePoint::from_xyz(0.1, 0.2, 0.9).unwrap();
        assert_eq!(gamma(&m, &np, &Vector3::zeros()).unwrap(), 0.0);
        assert!(matches!(gamma(&np, &np, &Vector3::x()), Err(Error::Domain(_))));
    }

    #[test]
    fn constant_antipodal_field_has_zero_potentials() {
        let mesh = Arc::new(DiscMesh::new(3).unwrap());
        let np = SpherePoint::from_xyz(0.6, 0.0, 0.8).unwrap();
        let v = -np.into_vector();
        let field = SphereField::sample(mesh, move |_, _| v).unwrap();
        let om = omega(&field, &np, true).unwrap();
        assert!(om.omega1.iter().chain(om.omega2.iter()).all(|w| *w == 0.0));
    }

    #[test]
    fn single_target_divergence_identity() {
        let np = SpherePoint::from_xyz(0.2, 0.1, 0.97).unwrap();
        let mut prev = f64::INFINITY;
        for level in [4, 5, 6] {
            let mesh = Arc::new(DiscMesh::new(level).unwrap());
            let field = SphereField::sample(mesh.clone(), enneper_gauss_closure(0.5)).unwrap();
            let om = omega(&field, &np, true).unwrap();
            assert!(om.bound_violations.is_empty());
            let zeta = quartic_bump(&mesh);
            let form = DivergenceForm {
                omega1: om.omega1,
                omega2: om.omega2,
                region_measure: 1.0,
                delta: None,
                slack: vec![0.0; mesh.triangle_count()],
                l2: [0.0; 2],
                quadrature_error: 0.0,
            };
            let r = weak_identity_residual(&field, &form, &zeta).unwrap().abs();
            assert!(r < prev, "level {level}: {r}");
            prev = r;
        }
        assert!(prev < 0.05, "{prev}");
    }

    #[test]
    fn constant_field_decomposes_trivially() {
        let mesh = Arc::new(DiscMesh::new(3).unwrap());
        let field = SphereField::sample(mesh.clone(), |_, _| Vector3::z()).unwrap();
        let q = SphereQuadrature::new(3).unwrap();
        let (form, rep) = decompose(&field, &q, DEFAULT_MARGIN).unwrap();
        assert!(rep.region_measure > 0.9 * 4.0 * PI);
        assert!(form.omega1.iter().chain(form.omega2.iter()).all(|w| *w == 0.0));
        let r = weak_identity_residual(&field, &form, &quartic_bump(&mesh)).unwrap();
        assert_eq!(r, 0.0);
        assert!(weak_identity_residual(&field, &form, &mesh.sample_nodal(|_, _| 1.0)).is_err());
    }

    #[test]
    fn image_filling_field_rejected() {
        // Degree-one map wrapping the disc twice around the sphere's polar
        // angle covers more than 4π.
        let mesh = Arc::new(DiscMesh::new(4).unwrap());
        let field = SphereField::sample(mesh, |x, y| {
            let r = (x * x + y * y).sqrt();
            let t = 2.0 * PI * r;
            let (c, s) = if r > 0.0 { (x / r, y / r) } else { (1.0, 0.0) };
            Vector3::new(t.sin() * c, t.sin() * s, -t.cos())
        })
        .unwrap();
        let q = SphereQuadrature::new(3).unwrap();
        assert!(field.area_functional().delta < 0.0);
        assert!(matches!(
            admissible_region(&field, &q, DEFAULT_MARGIN),
            Err(Error::HypothesisViolation(_))
        ));
    }
}
