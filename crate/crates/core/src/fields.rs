//! Unit-vector fields `n: D₁ → S²` sampled at mesh nodes.
//!
//! Derived quantities use the affine interpolant of the nodal values on
//! each triangle: its two constant derivatives `∂₁n`, `∂₂n` and the
//! normalized centroid value `n̄`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::mesh::{DiscMesh, ElementScalar, NodalVector3};
use crate::{Error, Result};

/// Analytic description of a field, `X ↦ c(X) ∈ ℝ³ ∖ {0}`.
pub type FieldClosure = Arc<dyn Fn(f64, f64) -> Vector3<f64> + Send + Sync>;

/// Per-triangle first-order data of the affine interpolant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementJet {
    /// Normalized centroid value.
    pub nbar: Vector3<f64>,
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
}

impl ElementJet {
    /// `n̄·(∂₁n × ∂₂n)`.
    pub fn phi(&self) -> f64 {
        self.nbar.dot(&self.d1.cross(&self.d2))
    }

    /// `|∂₁n × ∂₂n|`.
    pub fn area_density(&self) -> f64 {
        self.d1.cross(&self.d2).norm()
    }

    /// `|∂₁n|² + |∂₂n|²`.
    pub fn energy_density(&self) -> f64 {
        self.d1.norm_squared() + self.d2.norm_squared()
    }
}

/// A sampled sphere-valued field on a [`DiscMesh`].
#[derive(Clone)]
pub struct SphereField {
    mesh: Arc<DiscMesh>,
    values: NodalVector3,
    jets: Vec<ElementJet>,
    closure: Option<FieldClosure>,
}

impl std::fmt::Debug for SphereField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereField")
            .field("nodes", &self.values.len())
            .field("analytic", &self.closure.is_some())
            .finish()
    }
}

/// Image-area report: `∫|∂₁n × ∂₂n| dX` and `δ = 4π − area`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AreaReport {
    pub area: f64,
    pub delta: f64,
}

fn jets(mesh: &DiscMesh, values: &[Vector3<f64>]) -> Vec<ElementJet> {
    mesh.triangles()
        .par_iter()
        .zip(mesh.geometry().par_iter())
        .map(|(tri, g)| {
            let mut d1 = Vector3::zeros();
            let mut d2 = Vector3::zeros();
            let mut sum = Vector3::zeros();
            for (k, &i) in tri.iter().enumerate() {
                d1 += values[i] * g.grad[k][0];
                d2 += values[i] * g.grad[k][1];
                sum += values[i];
            }
            let norm = sum.norm();
            // Antipodal nodal values make the centroid vanish; fall back to
            // the first vertex.
            let nbar = if norm > 1e-12 { sum / norm } else { values[tri[0]] };
            ElementJet { nbar, d1, d2 }
        })
        .collect()
}

impl SphereField {
    /// Samples `closure` at every node and normalizes.
    pub fn sample(
        mesh: Arc<DiscMesh>,
        closure: impl Fn(f64, f64) -> Vector3<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::sample_shared(mesh, Arc::new(closure))
    }

    pub fn sample_shared(mesh: Arc<DiscMesh>, closure: FieldClosure) -> Result<Self> {
        let raw: Vec<Vector3<f64>> = mesh.nodes().par_iter().map(|&[x, y]| closure(x, y)).collect();
        let mut field = Self::from_values(mesh, raw)?;
        field.closure = Some(closure);
        Ok(field)
    }

    /// Field from explicit nodal vectors (normalized here); no closure.
    pub fn from_values(mesh: Arc<DiscMesh>, raw: Vec<Vector3<f64>>) -> Result<Self> {
        if raw.len() != mesh.node_count() {
            return Err(Error::Argument(format!(
                "{} nodal values for {} nodes",
                raw.len(),
                mesh.node_count()
            )));
        }
        let mut values = Vec::with_capacity(raw.len());
        for (i, v) in raw.into_iter().enumerate() {
            let n = v.norm();
            if !n.is_finite() || n < 1e-300 {
                let [x, y] = mesh.nodes()[i];
                return Err(Error::Sampling { node: i, x, y });
            }
            values.push(v / n);
        }
        let jets = jets(&mesh, &values);
        Ok(Self {
            mesh,
            values: NodalVector3(values),
            jets,
            closure: None,
        })
    }

    /// Re-samples the analytic closure on another mesh.
    pub fn resample(&self, mesh: Arc<DiscMesh>) -> Result<Self> {
        match &self.closure {
            Some(c) => Self::sample_shared(mesh, c.clone()),
            None => Err(Error::Argument("field has no analytic closure".into())),
        }
    }

    /// `X ↦ n(λX)`, sampled from the closure on the same mesh.
    pub fn dilated(&self, lambda: f64) -> Result<Self> {
        let c = self
            .closure
            .clone()
            .ok_or_else(|| Error::Argument("field has no analytic closure".into()))?;
        Self::sample(self.mesh.clone(), move |x, y| c(lambda * x, lambda * y))
    }

    /// `X ↦ R·n(X)` for an orthogonal `R`.
    pub fn rotated(&self, r: Matrix3<f64>) -> Result<Self> {
        match &self.closure {
            Some(c) => {
                let c = c.clone();
                Self::sample(self.mesh.clone(), move |x, y| r * c(x, y))
            }
            None => Self::from_values(self.mesh.clone(), self.values.iter().map(|v| r * v).collect()),
        }
    }

    pub fn mesh(&self) -> &DiscMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<DiscMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &NodalVector3 {
        &self.values
    }

    pub fn closure(&self) -> Option<&FieldClosure> {
        self.closure.as_ref()
    }

    pub fn jets(&self) -> &[ElementJet] {
        &self.jets
    }

    /// Jacobian density `Φ` per triangle.
    pub fn phi(&self) -> ElementScalar {
        ElementScalar(self.jets.iter().map(ElementJet::phi).collect())
    }

    /// `∫|∇n|² dX`.
    pub fn dirichlet_energy(&self) -> f64 {
        self.integrate_jets(ElementJet::energy_density)
    }

    /// `∫|Φ| dX`.
    pub fn abs_phi_integral(&self) -> f64 {
        self.integrate_jets(|j| j.phi().abs())
    }

    /// `∫|∂₁n × ∂₂n| dX` with the implied `δ`.
    pub fn area_functional(&self) -> AreaReport {
        let area = self.integrate_jets(ElementJet::area_density);
        AreaReport {
            area,
            delta: 4.0 * std::f64::consts::PI - area,
        }
    }

    /// `(‖∂₁n‖_{L²}, ‖∂₂n‖_{L²})`.
    pub fn partial_norms(&self) -> [f64; 2] {
        [
            self.integrate_jets(|j| j.d1.norm_squared()).sqrt(),
            self.integrate_jets(|j| j.d2.norm_squared()).sqrt(),
        ]
    }

    fn integrate_jets(&self, f: impl Fn(&ElementJet) -> f64) -> f64 {
        self.jets
            .iter()
            .zip(self.mesh.geometry())
            .map(|(j, g)| f(j) * g.area)
            .sum()
    }

    /// CSV export with header `node,x,y,n1,n2,n3`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "node,x,y,n1,n2,n3")?;
        for (i, (p, v)) in self.mesh.nodes().iter().zip(self.values.iter()).enumerate() {
            writeln!(w, "{i},{},{},{},{},{}", p[0], p[1], v.x, v.y, v.z)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::{enneper_gauss_closure, ClosedForms};
    use std::f64::consts::PI;

    fn mesh(level: u32) -> Arc<DiscMesh> {
        Arc::new(DiscMesh::new(level).unwrap())
    }

    #[test]
    fn constant_field_is_flat() {
        let f = SphereField::sample(mesh(3), |_, _| Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!(f.values().iter().all(|v| (v - Vector3::z()).norm() < 1e-15));
        assert!(f.phi().iter().all(|&p| p.abs() < 1e-20));
        assert!(f.dirichlet_energy() < 1e-20);
        let a = f.area_functional();
        assert!(a.area < 1e-20);
        assert!((a.delta - 4.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn zero_vector_names_the_node() {
        let err = SphereField::sample(mesh(2), |x, y| Vector3::new(x, y, 0.0)).unwrap_err();
        match err {
            Error::Sampling { node, x, y } => {
                assert_eq!(node, 0);
                assert_eq!((x, y), (0.0, 0.0));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn unnormalized_closure_matches_gauss_map() {
        let eps = 0.5;
        let m = mesh(4);
        let f = SphereField::sample(m.clone(), move |x, y| {
            Vector3::new(2.0 * eps * x, 2.0 * eps * y, x * x + y * y - eps * eps)
        })
        .unwrap();
        let g = SphereField::sample(m, enneper_gauss_closure(eps)).unwrap();
        for (a, b) in f.values().iter().zip(g.values().iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn phi_near_origin() {
        let m = mesh(6);
        let f = SphereField::sample(m.clone(), enneper_gauss_closure(1.0)).unwrap();
        let phi = f.phi();
        let t = (0..m.triangle_count())
            .min_by(|&a, &b| {
                let ca = m.element(a).centroid;
                let cb = m.element(b).centroid;
                (ca[0].hypot(ca[1])).total_cmp(&cb[0].hypot(cb[1]))
            })
            .unwrap();
        assert!((phi[t] + 4.0).abs() < 1e-3, "{}", phi[t]);
    }

    #[test]
    fn enneper_integrals() {
        let m = mesh(6);
        for eps in [1.0, 0.5, 0.1] {
            let f = SphereField::sample(m.clone(), enneper_gauss_closure(eps)).unwrap();
            let cf = ClosedForms::new(eps);
            let e = f.dirichlet_energy();
            let a = f.area_functional().area;
            assert!((e - cf.int_grad_n2).abs() < 0.01 * cf.int_grad_n2, "{eps}: {e}");
            assert!((a - cf.int_abs_phi).abs() < 0.01 * cf.int_abs_phi, "{eps}: {a}");
            assert!(f.abs_phi_integral() <= 0.5 * e + 1e-12);
            assert!(2.0 * a <= e + 1e-12);
        }
    }

    #[test]
    fn csv_header() {
        let f = SphereField::sample(mesh(0), |_, _| Vector3::z()).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("node,x,y,n1,n2,n3\n0,0,0,0,0,1\n"));
        assert_eq!(s.lines().count(), 1 + f.mesh().node_count());
    }
}
