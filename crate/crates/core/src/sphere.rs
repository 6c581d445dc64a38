//! Quadrature on the unit sphere S² from a recursively subdivided
//! icosahedron. Each spherical face contributes one node (its normalized
//! centroid) weighted by its exact spherical area, so the weights of a full
//! sphere sum to 4π up to rounding.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use crate::{Error, Result};

/// Highest subdivision level accepted by [`SphereQuadrature::new`].
pub const MAX_QUADRATURE_LEVEL: u32 = 9;

/// A unit vector in ℝ³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpherePoint(Vector3<f64>);

impl SpherePoint {
    /// Normalizes `v`; fails on (near-)zero or non-finite input.
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-300 {
            return Err(Error::Argument(format!("cannot normalize {v:?}")));
        }
        Ok(Self(v / n))
    }

    pub fn from_xyz(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(Vector3::new(x, y, z))
    }

    /// Point with the given polar angle from `+k` and azimuth.
    pub fn from_angles(polar: f64, azimuth: f64) -> Self {
        let (st, ct) = polar.sin_cos();
        let (sp, cp) = azimuth.sin_cos();
        Self(Vector3::new(st * cp, st * sp, ct))
    }

    /// North pole `k = (0, 0, 1)`.
    pub fn north() -> Self {
        Self(Vector3::z())
    }

    pub fn south() -> Self {
        Self(-Vector3::z())
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_vector(self) -> Vector3<f64> {
        self.0
    }

    /// Euclidean (chordal) distance.
    pub fn chord(&self, other: &SpherePoint) -> f64 {
        (self.0 - other.0).norm()
    }

    /// Great-circle distance.
    pub fn geodesic(&self, other: &SpherePoint) -> f64 {
        let c = self.0.cross(&other.0).norm();
        let d = self.0.dot(&other.0);
        c.atan2(d)
    }
}

/// One spherical triangle of the quadrature.
#[derive(Debug, Clone, Copy)]
pub struct SphereFace {
    pub vertices: [Vector3<f64>; 3],
    pub node: Vector3<f64>,
    pub weight: f64,
}

impl SphereFace {
    fn from_vertices(vertices: [Vector3<f64>; 3]) -> Self {
        let node = (vertices[0] + vertices[1] + vertices[2]).normalize();
        Self {
            vertices,
            node,
            weight: spherical_triangle_area(&vertices[0], &vertices[1], &vertices[2]),
        }
    }

    /// Four children from edge-midpoint subdivision; the first three keep the
    /// parent's corners in positions 0, 1, 2 respectively.
    pub fn subdivide(&self) -> [SphereFace; 4] {
        let [a, b, c] = self.vertices;
        let ab = (a + b).normalize();
        let bc = (b + c).normalize();
        let ca = (c + a).normalize();
        [
            Self::from_vertices([a, ab, ca]),
            Self::from_vertices([ab, b, bc]),
            Self::from_vertices([ca, bc, c]),
            Self::from_vertices([ab, bc, ca]),
        ]
    }

    /// Largest chord between two vertices.
    pub fn diameter(&self) -> f64 {
        let [a, b, c] = self.vertices;
        (a - b).norm().max((b - c).norm()).max((c - a).norm())
    }
}

/// Exact area of the spherical triangle with unit-vector corners.
pub fn spherical_triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let num = a.dot(&b.cross(c)).abs();
    let den = 1.0 + a.dot(b) + b.dot(c) + c.dot(a);
    2.0 * num.atan2(den)
}

/// Node/weight list covering the whole sphere.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    level: u32,
    faces: Vec<SphereFace>,
}

fn icosahedron() -> Vec<[Vector3<f64>; 3]> {
    let p = (1.0 + 5f64.sqrt()) / 2.0;
    let v: Vec<Vector3<f64>> = [
        [-1.0, p, 0.0],
        [1.0, p, 0.0],
        [-1.0, -p, 0.0],
        [1.0, -p, 0.0],
        [0.0, -1.0, p],
        [0.0, 1.0, p],
        [0.0, -1.0, -p],
        [0.0, 1.0, -p],
        [p, 0.0, -1.0],
        [p, 0.0, 1.0],
        [-p, 0.0, -1.0],
        [-p, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    const FACES: [[usize; 3]; 20] = [
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    FACES.iter().map(|f| [v[f[0]], v[f[1]], v[f[2]]]).collect()
}

impl SphereQuadrature {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_QUADRATURE_LEVEL {
            return Err(Error::ResourceGuard {
                what: "sphere quadrature level",
                requested: level as usize,
                max: MAX_QUADRATURE_LEVEL as usize,
            });
        }
        let mut faces: Vec<SphereFace> = icosahedron().into_iter().map(SphereFace::from_vertices).collect();
        for _ in 0..level {
            faces = faces.par_iter().flat_map_iter(|f| f.subdivide()).collect();
        }
        Ok(Self { level, faces })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn faces(&self) -> &[SphereFace] {
        &self.faces
    }

    pub fn len(&self) -> usize {
        self.faces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.faces.iter().map(|f| f.weight).sum()
    }

    /// Typical face diameter (chord), used as the node spacing.
    pub fn spacing(&self) -> f64 {
        self.faces.first().map_or(0.0, |f| f.diameter())
    }
}

/// Shape of a [`SphereRegion`].
#[derive(Debug, Clone, Copy, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionShape {
    Full,
    /// Closed geodesic cap `{s: dist(s, center) ≤ rho}`.
    Cap {
        center: [f64; 3],
        rho: f64,
    },
    /// Complement of a cap.
    CapComplement {
        center: [f64; 3],
        rho: f64,
    },
    /// Arbitrary membership predicate.
    Custom,
}

type Membership = Arc<dyn Fn(&Vector3<f64>) -> bool + Send + Sync>;

/// Quadrature restricted to a subset of the sphere.
///
/// Faces are kept when their node satisfies the membership predicate. When
/// the exact measure of the region is known (caps and their complements),
/// weights are rescaled so they sum to it.
#[derive(Clone)]
pub struct SphereRegion {
    shape: RegionShape,
    faces: Vec<SphereFace>,
    measure: f64,
    empirical_measure: f64,
    scale: f64,
    contains: Membership,
}

impl std::fmt::Debug for SphereRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SphereRegion")
            .field("shape", &self.shape)
            .field("faces", &self.faces.len())
            .field("measure", &self.measure)
            .field("empirical_measure", &self.empirical_measure)
            .finish()
    }
}

/// Measure of a geodesic cap of angular radius `rho`.
pub fn cap_measure(rho: f64) -> f64 {
    2.0 * PI * (1.0 - rho.cos())
}

impl SphereRegion {
    fn build(quad: &SphereQuadrature, shape: RegionShape, contains: Membership, exact_measure: Option<f64>) -> Self {
        let faces: Vec<SphereFace> = quad.faces.iter().filter(|f| contains(&f.node)).copied().collect();
        let empirical: f64 = faces.iter().map(|f| f.weight).sum();
        let (measure, scale) = match exact_measure {
            Some(m) if empirical > 0.0 => (m, m / empirical),
            Some(m) => (m, 1.0),
            None => (empirical, 1.0),
        };
        let faces = faces
            .into_iter()
            .map(|mut f| {
                f.weight *= scale;
                f
            })
            .collect();
        Self {
            shape,
            faces,
            measure,
            empirical_measure: empirical,
            scale,
            contains,
        }
    }

    pub fn full(quad: &SphereQuadrature) -> Self {
        Self::build(quad, RegionShape::Full, Arc::new(|_| true), Some(4.0 * PI))
    }

    /// Geodesic cap of angular radius `rho ∈ (0, π)` around `center`.
    pub fn cap(quad: &SphereQuadrature, center: SpherePoint, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let c = center.into_vector();
        let cos_rho = rho.cos();
        Ok(Self::build(
            quad,
            RegionShape::Cap {
                center: [c.x, c.y, c.z],
                rho,
            },
            Arc::new(move |s| s.dot(&c) >= cos_rho),
            Some(cap_measure(rho)),
        ))
    }

    /// Complement of the cap of angular radius `rho` around `center`.
    pub fn cap_complement(quad: &SphereQuadrature, center: SpherePoint, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        let c = center.into_vector();
        let cos_rho = rho.cos();
        Ok(Self::build(
            quad,
            RegionShape::CapComplement {
                center: [c.x, c.y, c.z],
                rho,
            },
            Arc::new(move |s| s.dot(&c) < cos_rho),
            Some(4.0 * PI - cap_measure(rho)),
        ))
    }

    /// Region given by a membership predicate; `exact_measure`, when known,
    /// normalizes the weights.
    pub fn from_predicate(
        quad: &SphereQuadrature,
        contains: impl Fn(&Vector3<f64>) -> bool + Send + Sync + 'static,
        exact_measure: Option<f64>,
    ) -> Self {
        Self::build(quad, RegionShape::Custom, Arc::new(contains), exact_measure)
    }

    /// Region made of the given faces (weights taken as is).
    pub fn from_faces(
        faces: Vec<SphereFace>,
        contains: impl Fn(&Vector3<f64>) -> bool + Send + Sync + 'static,
    ) -> Self {
        let measure = faces.iter().map(|f| f.weight).sum();
        Self {
            shape: RegionShape::Custom,
            faces,
            measure,
            empirical_measure: measure,
            scale: 1.0,
            contains: Arc::new(contains),
        }
    }

    pub fn shape(&self) -> RegionShape {
        self.shape
    }

    pub fn faces(&self) -> &[SphereFace] {
        &self.faces
    }

    /// Exact measure when known, otherwise the sum of unscaled weights.
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Sum of the unscaled weights of the retained faces.
    pub fn empirical_measure(&self) -> f64 {
        self.empirical_measure
    }

    pub fn contains(&self, s: &Vector3<f64>) -> bool {
        (self.contains)(s)
    }

    pub fn weight_scale(&self) -> f64 {
        self.scale
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho < PI {
        Ok(())
    } else {
        Err(Error::Argument(format!("cap radius {rho} outside (0, π)")))
    }
}

/// Quadrature value with an error indicator.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuadratureEstimate {
    pub value: f64,
    /// Difference between the estimate and the one obtained from the
    /// parent faces (one level coarser); for adaptive singular integration,
    /// also the bound on the unresolved neighbourhood of the singularity.
    pub error: f64,
}

/// `∫_region f dS`.
pub fn integrate_sphere(f: impl Fn(&Vector3<f64>) -> f64 + Sync, region: &SphereRegion) -> Result<QuadratureEstimate> {
    let values: Vec<f64> = region.faces.par_iter().map(|face| f(&face.node)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "integrand is {} at quadrature node {:?}",
            values[i], region.faces[i].node
        )));
    }
    let value: f64 = values.iter().zip(&region.faces).map(|(v, face)| v * face.weight).sum();
    Ok(QuadratureEstimate {
        value,
        error: coarse_difference(&f, region, &values, value),
    })
}

/// Compares against the estimate using one node per parent face. Faces of a
/// region are stored in subdivision order, so siblings are consecutive and
/// share the parent's corners at positions 0, 1, 2 of the first three.
fn coarse_difference(
    f: &(impl Fn(&Vector3<f64>) -> f64 + Sync),
    region: &SphereRegion,
    _values: &[f64],
    value: f64,
) -> f64 {
    let faces = &region.faces;
    let mut coarse = 0.0;
    let mut i = 0;
    while i < faces.len() {
        let is_group = i + 3 < faces.len()
            && faces[i].vertices[0] != faces[i + 1].vertices[0]
            && faces[i + 3].vertices[0] == faces[i + 1].vertices[0]
            && faces[i + 3].vertices[2] == faces[i + 2].vertices[0];
        if is_group {
            let corners = [faces[i].vertices[0], faces[i + 1].vertices[1], faces[i + 2].vertices[2]];
            let parent = (corners[0] + corners[1] + corners[2]).normalize();
            let w: f64 = faces[i..i + 4].iter().map(|f| f.weight).sum();
            coarse += w * f(&parent);
            i += 4;
        } else {
            coarse += faces[i].weight * f(&faces[i].node);
            i += 1;
        }
    }
    (value - coarse).abs()
}

/// Location and tolerance for integrands with an integrable `1/|s − x|`
/// singularity.
#[derive(Debug, Clone, Copy)]
pub struct Singularity {
    pub point: Vector3<f64>,
    /// Relative tolerance on the bound of each unresolved face.
    pub rel_tol: f64,
    /// Maximum extra subdivision depth.
    pub max_depth: u32,
}

impl Singularity {
    pub fn at(point: Vector3<f64>) -> Self {
        Self {
            point,
            rel_tol: 1e-4,
            max_depth: 16,
        }
    }
}

/// `∫_region f dS` for `f` with `|f(s)| ≤ C/|s − x|` near the declared
/// singular point `x`.
///
/// Faces whose node lies within two face diameters of `x` are subdivided
/// recursively. A face is accepted once its contribution bound
/// `C · 2√(π·area)` falls below `rel_tol` times the accumulated magnitude,
/// where `C` is estimated from `|f(s)|·|s − x|` at the nearby nodes. Faces
/// still unresolved at the depth limit contribute their node value when
/// finite, and their bound is added to the error.
pub fn integrate_singular(
    f: impl Fn(&Vector3<f64>) -> f64 + Sync,
    region: &SphereRegion,
    singularity: Singularity,
) -> Result<QuadratureEstimate> {
    let ([value], error) = integrate_singular_vec(|s| [f(s)], region, singularity)?;
    Ok(QuadratureEstimate { value, error })
}

/// Componentwise version of [`integrate_singular`]; the error bound uses the
/// Euclidean norm of the components.
pub fn integrate_singular_vec<const D: usize>(
    f: impl Fn(&Vector3<f64>) -> [f64; D],
    region: &SphereRegion,
    singularity: Singularity,
) -> Result<([f64; D], f64)> {
    let x = singularity.point;
    let norm = |v: &[f64; D]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let finite = |v: &[f64; D]| v.iter().all(|c| c.is_finite());
    let mut sum = [0.0; D];
    let mut magnitude = 0.0;
    let mut near: Vec<SphereFace> = Vec::new();
    for face in &region.faces {
        if (face.node - x).norm() < 2.0 * face.diameter() {
            near.push(*face);
            continue;
        }
        let v = f(&face.node);
        if !finite(&v) {
            return Err(Error::Numeric(format!(
                "integrand is not finite at {:?}, away from the singularity",
                face.node
            )));
        }
        for (s, c) in sum.iter_mut().zip(&v) {
            *s += c * face.weight;
        }
        magnitude += norm(&v) * face.weight;
    }

    let mut strength: f64 = 0.0;
    let mut error = 0.0;
    let mut depth = 0;
    while !near.is_empty() {
        let evaluated: Vec<(SphereFace, [f64; D])> = near.drain(..).map(|face| (face, f(&face.node))).collect();
        for (face, v) in &evaluated {
            let d = (face.node - x).norm();
            if finite(v) && d > 0.0 {
                strength = strength.max(norm(v) * d);
            }
        }
        let mut refine = Vec::new();
        for (face, v) in evaluated {
            let close = (face.node - x).norm() < 2.0 * face.diameter();
            let bound = strength * 2.0 * (PI * face.weight).sqrt();
            let resolved = !close || bound <= singularity.rel_tol * magnitude;
            if resolved || depth >= singularity.max_depth {
                if finite(&v) {
                    for (s, c) in sum.iter_mut().zip(&v) {
                        *s += c * face.weight;
                    }
                    magnitude += norm(&v) * face.weight;
                }
                if close {
                    error += bound;
                }
            } else {
                refine.push(face);
            }
        }
        depth += 1;
        for face in refine {
            for mut child in face.subdivide() {
                if region.contains(&child.node) {
                    child.weight *= region.scale;
                    near.push(child);
                }
            }
        }
    }
    Ok((sum, error))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn weights_sum_to_sphere_area() {
        for level in 0..=5 {
            let q = SphereQuadrature::new(level).unwrap();
            assert!(q.faces().iter().all(|f| f.weight > 0.0));
            assert!((q.total_weight() - 4.0 * PI).abs() < 1e-9, "level {level}");
        }
    }

    #[test]
    fn level_guard() {
        assert!(SphereQuadrature::new(MAX_QUADRATURE_LEVEL + 1).is_err());
    }

    #[test]
    fn odd_integrand_vanishes() {
        let q = SphereQuadrature::new(4).unwrap();
        let full = SphereRegion::full(&q);
        let est = integrate_sphere(|s| s.z, &full).unwrap();
        assert!(est.value.abs() < 1e-10);
    }

    #[test]
    fn cap_measures() {
        let q = SphereQuadrature::new(5).unwrap();
        let hemi = SphereRegion::cap(&q, SpherePoint::north(), PI / 2.0).unwrap();
        assert!((hemi.measure() - 2.0 * PI).abs() < 1e-12);
        let c = SphereRegion::cap(&q, SpherePoint::north(), PI / 3.0).unwrap();
        assert!((c.measure() - PI).abs() < 1e-12);
        let comp = SphereRegion::cap_complement(&q, SpherePoint::north(), PI / 3.0).unwrap();
        assert!((c.measure() + comp.measure() - 4.0 * PI).abs() < 1e-12);
        // Empirical measure of the filtered faces approaches the exact one.
        assert!((c.empirical_measure() - PI).abs() < 0.02 * PI);
        let one = integrate_sphere(|_| 1.0, &c).unwrap();
        assert!((one.value - PI).abs() < 1e-10);
        let quarter = SphereRegion::cap(&q, SpherePoint::north(), PI / 4.0).unwrap();
        let one = integrate_sphere(|_| 1.0, &quarter).unwrap();
        assert!((one.value - 2.0 * PI * (1.0 - (PI / 4.0).cos())).abs() < 1e-10);
    }

    #[test]
    fn degenerate_caps_rejected() {
        let q = SphereQuadrature::new(1).unwrap();
        assert!(SphereRegion::cap(&q, SpherePoint::north(), 0.0).is_err());
        assert!(SphereRegion::cap(&q, SpherePoint::north(), PI).is_err());
    }

    #[test]
    fn non_finite_integrand_is_an_error() {
        let q = SphereQuadrature::new(2).unwrap();
        let full = SphereRegion::full(&q);
        let node = q.faces()[3].node;
        let r = integrate_sphere(move |s| 1.0 / (s - node).norm(), &full);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn inverse_distance_integrates_to_four_pi() {
        let q = SphereQuadrature::new(4).unwrap();
        let full = SphereRegion::full(&q);
        let k = Vector3::z();
        let est = integrate_singular(move |s| 1.0 / (s - k).norm(), &full, Singularity::at(k)).unwrap();
        assert!((est.value - 4.0 * PI).abs() < 0.01 * 4.0 * PI, "{est:?}");

        // Singular point exactly at a quadrature node.
        let node = q.faces()[17].node;
        let est = integrate_singular(move |s| 1.0 / (s - node).norm(), &full, Singularity::at(node)).unwrap();
        assert!((est.value - 4.0 * PI).abs() < 0.01 * 4.0 * PI, "{est:?}");
    }

    #[test]
    fn inverse_distance_random_points() {
        let q = SphereQuadrature::new(3).unwrap();
        let full = SphereRegion::full(&q);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let p = SpherePoint::from_xyz(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap()
            .into_vector();
            let est = integrate_singular(move |s| 1.0 / (s - p).norm(), &full, Singularity::at(p)).unwrap();
            assert!((est.value - 4.0 * PI).abs() < 0.01 * 4.0 * PI, "{p:?}: {est:?}");
        }
    }

    #[test]
    fn rotation_invariance_of_smooth_integrals() {
        let q = SphereQuadrature::new(4).unwrap();
        let full = SphereRegion::full(&q);
        let f = |s: &Vector3<f64>| (2.0 * s.x).exp() * (1.0 + s.y * s.z);
        let base = integrate_sphere(f, &full).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let axis = nalgebra::Unit::new_normalize(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ));
            let r = nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(0.0..PI));
            let rotated = integrate_sphere(|s| f(&(r * s)), &full).unwrap();
            let tol = 2.0 * (base.error + rotated.error).max(1e-12);
            assert!((rotated.value - base.value).abs() <= tol, "{base:?} {rotated:?}");
        }
    }
}
