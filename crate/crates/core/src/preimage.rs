//! Preimage census, regular values and the coarea identity.
//!
//! Preimages of a target `n′` are computed for the piecewise affine
//! interpolant `m` of the nodal values: on each triangle, `m(X) ∥ n′` with
//! `m·n′ > 0` is a 2×2 linear system in barycentric coordinates.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::divform::{averaged_omega_singular, omega_term, phi_moment, DivergenceForm};
use crate::fields::SphereField;
use crate::mesh::{ElementScalar, NodalScalar};
use crate::sphere::{SphereFace, SpherePoint, SphereRegion};
use crate::{Error, Result};

/// Default bound `N` of the regular-value filter.
pub const DEFAULT_REGULAR_BOUND: usize = 64;

/// Barycentric tolerance for locating hits on edges and vertices.
pub const BARYCENTRIC_TOL: f64 = 1e-12;

/// Relative threshold below which `|Φ|` counts as zero.
const PHI_DEGENERACY: f64 = 1e-12;

/// Cells touched by one element before it goes to the global list.
const MAX_CELLS_PER_ELEMENT: usize = 4096;

/// Where a hit lies in its element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Interior,
    Edge,
    Vertex,
}

/// One point of `Y(n, n′)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hit {
    pub point: [f64; 2],
    /// `±1`, the sign of `Φ` on the element.
    pub sign: i8,
    /// Element containing the hit; the smallest index when shared.
    pub element: usize,
    pub barycentric: [f64; 3],
    pub kind: HitKind,
}

/// Preimages of one target.
#[derive(Debug, Clone, Serialize)]
pub struct PreimageCensus {
    pub target: [f64; 3],
    pub hits: Vec<Hit>,
    /// Elements where the solution set is not a single nondegenerate point:
    /// `Φ ≈ 0`, a singular system with `n′` on the element's image, or an
    /// edge/vertex hit whose adjacent elements disagree in sign.
    pub degenerate_elements: Vec<usize>,
}

impl PreimageCensus {
    pub fn card(&self) -> usize {
        self.hits.len()
    }

    /// `Σ sign` over hits.
    pub fn degree(&self) -> i64 {
        self.hits.iter().map(|h| h.sign as i64).sum()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_elements.is_empty()
    }
}

/// Why a target fails the regular-value filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    Degenerate { elements: usize },
    TooManyHits { count: usize },
    InverseDistance { value: f64 },
    NearPole { distance: f64 },
    NearBoundary { distance: f64 },
    Clustered { distance: f64 },
}

/// Outcome of [`regular_filter`].
#[derive(Debug, Clone, Serialize)]
pub struct RegularVerdict {
    pub accepted: bool,
    pub reasons: Vec<Rejection>,
    /// `Σ area/|n̄ − n′|` over elements.
    pub inverse_distance: f64,
    pub census: PreimageCensus,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    element: usize,
    bary: [f64; 3],
    kind: HitKind,
    key: HitKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum HitKey {
    Interior(usize),
    Edge(usize, usize),
    Vertex(usize),
}

enum Solve {
    None,
    Hit(Candidate),
    Degenerate,
}

/// Uniform grid over `[-1, 1]³` listing the elements whose image may
/// contain a given direction.
#[derive(Debug, Clone)]
struct ElementIndex {
    cells: HashMap<[i32; 3], Vec<u32>>,
    global: Vec<u32>,
    inv_cell: f64,
}

impl ElementIndex {
    fn new(field: &SphereField) -> Self {
        let values = field.values();
        let tris = field.mesh().triangles();
        let boxes: Vec<(Vector3<f64>, Vector3<f64>)> = tris
            .iter()
            .map(|t| {
                let mut lo = values[t[0]];
                let mut hi = values[t[0]];
                for &i in &t[1..] {
                    lo = lo.inf(&values[i]);
                    hi = hi.sup(&values[i]);
                }
                let diam = (hi - lo).norm();
                let pad = Vector3::repeat(diam + diam * diam + 1e-12);
                (lo - pad, hi + pad)
            })
            .collect();
        let mut sizes: Vec<f64> = boxes.iter().map(|(lo, hi)| (hi - lo).max()).collect();
        sizes.sort_by(f64::total_cmp);
        let median = sizes.get(sizes.len() / 2).copied().unwrap_or(1.0);
        let cell = (2.0 * median).clamp(2.0 / 256.0, 0.5);
        let inv_cell = 1.0 / cell;
        let mut cells: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        let mut global = Vec::new();
        for (t, (lo, hi)) in boxes.iter().enumerate() {
            let a = lo.map(|v| (v * inv_cell).floor() as i32);
            let b = hi.map(|v| (v * inv_cell).floor() as i32);
            let count = ((b - a).map(|d| d as usize + 1)).product();
            if count > MAX_CELLS_PER_ELEMENT {
                global.push(t as u32);
                continue;
            }
            for i in a.x..=b.x {
                for j in a.y..=b.y {
                    for k in a.z..=b.z {
                        cells.entry([i, j, k]).or_default().push(t as u32);
                    }
                }
            }
        }
        Self {
            cells,
            global,
            inv_cell,
        }
    }

    fn candidates(&self, s: &Vector3<f64>) -> impl Iterator<Item = usize> + '_ {
        let key = s.map(|v| (v * self.inv_cell).floor() as i32);
        self.cells
            .get(&[key.x, key.y, key.z])
            .into_iter()
            .flatten()
            .chain(&self.global)
            .map(|&t| t as usize)
    }
}

/// A field prepared for repeated preimage queries.
#[derive(Debug, Clone)]
pub struct PreimageSolver<'a> {
    field: &'a SphereField,
    index: ElementIndex,
    phi: ElementScalar,
    areas: Vec<f64>,
    h: f64,
}

fn orthonormal_complement(s: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if s.x.abs() < 0.6 { Vector3::x() } else { Vector3::y() };
    let u = (axis - s * s.dot(&axis)).normalize();
    (u, s.cross(&u))
}

impl<'a> PreimageSolver<'a> {
    pub fn new(field: &'a SphereField) -> Self {
        let mesh = field.mesh();
        Self {
            field,
            index: ElementIndex::new(field),
            phi: field.phi(),
            areas: mesh.geometry().iter().map(|g| g.area).collect(),
            h: mesh.max_edge_length(),
        }
    }

    pub fn field(&self) -> &SphereField {
        self.field
    }

    /// Mesh size used for the boundary and separation tests.
    pub fn mesh_size(&self) -> f64 {
        self.h
    }

    fn solve_element(&self, t: usize, s: &Vector3<f64>, basis: &(Vector3<f64>, Vector3<f64>)) -> Solve {
        let tri = self.field.mesh().triangles()[t];
        let v = self.field.values();
        let (v0, v1, v2) = (v[tri[0]], v[tri[1]], v[tri[2]]);
        let (a, b) = (v1 - v0, v2 - v0);
        let (u, w) = basis;
        let mat = Matrix2::new(u.dot(&a), u.dot(&b), w.dot(&a), w.dot(&b));
        let rhs = -Vector2::new(u.dot(&v0), w.dot(&v0));
        let scale = a.norm() * b.norm();
        let jet = &self.field.jets()[t];
        let flat = jet.d1.cross(&jet.d2).norm() <= PHI_DEGENERACY * jet.d1.norm() * jet.d2.norm();
        let Some(beta) = mat
            .try_inverse()
            .map(|inv| inv * rhs)
            .filter(|_| mat.determinant().abs() > PHI_DEGENERACY * scale && scale > 0.0)
        else {
            // Singular system: degenerate only if n′ lies on the image.
            let on_image = [v0, v1, v2]
                .iter()
                .any(|p| p.cross(s).norm() <= BARYCENTRIC_TOL && p.dot(s) > 0.0);
            return if on_image { Solve::Degenerate } else { Solve::None };
        };
        let bary = [1.0 - beta.x - beta.y, beta.x, beta.y];
        if bary.iter().any(|&c| c < -BARYCENTRIC_TOL) {
            return Solve::None;
        }
        let m = v0 + a * beta.x + b * beta.y;
        if m.dot(s) <= 0.0 {
            return Solve::None;
        }
        if flat || self.phi[t] == 0.0 {
            return Solve::Degenerate;
        }
        let small: Vec<usize> = (0..3).filter(|&k| bary[k] <= BARYCENTRIC_TOL).collect();
        let (kind, key) = match small.as_slice() {
            [] => (HitKind::Interior, HitKey::Interior(t)),
            [k] => {
                let (i, j) = (tri[(k + 1) % 3], tri[(k + 2) % 3]);
                (HitKind::Edge, HitKey::Edge(i.min(j), i.max(j)))
            }
            _ => {
                let k = (0..3).find(|k| !small.contains(k)).unwrap_or(0);
                (HitKind::Vertex, HitKey::Vertex(tri[k]))
            }
        };
        let clamped = bary.map(|c| c.clamp(0.0, 1.0));
        let total: f64 = clamped.iter().sum();
        Solve::Hit(Candidate {
            element: t,
            bary: clamped.map(|c| c / total),
            kind,
            key,
        })
    }

    /// Preimages of `s` (a unit vector).
    pub fn census(&self, s: &Vector3<f64>) -> PreimageCensus {
        let basis = orthonormal_complement(s);
        let mut found: Vec<Candidate> = Vec::new();
        let mut degenerate = Vec::new();
        for t in self.index.candidates(s) {
            match self.solve_element(t, s, &basis) {
                Solve::None => {}
                Solve::Hit(c) => found.push(c),
                Solve::Degenerate => degenerate.push(t),
            }
        }
        found.sort_by_key(|c| (c.key, c.element));
        let mesh = self.field.mesh();
        let mut hits = Vec::new();
        for group in found.chunk_by(|a, b| a.key == b.key) {
            let first = group[0];
            let sign = self.phi[first.element].signum();
            if group.iter().any(|c| self.phi[c.element].signum() != sign) {
                degenerate.extend(group.iter().map(|c| c.element));
                continue;
            }
            let tri = mesh.triangles()[first.element];
            let mut point = [0.0; 2];
            for (k, &i) in tri.iter().enumerate() {
                point[0] += first.bary[k] * mesh.nodes()[i][0];
                point[1] += first.bary[k] * mesh.nodes()[i][1];
            }
            hits.push(Hit {
                point,
                sign: sign as i8,
                element: first.element,
                barycentric: first.bary,
                kind: first.kind,
            });
        }
        degenerate.sort_unstable();
        degenerate.dedup();
        PreimageCensus {
            target: [s.x, s.y, s.z],
            hits,
            degenerate_elements: degenerate,
        }
    }

    /// `Σ_t area_t / |n̄_t − s|`.
    pub fn inverse_distance(&self, s: &Vector3<f64>) -> f64 {
        self.field
            .jets()
            .iter()
            .zip(&self.areas)
            .map(|(j, a)| a / (j.nbar - s).norm())
            .sum()
    }

    /// Regular-value test with bound `n_bound`.
    pub fn filter(&self, s: &Vector3<f64>, n_bound: usize) -> RegularVerdict {
        let census = self.census(s);
        let n = n_bound as f64;
        let mut reasons = Vec::new();
        if census.is_degenerate() {
            reasons.push(Rejection::Degenerate {
                elements: census.degenerate_elements.len(),
            });
        }
        if census.card() > n_bound {
            reasons.push(Rejection::TooManyHits { count: census.card() });
        }
        let pole = (s - Vector3::z()).norm().min((s + Vector3::z()).norm());
        if pole < 1.0 / n {
            reasons.push(Rejection::NearPole { distance: pole });
        }
        let inverse_distance = self.inverse_distance(s);
        if inverse_distance.is_nan() || inverse_distance > n {
            reasons.push(Rejection::InverseDistance {
                value: inverse_distance,
            });
        }
        if let Some(d) = census
            .hits
            .iter()
            .map(|h| 1.0 - h.point[0].hypot(h.point[1]))
            .reduce(f64::min)
            .filter(|&d| d < self.h)
        {
            reasons.push(Rejection::NearBoundary { distance: d });
        }
        let mut closest = f64::INFINITY;
        for (i, a) in census.hits.iter().enumerate() {
            for b in &census.hits[i + 1..] {
                closest = closest.min((a.point[0] - b.point[0]).hypot(a.point[1] - b.point[1]));
            }
        }
        if closest < self.h {
            reasons.push(Rejection::Clustered { distance: closest });
        }
        RegularVerdict {
            accepted: reasons.is_empty(),
            reasons,
            inverse_distance,
            census,
        }
    }
}

/// `Y(n, n′)` for the affine interpolant of `field`.
pub fn preimages(field: &SphereField, target: &SpherePoint) -> PreimageCensus {
    PreimageSolver::new(field).census(target.as_vector())
}

pub fn regular_filter(field: &SphereField, target: &SpherePoint, n_bound: usize) -> Result<RegularVerdict> {
    check_bound(n_bound)?;
    Ok(PreimageSolver::new(field).filter(target.as_vector(), n_bound))
}

fn check_bound(n_bound: usize) -> Result<()> {
    if n_bound < 2 {
        return Err(Error::Argument(format!(
            "regular-value bound N = {n_bound} must be ≥ 2"
        )));
    }
    Ok(())
}

/// Census at one quadrature node.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NodeCensus {
    pub node: [f64; 3],
    pub weight: f64,
    pub card: usize,
    pub degree: i64,
    pub accepted: bool,
}

/// Both sides of `∫_F g|Φ| dX = ∫_A Σ_{Y(n, n′)} g dS`.
#[derive(Debug, Clone, Serialize)]
pub struct CoareaReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Measure of region nodes rejected by the regular filter.
    pub excluded_measure: f64,
    pub region_measure: f64,
    pub n_bound: usize,
    #[serde(skip)]
    pub nodes: Vec<NodeCensus>,
}

impl CoareaReport {
    /// CSV with header `x,y,z,weight,card,degree,accepted`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,z,weight,card,degree,accepted")?;
        for n in &self.nodes {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                n.node[0], n.node[1], n.node[2], n.weight, n.card, n.degree, n.accepted as u8
            )?;
        }
        Ok(())
    }
}

fn census_over(solver: &PreimageSolver, faces: &[SphereFace], n_bound: usize) -> Vec<(NodeCensus, Vec<usize>)> {
    faces
        .par_iter()
        .map(|f| {
            let v = solver.filter(&f.node, n_bound);
            (
                NodeCensus {
                    node: [f.node.x, f.node.y, f.node.z],
                    weight: f.weight,
                    card: v.census.card(),
                    degree: v.census.degree(),
                    accepted: v.accepted,
                },
                v.census.hits.iter().map(|h| h.element).collect(),
            )
        })
        .collect()
}

/// Coarea check for an element-wise weight `g`.
pub fn coarea_check(
    field: &SphereField,
    g: &ElementScalar,
    region: &SphereRegion,
    n_bound: usize,
) -> Result<CoareaReport> {
    check_bound(n_bound)?;
    let mesh = field.mesh();
    if g.len() != mesh.triangle_count() {
        return Err(Error::Argument(format!(
            "{} weights for {} elements",
            g.len(),
            mesh.triangle_count()
        )));
    }
    let lhs: f64 = field
        .jets()
        .iter()
        .zip(mesh.geometry())
        .zip(g.iter())
        .filter(|((j, _), _)| region.contains(&j.nbar))
        .map(|((j, geo), gv)| gv * j.phi().abs() * geo.area)
        .sum();
    let solver = PreimageSolver::new(field);
    let per_node = census_over(&solver, region.faces(), n_bound);
    let mut rhs = 0.0;
    let mut excluded = 0.0;
    for (node, elements) in &per_node {
        if node.accepted {
            rhs += node.weight * elements.iter().map(|&t| g[t]).sum::<f64>();
        } else {
            excluded += node.weight;
        }
    }
    Ok(CoareaReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        excluded_measure: excluded,
        region_measure: region.measure(),
        n_bound,
        nodes: per_node.into_iter().map(|(n, _)| n).collect(),
    })
}

/// Terms of `∫Φζ = (4π/μ)∫_F Φζ + ∫(Ω₂∂₁ζ − Ω₁∂₂ζ)`.
#[derive(Debug, Clone, Serialize)]
pub struct HolographyReport {
    pub mu: f64,
    /// `∫Φζ`.
    pub raw: f64,
    /// `(4π/μ)∫_F Φζ`.
    pub f_term: f64,
    /// `∫(Ω₂∂₁ζ − Ω₁∂₂ζ)`.
    pub omega_term: f64,
    /// `raw − f_term`.
    pub excluded_difference: f64,
    /// `raw − f_term − omega_term`.
    pub residual: f64,
    pub omega_l2: [f64; 2],
    /// `|excluded_difference| / (μ^{-1/2} ‖∇n‖ ‖∇ζ‖)`.
    pub ratio: f64,
    /// `max ‖Ω_i‖ / (μ^{-1/2} ‖∇n‖)`.
    pub omega_constant: f64,
    pub quadrature_error: f64,
    /// Number of elements in `F`.
    pub f_elements: usize,
}

/// Relative tolerance of the singular averaging used by
/// [`holography_identity`].
pub const HOLOGRAPHY_REL_TOL: f64 = 1e-3;

/// Evaluates the holography identity for the region `A` and a test
/// function vanishing on `∂D₁`.
pub fn holography_identity(
    field: &SphereField,
    region: &SphereRegion,
    zeta: &NodalScalar,
) -> Result<(HolographyReport, DivergenceForm)> {
    let mu = region.measure();
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Argument(format!("region measure μ = {mu} must be positive")));
    }
    let mesh = field.mesh();
    if zeta.len() != mesh.node_count() {
        return Err(Error::Argument(format!(
            "{} test-function values for {} nodes",
            zeta.len(),
            mesh.node_count()
        )));
    }
    if let Some(&b) = mesh.boundary_nodes().iter().find(|&&i| zeta[i].abs() > 1e-14) {
        return Err(Error::Argument(format!(
            "test function is {} at boundary node {b}",
            zeta[b]
        )));
    }
    let form = averaged_omega_singular(field, region, HOLOGRAPHY_REL_TOL)?;
    let raw = phi_moment(field, zeta);
    let zbar = mesh.element_mean(zeta);
    let mut f_int = 0.0;
    let mut f_elements = 0;
    for ((j, g), z) in field.jets().iter().zip(mesh.geometry()).zip(zbar.iter()) {
        if region.contains(&j.nbar) {
            f_int += j.phi() * z * g.area;
            f_elements += 1;
        }
    }
    let f_term = 4.0 * std::f64::consts::PI / mu * f_int;
    let om = omega_term(field, &form, zeta);
    let grad_n = field.dirichlet_energy().sqrt();
    let grad_zeta = mesh.gradient_norm(zeta);
    let scale = grad_n / mu.sqrt();
    let excluded_difference = raw - f_term;
    let report = HolographyReport {
        mu,
        raw,
        f_term,
        omega_term: om,
        excluded_difference,
        residual: excluded_difference - om,
        omega_l2: form.l2,
        ratio: if scale * grad_zeta > 0.0 {
            excluded_difference.abs() / (scale * grad_zeta)
        } else {
            0.0
        },
        omega_constant: if scale > 0.0 {
            form.l2[0].max(form.l2[1]) / scale
        } else {
            0.0
        },
        quadrature_error: form.quadrature_error,
        f_elements,
    };
    Ok((report, form))
}
