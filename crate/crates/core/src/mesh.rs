//! Concentric-ring triangulations of the closed unit disc.
//!
//! A level-`L` mesh has target edge length `h = 2^-L`. The annulus
//! `1/4 ≤ |X| ≤ 1` is covered by rings spaced `h` apart whose azimuthal
//! count grows with the radius. Inside `|X| = 1/4` the rings keep a constant
//! azimuthal count and are spaced geometrically down to a small core disc
//! closed by a fan around the origin, so that fields concentrating at the
//! origin on a scale `ε` are resolved by the same number of elements for
//! every `ε` above the core radius. Boundary nodes lie exactly on `|X| = 1`.

use std::f64::consts::PI;
use std::io::Write;
use std::ops::{Deref, DerefMut};

use rayon::prelude::*;

use crate::{Error, Result};

/// Highest refinement level accepted by [`DiscMesh::new`].
pub const MAX_LEVEL: u32 = 10;

/// Radius below which rings are spaced geometrically.
pub const GRADED_RADIUS: f64 = 0.25;

/// Radius of the innermost ring, closed by a fan around the origin.
pub const CORE_RADIUS: f64 = 1.0 / 1024.0;

/// Per-triangle geometry of the linear interpolant.
#[derive(Debug, Clone, Copy)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the three barycentric basis functions.
    pub grad: [[f64; 2]; 3],
    pub centroid: [f64; 2],
}

/// Triangulation of the closed unit disc with boundary marking.
#[derive(Debug, Clone)]
pub struct DiscMesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    boundary_nodes: Vec<usize>,
    geometry: Vec<ElementGeometry>,
    level: u32,
    max_edge: f64,
}

macro_rules! carrier {
    ($(#[$meta:meta])* $name:ident, $elem:ty) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name(pub Vec<$elem>);

        impl $name {
            pub fn into_inner(self) -> Vec<$elem> {
                self.0
            }
        }

        impl Deref for $name {
            type Target = [$elem];
            fn deref(&self) -> &[$elem] {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut [$elem] {
                &mut self.0
            }
        }

        impl From<Vec<$elem>> for $name {
            fn from(v: Vec<$elem>) -> Self {
                Self(v)
            }
        }
    };
}

carrier!(
    /// One value per mesh node.
    NodalScalar,
    f64
);
carrier!(
    /// One value per triangle.
    ElementScalar,
    f64
);
carrier!(
    /// One 3-vector per mesh node.
    NodalVector3,
    nalgebra::Vector3<f64>
);

/// One planar vector per triangle (e.g. the gradient of a P1 field).
pub type ElementVector = Vec<[f64; 2]>;

struct Ring {
    radius: f64,
    count: usize,
    offset: f64,
    first: usize,
}

fn ring_radii(level: u32) -> Vec<f64> {
    let h = 0.5f64.powi(level as i32);
    let gamma = 4.0 * h;
    let mut radii = Vec::new();
    if gamma <= 0.5 {
        let outer = ((1.0 - GRADED_RADIUS) / h).round().max(1.0) as usize;
        let du = (1.0 - GRADED_RADIUS) / outer as f64;
        radii.extend((0..outer).map(|k| 1.0 - k as f64 * du));
        let inner = ((GRADED_RADIUS / CORE_RADIUS).ln() / -(1.0 - gamma).ln()).ceil() as usize;
        let q = (CORE_RADIUS / GRADED_RADIUS).powf(1.0 / inner as f64);
        radii.extend((0..=inner).map(|k| GRADED_RADIUS * q.powi(k as i32)));
    } else {
        let rings = (1.0 / h).round().max(1.0) as usize;
        radii.extend((0..rings).map(|k| 1.0 - k as f64 * h));
    }
    radii
}

fn ring_count(radius: f64, level: u32) -> usize {
    let h = 0.5f64.powi(level as i32);
    let gamma = 4.0 * h;
    let azimuthal = (2.0 * PI * radius / h).ceil() as usize;
    if gamma <= 0.5 {
        azimuthal.max((2.0 * PI / gamma).ceil() as usize)
    } else {
        azimuthal.max(6)
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl DiscMesh {
    /// Builds the deterministic concentric-ring mesh for `level`.
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::ResourceGuard {
                what: "refinement_level",
                requested: level as usize,
                max: MAX_LEVEL as usize,
            });
        }
        // Inner rings first; the outermost ring is the boundary.
        let mut radii = ring_radii(level);
        radii.reverse();

        let mut nodes = vec![[0.0, 0.0]];
        let mut rings = Vec::with_capacity(radii.len());
        for (j, &radius) in radii.iter().enumerate() {
            let count = ring_count(radius, level);
            let offset = if j % 2 == 1 { PI / count as f64 } else { 0.0 };
            let first = nodes.len();
            for i in 0..count {
                let t = offset + 2.0 * PI * i as f64 / count as f64;
                let (s, c) = t.sin_cos();
                nodes.push([radius * c, radius * s]);
            }
            rings.push(Ring {
                radius,
                count,
                offset,
                first,
            });
        }

        let mut triangles = Vec::new();
        let core = &rings[0];
        for i in 0..core.count {
            triangles.push([0, core.first + i, core.first + (i + 1) % core.count]);
        }
        for pair in rings.windows(2) {
            zip_rings(&pair[0], &pair[1], &mut triangles);
        }
        for t in triangles.iter_mut() {
            if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
        }

        let outer = rings.last().expect("at least one ring");
        debug_assert!((outer.radius - 1.0).abs() < 1e-15);
        let boundary_nodes: Vec<usize> = (outer.first..outer.first + outer.count).collect();
        Self::assemble(nodes, triangles, boundary_nodes, level)
    }

    /// Builds a mesh from explicit parts. Every triangle must have strictly
    /// positive signed area.
    pub fn from_parts(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_nodes: Vec<usize>,
        level: u32,
    ) -> Result<Self> {
        Self::assemble(nodes, triangles, boundary_nodes, level)
    }

    fn assemble(
        nodes: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        boundary_nodes: Vec<usize>,
        level: u32,
    ) -> Result<Self> {
        let mut boundary = vec![false; nodes.len()];
        for &b in &boundary_nodes {
            let slot = boundary
                .get_mut(b)
                .ok_or_else(|| Error::Argument(format!("boundary node {b} out of range")))?;
            *slot = true;
        }
        let mut geometry = Vec::with_capacity(triangles.len());
        let mut max_edge: f64 = 0.0;
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nodes.len()) {
                return Err(Error::Argument(format!("triangle {t} references a missing node")));
            }
            let [a, b, c] = tri.map(|i| nodes[i]);
            let area = signed_area(a, b, c);
            if area <= 0.0 {
                return Err(Error::Argument(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
            let inv = 1.0 / (2.0 * area);
            let grad = [
                [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
                [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
                [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
            ];
            let centroid = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            for (p, q) in [(a, b), (b, c), (c, a)] {
                max_edge = max_edge.max((p[0] - q[0]).hypot(p[1] - q[1]));
            }
            geometry.push(ElementGeometry { area, grad, centroid });
        }
        Ok(Self {
            nodes,
            triangles,
            boundary,
            boundary_nodes,
            geometry,
            level,
            max_edge,
        })
    }

    /// Mirror image under `(X₁, X₂) ↦ (X₂, X₁)`. Node and triangle indices
    /// are preserved; each triangle's orientation is restored by swapping two
    /// of its vertices.
    pub fn reflected(&self) -> Self {
        let nodes = self.nodes.iter().map(|&[x, y]| [y, x]).collect();
        let triangles = self.triangles.iter().map(|&[a, b, c]| [a, c, b]).collect();
        Self::assemble(nodes, triangles, self.boundary_nodes.clone(), self.level)
            .expect("reflection preserves validity")
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn element(&self, t: usize) -> &ElementGeometry {
        &self.geometry[t]
    }

    /// Longest edge of the triangulation.
    pub fn max_edge_length(&self) -> f64 {
        self.max_edge
    }

    /// Total (polygonal) area.
    pub fn area(&self) -> f64 {
        self.geometry.iter().map(|g| g.area).sum()
    }

    /// An interior node away from the boundary, used to pin Neumann solves.
    pub fn interior_anchor(&self) -> usize {
        0
    }

    pub fn sample_nodal(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> NodalScalar {
        NodalScalar(self.nodes.par_iter().map(|&[x, y]| f(x, y)).collect())
    }

    pub fn sample_centroids(&self, f: impl Fn(f64, f64) -> f64 + Sync) -> ElementScalar {
        ElementScalar(
            self.geometry
                .par_iter()
                .map(|g| f(g.centroid[0], g.centroid[1]))
                .collect(),
        )
    }

    /// Exact gradient of the linear interpolant on every triangle.
    pub fn element_gradient(&self, field: &NodalScalar) -> ElementVector {
        assert_eq!(field.len(), self.node_count(), "nodal field length");
        self.triangles
            .par_iter()
            .zip(self.geometry.par_iter())
            .map(|(tri, g)| {
                let mut d = [0.0; 2];
                for (k, &i) in tri.iter().enumerate() {
                    d[0] += field[i] * g.grad[k][0];
                    d[1] += field[i] * g.grad[k][1];
                }
                d
            })
            .collect()
    }

    /// Value of the linear interpolant at each triangle centroid.
    pub fn element_mean(&self, field: &NodalScalar) -> ElementScalar {
        ElementScalar(
            self.triangles
                .iter()
                .map(|t| (field[t[0]] + field[t[1]] + field[t[2]]) / 3.0)
                .collect(),
        )
    }

    /// `Σ_T value_T · |T|`.
    pub fn integrate(&self, field: &ElementScalar) -> f64 {
        assert_eq!(field.len(), self.triangle_count(), "element field length");
        field.iter().zip(&self.geometry).map(|(v, g)| v * g.area).sum()
    }

    /// Exact integral of the linear interpolant.
    pub fn integrate_nodal(&self, field: &NodalScalar) -> f64 {
        self.integrate(&self.element_mean(field))
    }

    /// `‖∇u‖_{L²}` of the linear interpolant.
    pub fn gradient_norm(&self, field: &NodalScalar) -> f64 {
        self.element_gradient(field)
            .iter()
            .zip(&self.geometry)
            .map(|(d, g)| (d[0] * d[0] + d[1] * d[1]) * g.area)
            .sum::<f64>()
            .sqrt()
    }

    /// Node-to-node adjacency (sorted, without self).
    pub fn node_neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for t in &self.triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        adj[t[a]].push(t[b]);
                    }
                }
            }
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Plain-text export: `ND NT`, then `x y b` per node, then `i j k` per
    /// triangle (0-based).
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.node_count(), self.triangle_count())?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{} {} {}", p[0], p[1], u8::from(self.boundary[i]))?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        Ok(())
    }
}

/// Triangulates the annulus between two consecutive rings by merging their
/// nodes in angular order.
fn zip_rings(inner: &Ring, outer: &Ring, out: &mut Vec<[usize; 3]>) {
    let (p, q) = (inner.count, outer.count);
    let da = 2.0 * PI / p as f64;
    let db = 2.0 * PI / q as f64;
    let a0 = inner.offset;
    // Outer node closest in angle to the first inner node.
    let j0 = (((a0 - outer.offset) / db).round() as i64).rem_euclid(q as i64) as usize;
    let mut b0 = outer.offset + j0 as f64 * db;
    while b0 - a0 > PI {
        b0 -= 2.0 * PI;
    }
    while a0 - b0 > PI {
        b0 += 2.0 * PI;
    }
    let angle_a = |i: usize| a0 + i as f64 * da;
    let angle_b = |j: usize| b0 + j as f64 * db;
    let node_a = |i: usize| inner.first + i % p;
    let node_b = |j: usize| outer.first + (j0 + j) % q;

    let (mut i, mut j) = (0, 0);
    while i < p || j < q {
        let advance_inner = if i == p {
            false
        } else if j == q {
            true
        } else {
            angle_a(i + 1) < angle_b(j + 1)
        };
        if advance_inner {
            out.push([node_a(i), node_a(i + 1), node_b(j)]);
            i += 1;
        } else {
            out.push([node_a(i), node_b(j + 1), node_b(j)]);
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_zero_is_coarse_but_close_to_pi() {
        let m = DiscMesh::new(0).unwrap();
        assert!((m.area() - PI).abs() <= 0.2 * PI);
        assert_eq!(m.boundary_nodes().len(), 7);
    }

    #[test]
    fn level_guard() {
        assert!(matches!(DiscMesh::new(MAX_LEVEL + 1), Err(Error::ResourceGuard { .. })));
    }

    #[test]
    fn all_triangles_positive_and_edges_bounded() {
        for level in 0..=6 {
            let m = DiscMesh::new(level).unwrap();
            assert!(m.geometry().iter().all(|g| g.area > 0.0));
            let h = 0.5f64.powi(level as i32);
            assert!(m.max_edge_length() <= 2.0 * h, "level {level}: {}", m.max_edge_length());
        }
    }

    #[test]
    fn boundary_nodes_on_unit_circle_and_hull() {
        let m = DiscMesh::new(4).unwrap();
        for (i, p) in m.nodes().iter().enumerate() {
            let r = p[0].hypot(p[1]);
            assert_eq!(m.is_boundary(i), (r - 1.0).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn every_edge_shared_by_at_most_two_triangles_and_boundary_edges_on_circle() {
        use std::collections::HashMap;
        let m = DiscMesh::new(5).unwrap();
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &edges {
            assert!(n == 1 || n == 2);
            if n == 1 {
                assert!(m.is_boundary(a) && m.is_boundary(b));
            }
        }
        // Euler characteristic of a disc.
        let chi = m.node_count() as i64 - edges.len() as i64 + m.triangle_count() as i64;
        assert_eq!(chi, 1);
    }

    #[test]
    fn area_converges_monotonically() {
        let errs: Vec<f64> = (0..=6).map(|l| (DiscMesh::new(l).unwrap().area() - PI).abs()).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
        assert!(errs[6] < 1e-3);
    }

    #[test]
    fn affine_fields_have_exact_gradients() {
        let m = DiscMesh::new(4).unwrap();
        let f = m.sample_nodal(|x, y| 3.0 * x - 2.0 * y + 7.0);
        for d in m.element_gradient(&f) {
            assert!((d[0] - 3.0).abs() < 1e-9 && (d[1] + 2.0).abs() < 1e-9, "{d:?}");
        }
        let f = m.sample_nodal(|x, _| x);
        for d in m.element_gradient(&f) {
            assert!((d[0] - 1.0).abs() < 1e-9 && d[1].abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_gradient_within_mesh_size() {
        let m = DiscMesh::new(6).unwrap();
        let f = m.sample_nodal(|x, y| x * x + y * y);
        let grads = m.element_gradient(&f);
        for (d, g) in grads.iter().zip(m.geometry()) {
            let exact = [2.0 * g.centroid[0], 2.0 * g.centroid[1]];
            let err = (d[0] - exact[0]).hypot(d[1] - exact[1]);
            assert!(err <= 2.0 * m.max_edge_length(), "{err}");
        }
    }

    #[test]
    fn integrate_constants_and_radial_moment() {
        let m = DiscMesh::new(6).unwrap();
        let zero = ElementScalar(vec![0.0; m.triangle_count()]);
        assert_eq!(m.integrate(&zero), 0.0);
        let one = ElementScalar(vec![1.0; m.triangle_count()]);
        assert!((m.integrate(&one) - PI).abs() < 1e-3);
        let r2 = m.sample_centroids(|x, y| x * x + y * y);
        assert!((m.integrate(&r2) - PI / 2.0).abs() < 0.01 * PI / 2.0);
    }

    #[test]
    fn reflection_preserves_areas() {
        let m = DiscMesh::new(3).unwrap();
        let r = m.reflected();
        for (a, b) in m.geometry().iter().zip(r.geometry()) {
            assert!((a.area - b.area).abs() < 1e-15);
        }
    }

    #[test]
    fn text_export_header_and_line_counts() {
        let m = DiscMesh::new(1).unwrap();
        let mut buf = Vec::new();
        m.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("{} {}", m.node_count(), m.triangle_count()));
        assert_eq!(lines.len(), 1 + m.node_count() + m.triangle_count());
        assert!(lines[1].ends_with(" 0"));
    }
}
