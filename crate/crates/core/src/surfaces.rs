//! Immersions of the disc and two explicit families: scaled Enneper
//! surfaces and stereographic parametrizations of the sphere.
//!
//! For `ε > 0` write `λ_ε(X) = ε² + |X|²`. Both families share the Gauss map
//! `n_ε = (2εX₁, 2εX₂, |X|² − ε²)/λ_ε`, whose Jacobian density is
//! `Φ_ε = −4ε²/λ_ε²`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::fields::SphereField;
use crate::mesh::{DiscMesh, NodalScalar, NodalVector3};
use crate::{Error, Result};

/// Position and derivatives up to second order at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceJet {
    pub psi: Vector3<f64>,
    pub d1: Vector3<f64>,
    pub d2: Vector3<f64>,
    pub d11: Vector3<f64>,
    pub d12: Vector3<f64>,
    pub d22: Vector3<f64>,
}

type JetClosure = Arc<dyn Fn(f64, f64) -> SurfaceJet + Send + Sync>;
type PointClosure = Arc<dyn Fn(f64, f64) -> Vector3<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Enneper,
    StereographicPlus,
    StereographicMinus,
    Custom,
}

/// `λ_ε(X) = ε² + |X|²`.
pub fn lambda(eps: f64, x: f64, y: f64) -> f64 {
    eps * eps + x * x + y * y
}

/// Gauss map `n_ε` shared by the Enneper and `+` stereographic families.
pub fn enneper_gauss_map(eps: f64, x: f64, y: f64) -> Vector3<f64> {
    let l = lambda(eps, x, y);
    Vector3::new(2.0 * eps * x, 2.0 * eps * y, x * x + y * y - eps * eps) / l
}

pub fn enneper_gauss_closure(eps: f64) -> impl Fn(f64, f64) -> Vector3<f64> + Send + Sync + Clone {
    move |x, y| enneper_gauss_map(eps, x, y)
}

/// Unscaled Enneper coordinates `(ψ₁, ψ₂, ψ₃)`.
pub fn enneper_psi(eps: f64, x: f64, y: f64) -> Vector3<f64> {
    let e2 = eps * eps;
    Vector3::new(
        e2 * x - (x * x * x - 3.0 * x * y * y) / 3.0,
        -e2 * y + (y * y * y - 3.0 * x * x * y) / 3.0,
        eps * (x * x - y * y),
    )
}

/// Unscaled tangents `(a_ε, b_ε) = (∂₁ψ, ∂₂ψ)`.
pub fn enneper_tangents(eps: f64, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
    let e2 = eps * eps;
    let q = x * x - y * y;
    (
        Vector3::new(e2 - q, -2.0 * x * y, 2.0 * eps * x),
        Vector3::new(2.0 * x * y, -e2 - q, -2.0 * eps * y),
    )
}

fn enneper_jet(eps: f64, x: f64, y: f64) -> SurfaceJet {
    let s = 1.0 / (1.0 + eps * eps);
    let (a, b) = enneper_tangents(eps, x, y);
    SurfaceJet {
        psi: enneper_psi(eps, x, y) * s,
        d1: a * s,
        d2: b * s,
        d11: Vector3::new(-2.0 * x, -2.0 * y, 2.0 * eps) * s,
        d12: Vector3::new(2.0 * y, -2.0 * x, 0.0) * s,
        d22: Vector3::new(2.0 * x, 2.0 * y, -2.0 * eps) * s,
    }
}

/// `Ψ±` with sign `s = ±1`: `(2εX₁, 2εX₂, s(|X|² − ε²))/λ_ε`.
fn stereographic_jet(eps: f64, s: f64, x: f64, y: f64) -> SurfaceJet {
    let l = lambda(eps, x, y);
    let c = Vector3::new(2.0 * eps * x, 2.0 * eps * y, s * (x * x + y * y - eps * eps));
    let dc = [
        Vector3::new(2.0 * eps, 0.0, 2.0 * s * x),
        Vector3::new(0.0, 2.0 * eps, 2.0 * s * y),
    ];
    let dl = [2.0 * x, 2.0 * y];
    let ddc = Vector3::new(0.0, 0.0, 2.0 * s);
    let first = |i: usize| dc[i] / l - c * dl[i] / (l * l);
    let second = |i: usize, j: usize| {
        let kron = if i == j { 1.0 } else { 0.0 };
        ddc * kron / l - (dc[i] * dl[j] + dc[j] * dl[i]) / (l * l) - c * (2.0 * kron) / (l * l)
            + c * (2.0 * dl[i] * dl[j]) / (l * l * l)
    };
    SurfaceJet {
        psi: c / l,
        d1: first(0),
        d2: first(1),
        d11: second(0, 0),
        d12: second(0, 1),
        d22: second(1, 1),
    }
}

/// Exact reference values for the `ε`-family.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClosedForms {
    pub eps: f64,
    /// `∫|Φ_ε| = 4π/(1+ε²)`.
    pub int_abs_phi: f64,
    /// `∫|∇n_ε|² = 8π/(1+ε²)`.
    pub int_grad_n2: f64,
    /// `‖∇f_ε‖² = 4π{log(1/ε² + 1) − 1/(1+ε²)}`.
    pub grad_f2: f64,
    /// `Δ(ε) = ‖∇f_ε‖`.
    pub delta: f64,
    /// `f_ε(0) = log ε² − log(1+ε²)`.
    pub f_origin: f64,
    /// `Φ_ε(0) = −4/ε²`.
    pub phi_origin: f64,
}

impl ClosedForms {
    pub fn new(eps: f64) -> Self {
        let e2 = eps * eps;
        let grad_f2 = 4.0 * PI * ((1.0 / e2 + 1.0).ln() - 1.0 / (1.0 + e2));
        Self {
            eps,
            int_abs_phi: 4.0 * PI / (1.0 + e2),
            int_grad_n2: 8.0 * PI / (1.0 + e2),
            grad_f2,
            delta: grad_f2.sqrt(),
            f_origin: e2.ln() - (1.0 + e2).ln(),
            phi_origin: -4.0 / e2,
        }
    }

    /// `Φ_ε(X) = −4ε²/λ_ε²`.
    pub fn phi(&self, x: f64, y: f64) -> f64 {
        let l = lambda(self.eps, x, y);
        -4.0 * self.eps * self.eps / (l * l)
    }

    /// `f_ε(X) = log λ_ε − log(1+ε²)`.
    pub fn f(&self, x: f64, y: f64) -> f64 {
        lambda(self.eps, x, y).ln() - (1.0 + self.eps * self.eps).ln()
    }
}

/// Reference values of the `ε`-family; `ε > 0` required.
pub fn closed_form_table(eps: f64) -> Result<ClosedForms> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Argument(format!("ε = {eps} must be positive")));
    }
    Ok(ClosedForms::new(eps))
}

/// A parametrized surface sampled on a disc mesh.
#[derive(Clone)]
pub struct Immersion {
    mesh: Arc<DiscMesh>,
    family: Family,
    eps: Option<f64>,
    positions: NodalVector3,
    point: PointClosure,
    jet: Option<JetClosure>,
}

impl std::fmt::Debug for Immersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Immersion")
            .field("family", &self.family)
            .field("eps", &self.eps)
            .field("nodes", &self.positions.len())
            .finish()
    }
}

/// Scaled Enneper surface `Ψ_ε = ψ/(1+ε²)`, `0 < ε ≤ 1`.
pub fn enneper(eps: f64, mesh: Arc<DiscMesh>) -> Result<Immersion> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Argument(format!("Enneper ε = {eps} outside (0, 1]")));
    }
    Ok(Immersion::analytic(
        mesh,
        Family::Enneper,
        eps,
        Arc::new(move |x, y| enneper_jet(eps, x, y)),
    ))
}

/// Stereographic parametrization `Ψ±^ε`; `plus` selects the sign.
pub fn stereographic(eps: f64, plus: bool, mesh: Arc<DiscMesh>) -> Result<Immersion> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Argument(format!("ε = {eps} must be positive")));
    }
    let (family, s) = if plus {
        (Family::StereographicPlus, 1.0)
    } else {
        (Family::StereographicMinus, -1.0)
    };
    Ok(Immersion::analytic(
        mesh,
        family,
        eps,
        Arc::new(move |x, y| stereographic_jet(eps, s, x, y)),
    ))
}

impl Immersion {
    fn analytic(mesh: Arc<DiscMesh>, family: Family, eps: f64, jet: JetClosure) -> Self {
        let j = jet.clone();
        let point: PointClosure = Arc::new(move |x, y| j(x, y).psi);
        let positions = sample_points(&mesh, &point);
        Self {
            mesh,
            family,
            eps: Some(eps),
            positions,
            point,
            jet: Some(jet),
        }
    }

    /// Immersion given only by positions; derivatives are recovered from
    /// nodal values.
    pub fn custom(mesh: Arc<DiscMesh>, psi: impl Fn(f64, f64) -> Vector3<f64> + Send + Sync + 'static) -> Self {
        let point: PointClosure = Arc::new(psi);
        let positions = sample_points(&mesh, &point);
        Self {
            mesh,
            family: Family::Custom,
            eps: None,
            positions,
            point,
            jet: None,
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn mesh(&self) -> &DiscMesh {
        &self.mesh
    }

    pub fn positions(&self) -> &NodalVector3 {
        &self.positions
    }

    pub fn at(&self, x: f64, y: f64) -> Vector3<f64> {
        (self.point)(x, y)
    }

    /// Analytic jet when the family provides one.
    pub fn jet(&self, x: f64, y: f64) -> Option<SurfaceJet> {
        self.jet.as_ref().map(|j| j(x, y))
    }

    /// Sign `σ` with `Φ(documented Gauss map) = σ·K·e^{2f}`.
    pub fn orientation_sign(&self) -> f64 {
        match self.family {
            Family::StereographicPlus => -1.0,
            _ => 1.0,
        }
    }

    /// The family's documented Gauss map: `n_ε` for Enneper, `Ψ±` itself
    /// for the stereographic maps, `∂₁Ψ × ∂₂Ψ` normalized otherwise.
    pub fn gauss_map(&self) -> Result<SphereField> {
        let mesh = self.mesh.clone();
        match (self.family, self.eps) {
            (Family::Enneper, Some(eps)) => SphereField::sample(mesh, enneper_gauss_closure(eps)),
            (Family::StereographicPlus | Family::StereographicMinus, Some(_)) => {
                let p = self.point.clone();
                SphereField::sample(mesh, move |x, y| p(x, y))
            }
            _ => {
                let fit = QuadraticFit::new(&self.mesh, &self.positions);
                let normals = fit.d1.iter().zip(&fit.d2).map(|(a, b)| a.cross(b)).collect();
                SphereField::from_values(mesh, normals)
            }
        }
    }

    fn documented_normal(&self, j: &SurfaceJet, x: f64, y: f64) -> Vector3<f64> {
        match (self.family, self.eps) {
            (Family::Enneper, Some(eps)) => enneper_gauss_map(eps, x, y),
            (Family::StereographicPlus | Family::StereographicMinus, _) => j.psi.normalize(),
            _ => j.d1.cross(&j.d2).normalize(),
        }
    }

    /// Per-element jets: analytic at centroids, or averaged nodal quadratic
    /// fits for custom immersions.
    fn element_jets(&self) -> Vec<(SurfaceJet, Vector3<f64>)> {
        let geom = self.mesh.geometry();
        match &self.jet {
            Some(jet) => geom
                .par_iter()
                .map(|g| {
                    let [x, y] = g.centroid;
                    let j = jet(x, y);
                    (j, self.documented_normal(&j, x, y))
                })
                .collect(),
            None => {
                let fit = QuadraticFit::new(&self.mesh, &self.positions);
                self.mesh
                    .triangles()
                    .iter()
                    .zip(geom)
                    .map(|(t, g)| {
                        let avg = |v: &[Vector3<f64>]| (v[t[0]] + v[t[1]] + v[t[2]]) / 3.0;
                        let j = SurfaceJet {
                            psi: (self.point)(g.centroid[0], g.centroid[1]),
                            d1: avg(&fit.d1),
                            d2: avg(&fit.d2),
                            d11: avg(&fit.d11),
                            d12: avg(&fit.d12),
                            d22: avg(&fit.d22),
                        };
                        let n = j.d1.cross(&j.d2).normalize();
                        (j, n)
                    })
                    .collect()
            }
        }
    }
}

fn sample_points(mesh: &DiscMesh, p: &PointClosure) -> NodalVector3 {
    NodalVector3(mesh.nodes().par_iter().map(|&[x, y]| p(x, y)).collect())
}

/// Nodal first and second derivatives from least-squares quadratic fits
/// over node neighbourhoods (one ring, widened to two rings when the first
/// ring has fewer than six nodes).
struct QuadraticFit {
    d1: Vec<Vector3<f64>>,
    d2: Vec<Vector3<f64>>,
    d11: Vec<Vector3<f64>>,
    d12: Vec<Vector3<f64>>,
    d22: Vec<Vector3<f64>>,
}

impl QuadraticFit {
    fn new(mesh: &DiscMesh, values: &[Vector3<f64>]) -> Self {
        let adj = mesh.node_neighbors();
        let nodes = mesh.nodes();
        let per_node: Vec<[Vector3<f64>; 5]> = (0..nodes.len())
            .into_par_iter()
            .map(|i| {
                let mut hood = adj[i].clone();
                if hood.len() < 6 {
                    for &j in &adj[i] {
                        hood.extend(adj[j].iter().copied().filter(|&k| k != i));
                    }
                    hood.sort_unstable();
                    hood.dedup();
                }
                let p = nodes[i];
                // Offsets are scaled to unit size for conditioning.
                let scale = hood
                    .iter()
                    .map(|&j| (nodes[j][0] - p[0]).hypot(nodes[j][1] - p[1]))
                    .fold(0.0, f64::max);
                let a = DMatrix::from_fn(hood.len(), 5, |r, c| {
                    let dx = (nodes[hood[r]][0] - p[0]) / scale;
                    let dy = (nodes[hood[r]][1] - p[1]) / scale;
                    [dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy][c]
                });
                let unscale = [scale, scale, scale * scale, scale * scale, scale * scale];
                let svd = a.svd(true, true);
                let mut out = [Vector3::zeros(); 5];
                for comp in 0..3 {
                    let b = DVector::from_fn(hood.len(), |r, _| values[hood[r]][comp] - values[i][comp]);
                    let sol = svd.solve(&b, 1e-12).unwrap_or_else(|_| DVector::zeros(5));
                    for (k, o) in out.iter_mut().enumerate() {
                        o[comp] = sol[k] / unscale[k];
                    }
                }
                out
            })
            .collect();
        let pick = |k: usize| per_node.iter().map(|v| v[k]).collect();
        Self {
            d1: pick(0),
            d2: pick(1),
            d11: pick(2),
            d12: pick(3),
            d22: pick(4),
        }
    }
}

/// Per-element first and second fundamental forms and curvatures.
#[derive(Debug, Clone, Default, Serialize)]
pub struct FundamentalForms {
    pub e: Vec<f64>,
    pub f_coef: Vec<f64>,
    pub g: Vec<f64>,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
    pub n: Vec<f64>,
    /// Gauss curvature `(LN − M²)/(EG − F²)`.
    pub k: Vec<f64>,
    pub h: Vec<f64>,
    /// `|A|² = 4H² − 2K`.
    pub a2: Vec<f64>,
    /// `½ log E` on elements where the parametrization is conformal.
    pub log_conformal: Vec<Option<f64>>,
    /// Elements with `EG − F² ≤ 0`.
    pub degenerate: Vec<usize>,
}

/// Relative tolerance on `|E − G|` and `|F|` for the conformal mean
/// curvature formula.
const CONFORMAL_TOL: f64 = 1e-8;

pub fn fundamental_forms(imm: &Immersion) -> FundamentalForms {
    let jets = imm.element_jets();
    let mut out = FundamentalForms::default();
    for (t, (j, nrm)) in jets.iter().enumerate() {
        let e = j.d1.dot(&j.d1);
        let f = j.d1.dot(&j.d2);
        let g = j.d2.dot(&j.d2);
        let l = j.d11.dot(nrm);
        let m = j.d12.dot(nrm);
        let n = j.d22.dot(nrm);
        let det = e * g - f * f;
        let conformal = (e - g).abs() <= CONFORMAL_TOL * e && f.abs() <= CONFORMAL_TOL * e;
        let (k, h) = if det > 0.0 {
            let k = (l * n - m * m) / det;
            let h = if conformal {
                (l + n) / (2.0 * e)
            } else {
                (l * g - 2.0 * m * f + n * e) / (2.0 * det)
            };
            (k, h)
        } else {
            out.degenerate.push(t);
            (f64::NAN, f64::NAN)
        };
        out.e.push(e);
        out.f_coef.push(f);
        out.g.push(g);
        out.l.push(l);
        out.m.push(m);
        out.n.push(n);
        out.k.push(k);
        out.h.push(h);
        out.a2.push(4.0 * h * h - 2.0 * k);
        out.log_conformal.push((conformal && e > 0.0).then(|| 0.5 * e.ln()));
    }
    out
}

/// Conformality defects of an immersion.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConformalReport {
    pub max_abs_e_minus_g: f64,
    pub max_abs_f: f64,
    /// `max (|E − G| + |F|)/E`.
    pub max_rel_defect: f64,
    /// `(∫((|E − G| + |F|)/E)² dX)^{1/2}`.
    pub l2_rel_defect: f64,
    /// `max |½ log E − f_ε|` over element centroids (families only).
    pub f_error_max: Option<f64>,
    /// `max |½ log E|` over boundary nodes (families only).
    pub boundary_f_max: Option<f64>,
}

pub fn conformal_check(imm: &Immersion) -> ConformalReport {
    let forms = fundamental_forms(imm);
    let mesh = imm.mesh();
    let mut max_eg: f64 = 0.0;
    let mut max_f: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut l2 = 0.0;
    for t in 0..forms.e.len() {
        let eg = (forms.e[t] - forms.g[t]).abs();
        let f = forms.f_coef[t].abs();
        let rel = (eg + f) / forms.e[t];
        max_eg = max_eg.max(eg);
        max_f = max_f.max(f);
        max_rel = max_rel.max(rel);
        l2 += rel * rel * mesh.element(t).area;
    }
    let (f_error_max, boundary_f_max) = match (imm.family, imm.eps) {
        (Family::Custom, _) | (_, None) => (None, None),
        (family, Some(eps)) => {
            let reference = |x: f64, y: f64| match family {
                Family::Enneper => ClosedForms::new(eps).f(x, y),
                _ => (2.0 * eps / lambda(eps, x, y)).ln(),
            };
            let err = mesh
                .geometry()
                .iter()
                .zip(&forms.e)
                .map(|(g, e)| (0.5 * e.ln() - reference(g.centroid[0], g.centroid[1])).abs())
                .fold(0.0, f64::max);
            let bnd = mesh
                .boundary_nodes()
                .iter()
                .map(|&i| {
                    let [x, y] = mesh.nodes()[i];
                    let j = imm.jet(x, y).expect("family jet");
                    (0.5 * j.d1.norm_squared().ln()).abs()
                })
                .fold(0.0, f64::max);
            (Some(err), Some(bnd))
        }
    };
    ConformalReport {
        max_abs_e_minus_g: max_eg,
        max_abs_f: max_f,
        max_rel_defect: max_rel,
        l2_rel_defect: l2.sqrt(),
        f_error_max,
        boundary_f_max,
    }
}

/// `ζ_ε = f_ε/Δ(ε)` sampled at the nodes.
pub fn zeta_eps(eps: f64, mesh: &DiscMesh) -> Result<NodalScalar> {
    let cf = closed_form_table(eps)?;
    Ok(mesh.sample_nodal(|x, y| cf.f(x, y) / cf.delta))
}

/// Which closed-form solution branch a self-intersection pair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntersectionFamily {
    /// `φ̂ = 3π/2`, `φ̃ = π/2`, `r² = 3ε²`.
    Vertical,
    /// `φ̂ = π`, `φ̃ = 0`, `r² = 3ε²`.
    Horizontal,
    /// `φ̃ = −φ̂`, `ε² + r²(1 − (4/3)sin²φ̂) = 0`.
    MirrorX,
    /// `φ̃ = π − φ̂`, `ε² + r²(1 − (4/3)cos²φ̂) = 0`.
    MirrorY,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IntersectionPair {
    pub family: IntersectionFamily,
    pub x_hat: [f64; 2],
    pub x_tilde: [f64; 2],
    /// `|Ψ_ε(X̂) − Ψ_ε(X̃)|`.
    pub gap: f64,
}

/// Result of the numeric search for coincident pairs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepReport {
    pub starts: usize,
    pub pairs_found: usize,
    /// Smallest `|X|²` over both points of all pairs found.
    pub min_radius_sq: Option<f64>,
    /// Pairs with `|X|² < 3ε² − 1e−6`.
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfIntersectionReport {
    pub eps: f64,
    pub pairs: Vec<IntersectionPair>,
    pub reason: Option<String>,
    pub sweep: Option<SweepReport>,
}

/// Radii at which the one-parameter branches are sampled.
const BRANCH_SAMPLES: usize = 5;

/// Self-intersections of the Enneper surface `Ψ_ε(D₁)`.
///
/// Coincident points share `|X|` and exist only for `|X|² ≥ 3ε²`. The two
/// isolated solutions at `r = √3ε` and the two one-parameter branches for
/// `√3ε ≤ r ≤ 1` are enumerated in closed form; a Gauss–Newton search from
/// seeded random starts then looks for any other coincident pairs.
pub fn self_intersections(eps: f64, seed: u64) -> Result<SelfIntersectionReport> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Argument(format!("Enneper ε = {eps} outside (0, 1]")));
    }
    let r0 = 3f64.sqrt() * eps;
    if r0 > 1.0 {
        return Ok(SelfIntersectionReport {
            eps,
            pairs: Vec::new(),
            reason: Some("intersection radius exceeds D₁".into()),
            sweep: None,
        });
    }
    let psi = |p: [f64; 2]| enneper_psi(eps, p[0], p[1]) / (1.0 + eps * eps);
    let pair = |family, x_hat: [f64; 2], x_tilde: [f64; 2]| IntersectionPair {
        family,
        x_hat,
        x_tilde,
        gap: (psi(x_hat) - psi(x_tilde)).norm(),
    };
    let mut pairs = vec![
        pair(IntersectionFamily::Vertical, [0.0, -r0], [0.0, r0]),
        pair(IntersectionFamily::Horizontal, [-r0, 0.0], [r0, 0.0]),
    ];
    for k in 0..BRANCH_SAMPLES {
        let r = if BRANCH_SAMPLES == 1 {
            r0
        } else {
            r0 + (1.0 - r0) * k as f64 / (BRANCH_SAMPLES - 1) as f64
        };
        let s2 = (0.75 * (1.0 + eps * eps / (r * r))).min(1.0);
        let phi = s2.sqrt().asin();
        let (c, s) = (phi.cos(), phi.sin());
        pairs.push(pair(IntersectionFamily::MirrorX, [r * c, r * s], [r * c, -r * s]));
        let c2 = s2;
        let phi = c2.sqrt().acos();
        let (c, s) = (phi.cos(), phi.sin());
        pairs.push(pair(IntersectionFamily::MirrorY, [r * c, r * s], [-r * c, r * s]));
    }
    let sweep = sweep(eps, seed);
    Ok(SelfIntersectionReport {
        eps,
        pairs,
        reason: None,
        sweep: Some(sweep),
    })
}

fn sweep(eps: f64, seed: u64) -> SweepReport {
    const STARTS: usize = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<[f64; 4]> = (0..STARTS)
        .map(|k| {
            let r = rng.random::<f64>().sqrt();
            let t = rng.random_range(0.0..2.0 * PI);
            let (x, y) = (r * t.cos(), r * t.sin());
            let jitter = |rng: &mut ChaCha8Rng| rng.random_range(-0.05..0.05);
            // Mix unstructured starts with starts near the three reflections.
            match k % 4 {
                0 => [x, y, x + jitter(&mut rng), -y + jitter(&mut rng)],
                1 => [x, y, -x + jitter(&mut rng), y + jitter(&mut rng)],
                2 => [x, y, -x + jitter(&mut rng), -y + jitter(&mut rng)],
                _ => {
                    let r2 = rng.random::<f64>().sqrt();
                    let t2 = rng.random_range(0.0..2.0 * PI);
                    [x, y, r2 * t2.cos(), r2 * t2.sin()]
                }
            }
        })
        .collect();
    let found: Vec<[f64; 4]> = starts.par_iter().filter_map(|s| refine_pair(eps, *s)).collect();
    let threshold = 3.0 * eps * eps - 1e-6;
    let mut min_r2: Option<f64> = None;
    let mut violations = 0;
    for p in &found {
        let r2 = (p[0] * p[0] + p[1] * p[1]).min(p[2] * p[2] + p[3] * p[3]);
        min_r2 = Some(min_r2.map_or(r2, |m| m.min(r2)));
        if r2 < threshold {
            violations += 1;
        }
    }
    SweepReport {
        starts: STARTS,
        pairs_found: found.len(),
        min_radius_sq: min_r2,
        violations,
    }
}

/// Minimum-norm Gauss–Newton on `Ψ(X̂) − Ψ(X̃) = 0`; returns converged pairs
/// inside the closed disc with the two points at least `1e−3` apart.
fn refine_pair(eps: f64, mut p: [f64; 4]) -> Option<[f64; 4]> {
    for _ in 0..60 {
        let (ah, bh) = enneper_tangents(eps, p[0], p[1]);
        let (at, bt) = enneper_tangents(eps, p[2], p[3]);
        let r = enneper_psi(eps, p[0], p[1]) - enneper_psi(eps, p[2], p[3]);
        if r.norm() < 1e-14 {
            break;
        }
        let j = nalgebra::Matrix3x4::from_columns(&[ah, bh, -at, -bt]);
        let jjt = j * j.transpose();
        let step = j.transpose() * jjt.try_inverse()? * r;
        for k in 0..4 {
            p[k] -= step[k];
        }
    }
    let gap = (enneper_psi(eps, p[0], p[1]) - enneper_psi(eps, p[2], p[3])).norm();
    let sep = ((p[0] - p[2]).powi(2) + (p[1] - p[3]).powi(2)).sqrt();
    let inside = p[0] * p[0] + p[1] * p[1] <= 1.0 && p[2] * p[2] + p[3] * p[3] <= 1.0;
    (gap < 1e-12 && sep > 1e-3 && inside).then_some(p)
}
