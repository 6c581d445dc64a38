//! Coulomb moving frames for sphere-valued fields.
//!
//! A frame is a nodal orthonormal pair `(e₁, e₂)` tangent to `n` with
//! `n·(e₁ × e₂) > 0`. Its connection form is `h = (e₁·∂₁e₂, e₁·∂₂e₂)`;
//! rotating the frame by an angle field `θ` changes `h` to `h + ∇θ`. The
//! Coulomb gauge makes `h` divergence free with `h·ν = 0` on the boundary,
//! and then `h = (∂₂f, −∂₁f)` with `−Δf = Φ`, `f = 0` on `∂D₁`.
//!
//! Frames are built by continuation in `λ ∈ [0, 1]` along `n_λ(X) = n(λX)`,
//! starting from a constant frame at `λ = 0`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bumps::Bump;
use crate::fields::SphereField;
use crate::mesh::{DiscMesh, ElementScalar, ElementVector, NodalScalar, NodalVector3};
use crate::pde::FemSolver;
use crate::{Error, Result};

/// Maximum nodal change `‖ℙ_new − ℙ_old‖` of the tangent projector per step.
pub const PROJECTOR_STEP_LIMIT: f64 = 0.125;

/// Smallest admissible projected length `|ℙe₁|`.
pub const PROJECTION_FLOOR: f64 = 0.5;

/// An orthonormal tangent pair per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub e1: NodalVector3,
    pub e2: NodalVector3,
}

/// Constant frame tangent to `n0`: `e₁` is the normalized projection of the
/// first axis (the second axis when `|n0·x| > 0.9`) and `e₂ = n0 × e₁`.
pub fn initial_pair(n0: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let axis = if n0.x.abs() > 0.9 { Vector3::y() } else { Vector3::x() };
    let e1 = (axis - n0 * n0.dot(&axis)).normalize();
    (e1, n0.cross(&e1))
}

/// Projects a frame onto the tangent planes of `n_new` and re-orthonormalizes
/// by Gram–Schmidt.
pub fn project_frame(prev: &FramePair, n_new: &SphereField) -> Result<FramePair> {
    let n = n_new.values();
    let mut e1 = Vec::with_capacity(n.len());
    let mut e2 = Vec::with_capacity(n.len());
    for (i, nv) in n.iter().enumerate() {
        let p1 = prev.e1[i] - nv * nv.dot(&prev.e1[i]);
        let l1 = p1.norm();
        if l1 < PROJECTION_FLOOR {
            return Err(Error::StepTooLarge { node: i, norm: l1 });
        }
        let a = p1 / l1;
        let p2 = prev.e2[i] - nv * nv.dot(&prev.e2[i]);
        let q2 = p2 - a * a.dot(&p2);
        let l2 = q2.norm();
        if l2 < PROJECTION_FLOOR {
            return Err(Error::StepTooLarge { node: i, norm: l2 });
        }
        e1.push(a);
        e2.push(q2 / l2);
    }
    Ok(FramePair {
        e1: NodalVector3(e1),
        e2: NodalVector3(e2),
    })
}

/// `e₁ + ie₂ ↦ e^{iθ}(e₁ + ie₂)` nodewise.
pub fn gauge_rotate(pair: &FramePair, theta: &NodalScalar) -> FramePair {
    let (e1, e2) = pair
        .e1
        .iter()
        .zip(pair.e2.iter())
        .zip(theta.iter())
        .map(|((a, b), t)| {
            let (s, c) = t.sin_cos();
            (a * c - b * s, a * s + b * c)
        })
        .unzip();
    FramePair {
        e1: NodalVector3(e1),
        e2: NodalVector3(e2),
    }
}

/// Per-element P1 derivatives `(∂₁v, ∂₂v)` of a nodal vector field.
fn vector_gradient(mesh: &DiscMesh, v: &[Vector3<f64>]) -> Vec<[Vector3<f64>; 2]> {
    mesh.triangles()
        .iter()
        .zip(mesh.geometry())
        .map(|(t, g)| {
            let mut d = [Vector3::zeros(); 2];
            for (k, &i) in t.iter().enumerate() {
                d[0] += v[i] * g.grad[k][0];
                d[1] += v[i] * g.grad[k][1];
            }
            d
        })
        .collect()
}

/// Connection form `h = (e₁·∂₁e₂, e₁·∂₂e₂)` per element, with `e₁` the
/// centroid value of its interpolant.
pub fn connection(mesh: &DiscMesh, pair: &FramePair) -> ElementVector {
    let de2 = vector_gradient(mesh, &pair.e2);
    mesh.triangles()
        .iter()
        .zip(de2)
        .map(|(t, d)| {
            let e1 = (pair.e1[t[0]] + pair.e1[t[1]] + pair.e1[t[2]]) / 3.0;
            [e1.dot(&d[0]), e1.dot(&d[1])]
        })
        .collect()
}

/// Conformal-factor logarithm recovered from a connection form.
#[derive(Debug, Clone)]
pub struct RecoveredF {
    /// Solution of `−Δf = ∂₁h₂ − ∂₂h₁` (weakly), `f = 0` on `∂D₁`.
    pub f: NodalScalar,
    /// Standard deviation of the boundary values of the least-squares fit
    /// `(∂₂g, −∂₁g) ≈ h` without boundary data; zero when `h` is exactly
    /// a rotated gradient of a function constant on `∂D₁`.
    pub boundary_std: f64,
}

/// Recovers `f` from `h = (∂₂f, −∂₁f)`.
pub fn recover_f(h: &[[f64; 2]], solver: &FemSolver) -> Result<RecoveredF> {
    let rotated: Vec<[f64; 2]> = h.iter().map(|v| [-v[1], v[0]]).collect();
    let load = solver.vector_load(&rotated);
    let f = solver.solve_dirichlet_load(&load)?.f;
    let g = solver.solve_neumann_load(&load)?;
    let mesh = solver.mesh();
    let bnd: Vec<f64> = mesh.boundary_nodes().iter().map(|&i| g[i]).collect();
    let mean = bnd.iter().sum::<f64>() / bnd.len() as f64;
    let var = bnd.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bnd.len() as f64;
    Ok(RecoveredF {
        f,
        boundary_std: var.sqrt(),
    })
}

/// Frame with its field, conformal factor and connection.
#[derive(Debug, Clone)]
pub struct Frame {
    pub field: SphereField,
    pub pair: FramePair,
    pub f: NodalScalar,
    pub h: ElementVector,
    pub boundary_std: f64,
}

/// One accepted continuation step.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepRecord {
    pub lambda: f64,
    pub step: f64,
    pub orth_defect: f64,
    pub coulomb_residual: f64,
    pub f_max: f64,
    pub grad_f_norm: f64,
}

/// Continuation parameters.
#[derive(Debug, Clone, Copy)]
pub struct ContinuationOptions {
    pub n_steps: usize,
    pub min_step: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            n_steps: 16,
            min_step: 1e-4,
        }
    }
}

/// Continuation result: final frame plus the step log.
#[derive(Debug, Clone)]
pub struct Continuation {
    pub frame: Frame,
    pub log: Vec<StepRecord>,
    pub rejected_steps: usize,
}

impl Continuation {
    /// CSV with header `lambda,step,orth_defect,coulomb_residual,f_max,grad_f_norm`.
    pub fn write_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "lambda,step,orth_defect,coulomb_residual,f_max,grad_f_norm")?;
        for r in &self.log {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.lambda, r.step, r.orth_defect, r.coulomb_residual, r.f_max, r.grad_f_norm
            )?;
        }
        Ok(())
    }
}

/// Largest `|e₁|−1`, `|e₂|−1`, `e₁·e₂` defect over nodes.
pub fn orthonormality_defect(pair: &FramePair) -> f64 {
    pair.e1
        .iter()
        .zip(pair.e2.iter())
        .map(|(a, b)| (a.norm() - 1.0).abs().max((b.norm() - 1.0).abs()).max(a.dot(b).abs()))
        .fold(0.0, f64::max)
}

/// `sup_ζ |∫h·∇ζ| / ‖∇ζ‖` over all discrete `ζ` (no boundary condition):
/// the energy norm of the Neumann solution with load `∫h·∇φᵢ`.
pub fn coulomb_residual(h: &[[f64; 2]], solver: &FemSolver) -> Result<f64> {
    let load = solver.vector_load(h);
    let psi = solver.solve_neumann_load(&load)?;
    Ok(solver.mesh().gradient_norm(&psi))
}

fn max_projector_change(a: &SphereField, b: &SphereField) -> f64 {
    a.values()
        .iter()
        .zip(b.values().iter())
        .map(|(u, v)| u.cross(v).norm())
        .fold(0.0, f64::max)
}

/// Coulomb gauge for a frame tangent to `field`.
fn coulomb_gauge(pair: &FramePair, solver: &FemSolver) -> Result<FramePair> {
    let h = connection(solver.mesh(), pair);
    let theta = solver.solve_gauge(&h)?;
    Ok(gauge_rotate(pair, &theta))
}

/// Builds a Coulomb frame for `field` by continuation from `λ = 0`.
pub fn coulomb_continuation(
    field: &SphereField,
    solver: &FemSolver,
    opts: ContinuationOptions,
) -> Result<Continuation> {
    let delta = field.area_functional().delta;
    if delta <= 0.0 {
        return Err(Error::HypothesisViolation(format!(
            "image area exceeds 4π (δ = {delta})"
        )));
    }
    if opts.n_steps == 0 {
        return Err(Error::Argument("continuation needs at least one step".into()));
    }
    let nominal = 1.0 / opts.n_steps as f64;
    let mut lambda = 0.0;
    let mut current = field.dilated(0.0)?;
    let (a, b) = initial_pair(&current.values()[0]);
    let nodes = field.mesh().node_count();
    let mut pair = FramePair {
        e1: NodalVector3(vec![a; nodes]),
        e2: NodalVector3(vec![b; nodes]),
    };
    let mut step = nominal;
    let mut log = Vec::new();
    let mut rejected = 0;
    while lambda < 1.0 {
        let next = (lambda + step).min(1.0);
        let candidate = field.dilated(next)?;
        let projected = if max_projector_change(&current, &candidate) > PROJECTOR_STEP_LIMIT {
            None
        } else {
            match project_frame(&pair, &candidate) {
                Ok(p) => Some(p),
                Err(Error::StepTooLarge { .. }) => None,
                Err(e) => return Err(e),
            }
        };
        let Some(projected) = projected else {
            rejected += 1;
            step *= 0.5;
            if step < opts.min_step {
                return Err(Error::ContinuationFailure { lambda, step });
            }
            continue;
        };
        pair = coulomb_gauge(&projected, solver)?;
        let h = connection(solver.mesh(), &pair);
        let rec = recover_f(&h, solver)?;
        log.push(StepRecord {
            lambda: next,
            step: next - lambda,
            orth_defect: orthonormality_defect(&pair),
            coulomb_residual: coulomb_residual(&h, solver)?,
            f_max: rec.f.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            grad_f_norm: solver.mesh().gradient_norm(&rec.f),
        });
        lambda = next;
        current = candidate;
        step = (2.0 * step).min(nominal);
    }
    let h = connection(solver.mesh(), &pair);
    let rec = recover_f(&h, solver)?;
    Ok(Continuation {
        frame: Frame {
            field: current,
            pair,
            f: rec.f,
            h,
            boundary_std: rec.boundary_std,
        },
        log,
        rejected_steps: rejected,
    })
}

/// Residuals of a frame against its defining equations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrameReport {
    pub orth_defect: f64,
    pub tangency_defect: f64,
    /// `min n·(e₁ × e₂)` over nodes.
    pub orientation_min: f64,
    /// `‖∂₁f + e₁·∂₂e₂‖_{L²} + ‖∂₂f − e₁·∂₁e₂‖_{L²}`.
    pub first_order_l2: f64,
    /// `max_ζ |∫∇f·∇ζ − ∫(∂₁e₁·∂₂e₂ − ∂₂e₁·∂₁e₂)ζ| / ‖∇ζ‖` over random bumps.
    pub gauss_weak: f64,
    pub coulomb_residual: f64,
    pub grad_e_l2: f64,
    pub grad_f_l2: f64,
    pub f_max: f64,
    pub delta: f64,
}

/// Number of random bump test functions used by [`frame_residuals`].
pub const RESIDUAL_TESTS: usize = 10;

pub fn frame_residuals(frame: &Frame, solver: &FemSolver, seed: u64) -> Result<FrameReport> {
    let mesh = solver.mesh();
    let n = frame.field.values();
    let FramePair { e1, e2 } = &frame.pair;
    let mut tangency: f64 = 0.0;
    let mut orientation = f64::INFINITY;
    for i in 0..n.len() {
        tangency = tangency.max(e1[i].dot(&n[i]).abs()).max(e2[i].dot(&n[i]).abs());
        orientation = orientation.min(n[i].dot(&e1[i].cross(&e2[i])));
    }
    let h = connection(mesh, &frame.pair);
    let df = mesh.element_gradient(&frame.f);
    let mut r1 = 0.0;
    let mut r2 = 0.0;
    for ((d, hv), g) in df.iter().zip(&h).zip(mesh.geometry()) {
        r1 += (d[0] + hv[1]).powi(2) * g.area;
        r2 += (d[1] - hv[0]).powi(2) * g.area;
    }
    let de1 = vector_gradient(mesh, e1);
    let de2 = vector_gradient(mesh, e2);
    let rhs = ElementScalar(
        de1.iter()
            .zip(&de2)
            .map(|(a, b)| a[0].dot(&b[1]) - a[1].dot(&b[0]))
            .collect(),
    );
    let grad_e: f64 = de1
        .iter()
        .zip(&de2)
        .zip(mesh.geometry())
        .map(|((a, b), g)| {
            (a[0].norm_squared() + a[1].norm_squared() + b[0].norm_squared() + b[1].norm_squared()) * g.area
        })
        .sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss_weak: f64 = 0.0;
    for _ in 0..RESIDUAL_TESTS {
        let zeta = Bump::random(&mut rng).sample(mesh);
        let lhs = solver.energy_product(&frame.f, &zeta);
        let zbar = mesh.element_mean(&zeta);
        let rhs_int: f64 = rhs
            .iter()
            .zip(zbar.iter())
            .zip(mesh.geometry())
            .map(|((r, z), g)| r * z * g.area)
            .sum();
        gauss_weak = gauss_weak.max((lhs - rhs_int).abs() / mesh.gradient_norm(&zeta));
    }
    Ok(FrameReport {
        orth_defect: orthonormality_defect(&frame.pair),
        tangency_defect: tangency,
        orientation_min: orientation,
        first_order_l2: r1.sqrt() + r2.sqrt(),
        gauss_weak,
        coulomb_residual: coulomb_residual(&h, solver)?,
        grad_e_l2: grad_e.sqrt(),
        grad_f_l2: mesh.gradient_norm(&frame.f),
        f_max: frame.f.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        delta: frame.field.area_functional().delta,
    })
}

/// Rotates a frame by `θ` and recomputes its connection and `f`.
pub fn regauged(frame: &Frame, theta: &NodalScalar, solver: &FemSolver) -> Result<Frame> {
    let pair = gauge_rotate(&frame.pair, theta);
    let h = connection(solver.mesh(), &pair);
    let rec = recover_f(&h, solver)?;
    Ok(Frame {
        field: frame.field.clone(),
        pair,
        f: rec.f,
        h,
        boundary_std: rec.boundary_std,
    })
}

/// Convenience: continuation with a fresh solver on the field's mesh.
pub fn coulomb_frame(field: &SphereField, n_steps: usize) -> Result<(Continuation, FemSolver)> {
    let solver = FemSolver::new(Arc::clone(field.mesh_arc()))?;
    let cont = coulomb_continuation(
        field,
        &solver,
        ContinuationOptions {
            n_steps,
            ..Default::default()
        },
    )?;
    Ok((cont, solver))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfaces::enneper_gauss_closure;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn mesh(level: u32) -> Arc<DiscMesh> {
        Arc::new(DiscMesh::new(level).unwrap())
    }

    #[test]
    fn projection_onto_same_field_is_identity() {
        let m = mesh(3);
        let field = SphereField::sample(m.clone(), enneper_gauss_closure(0.5)).unwrap();
        let pair = FramePair {
            e1: NodalVector3(field.values().iter().map(|n| initial_pair(n).0).collect()),
            e2: NodalVector3(field.values().iter().map(|n| initial_pair(n).1).collect()),
        };
        let p = project_frame(&pair, &field).unwrap();
        for i in 0..m.node_count() {
            assert!((p.e1[i] - pair.e1[i]).norm() < 1e-12);
            assert!((p.e2[i] - pair.e2[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_north_frame() {
        let (a, b) = initial_pair(&Vector3::z());
        assert_eq!(a, Vector3::x());
        assert_eq!(b, Vector3::y());
        let (a, b) = initial_pair(&-Vector3::z());
        assert_eq!(a, Vector3::x());
        assert_eq!(b, -Vector3::y());
        let (a, _) = initial_pair(&Vector3::x());
        assert_eq!(a, Vector3::y());
    }

    #[test]
    fn small_rotation_moves_frame_slightly() {
        let m = mesh(3);
        let field = SphereField::sample(m.clone(), enneper_gauss_closure(0.5)).unwrap();
        let pair = FramePair {
            e1: NodalVector3(field.values().iter().map(|n| initial_pair(n).0).collect()),
            e2: NodalVector3(field.values().iter().map(|n| initial_pair(n).1).collect()),
        };
        let angle = 1e-3;
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 0.5)), angle);
        let rotated = field.rotated(*r.matrix()).unwrap();
        let p = project_frame(&pair, &rotated).unwrap();
        for i in 0..m.node_count() {
            assert!((p.e1[i] - r * pair.e1[i]).norm() < 3.0 * angle);
            assert!((p.e2[i] - r * pair.e2[i]).norm() < 3.0 * angle);
        }
    }

    #[test]
    fn projection_collapse_is_reported() {
        let m = mesh(1);
        let field = SphereField::sample(m.clone(), |_, _| Vector3::x()).unwrap();
        let pair = FramePair {
            e1: NodalVector3(vec![Vector3::x(); m.node_count()]),
            e2: NodalVector3(vec![Vector3::y(); m.node_count()]),
        };
        assert!(matches!(project_frame(&pair, &field), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn quarter_turn() {
        let pair = FramePair {
            e1: NodalVector3(vec![Vector3::x()]),
            e2: NodalVector3(vec![Vector3::y()]),
        };
        let r = gauge_rotate(&pair, &NodalScalar(vec![std::f64::consts::FRAC_PI_2]));
        assert!((r.e1[0] + Vector3::y()).norm() < 1e-15);
        assert!((r.e2[0] - Vector3::x()).norm() < 1e-15);
        assert_eq!(gauge_rotate(&pair, &NodalScalar(vec![0.0])), pair);
    }

    proptest! {
        #[test]
        fn rotation_preserves_orthonormality(theta in -10.0f64..10.0, t in 0.0f64..6.3, z in -0.99f64..0.99) {
            let r = (1.0 - z * z).sqrt();
            let n = Vector3::new(r * t.cos(), r * t.sin(), z);
            let (a, b) = initial_pair(&n);
            let pair = FramePair { e1: NodalVector3(vec![a]), e2: NodalVector3(vec![b]) };
            let out = gauge_rotate(&pair, &NodalScalar(vec![theta]));
            prop_assert!(orthonormality_defect(&out) < 1e-12);
            prop_assert!(out.e1[0].dot(&n).abs() < 1e-12);
            prop_assert!(n.dot(&out.e1[0].cross(&out.e2[0])) > 0.0);
        }
    }

    #[test]
    fn recover_f_from_rotated_gradient() {
        let m = mesh(5);
        let solver = FemSolver::new(m.clone()).unwrap();
        let g = m.sample_nodal(|x, y| 1.0 - x * x - y * y);
        let dg = m.element_gradient(&g);
        let h: Vec<[f64; 2]> = dg.iter().map(|d| [d[1], -d[0]]).collect();
        let rec = recover_f(&h, &solver).unwrap();
        let err = rec
            .f
            .iter()
            .zip(g.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(rec.boundary_std < 1e-9);
        let zero = recover_f(&vec![[0.0; 2]; m.triangle_count()], &solver).unwrap();
        assert!(zero.f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_field_gives_constant_frame() {
        let m = mesh(3);
        let field = SphereField::sample(m.clone(), |_, _| Vector3::z()).unwrap();
        let (cont, solver) = coulomb_frame(&field, 4).unwrap();
        let rep = frame_residuals(&cont.frame, &solver, 1).unwrap();
        assert!(cont.frame.pair.e1.iter().all(|e| (e - Vector3::x()).norm() < 1e-12));
        assert!(rep.f_max < 1e-12 && rep.coulomb_residual < 1e-12 && rep.gauss_weak < 1e-12);
    }

    #[test]
    fn enneper_frame_small_level() {
        let m = mesh(4);
        let field = SphereField::sample(m, enneper_gauss_closure(0.5)).unwrap();
        let (cont, solver) = coulomb_frame(&field, 16).unwrap();
        let rep = frame_residuals(&cont.frame, &solver, 2).unwrap();
        assert!(rep.orth_defect < 1e-10 && rep.tangency_defect < 1e-10);
        assert!(rep.orientation_min > 0.0);
        assert!((rep.f_max - 5f64.ln()).abs() < 0.1 * 5f64.ln(), "{rep:?}");
    }
}
