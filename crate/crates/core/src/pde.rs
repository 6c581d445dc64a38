//! P1 finite elements on a [`DiscMesh`]: the homogeneous Dirichlet Poisson
//! problem, the zero-mean Neumann gauge problem and derived diagnostics.
//!
//! Both stiffness systems are factorized once per mesh with a sparse
//! Cholesky decomposition, so repeated solves cost two triangular sweeps.

use std::sync::Arc;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Par, Side};
use rayon::prelude::*;
use serde::Serialize;

use crate::mesh::{DiscMesh, ElementScalar, NodalScalar};
use crate::{Error, Result};

/// Solution of `−Δf = rhs`, `f = 0` on the boundary.
#[derive(Debug, Clone, Serialize)]
pub struct PoissonSolution {
    #[serde(skip)]
    pub f: NodalScalar,
    /// `‖∇f‖_{L²}`.
    pub gradient_norm: f64,
    /// Nodal maximum of `|f|`.
    pub max_abs: f64,
    /// Relative algebraic residual `‖Kx − b‖ / ‖b‖`.
    pub residual: f64,
}

/// Outcome of [`FemSolver::wente_diagnostic`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WenteReport {
    pub f_max: f64,
    pub grad_a: f64,
    pub grad_b: f64,
    /// `‖f‖_∞ / (‖∇a‖‖∇b‖)`, absent when the denominator vanishes.
    pub ratio: Option<f64>,
}

/// Factorized stiffness systems for one mesh.
pub struct FemSolver {
    mesh: Arc<DiscMesh>,
    /// Node → Dirichlet unknown (interior nodes only).
    dirichlet_dof: Vec<Option<usize>>,
    dirichlet: Llt<usize, f64>,
    /// Node → Neumann unknown (all nodes but the pinned anchor).
    neumann_dof: Vec<Option<usize>>,
    neumann: Llt<usize, f64>,
}

impl std::fmt::Debug for FemSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FemSolver")
            .field("nodes", &self.mesh.node_count())
            .finish()
    }
}

fn local_stiffness(mesh: &DiscMesh, t: usize) -> [[f64; 3]; 3] {
    let g = mesh.element(t);
    let mut k = [[0.0; 3]; 3];
    for (a, row) in k.iter_mut().enumerate() {
        for (b, v) in row.iter_mut().enumerate() {
            *v = g.area * (g.grad[a][0] * g.grad[b][0] + g.grad[a][1] * g.grad[b][1]);
        }
    }
    k
}

fn factorize(mesh: &DiscMesh, dof: &[Option<usize>], n: usize) -> Result<Llt<usize, f64>> {
    let triplets: Vec<Triplet<usize, usize, f64>> = (0..mesh.triangle_count())
        .into_par_iter()
        .flat_map_iter(|t| {
            let tri = mesh.triangles()[t];
            let k = local_stiffness(mesh, t);
            let mut out = Vec::with_capacity(9);
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(i), Some(j)) = (dof[tri[a]], dof[tri[b]]) {
                        out.push(Triplet::new(i, j, k[a][b]));
                    }
                }
            }
            out
        })
        .collect();
    let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Solver(format!("stiffness assembly: {e:?}")))?;
    matrix
        .sp_cholesky(Side::Lower)
        .map_err(|e| Error::Solver(format!("stiffness factorization: {e:?}")))
}

fn numbering(len: usize, skip: impl Fn(usize) -> bool) -> (Vec<Option<usize>>, usize) {
    let mut next = 0;
    let dof = (0..len)
        .map(|i| {
            if skip(i) {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        })
        .collect();
    (dof, next)
}

impl FemSolver {
    pub fn new(mesh: Arc<DiscMesh>) -> Result<Self> {
        faer::set_global_parallelism(Par::Seq);
        let anchor = mesh.interior_anchor();
        let (dirichlet_dof, nd) = numbering(mesh.node_count(), |i| mesh.is_boundary(i));
        let (neumann_dof, nn) = numbering(mesh.node_count(), |i| i == anchor);
        let dirichlet = factorize(&mesh, &dirichlet_dof, nd)?;
        let neumann = factorize(&mesh, &neumann_dof, nn)?;
        Ok(Self {
            mesh,
            dirichlet_dof,
            dirichlet,
            neumann_dof,
            neumann,
        })
    }

    pub fn mesh(&self) -> &DiscMesh {
        &self.mesh
    }

    /// `y = K x` for the full (unconstrained) stiffness matrix.
    pub fn apply_stiffness(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let k = local_stiffness(&self.mesh, t);
            for a in 0..3 {
                y[tri[a]] += (0..3).map(|b| k[a][b] * x[tri[b]]).sum::<f64>();
            }
        }
        y
    }

    /// `∫∇u·∇v dX`.
    pub fn energy_product(&self, u: &NodalScalar, v: &NodalScalar) -> f64 {
        let gu = self.mesh.element_gradient(u);
        let gv = self.mesh.element_gradient(v);
        gu.iter()
            .zip(&gv)
            .zip(self.mesh.geometry())
            .map(|((a, b), g)| (a[0] * b[0] + a[1] * b[1]) * g.area)
            .sum()
    }

    /// Load vector `b_i = ∫ rhs·φ_i` for an elementwise constant `rhs`.
    pub fn scalar_load(&self, rhs: &ElementScalar) -> Vec<f64> {
        assert_eq!(rhs.len(), self.mesh.triangle_count(), "element field length");
        let mut b = vec![0.0; self.mesh.node_count()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let w = rhs[t] * self.mesh.element(t).area / 3.0;
            for &i in tri {
                b[i] += w;
            }
        }
        b
    }

    /// Load vector `b_i = ∫ v·∇φ_i` for an elementwise constant vector field.
    pub fn vector_load(&self, v: &[[f64; 2]]) -> Vec<f64> {
        assert_eq!(v.len(), self.mesh.triangle_count(), "element field length");
        let mut b = vec![0.0; self.mesh.node_count()];
        for (t, tri) in self.mesh.triangles().iter().enumerate() {
            let g = self.mesh.element(t);
            for (k, &i) in tri.iter().enumerate() {
                b[i] += g.area * (v[t][0] * g.grad[k][0] + v[t][1] * g.grad[k][1]);
            }
        }
        b
    }

    /// Dirichlet solve for an assembled load (boundary entries ignored).
    pub fn solve_dirichlet_load(&self, load: &[f64]) -> Result<PoissonSolution> {
        check_finite(load)?;
        let x = solve_reduced(&self.dirichlet, &self.dirichlet_dof, load);
        let residual = self.reduced_residual(&x, load, &self.dirichlet_dof);
        let f = NodalScalar(x);
        Ok(PoissonSolution {
            gradient_norm: self.mesh.gradient_norm(&f),
            max_abs: f.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            residual,
            f,
        })
    }

    /// `−Δf = rhs` in `D₁`, `f = 0` on `∂D₁`.
    pub fn solve_dirichlet(&self, rhs: &ElementScalar) -> Result<PoissonSolution> {
        self.solve_dirichlet_load(&self.scalar_load(rhs))
    }

    /// Exact discrete `W^{-1,2}` norm `sup_ζ ∫rhs·ζ / ‖∇ζ‖`.
    pub fn dual_norm(&self, rhs: &ElementScalar) -> Result<f64> {
        Ok(self.solve_dirichlet(rhs)?.gradient_norm)
    }

    /// Zero-mean minimizer of `∫|∇θ + h|² dX`.
    pub fn solve_gauge(&self, h: &[[f64; 2]]) -> Result<NodalScalar> {
        let load: Vec<f64> = self.vector_load(h).into_iter().map(|v| -v).collect();
        self.solve_neumann_load(&load)
    }

    /// Zero-mean solution of `Kθ = load`; the load is projected onto the
    /// compatible (zero-sum) subspace first.
    pub fn solve_neumann_load(&self, load: &[f64]) -> Result<NodalScalar> {
        check_finite(load)?;
        let mean = load.iter().sum::<f64>() / load.len() as f64;
        let load: Vec<f64> = load.iter().map(|v| v - mean).collect();
        let mut x = solve_reduced(&self.neumann, &self.neumann_dof, &load);
        let shift = self.mesh.integrate_nodal(&NodalScalar(x.clone())) / self.mesh.area();
        for v in x.iter_mut() {
            *v -= shift;
        }
        Ok(NodalScalar(x))
    }

    /// Solves `−Δf = ∂₁a∂₂b − ∂₂a∂₁b` (Dirichlet) and reports
    /// `‖f‖_∞ / (‖∇a‖‖∇b‖)`.
    pub fn wente_diagnostic(&self, a: &NodalScalar, b: &NodalScalar) -> Result<WenteReport> {
        let ga = self.mesh.element_gradient(a);
        let gb = self.mesh.element_gradient(b);
        let rhs = ElementScalar(ga.iter().zip(&gb).map(|(p, q)| p[0] * q[1] - p[1] * q[0]).collect());
        let sol = self.solve_dirichlet(&rhs)?;
        let grad_a = self.mesh.gradient_norm(a);
        let grad_b = self.mesh.gradient_norm(b);
        let denom = grad_a * grad_b;
        Ok(WenteReport {
            f_max: sol.max_abs,
            grad_a,
            grad_b,
            ratio: (denom > 1e-12).then(|| sol.max_abs / denom),
        })
    }

    fn reduced_residual(&self, x: &[f64], load: &[f64], dof: &[Option<usize>]) -> f64 {
        let kx = self.apply_stiffness(x);
        let mut r2 = 0.0;
        let mut b2 = 0.0;
        for i in 0..x.len() {
            if dof[i].is_some() {
                r2 += (kx[i] - load[i]).powi(2);
                b2 += load[i].powi(2);
            }
        }
        if b2 == 0.0 {
            r2.sqrt()
        } else {
            (r2 / b2).sqrt()
        }
    }
}

fn check_finite(load: &[f64]) -> Result<()> {
    match load.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite load at node {i}"))),
        None => Ok(()),
    }
}

fn solve_reduced(llt: &Llt<usize, f64>, dof: &[Option<usize>], load: &[f64]) -> Vec<f64> {
    let n = dof.iter().flatten().count();
    let mut b = Mat::<f64>::zeros(n, 1);
    for (i, d) in dof.iter().enumerate() {
        if let Some(d) = d {
            b[(*d, 0)] = load[i];
        }
    }
    let x = llt.solve(&b);
    dof.iter().map(|d| d.map_or(0.0, |d| x[(d, 0)])).collect()
}

/// One-shot Dirichlet Poisson solve.
pub fn solve_poisson_dirichlet(rhs: &ElementScalar, mesh: Arc<DiscMesh>) -> Result<PoissonSolution> {
    FemSolver::new(mesh)?.solve_dirichlet(rhs)
}

/// One-shot dual norm.
pub fn dual_norm(rhs: &ElementScalar, mesh: Arc<DiscMesh>) -> Result<f64> {
    FemSolver::new(mesh)?.dual_norm(rhs)
}

/// One-shot gauge solve.
pub fn solve_gauge_neumann(h: &[[f64; 2]], mesh: Arc<DiscMesh>) -> Result<NodalScalar> {
    FemSolver::new(mesh)?.solve_gauge(h)
}

/// One-shot Wente diagnostic.
pub fn wente_diagnostic(a: &NodalScalar, b: &NodalScalar, mesh: Arc<DiscMesh>) -> Result<WenteReport> {
    FemSolver::new(mesh)?.wente_diagnostic(a, b)
}
