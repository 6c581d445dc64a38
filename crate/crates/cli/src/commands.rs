use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use coulomb_core::bumps::Bump;
use coulomb_core::divform::{decompose, gamma, omega, weak_identity_residual};
use coulomb_core::fields::SphereField;
use coulomb_core::frames::{coulomb_continuation, frame_residuals, ContinuationOptions};
use coulomb_core::mesh::{DiscMesh, ElementScalar};
use coulomb_core::pde::FemSolver;
use coulomb_core::preimage::{coarea_check, holography_identity};
use coulomb_core::sphere::{SpherePoint, SphereQuadrature, SphereRegion};
use coulomb_core::surfaces::{self, zeta_eps, ClosedForms, IntersectionFamily};
use coulomb_core::{Matrix3, Result, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{FamilyChoice, Settings};
use crate::summary::Summary;

const TABLE_TOL: f64 = 0.01;
const WEAK_RESIDUAL_TOL: f64 = 0.05;
const WEAK_RESIDUAL_DECAY: f64 = 1.5;
const BUMPS: usize = 10;
const GAMMA_SAMPLES: usize = 100_000;
const OMEGA_TARGETS: usize = 32;
const BOUND_SLACK: f64 = 1.0 + 1e-12;
const INVARIANCE_TRIALS: usize = 5;
const INVARIANCE_TOL: f64 = 1e-12;
const FRAME_DEFECT_TOL: f64 = 1e-10;
const FRAME_HALVING: f64 = 2.0;
const FRAME_F_TOL: f64 = 0.02;
const COAREA_GAP_TOL: f64 = 0.02;
const COAREA_EXCLUDED_TOL: f64 = 0.05;
const COAREA_CARD_ONE: f64 = 0.95;
const HOLO_RAW_TOL: f64 = 0.05;
const HOLO_RESIDUAL_MAX: f64 = 0.5;
const DUAL_TOL: f64 = 0.05;
const SELF_GAP_TOL: f64 = 1e-10;
const SELF_RADIUS_SLACK: f64 = 1e-6;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let file = File::create(dir.join(name))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(e: csv::Error) -> coulomb_core::Error {
    coulomb_core::Error::Io(std::io::Error::other(e))
}

fn mesh(level: u32) -> Result<Arc<DiscMesh>> {
    Ok(Arc::new(DiscMesh::new(level)?))
}

fn first_eps(s: &Settings) -> f64 {
    s.eps[0]
}

/// Gauss map of the configured family.
fn family_field(s: &Settings, eps: f64, mesh: Arc<DiscMesh>) -> Result<SphereField> {
    let imm = match s.family {
        FamilyChoice::Enneper => surfaces::enneper(eps, mesh)?,
        FamilyChoice::StereoPlus => surfaces::stereographic(eps, true, mesh)?,
        FamilyChoice::StereoMinus => surfaces::stereographic(eps, false, mesh)?,
    };
    imm.gauss_map()
}

/// Unit vector `c` such that the image omits `{s: s·c > (1−ε²)/(1+ε²)}`.
fn omitted_pole(s: &Settings) -> Vector3<f64> {
    match s.family {
        FamilyChoice::StereoMinus => -Vector3::z(),
        _ => Vector3::z(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

pub fn mesh_info(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let m = DiscMesh::new(s.level)?;
    m.write_text(create(out, "mesh.txt")?)?;
    let h = m.max_edge_length();
    sum.measure("nodes", m.node_count());
    sum.measure("triangles", m.triangle_count());
    sum.measure("boundary_nodes", m.boundary_nodes().len());
    sum.measure("max_edge_length", h);
    sum.measure("area", m.area());
    sum.at_most("area deficit", PI - m.area(), h * h);
    sum.holds("area below disc area", m.area() <= PI);
    println!(
        "level {}: {} nodes, {} triangles, h = {h:.4e}, area = {:.6}",
        s.level,
        m.node_count(),
        m.triangle_count(),
        m.area()
    );
    Ok(())
}

pub fn enneper_table(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let m = mesh(s.level)?;
    let solver = FemSolver::new(m.clone())?;
    let mut w = csv_writer(out, "enneper_table.csv")?;
    w.write_record([
        "eps",
        "int_abs_phi",
        "ref_phi",
        "int_grad_n2",
        "ref_grad_n2",
        "grad_f2",
        "ref_grad_f2",
        "rel_err_max",
    ])
    .map_err(csv_err)?;
    for &eps in &s.eps {
        let field = SphereField::sample(m.clone(), surfaces::enneper_gauss_closure(eps))?;
        let cf = surfaces::closed_form_table(eps)?;
        let abs_phi = field.abs_phi_integral();
        let grad_n2 = field.dirichlet_energy();
        let grad_f2 = solver.solve_dirichlet(&field.phi())?.gradient_norm.powi(2);
        let err = rel(abs_phi, cf.int_abs_phi)
            .max(rel(grad_n2, cf.int_grad_n2))
            .max(rel(grad_f2, cf.grad_f2));
        w.write_record(
            [
                eps,
                abs_phi,
                cf.int_abs_phi,
                grad_n2,
                cf.int_grad_n2,
                grad_f2,
                cf.grad_f2,
                err,
            ]
            .map(|v| v.to_string()),
        )
        .map_err(csv_err)?;
        sum.relative(format!("eps={eps} int_abs_phi"), abs_phi, cf.int_abs_phi, TABLE_TOL);
        sum.relative(format!("eps={eps} int_grad_n2"), grad_n2, cf.int_grad_n2, TABLE_TOL);
        sum.relative(format!("eps={eps} grad_f2"), grad_f2, cf.grad_f2, TABLE_TOL);
        sum.relative(
            format!("eps={eps} 2 int_abs_phi = int_grad_n2"),
            2.0 * abs_phi,
            grad_n2,
            TABLE_TOL,
        );
        println!("eps {eps}: ∫|Φ| {abs_phi:.6}, ∫|∇n|² {grad_n2:.6}, ‖∇f‖² {grad_f2:.6}, max rel err {err:.2e}");
    }
    w.flush()?;
    Ok(())
}

fn weak_residual(s: &Settings, eps: f64, level: u32, quad: &SphereQuadrature) -> Result<(f64, SphereField)> {
    let m = mesh(level)?;
    let field = family_field(s, eps, m.clone())?;
    let (form, _) = decompose(&field, quad, s.sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..BUMPS {
        let zeta = Bump::random(&mut rng).sample(&m);
        worst = worst.max(weak_identity_residual(&field, &form, &zeta)?.abs() / m.gradient_norm(&zeta));
    }
    Ok((worst, field))
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.random_range(-1.0..1.0);
    let t: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    Vector3::new(r * t.cos(), r * t.sin(), z)
}

fn random_orthogonal(rng: &mut impl Rng, reflect: bool) -> Matrix3<f64> {
    let q = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0)).qr().q();
    let q = if q.determinant() < 0.0 { -q } else { q };
    if reflect {
        q * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0))
    } else {
        q
    }
}

pub fn decompose_cmd(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let eps = first_eps(s);
    let quad = SphereQuadrature::new(s.quad_level)?;
    let m = mesh(s.level)?;
    let field = family_field(s, eps, m.clone())?;
    let (form, report) = decompose(&field, &quad, s.sigma)?;
    form.write_csv(&field, create(out, "divergence_form.csv")?)?;
    sum.measure("decomposition", &report);
    sum.at_least("meas K", report.region_measure, f64::MIN_POSITIVE);
    for i in 0..2 {
        sum.at_most(
            format!("|Omega_{}| bound", i + 1),
            report.omega_l2[i],
            report.omega_bound[i],
        );
    }
    sum.holds("pointwise Omega certificate", report.certificate_holds);

    let (r_fine, _) = weak_residual(s, eps, s.level, &quad)?;
    sum.at_most("weak residual", r_fine, WEAK_RESIDUAL_TOL);
    if s.level > 0 {
        let (r_coarse, _) = weak_residual(s, eps, s.level - 1, &quad)?;
        sum.at_least("weak residual decay", r_coarse / r_fine, WEAK_RESIDUAL_DECAY);
        println!(
            "weak residual: level {} {r_coarse:.3e}, level {} {r_fine:.3e}",
            s.level - 1,
            s.level
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut gamma_violations = 0;
    for _ in 0..GAMMA_SAMPLES {
        let n = random_unit(&mut rng);
        let np = random_unit(&mut rng);
        let xi = random_unit(&mut rng) * rng.random_range(0.0..10.0);
        let bound = 2.0 * xi.norm() / (n - np).norm();
        match gamma(&SpherePoint::new(n)?, &SpherePoint::new(np)?, &xi) {
            Ok(g) if g.abs() <= BOUND_SLACK * bound => {}
            _ => gamma_violations += 1,
        }
    }
    let mut omega_violations = 0;
    for _ in 0..OMEGA_TARGETS {
        let w = omega(&field, &SpherePoint::new(random_unit(&mut rng))?, false)?;
        omega_violations += w.bound_violations.len();
    }
    sum.at_most("Gamma bound violations", gamma_violations as f64, 0.0);
    sum.at_most("omega bound violations", omega_violations as f64, 0.0);

    let phi = field.phi();
    let (mut rotation, mut relative): (f64, f64) = (0.0, 0.0);
    for k in 0..INVARIANCE_TRIALS {
        let r = random_orthogonal(&mut rng, k % 2 == 1);
        let det = r.determinant().signum();
        for (a, b) in phi.iter().zip(field.rotated(r)?.phi().iter()) {
            let d = (b - det * a).abs();
            rotation = rotation.max(d);
            relative = relative.max(d / a.abs().max(1.0));
        }
    }
    let closure = field.closure().expect("family fields are analytic").clone();
    let mirrored = SphereField::sample(Arc::new(m.reflected()), move |x, y| closure(y, x))?.phi();
    let mirror = phi
        .iter()
        .zip(mirrored.iter())
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    sum.measure("rotation_relative_error", relative);
    sum.at_most("rotation invariance of Phi", rotation, INVARIANCE_TOL);
    sum.at_most("orientation antisymmetry of Phi", mirror, INVARIANCE_TOL);
    println!(
        "meas K {:.4}, ‖Ω‖ {:.4?} ≤ {:.4?}, rotation error {rotation:.2e} (relative {relative:.2e}), mirror error {mirror:.2e}",
        report.region_measure, report.omega_l2, report.omega_bound
    );
    Ok(())
}

pub fn frame(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let eps = first_eps(s);
    let levels: Vec<u32> = (s.level.saturating_sub(2)..=s.level).collect();
    let opts = ContinuationOptions {
        n_steps: s.steps,
        ..Default::default()
    };
    let mut residuals = Vec::new();
    for &level in &levels {
        let m = mesh(level)?;
        let field = family_field(s, eps, m.clone())?;
        let solver = FemSolver::new(m)?;
        let cont = coulomb_continuation(&field, &solver, opts)?;
        let report = frame_residuals(&cont.frame, &solver, s.seed)?;
        residuals.push(report.coulomb_residual);
        if level != s.level {
            continue;
        }
        cont.write_log(create(out, "frame_log.csv")?)?;
        let poisson = solver.solve_dirichlet(&field.phi())?.f;
        let diff = cont
            .frame
            .f
            .iter()
            .zip(poisson.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        sum.measure("frame", report);
        sum.measure("rejected_steps", cont.rejected_steps);
        sum.measure("boundary_std", cont.frame.boundary_std);
        sum.at_most("orthonormality defect", report.orth_defect, FRAME_DEFECT_TOL);
        sum.at_most("tangency defect", report.tangency_defect, FRAME_DEFECT_TOL);
        sum.at_least("orientation", report.orientation_min, 0.0);
        sum.at_most("f recovered vs Poisson", diff / report.f_max, FRAME_F_TOL);
        let f_ref = ClosedForms::new(eps).f_origin.abs();
        sum.relative("max |f|", report.f_max, f_ref, FRAME_F_TOL);
        println!(
            "level {level}: defects {:.1e}, max|f| {:.4} (ref {f_ref:.4}), ‖f_rec − f_poisson‖∞ {diff:.2e}, {} steps ({} rejected)",
            report.orth_defect.max(report.tangency_defect),
            report.f_max,
            cont.log.len(),
            cont.rejected_steps
        );
    }
    sum.measure("coulomb_residuals", &residuals);
    for (w, l) in residuals.windows(2).zip(&levels[1..]) {
        sum.at_least(
            format!("Coulomb residual halving to level {l}"),
            w[0] / w[1],
            FRAME_HALVING,
        );
    }
    let shown: Vec<String> = residuals.iter().map(|r| format!("{r:.3e}")).collect();
    println!("Coulomb residuals by level {levels:?}: {}", shown.join(", "));
    Ok(())
}

pub fn coarea(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let eps = first_eps(s);
    let m = mesh(s.level)?;
    let field = family_field(s, eps, m.clone())?;
    let quad = SphereQuadrature::new(s.quad_level)?;
    let ones = ElementScalar(vec![1.0; m.triangle_count()]);
    let report = coarea_check(&field, &ones, &SphereRegion::full(&quad), s.n_bound)?;
    report.write_csv(create(out, "coarea_nodes.csv")?)?;
    let height = (1.0 - eps * eps) / (1.0 + eps * eps);
    let pole = omitted_pole(s);
    let (mut inside, mut inside_one, mut omitted_hits) = (0usize, 0usize, 0usize);
    for n in report.nodes.iter().filter(|n| n.accepted) {
        if Vector3::from(n.node).dot(&pole) <= height {
            inside += 1;
            inside_one += (n.card == 1) as usize;
        } else {
            omitted_hits += (n.card != 0) as usize;
        }
    }
    let fraction = inside_one as f64 / inside.max(1) as f64;
    let excluded = report.excluded_measure / report.region_measure;
    sum.measure("coarea", &report);
    sum.relative("coarea rhs vs lhs", report.rhs, report.lhs, COAREA_GAP_TOL);
    sum.relative(
        "lhs vs 4π/(1+ε²)",
        report.lhs,
        ClosedForms::new(eps).int_abs_phi,
        COAREA_GAP_TOL,
    );
    sum.at_most("excluded measure fraction", excluded, COAREA_EXCLUDED_TOL);
    sum.at_least("card = 1 fraction in image", fraction, COAREA_CARD_ONE);
    sum.at_most("hits in omitted cap", omitted_hits as f64, 0.0);
    println!(
        "lhs {:.5}, rhs {:.5}, excluded {:.2}%, card=1 at {:.2}% of {inside} image nodes, {omitted_hits} omitted-cap hits",
        report.lhs,
        report.rhs,
        100.0 * excluded,
        100.0 * fraction
    );
    Ok(())
}

pub fn holography(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let m = mesh(s.level)?;
    let quad = SphereQuadrature::new(s.quad_level)?;
    let cap = SphereRegion::cap(&quad, s.cap.center(), s.cap.rho)?;
    let mut w = csv_writer(out, "holography.csv")?;
    w.write_record([
        "eps",
        "mu",
        "raw_term",
        "corrected_residual",
        "omega_l2",
        "excluded_measure",
    ])
    .map_err(csv_err)?;
    let mut raws = Vec::new();
    let mut residuals = Vec::new();
    let mut reports = Vec::new();
    for &eps in &s.eps {
        let field = family_field(s, eps, m.clone())?;
        let zeta = zeta_eps(eps, &m)?;
        let (report, _) = holography_identity(&field, &cap, &zeta)?;
        let ones = ElementScalar(vec![1.0; m.triangle_count()]);
        let excluded = coarea_check(&field, &ones, &cap, s.n_bound)?.excluded_measure;
        let omega_l2 = report.omega_l2[0].hypot(report.omega_l2[1]);
        w.write_record([eps, report.mu, report.raw, report.residual, omega_l2, excluded].map(|v| v.to_string()))
            .map_err(csv_err)?;
        let delta = ClosedForms::new(eps).delta;
        sum.relative(
            format!("eps={eps} raw term vs Δ(ε)"),
            report.raw.abs(),
            delta,
            HOLO_RAW_TOL,
        );
        sum.at_most(
            format!("eps={eps} corrected residual"),
            report.residual.abs(),
            HOLO_RESIDUAL_MAX,
        );
        println!(
            "eps {eps}: raw {:.5} (Δ {delta:.5}), (4π/μ)∫_FΦζ {:.5}, Ω-term {:.5}, residual {:.3e}, ratio {:.3}",
            report.raw, report.f_term, report.omega_term, report.residual, report.ratio
        );
        raws.push(report.raw.abs());
        residuals.push(report.residual.abs());
        reports.push(report);
    }
    w.flush()?;
    sum.measure("holography", &reports);
    sum.holds("raw term increasing in |log ε|", increasing_in_log(&s.eps, &raws, true));
    sum.holds(
        "corrected residual non-increasing",
        increasing_in_log(&s.eps, &residuals, false),
    );
    Ok(())
}

/// Orders values by decreasing ε and checks strict increase (or
/// non-increase when `strict` is false).
fn increasing_in_log(eps: &[f64], values: &[f64], strict: bool) -> bool {
    let mut pairs: Vec<(f64, f64)> = eps.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
        .windows(2)
        .all(|w| if strict { w[1].1 > w[0].1 } else { w[1].1 <= w[0].1 })
}

pub fn self_intersect(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let eps = first_eps(s);
    let report = surfaces::self_intersections(eps, s.seed)?;
    let mut w = csv_writer(out, "self_intersections.csv")?;
    w.write_record(["family", "x_hat_1", "x_hat_2", "x_tilde_1", "x_tilde_2", "gap"])
        .map_err(csv_err)?;
    for p in &report.pairs {
        let family = serde_json::to_value(p.family)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        let mut row = vec![family];
        row.extend([p.x_hat[0], p.x_hat[1], p.x_tilde[0], p.x_tilde[1], p.gap].map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    sum.measure("self_intersections", &report);
    if let Some(reason) = &report.reason {
        println!("no self-intersections: {reason}");
        return Ok(());
    }
    for f in [
        IntersectionFamily::Vertical,
        IntersectionFamily::Horizontal,
        IntersectionFamily::MirrorX,
        IntersectionFamily::MirrorY,
    ] {
        sum.holds(
            format!("{f:?} pair present"),
            report.pairs.iter().any(|p| p.family == f),
        );
    }
    let max_gap = report.pairs.iter().map(|p| p.gap).fold(0.0, f64::max);
    sum.at_most("closed-form gap", max_gap, SELF_GAP_TOL);
    if let Some(sweep) = report.sweep {
        sum.at_most("sweep violations", sweep.violations as f64, 0.0);
        if let Some(r2) = sweep.min_radius_sq {
            sum.at_least("sweep min |X|²", r2, 3.0 * eps * eps - SELF_RADIUS_SLACK);
        }
        println!(
            "{} closed-form pairs (max gap {max_gap:.1e}); sweep: {} pairs from {} starts, {} violations",
            report.pairs.len(),
            sweep.pairs_found,
            sweep.starts,
            sweep.violations
        );
    }
    Ok(())
}

pub fn convergence(s: &Settings, out: &Path, sum: &mut Summary) -> Result<()> {
    let mut w = csv_writer(out, "convergence.csv")?;
    w.write_record(["level", "eps", "int_abs_phi", "ref_phi", "dual_norm", "ref_delta"])
        .map_err(csv_err)?;
    let mut finest = Vec::new();
    for level in s.level.saturating_sub(2)..=s.level {
        let m = mesh(level)?;
        let solver = FemSolver::new(m.clone())?;
        for &eps in &s.eps {
            let field = family_field(s, eps, m.clone())?;
            let cf = ClosedForms::new(eps);
            let abs_phi = field.abs_phi_integral();
            let dual = solver.dual_norm(&field.phi())?;
            w.write_record([level as f64, eps, abs_phi, cf.int_abs_phi, dual, cf.delta].map(|v| v.to_string()))
                .map_err(csv_err)?;
            if level == s.level {
                sum.relative(format!("eps={eps} dual norm vs Δ(ε)"), dual, cf.delta, DUAL_TOL);
                finest.push(dual);
                println!("eps {eps}: dual norm {dual:.5}, Δ(ε) {:.5}", cf.delta);
            }
        }
    }
    w.flush()?;
    sum.measure("dual_norms", &finest);
    sum.holds(
        "dual norm increasing as ε decreases",
        increasing_in_log(&s.eps, &finest, true),
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_by_eps() {
        assert!(increasing_in_log(&[0.3, 0.1, 0.03], &[1.0, 2.0, 3.0], true));
        assert!(increasing_in_log(&[0.03, 0.3, 0.1], &[3.0, 1.0, 2.0], true));
        assert!(!increasing_in_log(&[0.3, 0.1], &[1.0, 1.0], true));
        assert!(increasing_in_log(&[0.3, 0.1], &[1.0, 1.0], false));
    }
}
