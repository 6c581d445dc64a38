use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coulomb-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("COULOMB_LAB_THREADS")
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Value {
    let text = std::fs::read_to_string(out.join("summary.json")).expect("summary written");
    serde_json::from_str(&text).expect("valid JSON")
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .expect("csv written")
        .lines()
        .next()
        .unwrap_or_default()
        .to_string()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["no-such-command"],
        vec!["enneper-table", "--eps", "abc"],
        vec!["holography", "--cap", "q,1"],
        vec!["mesh-info", "--level", "40"],
        vec!["coarea", "--n-bound", "1"],
        vec!["frame", "--family", "catenoid"],
    ] {
        let o = lab(&args, dir.path());
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn mesh_info_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["mesh-info", "--level", "2", "--seed", "7"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path());
    assert_eq!(s["command"], "mesh-info");
    assert_eq!(s["seed"], 7);
    assert_eq!(s["passed"], true);
    for check in s["checks"].as_array().unwrap() {
        for key in ["name", "value", "reference", "tolerance", "pass"] {
            assert!(check.get(key).is_some(), "{key}");
        }
    }
    assert!(dir.path().join("mesh.txt").exists());
}

#[test]
fn enneper_table_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["enneper-table", "--level", "5", "--eps", "1,0.5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let path = dir.path().join("enneper_table.csv");
    assert_eq!(
        header(&path),
        "eps,int_abs_phi,ref_phi,int_grad_n2,ref_grad_n2,grad_f2,ref_grad_f2,rel_err_max"
    );
    assert_eq!(std::fs::read_to_string(path).unwrap().lines().count(), 3);
}

#[test]
fn failed_checks_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // At level 1 the ε = 0.1 integrals are far from their closed forms.
    let o = lab(&["enneper-table", "--level", "1", "--eps", "0.1"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed checks"));
    assert_eq!(summary(dir.path())["passed"], false);
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "level = 2\neps = 1.0\nseed = 99\n").unwrap();
    let o = lab(
        &["mesh-info", "--config", cfg.to_str().unwrap(), "--level", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path());
    assert_eq!(s["config"]["level"], 1);
    assert_eq!(s["config"]["seed"], 99);
    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = lab(&["mesh-info", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_cap_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    for (v, code) in [("2", 0), ("0", 2), ("many", 2)] {
        let o = Command::new(env!("CARGO_BIN_EXE_coulomb-lab"))
            .args(["mesh-info", "--level", "1", "--out"])
            .arg(dir.path())
            .env("COULOMB_LAB_THREADS", v)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(code), "{v}");
    }
}

#[test]
fn self_intersect_outside_range_reports_reason() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["self-intersect", "--eps", "0.7"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let s = summary(dir.path());
    assert!(s["measurements"]["self_intersections"]["reason"].is_string());
    assert_eq!(
        header(&dir.path().join("self_intersections.csv")),
        "family,x_hat_1,x_hat_2,x_tilde_1,x_tilde_2,gap"
    );
}

#[test]
fn small_runs_write_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    lab(
        &["holography", "--level", "3", "--quad-level", "3", "--eps", "0.5,0.3"],
        &p.join("h"),
    );
    assert_eq!(
        header(&p.join("h/holography.csv")),
        "eps,mu,raw_term,corrected_residual,omega_l2,excluded_measure"
    );
    lab(&["frame", "--level", "3", "--steps", "4"], &p.join("f"));
    assert_eq!(
        header(&p.join("f/frame_log.csv")),
        "lambda,step,orth_defect,coulomb_residual,f_max,grad_f_norm"
    );
    lab(&["decompose", "--level", "3", "--quad-level", "3"], &p.join("d"));
    assert_eq!(
        header(&p.join("d/divergence_form.csv")),
        "element,phi,omega1,omega2,slack"
    );
    lab(&["coarea", "--level", "3", "--quad-level", "3"], &p.join("c"));
    assert_eq!(
        header(&p.join("c/coarea_nodes.csv")),
        "x,y,z,weight,card,degree,accepted"
    );
    lab(&["convergence", "--level", "3", "--eps", "0.5,0.3"], &p.join("v"));
    assert_eq!(
        header(&p.join("v/convergence.csv")),
        "level,eps,int_abs_phi,ref_phi,dual_norm,ref_delta"
    );
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [
        (vec!["coarea", "--level", "3", "--quad-level", "3"], "coarea_nodes.csv"),
        (vec!["frame", "--level", "3", "--steps", "4"], "frame_log.csv"),
        (
            vec!["decompose", "--level", "3", "--quad-level", "3"],
            "divergence_form.csv",
        ),
        (vec!["self-intersect", "--eps", "0.4"], "self_intersections.csv"),
    ];
    for (i, (args, file)) in runs.iter().enumerate() {
        let a = dir.path().join(format!("{i}a"));
        let b = dir.path().join(format!("{i}b"));
        lab(args, &a);
        lab(args, &b);
        for name in [*file, "summary.json"] {
            let x = std::fs::read(a.join(name)).unwrap();
            let y = std::fs::read(b.join(name)).unwrap();
            assert!(
                x == y || name == "summary.json" && strip_out(&x) == strip_out(&y),
                "{args:?} {name}"
            );
        }
    }
}

/// `summary.json` records the output directory; compare everything else.
fn strip_out(bytes: &[u8]) -> Value {
    let mut v: Value = serde_json::from_slice(bytes).unwrap();
    v["config"]["out"] = Value::Null;
    v
}
