use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wentzell_core::inverse::StabilityReport;

const SMALL: &str = r#"
seed = 3
mesh.nr = 8
mesh.nth = 16
time.t0 = 0.2
time.t_end = 1.0
time.steps = 16
inverse.omega = { shape = "annular_sector", r_min = 0.4, r_max = 0.8, theta_min = 0.0, theta_max = 3.0 }
inverse.basis = { radial = 2, angular = 5, surface = 5, cap = 20 }
inverse.noise_levels = [1e-3, 1e-2]
sources.basis = { radial = 2, angular = 5, surface = 5, cap = 20 }
stability.ensemble = 4
stability.pairs = 2
carleman.ensemble = 2
carleman.s_grid = [2.0, 4.0]
convergence.spatial_nr = 4
convergence.spatial_nth = 8
convergence.spatial_steps = 100
"#;

fn wentzell(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wentzell"));
    cmd.args(args).env("SOURCE_DATE_EPOCH", "1700000000").env_remove("WENTZELL_OUT_DIR");
    if let Some(p) = env_out {
        cmd.env("WENTZELL_OUT_DIR", p);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(sub: &str, config: &Path, out: &Path) {
    let o = wentzell(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{sub}: {}", String::from_utf8_lossy(&o.stderr));
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn forward_with_default_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    run_ok("forward", &cfg, &out);
    let names: Vec<String> = listing(&out).into_iter().map(|(n, _)| n).collect();
    for f in ["manifest.json", "forward_norms.csv", "mesh.json", "ellipticity.json", "state_00000.csv", "state_00220.csv", "snapshot_t_obs.csv"] {
        assert!(names.iter().any(|n| n == f), "missing {f} in {names:?}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "forward");
    assert_eq!(manifest["started"], "2023-11-14T22:13:20Z");
    assert_eq!(manifest["files"].as_array().unwrap().len(), names.len() - 1);
    let norms = fs::read_to_string(out.join("forward_norms.csv")).unwrap();
    assert_eq!(norms.lines().next().unwrap(), "step,time,l2,h1,h2eq,residual");
    assert_eq!(norms.lines().count(), 222);
}

#[test]
fn convergence_orders_in_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "mesh.nr = 4\nmesh.nth = 8\ncoefficients.preset = \"random_smooth\"\nconvergence.spatial_nr = 8\nconvergence.spatial_nth = 16\n");
    let out = tmp.path().join("out");
    run_ok("convergence", &cfg, &out);
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    let last_order = |kind: &str, scheme: &str| -> f64 {
        rows.iter()
            .rfind(|r| r[0] == kind && r[1] == scheme)
            .unwrap()[7]
            .parse()
            .unwrap()
    };
    assert!(last_order("temporal", "implicit_euler") >= 0.9);
    assert!(last_order("temporal", "trapezoidal") >= 1.7);
    assert!(last_order("spatial", "trapezoidal") >= 1.7);
}

#[test]
fn stability_is_deterministic_and_matches_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("stability", &cfg, &a);
    run_ok("stability", &cfg, &b);
    assert_eq!(listing(&a), listing(&b));

    let text = fs::read_to_string(a.join("stability_report.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let schema: serde_json::Value = serde_json::from_str(include_str!("../schemas/stability_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    let report: StabilityReport = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_value(&report).unwrap(), value);
    assert_eq!(report.samples.len(), 4);

    let mut broken = value.clone();
    broken["schema_version"] = serde_json::json!(2);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn seed_flag_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok("carleman", &cfg, &a);
    let o = wentzell(&["carleman", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "99"], None);
    assert!(o.status.success());
    assert_ne!(
        fs::read(a.join("carleman_rows.csv")).unwrap(),
        fs::read(b.join("carleman_rows.csv")).unwrap()
    );
}

#[test]
fn env_var_sets_output_dir_and_nothing_leaks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("from_env");
    let o = wentzell(&["reconstruct", "--config", cfg.to_str().unwrap()], Some(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut top: Vec<String> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, vec!["config.toml", "from_env"]);
    for f in ["f_hat.csv", "g_hat.csv", "noise_sweep.csv", "l_curve.csv", "reconstruction.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert!(listing(&out).iter().all(|(n, _)| !n.starts_with('.')));
}

#[test]
fn config_errors_are_reported_as_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "time.steps = 201\n");
    let o = wentzell(&["forward", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["kind"], "config");
    assert_eq!(err["key"], "time.steps");

    let o = wentzell(&["forward", "--config", tmp.path().join("missing.toml").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["kind"], "filesystem");
}
