//! Smoke tests for the command-line binary: config validation, exit codes,
//! determinism, and cross-command consistency.

use qpolicy::dataio::{write_dynamic_csv, write_static_csv, DynamicSchema, StaticSchema};
use qpolicy::simgen::{generate_dynamic, generate_static, Example, GeneratorSpec};
use std::path::Path;
use std::process::{Command, Output};

fn qpolicy(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpolicy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_ex1_csv(path: &Path, n: usize, seed: u64) {
    let g = generate_static(&GeneratorSpec {
        example: Example::Ex1,
        n,
        seed,
        target_censoring: None,
        keep_latents: false,
    })
    .unwrap();
    write_static_csv(path, &g.ds, &StaticSchema::default_names(2, false)).unwrap();
}

fn base_config(csv: &Path, tau: f64) -> String {
    format!(
        r#"
[data]
path = "{}"
x = ["x1", "x2"]
a = "a"
y = "y"
delta = "delta"
default_pscore = 0.5

[quantile]
tau = {tau}

[search]
population = 30
generations = 20
restarts = 1
seed = 5
"#,
        csv.display()
    )
}

fn report_without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("elapsed_seconds");
    v
}

#[test]
fn fit_is_deterministic_under_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_ex1_csv(&csv, 300, 1);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[fit]\n{}", base_config(&csv, 0.5))).unwrap();
    let out1 = dir.path().join("r1.json");
    let out2 = dir.path().join("r2.json");
    for (out, _) in [(&out1, 0), (&out2, 1)] {
        let r = qpolicy(&[
            "fit",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    assert_eq!(report_without_timing(&out1), report_without_timing(&out2));
}

#[test]
fn two_command_sections_exit_2_naming_both() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_ex1_csv(&csv, 50, 2);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[fit]\n[truth]\n{}", base_config(&csv, 0.5))).unwrap();
    let r = qpolicy(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("fit") && err.contains("truth"), "stderr: {err}");
}

#[test]
fn missing_data_file_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            "[fit]\n{}",
            base_config(Path::new("/nonexistent/nope.csv"), 0.5)
        ),
    )
    .unwrap();
    let r = qpolicy(&["fit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn value_of_fitted_rule_reproduces_fit_value() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_ex1_csv(&csv, 300, 3);
    let fit_cfg = dir.path().join("fit.toml");
    std::fs::write(&fit_cfg, format!("[fit]\n{}", base_config(&csv, 0.5))).unwrap();
    let fit_out = dir.path().join("fit.json");
    let r = qpolicy(&[
        "fit",
        "--config",
        fit_cfg.to_str().unwrap(),
        "--out",
        fit_out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let fit: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&fit_out).unwrap()).unwrap();
    let rule = &fit["report"]["rule"];
    let value_cfg = dir.path().join("val.toml");
    std::fs::write(
        &value_cfg,
        format!(
            "[value]\nsign = {}\ntail = {}\n{}",
            rule["sign"],
            rule["tail"],
            base_config(&csv, 0.5)
        ),
    )
    .unwrap();
    let val_out = dir.path().join("val.json");
    let r = qpolicy(&[
        "value",
        "--config",
        value_cfg.to_str().unwrap(),
        "--out",
        val_out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let val: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&val_out).unwrap()).unwrap();
    assert_eq!(val["report"]["q_hat"], fit["report"]["value"]);
}

#[test]
fn fit_dynamic_runs_on_generated_two_stage_data() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_dynamic(&GeneratorSpec {
        example: Example::Ex3a,
        n: 400,
        seed: 4,
        target_censoring: Some(0.15),
        keep_latents: false,
    })
    .unwrap();
    let csv = dir.path().join("dyn.csv");
    write_dynamic_csv(&csv, &g.ds, &DynamicSchema::default_names(2, 1)).unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        format!(
            r#"
[fit_dynamic]
stage2_features = [3, 1]

[dynamic_data]
path = "{}"
x1 = ["x1_1", "x1_2"]
d1 = "d1"
z = "z"
x2 = ["x2_1"]
d2 = "d2"
y = "y"
delta = "delta"
s = 1.0
pi1 = 0.5
pi2 = 0.5

[quantile]
tau = 0.3

[search]
population = 20
generations = 15
restarts = 1
seed = 6
"#,
            csv.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("r.json");
    let r = qpolicy(&[
        "fit-dynamic",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(rep["report"]["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn infer_mn_flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_ex1_csv(&csv, 200, 5);
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, format!("[infer]\n{}", base_config(&csv, 0.5))).unwrap();
    let out = dir.path().join("r.json");
    let r = qpolicy(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--method",
        "mn",
        "--bootstrap",
        "25",
        "--m",
        "60",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rep["report"]["m"], 60);
    assert_eq!(rep["report"]["replicates_used"], 25);
}

#[test]
fn simulate_emits_one_csv_row_per_replication() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(
        &cfg,
        r#"
[simulate]
example = "ex1"
tau = 0.5
n = 150
reps = 3
method = "new"
truth_sign = 1
truth_coefficients = [-0.552]
truth_q = 2.258

[search]
population = 20
generations = 10
restarts = 1
"#,
    )
    .unwrap();
    let out = dir.path().join("r.json");
    let r = qpolicy(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    let rows: Vec<&str> = stdout.lines().filter(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 4, "header + 3 rows, got: {stdout}");
    assert!(rows[0].starts_with("rep,"));
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(rep["report"]["rows"].as_array().unwrap().len(), 3);
}
