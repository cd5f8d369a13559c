use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn hormone_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/hormone.csv")
}

fn resrand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resrand"))
        .args(args)
        .env_remove("RESRAND_THREADS")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn error(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("json error")
}

#[test]
fn hormone_permutation_test_rejects() {
    let data = hormone_path();
    let out = resrand(&[
        "test",
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--primitive",
        "perm",
        "--draws",
        "2000",
        "--seed",
        "11",
    ]);
    let v = json(&out);
    assert_eq!(v["decision"], "reject");
    assert_eq!(v["R_used"], 2000);
    assert_eq!(v["mode"], "sampled");
    assert_eq!(v["seed"], 11);
    assert!(v["pval_two"].as_f64().unwrap() < 0.005);
}

#[test]
fn repeated_primitives_produce_a_comparison() {
    let data = hormone_path();
    let out = resrand(&[
        "test",
        "--data",
        data.to_str().unwrap(),
        "--a",
        "0,1",
        "--a0",
        "0",
        "--primitive",
        "perm",
        "--primitive",
        "cluster-sign",
    ]);
    let v = json(&out);
    let rows = v["comparison"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["primitive"], "cluster-sign");
    // Three lots give 8 sign patterns, all enumerated.
    assert_eq!(rows[1]["mode"], "enumerated");
    assert_eq!(rows[1]["R_used"], 8);
}

#[test]
fn hormone_interval() {
    let data = hormone_path();
    let out = resrand(&[
        "ci",
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--primitive",
        "perm",
        "--lo",
        "-0.1",
        "--hi",
        "-0.03",
        "--step",
        "5e-4",
        "--seed",
        "3",
    ]);
    let v = json(&out);
    let (lo, hi) = (v["lower"].as_f64().unwrap(), v["upper"].as_f64().unwrap());
    assert!((lo + 0.0668).abs() <= 0.003, "lower {lo}");
    assert!((hi + 0.0478).abs() <= 0.003, "upper {hi}");
    assert_eq!(
        v["grid"].as_array().unwrap().len(),
        v["pvals"].as_array().unwrap().len()
    );
}

#[test]
fn sign_diagnostic_shrinks_like_root_draws() {
    let data = hormone_path();
    let out = resrand(&[
        "diagnose",
        "--data",
        data.to_str().unwrap(),
        "--primitive",
        "sign",
        "--draws",
        "100,10000",
        "--seed",
        "5",
    ]);
    let v = json(&out);
    let slope = v["slope"].as_f64().unwrap();
    assert!((-0.7..=-0.3).contains(&slope), "slope {slope}");
}

#[test]
fn report_reruns_bit_exactly_across_thread_counts() {
    let data = hormone_path();
    let args = [
        "test",
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "-0.05",
        "--primitive",
        "cluster-perm",
        "--seed",
        "99",
    ];
    let one = Command::new(env!("CARGO_BIN_EXE_resrand"))
        .args(args)
        .env("RESRAND_THREADS", "1")
        .output()
        .unwrap();
    let four = Command::new(env!("CARGO_BIN_EXE_resrand"))
        .args(args)
        .args(["--threads", "4"])
        .output()
        .unwrap();
    assert!(one.status.success() && four.status.success());
    assert_eq!(one.stdout, four.stdout);
}

#[test]
fn config_file_supplies_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!(
            "data = {}\nseed = 4\n\n[test]\nprimitive = perm, double\ncoef = 1\na0 = 0\ndraws = 500\n",
            hormone_path().display()
        ),
    )
    .unwrap();
    let v = json(&resrand(&["test", "--config", cfg.to_str().unwrap()]));
    assert_eq!(v["config"]["draws"], 500);
    let rows = v["comparison"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["seed"], 4);
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "[test]\nprimitive = perm\ndraws = many\n").unwrap();
    let data = hormone_path();
    let out = resrand(&[
        "test",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = error(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(
        msg.contains("config line 3") && msg.contains("draws"),
        "{msg}"
    );
}

#[test]
fn missing_response_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "x1,cluster\n1,a\n2,b\n").unwrap();
    let out = resrand(&[
        "test",
        "--data",
        path.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--primitive",
        "perm",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let e = error(&out);
    assert_eq!(e["error"]["kind"], "input");
    assert!(e["error"]["message"].as_str().unwrap().contains("`y`"));
}

#[test]
fn missing_primitive_is_never_defaulted() {
    let data = hormone_path();
    let out = resrand(&[
        "test",
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error(&out)["error"]["message"]
        .as_str()
        .unwrap()
        .starts_with("--primitive"));
}

#[test]
fn collinear_design_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut text = String::from("y,x1,x2\n");
    for i in 0..10 {
        text.push_str(&format!("{},{},{}\n", i % 3, i, 2 * i));
    }
    std::fs::write(&path, text).unwrap();
    let out = resrand(&[
        "test",
        "--data",
        path.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--primitive",
        "sign",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error(&out)["error"]["kind"], "model");
}

#[test]
fn exact_test_on_a_binary_design() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bf.csv");
    let mut text = String::from("y,x1\n");
    for i in 0..30 {
        let d = u8::from(i < 3);
        text.push_str(&format!("{},{d}\n", ((i * 7919) % 13) as f64 / 13.0 - 0.5));
    }
    std::fs::write(&path, text).unwrap();
    let v = json(&resrand(&[
        "exact",
        "--data",
        path.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--clusters",
        "3",
    ]));
    assert_eq!(v["exact"], true);
    assert_eq!(v["R_used"], 8);
    assert_eq!(v["mode"], "enumerated");
}

#[test]
fn reflection_needs_a_time_column() {
    let data = hormone_path();
    let out = resrand(&[
        "reflect",
        "--data",
        data.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--j",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ts.csv");
    let mut text = String::from("time,y,x1\n");
    for t in 0..60 {
        let e = ((t as f64) * 0.37).sin();
        text.push_str(&format!("{t},{e},{}\n", ((t * 31) % 17) as f64));
    }
    std::fs::write(&path, text).unwrap();
    let v = json(&resrand(&[
        "reflect",
        "--data",
        path.to_str().unwrap(),
        "--coef",
        "1",
        "--a0",
        "0",
        "--j",
        "3",
    ]));
    assert!(["decided", "undecided"].contains(&v["status"].as_str().unwrap()));
}

#[test]
fn highdim_reports_one_pvalue_per_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hd.csv");
    let p = 30;
    let mut text = String::from("y");
    for j in 0..p {
        text.push_str(&format!(",x{j}"));
    }
    text.push('\n');
    for i in 0..20 {
        let xs: Vec<f64> = (0..p)
            .map(|j| (((i * 37 + j * 11) % 23) as f64 - 11.0) / 7.0)
            .collect();
        let y = 3.0 * xs[0] + ((i * 13 % 7) as f64 - 3.0) / 5.0;
        text.push_str(&y.to_string());
        for x in xs {
            text.push_str(&format!(",{x}"));
        }
        text.push('\n');
    }
    std::fs::write(&path, text).unwrap();
    let v = json(&resrand(&[
        "highdim",
        "--data",
        path.to_str().unwrap(),
        "--no-intercept",
        "--primitive",
        "sign",
        "--draws",
        "500",
    ]));
    assert_eq!(v["per_coef_pvals"].as_array().unwrap().len(), p);
    assert_eq!(v["rejected"].as_array().unwrap().len(), p);
}

#[test]
fn simulate_preset_as_csv() {
    let out = resrand(&[
        "simulate",
        "--preset",
        "dyadic-level/lower",
        "--replications",
        "10",
        "--seed",
        "2",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("scenario_id,method,replications"));
    assert_eq!(lines.len(), 3);

    let listed = json(&resrand(&["simulate", "--list"]));
    assert!(listed["presets"].as_array().unwrap().len() > 10);
}
