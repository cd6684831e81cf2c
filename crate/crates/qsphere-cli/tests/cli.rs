use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qsphere"));
    c.env_remove("QSPHERE_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn qsphere")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qsphere-cli-{}", std::process::id()));
    fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn example() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/data/even_delta.json").to_string()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr)
        .unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&o.stderr)))
}

#[test]
fn kernel_prints_one_row() {
    let o = run(&[
        "kernel", "--q", "0.5", "--x", "0.6", "--j", "1", "--signs", "++", "--p0", "-q^1",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("j,signs,p0,point,x,re,im,abs"));
    assert!(lines[1].starts_with("1,++,-q^1,principal,0.6,"));
}

#[test]
fn discrete_off_pattern_has_zero_magnitude() {
    let o = run(&[
        "kernel",
        "--discrete-n",
        "1",
        "--signs",
        "+-",
        "--p0",
        "+q^0",
        "--format",
        "json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rows"][0]["abs"], 0.0);
}

#[test]
fn sweep_emits_csv_rows() {
    let o = run(&["kernel", "--sweep", "11", "--signs", "-+", "--p0", "+q^-2"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap().lines().count(), 12);
}

#[test]
fn negative_q_zero_is_rejected() {
    let o = run(&["kernel", "--x", "0.6", "--p0", "-q^0"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["status"], "error");
    assert!(e["reason"]
        .as_str()
        .unwrap()
        .contains("negative branch requires k ≥ 1"));
}

#[test]
fn bad_tolerance_is_an_input_error() {
    let o = run(&["verify", "qseries", "--tol", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "InputError");
    let o = run(&["verify", "qseries", "--tol", "qseries=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn qseries_suite_passes() {
    let o = run(&["verify", "qseries"]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["config"]["q"], 0.5);
    let names: Vec<&str> = v["suites"][0]["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(names.contains(&"q_binomial") && names.contains(&"pochhammer_splitting"));
}

#[test]
fn failing_suite_exits_one_with_reasons() {
    let o = run(&["verify", "plancherel"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    if v["passed"] == true {
        assert_eq!(o.status.code(), Some(0));
    } else {
        assert_eq!(o.status.code(), Some(1));
        let e = stderr_json(&o);
        assert_eq!(e["status"], "fail");
        assert!(!e["reason"].as_array().unwrap().is_empty());
    }
}

#[test]
fn verify_all_is_byte_identical() {
    let (a, b) = (scratch("all-a.json"), scratch("all-b.json"));
    for p in [&a, &b] {
        let o = run(&["verify", "--all", "--out", p.to_str().unwrap()]);
        assert!(matches!(o.status.code(), Some(0) | Some(1)));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn config_file_from_environment() {
    let cfg = scratch("cfg.toml");
    fs::write(
        &cfg,
        "q = 0.3\nseed = 11\n[draws]\nqseries = 5\ncontinuation = 5\n",
    )
    .unwrap();
    let o = bin()
        .env("QSPHERE_CONFIG", &cfg)
        .args(["verify", "qseries"])
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config"]["q"], 0.3);
    assert_eq!(v["config"]["seed"], 11);
    // flags win over the file
    let o = bin()
        .env("QSPHERE_CONFIG", &cfg)
        .args(["verify", "qseries", "--seed", "12"])
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["config"]["seed"], 12);
}

#[test]
fn forward_of_even_delta_is_diagonal() {
    let out = scratch("field.json");
    let o = run(&[
        "transform",
        "forward",
        "--input",
        &example(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(stderr_json(&o)["diagonal_only"], true);
}

#[test]
fn inverse_with_mismatched_grid_exits_two() {
    let field = scratch("field16.json");
    let o = run(&[
        "transform",
        "forward",
        "--input",
        &example(),
        "--out",
        field.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[
        "transform",
        "inverse",
        "--input",
        field.to_str().unwrap(),
        "--fit-density",
        "--nodes",
        "16",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "GridMismatch");
}

#[test]
fn roundtrip_reports_residuals() {
    let o = run(&[
        "transform",
        "roundtrip",
        "--input",
        &example(),
        "--fit-density",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["residuals"]["even[+q^0]"].is_number());
    assert!(v["gram_opnorm"].is_number());
    let expected = if v["passed"] == true { 0 } else { 1 };
    assert_eq!(o.status.code(), Some(expected));
}

#[test]
fn roundtrip_without_density_is_an_input_error() {
    let o = run(&["transform", "roundtrip", "--input", &example()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "MissingProvider");
}
