use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_gps-lab");

const SCENARIO_ONE: &str = r#"
seed = 5
horizon = 2e5

[gps]
c = 1.0
phi1 = 0.7
phi2 = 0.3

[class1]
family = "compound_poisson"
lambda = 0.0666666666666667
jobs = "pareto"
scale = 1.0
alpha = 1.5

[class2]
family = "compound_poisson"
lambda = 0.21
jobs = "pareto"
scale = 1.0
alpha = 2.5

[levels]
min = 1.0
max = 10.0
per_decade = 3
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn assert_single_line_error(out: &Output) {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1, "{err}");
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s1.toml", SCENARIO_ONE);
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.starts_with("u,p_hat,ci_low,ci_high,f_asym,ratio,scenario\n"));
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().nth(1).unwrap().ends_with(",second-overloaded"));
    let manifest = std::fs::read_to_string(dir.path().join("a.csv.manifest")).unwrap();
    assert!(manifest.contains("# seeds: 5"));

    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "6",
    ]);
    assert!(o.status.success());
    assert_ne!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s1.toml", SCENARIO_ONE);
    let out = dir.path().join("r.csv");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "2,4",
        "--replications",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with("2.00000,"));
    let manifest = std::fs::read_to_string(dir.path().join("r.csv.manifest")).unwrap();
    assert!(manifest.contains("# seeds: 5,6"));
}

#[test]
fn discrete_engine_runs_from_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s1.toml",
        &format!("step = 0.05\n{}", SCENARIO_ONE.replace("2e5", "2e4")),
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--engine", "discrete"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("u,p_hat"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("discrete(h=0.05)"));
}

#[test]
fn boundary_config_reports_without_asymptote() {
    let dir = tempfile::tempdir().unwrap();
    // mu2 = 0.18 * 5/3 = 0.3 = phi2 c
    let cfg = write(
        dir.path(),
        "b.toml",
        &SCENARIO_ONE.replace("lambda = 0.21", "lambda = 0.18"),
    );
    let out = dir.path().join("r.csv");
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    for line in std::fs::read_to_string(&out).unwrap().lines().skip(1) {
        assert!(line.ends_with(",,,"), "{line}");
    }
}

#[test]
fn asymptote_table_has_fixed_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s1.toml", SCENARIO_ONE);
    let o = run(&["asymptote", "--config", cfg.to_str().unwrap(), "--levels", "10,100"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "u,f_asym,bound_low,bound_high,scenario");
    // k1 = lambda1 = 1/15; f = k1 / ((0.7 - 0.2) * 0.5) u^{-1/2}
    let f: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((f - 0.266667 / 10f64.sqrt()).abs() < 1e-5, "{f}");
}

#[test]
fn tandem_samples_against_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
seed = 3
horizon = 1e4

[gps]
phi1 = 0.3

[class1]
family = "compound_poisson"
lambda = 24.0
jobs = "pareto"
scale = 0.01
alpha = 2.5

[class2]
family = "compound_poisson"
lambda = 0.133333333333333
jobs = "pareto"
scale = 1.0
alpha = 1.8

[levels]
values = [1.0, 3.0]
"#;
    let cfg = write(dir.path(), "t.toml", text);
    let o = run(&["tandem", "--config", cfg.to_str().unwrap(), "--replications", "2000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 3);
    assert!(out.lines().nth(1).unwrap().ends_with(",tandem"));
}

#[test]
fn unknown_key_is_a_single_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &format!("colour = 3\n{SCENARIO_ONE}"));
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_single_line_error(&o);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_parameter_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &SCENARIO_ONE.replace("phi2 = 0.3", "phi2 = 0.4"),
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_single_line_error(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gps.phi2"));
}

#[test]
fn missing_file_and_bad_flags_fail_cleanly() {
    assert_single_line_error(&run(&["simulate", "--config", "/nonexistent/x.toml"]));
    assert_single_line_error(&run(&["simulate", "--config", "x.toml", "--engine", "warp"]));
    assert_single_line_error(&run(&["frobnicate"]));
    assert_single_line_error(&run(&["validate", "nonsense"]));
}

#[test]
fn validate_prints_one_line_per_check() {
    let o = run(&["validate", "classifier"]);
    assert!(o.status.success());
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 1);
    assert!(out.starts_with("criterion 9 classifier-totality: PASS"));
}
