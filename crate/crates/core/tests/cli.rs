use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[model]
beta = 1
zeta = 1
beta0 = 1
zeta0 = 1
rho_I = 0.25*exp(-a)
zp_1 = cos(0.5*cos(pi*x))
zp_2 = sin(0.5*cos(pi*x))
d = 2
epsilon = 0.1
T = 0.05
beta_min = 1
beta_max = 1
zeta_min = 1
zeta_max = 1
M = 2
mu_I_min = 0.2
mu0_min = 0.1

[numerics]
delta_a = 0.05
Nx = 9

[run]
eps_list = 0.1, 0.05
da_list = 0.1, 0.05
layer_horizon = 6
";

fn bin(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("case.conf");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_delayflow"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_delayflow")).arg("bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = Command::new(env!("CARGO_BIN_EXE_delayflow"))
        .args(["flow", "--format", "xml", "--config", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_or_malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_delayflow")).arg("flow").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin(dir.path(), &SMALL.replace("[numerics]", "[numerics]\ndelta_t = 0.001"), &["flow"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta_t is derived by CFL"));
}

#[test]
fn failed_hypothesis_exits_two_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL.replace("beta = 1\nzeta", "beta = 0\nzeta");
    let out = bin(dir.path(), &bad, &["validate"]);
    assert_eq!(out.status.code(), Some(2));
    let s = summary(dir.path());
    assert_eq!(s["passed"], false);
    assert_eq!(s["command"], "validate");
    let out = bin(dir.path(), &bad, &["density"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_passes_and_writes_only_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), SMALL, &["validate"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let files: Vec<_> = std::fs::read_dir(dir.path().join("out")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(files, ["summary.json"]);
}

#[test]
fn flow_writes_tables_with_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), SMALL, &["flow", "--stride", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let flow = std::fs::read_to_string(dir.path().join("out/flow.csv")).unwrap();
    assert!(flow.starts_with("n,t,k,x,z_1,z_2,lambda\n"));
    // N = 10 steps: frames 0, 7 and the last one.
    let steps: std::collections::BTreeSet<&str> = flow.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps.into_iter().collect::<Vec<_>>(), ["0", "10", "7"]);
    let energy = std::fs::read_to_string(dir.path().join("out/energy.csv")).unwrap();
    assert!(energy.starts_with("n,t,E,D,lambda_l1,Ldotz_l1,dz_l2sq\n"));
    assert_eq!(energy.lines().count(), 12);
    assert_eq!(summary(dir.path())["passed"], true);
}

#[test]
fn json_format_and_repeat_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let out = bin(dir.path(), SMALL, &["sweep-da", "--format", "json"]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    }
    let ta = std::fs::read(a.path().join("out/sweep_da.json")).unwrap();
    let tb = std::fs::read(b.path().join("out/sweep_da.json")).unwrap();
    assert_eq!(ta, tb);
    let table: serde_json::Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(table["kind"], "delta_a");
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["order_rho"].is_null());
    assert!(rows[1]["order_rho"].is_f64());
}

#[test]
fn density_limit_layer_and_kernel_emit_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, files) in [
        ("density", &["density.csv", "moments.csv"][..]),
        ("limit", &["limit.csv", "limit_density.csv"][..]),
        ("layer", &["layer.csv"][..]),
        ("kernel", &["kernel.csv"][..]),
    ] {
        let out = bin(dir.path(), SMALL, &[cmd]);
        assert!(out.status.code().is_some_and(|c| c != 1), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        for f in files {
            let text = std::fs::read_to_string(dir.path().join("out").join(f)).unwrap();
            assert!(text.lines().count() > 1, "{cmd} {f}");
            assert!(!text.contains('\r'));
        }
        assert_eq!(summary(dir.path())["command"], cmd);
    }
    let layer = std::fs::read_to_string(dir.path().join("out/layer.csv")).unwrap();
    assert!(layer.starts_with("ttilde,mass\n"));
}
