//! End-to-end runs of the `nlslab` binary on a coarse grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
nonlinearity = "saturated"

[grid]
r_max = 80.0
n_points = 1024

[family]
omega_range = [0.04, 0.06]
n_omega = 11

[mass]
epsilon = 0.05

[sweep]
epsilons = [0.03, 0.05, 0.08]
"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().expect("temp dir"),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(&p, text).unwrap();
        p
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_nlslab"))
            .args(args)
            .env("NLSLAB_CACHE_DIR", self.path("cache"))
            .current_dir(self.dir.path())
            .output()
            .expect("binary runs")
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_key_is_a_config_error() {
    let sb = Sandbox::new();
    let cfg = sb.write("bad.toml", &format!("{SMALL}\n[reduced]\nwobble = 1\n"));
    let out = sb.run(&["reduced", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("wobble"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let sb = Sandbox::new();
    let out = sb.run(&["ground", "--config", arg(&sb.path("absent.toml"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inconsistent_mass_section_is_rejected() {
    let sb = Sandbox::new();
    let cfg = sb.write("bad.toml", &SMALL.replace("epsilon = 0.05", "epsilon = 0.05\nq_total = 80.0"));
    let out = sb.run(&["reduced", "--config", arg(&cfg)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn tampered_acceptance_tolerance_is_rejected() {
    let sb = Sandbox::new();
    sb.write(
        "acc/c01_critical_asymptotics.toml",
        &format!("{SMALL}\n[acceptance]\nc_variation_max = 10.0\n"),
    );
    let out = sb.run(&["acceptance", "--config", arg(&sb.path("acc")), "--out", arg(&sb.path("out"))]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(!sb.path("out/acceptance.json").exists());
}

#[test]
fn missing_acceptance_configs_are_skipped() {
    let sb = Sandbox::new();
    fs::create_dir_all(sb.path("acc")).unwrap();
    let out = sb.run(&["acceptance", "--config", arg(&sb.path("acc")), "--out", arg(&sb.path("out"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.contains(" SKIPPED ")).count(), 10);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(sb.path("out/acceptance.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["results"].as_array().unwrap().len(), 10);
}

#[test]
fn window_without_critical_point_is_a_numerical_failure() {
    let sb = Sandbox::new();
    let cfg = sb.write(
        "far.toml",
        &SMALL.replace("omega_range = [0.04, 0.06]", "omega_range = [0.04, 0.045]"),
    );
    let out = sb.run(&["ground", "--config", arg(&cfg), "--out", arg(&sb.path("out"))]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn ground_run_writes_versioned_artifacts() {
    let sb = Sandbox::new();
    let cfg = sb.write("small.toml", SMALL);
    let out = sb.run(&["ground", "--config", arg(&cfg), "--out", arg(&sb.path("out"))]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["family.json", "kernel_star.json", "mass_curve.csv", "report.json", "config.resolved.toml"] {
        assert!(sb.path("out").join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(sb.path("out/mass_curve.csv")).unwrap();
    assert!(csv.starts_with("# schema_version=1"));
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "omega,q,dq,d2q,E,d");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 12);
}

#[test]
fn runs_are_byte_for_byte_reproducible() {
    let sb = Sandbox::new();
    let cfg = sb.write("small.toml", SMALL);
    for (kind, file) in [("reduced", "reduced.csv"), ("sweep", "sweep.csv")] {
        let a = sb.path(&format!("{kind}-a"));
        let b = sb.path(&format!("{kind}-b"));
        for dir in [&a, &b] {
            let out = sb.run(&[kind, "--config", arg(&cfg), "--out", arg(dir)]);
            assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        }
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{kind}");
    }
}

#[test]
fn resolved_config_reloads_to_the_same_run() {
    let sb = Sandbox::new();
    let cfg = sb.write("small.toml", SMALL);
    let first = sb.run(&["reduced", "--config", arg(&cfg), "--out", arg(&sb.path("a"))]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let resolved = sb.path("a/config.resolved.toml");
    let second = sb.run(&["reduced", "--config", arg(&resolved), "--out", arg(&sb.path("b"))]);
    assert_eq!(second.status.code(), Some(0), "{}", stderr(&second));
    assert_eq!(first.stdout, second.stdout);
}
