//! Cache and file-format round trips, plus properties of the series helpers
//! the run kinds build their summaries from.

use std::fs;

use nlslab::config::MassConfig;
use nlslab::runs::{count_crossings, fit_line, max_rise};
use nlslab::setup::Setup;
use nlslab::store::{self, content_hash, Cache};
use nlslab::ExperimentConfig;
use proptest::prelude::*;

const SMALL: &str = r#"
nonlinearity = "saturated"

[grid]
r_max = 80.0
n_points = 1024

[family]
omega_range = [0.04, 0.06]
n_omega = 11
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

#[test]
fn cached_family_reloads_the_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let fresh = Setup::load(&small(), &cache).unwrap();
    let entry = cache.entry("family", fresh.family_hash());
    assert!(entry.join("family.json").exists());
    assert!(entry.join("family.bin").exists());

    let reloaded = Setup::load(&small(), &cache).unwrap();
    assert_eq!(fresh.omega_star, reloaded.omega_star);
    for (a, b) in fresh.family.q_values().iter().zip(reloaded.family.q_values()) {
        assert!((a - b).abs() <= 1e-12 * a);
    }
    for (a, b) in fresh.family.profiles().zip(reloaded.family.profiles()) {
        assert_eq!(a.values(), b.values());
    }
    assert_eq!(fresh.kernel_star.pairing_a, reloaded.kernel_star.pairing_a);
    assert_eq!(fresh.kernel_star.psi3.values(), reloaded.kernel_star.psi3.values());
}

#[test]
fn corrupt_cache_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cache = Cache::new(dir.path());
    let fresh = Setup::load(&small(), &cache).unwrap();
    let sidecar = cache.entry("family", fresh.family_hash()).join("family.bin");
    fs::write(&sidecar, b"truncated").unwrap();
    let again = Setup::load(&small(), &cache).unwrap();
    assert_eq!(fresh.family.q_values(), again.family.q_values());
    assert!(fs::metadata(&sidecar).unwrap().len() > 9);
}

#[test]
fn inline_and_sidecar_family_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let setup = Setup::load(&small(), &Cache::new(dir.path().join("cache"))).unwrap();
    let inline = dir.path().join("inline/family.json");
    let sidecar = dir.path().join("sidecar/family.json");
    store::write_family(&inline, &setup.family, setup.omega_star, false).unwrap();
    store::write_family(&sidecar, &setup.family, setup.omega_star, true).unwrap();
    assert!(!dir.path().join("inline/family.bin").exists());

    let (a, wa) = store::read_family(&inline).unwrap();
    let (b, wb) = store::read_family(&sidecar).unwrap();
    assert_eq!(wa, wb);
    assert_eq!(a.q_values(), b.q_values());
    for (p, q) in a.profiles().zip(b.profiles()) {
        assert_eq!(p.values(), q.values());
    }

    let kernel = dir.path().join("kernel.json");
    store::write_kernel(&kernel, &setup.kernel_star, true).unwrap();
    let k = store::read_kernel(&kernel).unwrap();
    assert_eq!(k.pairing_a, setup.kernel_star.pairing_a);
    assert_eq!(k.psi4.values(), setup.kernel_star.psi4.values());
}

#[test]
fn exported_family_carries_schema_version() {
    let dir = tempfile::tempdir().unwrap();
    let setup = Setup::load(&small(), &Cache::new(dir.path().join("cache"))).unwrap();
    setup.export(dir.path()).unwrap();
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("family.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["omega"].as_array().unwrap().len(), 11);
    assert!(json["omega_star"].as_f64().unwrap() > 0.04);
}

#[test]
fn hash_distinguishes_grids() {
    let a = small();
    let mut b = small();
    b.grid.n_points = 1025;
    assert_eq!(content_hash(&a), content_hash(&small()));
    assert_ne!(content_hash(&a), content_hash(&b));
}

proptest! {
    #[test]
    fn config_survives_toml_round_trip(
        r_max in 20.0f64..200.0,
        n in 16usize..8192,
        lo in 0.01f64..0.05,
        width in 0.001f64..0.05,
        eps in 0.001f64..0.2,
        dt_steps in 1u32..50,
    ) {
        let mut cfg = small();
        cfg.grid.r_max = r_max;
        cfg.grid.n_points = n;
        cfg.family.omega_range = [lo, lo + width];
        cfg.mass = Some(MassConfig { epsilon: Some(eps), ..Default::default() });
        cfg.evolve.sample_every = cfg.evolve.dt * dt_steps as f64;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(content_hash(&back), content_hash(&cfg));
    }

    #[test]
    fn crossings_of_a_sampled_sine(cycles in 1usize..20, per_cycle in 8usize..64, phase in 0.1f64..0.4) {
        let n = cycles * per_cycle;
        let x: Vec<f64> = (0..n)
            .map(|k| (std::f64::consts::TAU * (k as f64 / per_cycle as f64 + phase)).sin())
            .collect();
        let c = count_crossings(&x, 0.0, 0.01);
        prop_assert!(c + 1 >= 2 * cycles && c <= 2 * cycles);
    }

    #[test]
    fn band_absorbs_small_noise(x in prop::collection::vec(-0.5f64..0.5, 1..200)) {
        prop_assert_eq!(count_crossings(&x, 0.0, 0.5), 0);
    }

    #[test]
    fn rise_is_zero_exactly_on_nonincreasing_series(mut x in prop::collection::vec(-1e3f64..1e3, 1..100)) {
        x.sort_by(|a, b| b.total_cmp(a));
        prop_assert_eq!(max_rise(&x), 0.0);
        let bump = x[x.len() - 1] + 1.0;
        x.push(bump);
        prop_assert!((max_rise(&x) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn line_fit_recovers_exact_lines(
        slope in -5.0f64..5.0,
        icpt in -10.0f64..10.0,
        xs in prop::collection::btree_set(-1000i32..1000, 3..30),
    ) {
        let x: Vec<f64> = xs.iter().map(|&v| v as f64 / 100.0).collect();
        let y: Vec<f64> = x.iter().map(|v| icpt + slope * v).collect();
        let (s, err) = fit_line(&x, &y);
        prop_assert!((s - slope).abs() < 1e-9);
        prop_assert!(err < 1e-8);
    }
}
