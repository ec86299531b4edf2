//! Public-API pipeline on a coarse grid: family, critical point, chain,
//! reduced orbit, field construction, evolution and decomposition.

use std::sync::OnceLock;

use nlslab_core::evolver::{evolve, init_field, EvolveOptions};
use nlslab_core::ground::{build_family, find_critical_frequency, potential_well, GroundSolverOptions};
use nlslab_core::linearization::{assemble_operators, generalized_kernel, ChainOptions, KernelBasis};
use nlslab_core::modulation::{decompose, DecomposeOptions, FrameSource, ModulationCoords};
use nlslab_core::reduced::{ReducedModel, ReducedState};
use nlslab_core::{GroundStateFamily, Nonlinearity, RadialGrid};

struct Fixture {
    family: GroundStateFamily,
    omega_star: f64,
    kernel: KernelBasis,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = RadialGrid::new(80.0, 1024).unwrap();
        let family =
            build_family((0.04, 0.06), 11, &grid, Nonlinearity::Saturated, &GroundSolverOptions::default()).unwrap();
        let (omega_star, _) = find_critical_frequency(&family).unwrap();
        let ops = assemble_operators(&family, omega_star).unwrap();
        let kernel = generalized_kernel(&ops, &ChainOptions::default()).unwrap();
        Fixture {
            family,
            omega_star,
            kernel,
        }
    })
}

#[test]
fn critical_point_sits_at_the_mass_minimum() {
    let f = fixture();
    let q_star = f.family.q_at(f.omega_star).unwrap();
    for dw in [-5e-3, -1e-3, 1e-3, 5e-3] {
        assert!(f.family.q_at(f.omega_star + dw).unwrap() > q_star);
    }
    assert!(f.family.d2q_at(f.omega_star).unwrap() > 0.0);
    assert!(f.kernel.pairing_a > 0.0);
    assert!(f.kernel.a.abs() < 1e-6);
}

#[test]
fn reduced_orbit_above_the_minimum_is_trapped() {
    let f = fixture();
    let eps: f64 = 0.05;
    let q_total = f.family.q_at(f.omega_star).unwrap() + eps * eps;
    let well = potential_well(&f.family, q_total).unwrap();
    assert!(well.omega_minus < f.omega_star && f.omega_star < well.omega_plus);

    let model = ReducedModel::frozen(&f.family, q_total, f.kernel.pairing_a).unwrap();
    let start = ReducedState {
        t: 0.0,
        omega: model.turning_point(0.3).unwrap(),
        lambda: 0.0,
    };
    assert!(model.classify(start.omega, start.lambda, 0.5).is_trapped());
    let orbit = model.integrate(start, 2000.0, 0.5).unwrap();
    let omegas: Vec<f64> = orbit.states.iter().map(|s| s.omega).collect();
    assert!(omegas.iter().all(|w| *w > well.omega_minus));
    assert!(omegas.iter().any(|w| *w > well.omega_plus) && omegas.iter().any(|w| *w < well.omega_plus));
    let e0 = orbit.energy[0];
    assert!(orbit.energy.iter().all(|e| (e - e0).abs() <= 1e-12 * well.barrier.max(e0.abs())));
}

#[test]
fn evolved_soliton_decomposes_to_its_own_frequency() {
    let f = fixture();
    let nl = Nonlinearity::Saturated;
    let (mut field, c0, mu) = init_field(&f.kernel, 0.0, f.kernel.q, None, 0.3, nl).unwrap();
    assert!(mu.abs() < 1e-8);

    let opts = EvolveOptions {
        dt: 1e-2,
        observe_every: 500,
        ..Default::default()
    };
    let report = evolve(&mut field, 20.0, nl, &opts, |_, _| Ok(true)).unwrap();
    assert!(report.max_mass_drift < 1e-12);
    assert!((field.mass() - c0.mass).abs() < 1e-10 * c0.mass);

    let frames = FrameSource::full(&f.family);
    let expected_theta = 0.3 + f.omega_star * 20.0;
    let guess = ModulationCoords::at(expected_theta, f.omega_star, 0.0, 0.0);
    let d = decompose(&field.u, &frames, &guess, &DecomposeOptions::default()).unwrap();
    assert!((d.coords.omega - f.omega_star).abs() < 1e-6);
    assert!(d.coords.lambda.abs() < 1e-6);
    let dtheta = (d.coords.theta - expected_theta + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU)
        - std::f64::consts::PI;
    assert!(dtheta.abs() < 1e-3);
}
