//! Shared coarse family for unit tests.

use std::sync::OnceLock;

use crate::ground::{build_family, find_critical_frequency, GroundSolverOptions, GroundStateFamily};
use crate::grid::RadialGrid;
use crate::nonlinearity::Nonlinearity;

pub fn family() -> &'static GroundStateFamily {
    static FAMILY: OnceLock<GroundStateFamily> = OnceLock::new();
    FAMILY.get_or_init(|| {
        let grid = RadialGrid::new(80.0, 2048).unwrap();
        build_family(
            (0.04, 0.06),
            21,
            &grid,
            Nonlinearity::Saturated,
            &GroundSolverOptions::default(),
        )
        .unwrap()
    })
}

pub fn omega_star() -> f64 {
    find_critical_frequency(family()).unwrap().0
}
