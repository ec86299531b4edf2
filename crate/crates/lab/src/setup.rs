//! Family, critical point and kernel data shared by every run kind, loaded
//! from the cache when possible.

use std::path::Path;

use nlslab_core::ground::{build_family, find_critical_frequency, potential_well};
use nlslab_core::interp::{cubic_spline, PiecewisePoly};
use nlslab_core::linearization::{assemble_operators, generalized_kernel, pairing_curve, ChainOptions, KernelBasis};
use nlslab_core::reduced::{PairingMode, ReducedModel};
use nlslab_core::{GroundStateFamily, RadialGrid, WellGeometry};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MassConfig, ReducedConfig};
use crate::error::{Context, LabError, LabResult};
use crate::store::{self, content_hash, Cache};

/// Bumped whenever cached numbers would change for the same inputs.
const CACHE_FORMAT: u32 = 1;

#[derive(Serialize)]
struct FamilyKey<'a> {
    format: u32,
    nonlinearity: nlslab_core::Nonlinearity,
    grid: &'a crate::config::GridConfig,
    family: &'a crate::config::FamilyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairingFile {
    schema_version: u32,
    nodes: Vec<f64>,
    #[serde(rename = "A")]
    pairing_a: Vec<f64>,
}

pub struct Setup {
    pub family: GroundStateFamily,
    pub omega_star: f64,
    pub q_star: f64,
    pub q2_star: f64,
    /// Kernel basis at `ω*`.
    pub kernel_star: KernelBasis,
    family_hash: String,
    cache: Cache,
}

/// `(Q, ε)` with `ε = √|Q - q(ω*)|`.
pub fn resolve_mass(mass: &MassConfig, q_star: f64) -> (f64, f64) {
    match (mass.epsilon, mass.q_total) {
        (Some(e), _) => (if mass.below { q_star - e * e } else { q_star + e * e }, e),
        (None, Some(q)) => (q, (q - q_star).abs().sqrt()),
        (None, None) => unreachable!("validated config"),
    }
}

impl Setup {
    pub fn load(cfg: &ExperimentConfig, cache: &Cache) -> LabResult<Self> {
        let family_hash = content_hash(&FamilyKey {
            format: CACHE_FORMAT,
            nonlinearity: cfg.nonlinearity,
            grid: &cfg.grid,
            family: &cfg.family,
        });
        let (family, omega_star) = cache.get_or_insert(
            "family",
            &family_hash,
            "family.json",
            store::read_family,
            |p, (f, w)| store::write_family(p, f, *w, true),
            || {
                let grid = RadialGrid::new(cfg.grid.r_max, cfg.grid.n_points).context("radial grid")?;
                let [lo, hi] = cfg.family.omega_range;
                let fam = build_family((lo, hi), cfg.family.n_omega, &grid, cfg.nonlinearity, &cfg.family.solver)
                    .context("building the ground-state family")?;
                let (w, _) = find_critical_frequency(&fam).context("locating the critical frequency")?;
                Ok((fam, w))
            },
        )?;
        let q_star = family.q_at(omega_star).context("mass at the critical frequency")?;
        let q2_star = family.d2q_at(omega_star).context("curvature at the critical frequency")?;
        let kernel_hash = content_hash(&(&family_hash, omega_star.to_bits(), ChainOptions::default()));
        let kernel_star = cache.get_or_insert(
            "kernel",
            &kernel_hash,
            "kernel.json",
            store::read_kernel,
            |p, k| store::write_kernel(p, k, true),
            || {
                let ops = assemble_operators(&family, omega_star).context("operators at the critical frequency")?;
                generalized_kernel(&ops, &ChainOptions::default()).context("kernel at the critical frequency")
            },
        )?;
        Ok(Self {
            family,
            omega_star,
            q_star,
            q2_star,
            kernel_star,
            family_hash,
            cache: cache.clone(),
        })
    }

    pub fn family_hash(&self) -> &str {
        &self.family_hash
    }

    pub fn mass(&self, cfg: &ExperimentConfig) -> LabResult<(f64, f64)> {
        let mass = cfg.mass.as_ref().ok_or_else(|| LabError::ConfigInvalid {
            path: "mass".into(),
            message: "this run kind needs a [mass] section".into(),
        })?;
        Ok(resolve_mass(mass, self.q_star))
    }

    pub fn well(&self, q_total: f64) -> LabResult<WellGeometry> {
        potential_well(&self.family, q_total).context("potential well")
    }

    /// Cubic spline of `A(ω)` through kernel nodes spread evenly over
    /// `ω* ± half_width`.
    pub fn pairing_spline(&self, nodes: usize, half_width: f64) -> LabResult<PiecewisePoly> {
        let (lo, hi) = self.family.omega_range();
        let a = (self.omega_star - half_width).max(lo);
        let b = (self.omega_star + half_width).min(hi);
        let omegas: Vec<f64> = (0..nodes).map(|k| a + (b - a) * k as f64 / (nodes - 1).max(1) as f64).collect();
        let hash = content_hash(&(&self.family_hash, omegas.iter().map(|w| w.to_bits()).collect::<Vec<_>>()));
        let file = self.cache.get_or_insert(
            "pairing",
            &hash,
            "pairing.json",
            store::read_json::<PairingFile>,
            |p, f| store::write_json(p, f),
            || {
                let (kernels, _) =
                    pairing_curve(&self.family, &omegas, &ChainOptions::default()).context("pairing curve")?;
                Ok(PairingFile {
                    schema_version: store::SCHEMA_VERSION,
                    nodes: omegas.clone(),
                    pairing_a: kernels.iter().map(|k| k.pairing_a).collect(),
                })
            },
        )?;
        cubic_spline(&file.nodes, &file.pairing_a).context("pairing spline")
    }

    pub fn model(&self, q_total: f64, reduced: &ReducedConfig) -> LabResult<ReducedModel> {
        let a_star = self.kernel_star.pairing_a;
        match reduced.pairing {
            PairingMode::Frozen => ReducedModel::frozen(&self.family, q_total, a_star),
            PairingMode::Variable => {
                let spline = self.pairing_spline(reduced.pairing_nodes, reduced.pairing_half_width)?;
                ReducedModel::new(&self.family, q_total, spline, a_star)
            }
        }
        .context("reduced model")
    }

    pub fn export(&self, dir: &Path) -> LabResult<()> {
        store::write_family(&dir.join("family.json"), &self.family, self.omega_star, true)?;
        store::write_kernel(&dir.join("kernel_star.json"), &self.kernel_star, true)
    }
}
