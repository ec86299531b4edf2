//! Run configuration. One TOML file per run; unknown keys are rejected.

use std::path::Path;

use nlslab_core::evolver::{Scheme, Sponge};
use nlslab_core::ground::GroundSolverOptions;
use nlslab_core::reduced::PairingMode;
use nlslab_core::spectrum::EigenOptions;
use nlslab_core::Nonlinearity;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Ground,
    Spectrum,
    Reduced,
    Evolve,
    Shadow,
    Sweep,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ground" => Some(Kind::Ground),
            "spectrum" => Some(Kind::Spectrum),
            "reduced" => Some(Kind::Reduced),
            "evolve" => Some(Kind::Evolve),
            "shadow" => Some(Kind::Shadow),
            "sweep" => Some(Kind::Sweep),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Kind::Ground => "ground",
            Kind::Spectrum => "spectrum",
            Kind::Reduced => "reduced",
            Kind::Evolve => "evolve",
            Kind::Shadow => "shadow",
            Kind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,
    /// Output directory; `--out` takes precedence.
    pub output: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub nonlinearity: Nonlinearity,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub family: FamilyConfig,
    pub mass: Option<MassConfig>,
    #[serde(default)]
    pub reduced: ReducedConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub shadow: ShadowConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    pub n_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_max: 80.0,
            n_points: 4096,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub omega_range: [f64; 2],
    pub n_omega: usize,
    pub solver: GroundSolverOptions,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            omega_range: [0.04, 0.06],
            n_omega: 41,
            solver: GroundSolverOptions::default(),
        }
    }
}

/// Total mass, either directly or as `q(ω*) ± ε²`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassConfig {
    pub epsilon: Option<f64>,
    /// Use `q(ω*) - ε²` instead of `q(ω*) + ε²`.
    pub below: bool,
    pub q_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReducedConfig {
    pub pairing: PairingMode,
    /// Kernel nodes for the `A(ω)` spline.
    pub pairing_nodes: usize,
    /// Half width of the node window around `ω*`.
    pub pairing_half_width: f64,
    pub dt: f64,
    /// Initial `E_Q` as a fraction of the barrier, at the right turning point.
    pub energy_fraction: f64,
    pub n_periods: f64,
    pub t_end: Option<f64>,
    pub trap_fraction: f64,
}

impl Default for ReducedConfig {
    fn default() -> Self {
        Self {
            pairing: PairingMode::Frozen,
            pairing_nodes: 21,
            pairing_half_width: 0.005,
            dt: 0.5,
            energy_fraction: 0.3,
            n_periods: 3.0,
            t_end: None,
            trap_fraction: nlslab_core::reduced::DEFAULT_TRAP_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    /// Explicit frequencies; otherwise `ω* ± k·spacing`, `k = 1..=per_side`.
    pub omegas: Option<Vec<f64>>,
    pub per_side: usize,
    pub spacing: f64,
    pub eigen: EigenOptions,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            omegas: None,
            per_side: 5,
            spacing: 8e-4,
            eigen: EigenOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    /// `ω0 = ω_ref + ζ0 ε` with `ω_ref = ω_+`, or `ω*` without a well.
    pub zeta0: Option<f64>,
    /// Otherwise `ζ0` from the right turning point at this energy fraction.
    pub energy_fraction: f64,
    /// Mass excess at which the turning point defines `ζ0`; defaults to
    /// the run's own.
    pub reference_epsilon: Option<f64>,
    pub lambda0: f64,
    pub theta0: f64,
}

impl Default for StartConfig {
    fn default() -> Self {
        Self {
            zeta0: None,
            energy_fraction: 0.3,
            reference_epsilon: None,
            lambda0: 0.0,
            theta0: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationShape {
    /// `(e^{-(r/w)²}, (r/w) e^{-(r/w)²})`.
    Gaussian,
    /// Sum of Gaussian shells with seeded centers, widths and phases.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    pub shape: PerturbationShape,
    pub width: f64,
    /// `‖r0‖_{H1} = amplitude · ε^{3/2}` after projection.
    pub amplitude: f64,
    pub bumps: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            shape: PerturbationShape::Gaussian,
            width: 6.0,
            amplitude: 0.5,
            bumps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub dt: f64,
    pub scheme: Scheme,
    /// Track sampling interval in time units (a multiple of `dt`).
    pub sample_every: f64,
    pub n_periods: f64,
    pub t_end: Option<f64>,
    pub step_cap: u64,
    pub tail_floor: f64,
    pub sponge: Option<Sponge>,
    pub start: StartConfig,
    pub perturbation: Option<PerturbationConfig>,
    /// Field snapshots written every this many samples; none when absent.
    pub snapshot_every: Option<usize>,
    pub max_omega_jump: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            scheme: Scheme::Strang,
            sample_every: 1.0,
            n_periods: 3.0,
            t_end: None,
            step_cap: 20_000_000,
            tail_floor: 1e-4,
            sponge: None,
            start: StartConfig::default(),
            perturbation: None,
            snapshot_every: None,
            max_omega_jump: 5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowConfig {
    pub n_periods: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self { n_periods: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub energy_fraction: f64,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.02, 0.03, 0.045, 0.067, 0.1],
            energy_fraction: 0.3,
            workers: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> LabResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| LabError::ConfigInvalid {
            path: e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_default(),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::ConfigInvalid {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            LabError::ConfigInvalid { path: p, message } => LabError::ConfigInvalid {
                path: format!("{}: {p}", path.display()),
                message,
            },
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> LabResult<()> {
        let bad = |path: &str, message: &str| {
            Err(LabError::ConfigInvalid {
                path: path.into(),
                message: message.into(),
            })
        };
        if self.grid.n_points < 16 || !(self.grid.r_max > 0.0) {
            return bad("grid", "need n_points >= 16 and r_max > 0");
        }
        let [lo, hi] = self.family.omega_range;
        if !(hi > lo && lo > 0.0) {
            return bad("family.omega_range", "need 0 < lo < hi");
        }
        if let Some(m) = &self.mass {
            match (m.epsilon, m.q_total) {
                (Some(e), None) if e > 0.0 => {}
                (None, Some(q)) if q > 0.0 && !m.below => {}
                _ => return bad("mass", "give exactly one of a positive epsilon or q_total (below only with epsilon)"),
            }
        }
        if !(self.evolve.dt > 0.0) || !(self.evolve.sample_every >= self.evolve.dt) {
            return bad("evolve", "need dt > 0 and sample_every >= dt");
        }
        let ratio = self.evolve.sample_every / self.evolve.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return bad("evolve.sample_every", "must be a multiple of dt");
        }
        if !(self.reduced.dt > 0.0) {
            return bad("reduced.dt", "must be positive");
        }
        if self.sweep.epsilons.iter().any(|e| !(*e > 0.0)) {
            return bad("sweep.epsilons", "must be positive");
        }
        Ok(())
    }
}
