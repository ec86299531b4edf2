//! The run kinds. Each `compute_*` function returns typed results; the
//! `run_*` wrappers write them as artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nlslab_core::evolver::{evolve, init_field, EvolveOptions, EvolveReport, Scheme};
use nlslab_core::linearization::{assemble_operators, chain_diagnostics, generalized_kernel, ChainDiagnostics, ChainOptions};
use nlslab_core::modulation::{
    energy_drift, shadow_compare, FrameSource, LostLock, ModulationCoords, ModulationTrack, ShadowReport, TrackOptions,
    Tracker,
};
use nlslab_core::reduced::{measure_period, PeriodEstimate, ReducedModel, ReducedState, ReducedTrajectory};
use nlslab_core::spectrum::{leading_pair, small_eigenvalues};
use nlslab_core::WellGeometry;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Kind, PerturbationConfig, PerturbationShape, ReducedConfig};
use crate::error::{Context, LabError, LabResult};
use crate::setup::Setup;
use crate::store::{self, Cache, SCHEMA_VERSION};

fn invalid(path: &str, message: impl Into<String>) -> LabError {
    LabError::ConfigInvalid {
        path: path.into(),
        message: message.into(),
    }
}

fn create(path: &Path) -> LabResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| LabError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| LabError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a CSV with a `# schema_version` line, `# key=value` metadata and
/// the given columns.
fn write_table(path: &Path, meta: &[(&str, String)], header: &[&str], rows: &[Vec<f64>]) -> LabResult<()> {
    let mut out = create(path)?;
    writeln!(out, "# schema_version={SCHEMA_VERSION}").map_err(io_at(path))?;
    for (k, v) in meta {
        writeln!(out, "# {k}={v}").map_err(io_at(path))?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| LabError::Io {
        path: path.display().to_string(),
        source: e.into(),
    };
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| format!("{x:.17e}"))).map_err(csv_err)?;
    }
    w.flush().map_err(io_at(path))
}

fn core_csv(path: &Path, write: impl FnOnce(BufWriter<File>) -> nlslab_core::Result<()>) -> LabResult<()> {
    let out = create(path)?;
    write(out).context(&format!("writing {}", path.display()))
}

fn e17(x: f64) -> String {
    format!("{x:.17e}")
}

// ---------------------------------------------------------------- ground

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundReport {
    pub schema_version: u32,
    pub nonlinearity: nlslab_core::Nonlinearity,
    pub n_omega: usize,
    pub omega_range: [f64; 2],
    pub omega_star: f64,
    pub q_star: f64,
    pub q2_star: f64,
    #[serde(rename = "A_star")]
    pub pairing_a_star: f64,
    #[serde(rename = "B_star")]
    pub pairing_b_star: f64,
    pub well: Option<WellGeometry>,
}

pub fn compute_ground(cfg: &ExperimentConfig, setup: &Setup) -> LabResult<GroundReport> {
    let well = match &cfg.mass {
        Some(_) => {
            let (q, _) = setup.mass(cfg)?;
            (q > setup.q_star).then(|| setup.well(q)).transpose()?
        }
        None => None,
    };
    let (lo, hi) = setup.family.omega_range();
    Ok(GroundReport {
        schema_version: SCHEMA_VERSION,
        nonlinearity: cfg.nonlinearity,
        n_omega: setup.family.len(),
        omega_range: [lo, hi],
        omega_star: setup.omega_star,
        q_star: setup.q_star,
        q2_star: setup.q2_star,
        pairing_a_star: setup.kernel_star.pairing_a,
        pairing_b_star: setup.kernel_star.pairing_b,
        well,
    })
}

fn run_ground(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let report = compute_ground(cfg, setup)?;
    setup.export(out)?;
    let f = &setup.family;
    let rows: Vec<Vec<f64>> = (0..f.len())
        .map(|i| {
            let p = &f.points()[i];
            vec![p.omega, p.q, p.dq, p.d2q, p.energy, p.action()]
        })
        .collect();
    write_table(
        &out.join("mass_curve.csv"),
        &[("omega_star", e17(setup.omega_star)), ("q_star", e17(setup.q_star))],
        &["omega", "q", "dq", "d2q", "E", "d"],
        &rows,
    )?;
    finish(out, &report)
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub omega: f64,
    /// Chain coefficient from the kernel construction.
    pub a: f64,
    #[serde(rename = "A")]
    pub pairing_a: f64,
    /// Representative of the leading pair, nonnegative parts.
    pub lambda_re: f64,
    pub lambda_im: f64,
    /// `Re λ²` of the leading pair.
    pub lambda_sq: f64,
    /// `|λ² - a| / |a|`.
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub schema_version: u32,
    pub omega_star: f64,
    pub rows: Vec<SpectrumRow>,
    pub max_rel_err: f64,
    pub diagnostics: Vec<ChainDiagnostics>,
}

pub fn spectrum_omegas(cfg: &ExperimentConfig, setup: &Setup) -> Vec<f64> {
    match &cfg.spectrum.omegas {
        Some(w) => w.clone(),
        None => {
            let s = cfg.spectrum.spacing;
            let n = cfg.spectrum.per_side as i64;
            (-n..=n)
                .filter(|k| *k != 0)
                .map(|k| setup.omega_star + k as f64 * s)
                .collect()
        }
    }
}

pub fn compute_spectrum(cfg: &ExperimentConfig, setup: &Setup) -> LabResult<SpectrumReport> {
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for w in spectrum_omegas(cfg, setup) {
        let what = format!("spectrum at omega = {w}");
        let ops = assemble_operators(&setup.family, w).context(&what)?;
        let k = generalized_kernel(&ops, &ChainOptions::default()).context(&what)?;
        diagnostics.push(chain_diagnostics(&setup.family, &ops, &k, cfg.seed).context(&what)?);
        let eigs = small_eigenvalues(&ops, &cfg.spectrum.eigen).context(&what)?;
        let l = leading_pair(&eigs, 0.1 * k.a.abs().sqrt()).ok_or_else(|| LabError::Numerical {
            context: what.clone(),
            source: nlslab_core::Error::EigensolverFailure("no eigenvalue pair above the floor".into()),
        })?;
        let sq = l.re * l.re - l.im * l.im;
        rows.push(SpectrumRow {
            omega: w,
            a: k.a,
            pairing_a: k.pairing_a,
            lambda_re: l.re,
            lambda_im: l.im,
            lambda_sq: sq,
            rel_err: (sq - k.a).abs() / k.a.abs(),
        });
    }
    let max_rel_err = rows.iter().fold(0.0f64, |m, r| m.max(r.rel_err));
    Ok(SpectrumReport {
        schema_version: SCHEMA_VERSION,
        omega_star: setup.omega_star,
        rows,
        max_rel_err,
        diagnostics,
    })
}

fn run_spectrum(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let report = compute_spectrum(cfg, setup)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.omega, r.a, r.pairing_a, r.lambda_re, r.lambda_im, r.lambda_sq, r.rel_err])
        .collect();
    write_table(
        &out.join("spectrum.csv"),
        &[("omega_star", e17(setup.omega_star))],
        &["omega", "a", "A", "lambda_re", "lambda_im", "lambda_sq", "rel_err"],
        &rows,
    )?;
    finish(out, &report)
}

// ---------------------------------------------------------------- reduced

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub schema_version: u32,
    #[serde(rename = "Q")]
    pub q_total: f64,
    pub epsilon: f64,
    pub omega_star: f64,
    pub well: Option<WellGeometry>,
    pub start: ReducedState,
    pub harmonic_period: Option<f64>,
    pub period: Option<PeriodEstimate>,
    pub classification: String,
    pub window_exit: bool,
    pub max_energy_drift: f64,
    /// `max |E_Q - E_Q(0)| / (barrier · t_end)`.
    pub drift_rate_per_barrier: Option<f64>,
}

pub struct ReducedRun {
    pub model: ReducedModel,
    pub trajectory: ReducedTrajectory,
    pub report: ReducedReport,
}

/// Orbit from the right turning point at `fraction` of the barrier, or from
/// `ω*` at rest when there is no well.
pub fn compute_reduced(setup: &Setup, rcfg: &ReducedConfig, q_total: f64, fraction: f64) -> LabResult<ReducedRun> {
    let model = setup.model(q_total, rcfg)?;
    let well = model.well().copied();
    let omega0 = match &well {
        Some(_) => model.turning_point(fraction).context("turning point")?,
        None => setup.omega_star,
    };
    let harmonic = well.is_some().then(|| model.harmonic_period()).transpose().context("harmonic period")?;
    let t_end = match (rcfg.t_end, harmonic) {
        (Some(t), _) => t,
        (None, Some(th)) => rcfg.n_periods * th * 1.25,
        (None, None) => return Err(invalid("reduced.t_end", "required when Q is below q(omega*)")),
    };
    let start = ReducedState {
        t: 0.0,
        omega: omega0,
        lambda: 0.0,
    };
    let trajectory = model.integrate(start, t_end, rcfg.dt).context("reduced integration")?;
    let period = trajectory.period().ok();
    let max_energy_drift = trajectory.max_energy_drift();
    let span = trajectory.states.last().map_or(0.0, |s| s.t);
    let report = ReducedReport {
        schema_version: SCHEMA_VERSION,
        q_total,
        epsilon: model.epsilon(),
        omega_star: model.omega_star(),
        well,
        start,
        harmonic_period: harmonic,
        period,
        classification: model.classify(omega0, 0.0, rcfg.trap_fraction).label().into(),
        window_exit: trajectory.window_exit,
        max_energy_drift,
        drift_rate_per_barrier: well.filter(|_| span > 0.0).map(|w| max_energy_drift / (w.barrier * span)),
    };
    Ok(ReducedRun {
        model,
        trajectory,
        report,
    })
}

fn write_rescaled(path: &Path, model: &ReducedModel, traj: &ReducedTrajectory) -> LabResult<()> {
    let rows: Vec<Vec<f64>> = model.rescaled_view(traj).into_iter().map(|(t, z, k)| vec![t, z, k]).collect();
    write_table(
        path,
        &[
            ("Q", e17(traj.q_total)),
            ("epsilon", e17(traj.epsilon)),
            ("reference", e17(model.reference())),
            ("classification", traj.classification.label().into()),
        ],
        &["tau", "zeta", "kappa"],
        &rows,
    )
}

fn run_reduced(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let (q, _) = setup.mass(cfg)?;
    let run = compute_reduced(setup, &cfg.reduced, q, cfg.reduced.energy_fraction)?;
    core_csv(&out.join("reduced.csv"), |w| run.trajectory.write_csv(w))?;
    write_rescaled(&out.join("reduced_rescaled.csv"), &run.model, &run.trajectory)?;
    finish(out, &run.report)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    #[serde(rename = "Q")]
    pub q_total: f64,
    pub omega_plus: f64,
    pub barrier: f64,
    pub period: f64,
    pub period_std: f64,
    pub harmonic_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub energy_fraction: f64,
    pub rows: Vec<SweepRow>,
    /// Least-squares slope of `ln T_f` against `ln ε`.
    pub slope: f64,
    pub slope_std_err: f64,
}

/// Slope and its standard error for `y ≈ c + s x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let s = sxy / sxx;
    let c = my - s * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - c - s * a).powi(2)).sum();
    let err = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (s, err)
}

pub fn compute_sweep(cfg: &ExperimentConfig, setup: &Setup) -> LabResult<SweepReport> {
    let eps = &cfg.sweep.epsilons;
    if eps.len() < 2 {
        return Err(invalid("sweep.epsilons", "need at least two amplitudes"));
    }
    if cfg.reduced.pairing == nlslab_core::reduced::PairingMode::Variable {
        // fill the cache before the workers race for it
        setup.pairing_spline(cfg.reduced.pairing_nodes, cfg.reduced.pairing_half_width)?;
    }
    let one = |e: f64| -> LabResult<SweepRow> {
        let q = setup.q_star + e * e;
        let run = compute_reduced(setup, &cfg.reduced, q, cfg.sweep.energy_fraction)?;
        let well = run.report.well.expect("mass above q(omega*)");
        let p = run.report.period.ok_or_else(|| LabError::Numerical {
            context: format!("sweep at epsilon = {e}"),
            source: nlslab_core::Error::NotPeriodic { found: 0 },
        })?;
        Ok(SweepRow {
            epsilon: e,
            q_total: q,
            omega_plus: well.omega_plus,
            barrier: well.barrier,
            period: p.period,
            period_std: p.std_dev,
            harmonic_period: run.report.harmonic_period.unwrap_or(f64::NAN),
        })
    };
    let workers = cfg.sweep.workers.clamp(1, eps.len());
    let mut slots: Vec<Option<LabResult<SweepRow>>> = (0..eps.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = eps.len().div_ceil(workers);
        for (es, out) in eps.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            let one = &one;
            s.spawn(move || {
                for (e, slot) in es.iter().zip(out.iter_mut()) {
                    *slot = Some(one(*e));
                }
            });
        }
    });
    let rows = slots.into_iter().map(|r| r.expect("worker filled slot")).collect::<LabResult<Vec<_>>>()?;
    let lx: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.period.ln()).collect();
    let (slope, slope_std_err) = fit_line(&lx, &ly);
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        energy_fraction: cfg.sweep.energy_fraction,
        rows,
        slope,
        slope_std_err,
    })
}

fn run_sweep(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let report = compute_sweep(cfg, setup)?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.epsilon, r.q_total, r.omega_plus, r.barrier, r.period, r.period_std, r.harmonic_period])
        .collect();
    write_table(
        &out.join("sweep.csv"),
        &[
            ("energy_fraction", e17(report.energy_fraction)),
            ("slope", e17(report.slope)),
            ("slope_std_err", e17(report.slope_std_err)),
        ],
        &["epsilon", "Q", "omega_plus", "barrier", "T_f", "T_f_std", "T_h"],
        &rows,
    )?;
    finish(out, &report)
}

// ---------------------------------------------------------------- evolve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveSummary {
    pub schema_version: u32,
    #[serde(rename = "Q")]
    pub q_total: f64,
    pub epsilon: f64,
    pub below: bool,
    pub omega_star: f64,
    pub well: Option<WellGeometry>,
    pub omega0: f64,
    pub lambda0: f64,
    pub mu0: f64,
    /// `‖r0‖_{H1}` after projection and scaling.
    pub r0_h1: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub sample_every: f64,
    pub t_end: f64,
    pub steps: u64,
    pub stopped_early: bool,
    pub lost_lock: Option<LostLock>,
    pub samples: usize,
    pub last_t: f64,
    /// Relative mass drift, `max |Q(t) - Q(0)| / Q(0)`.
    pub mass_drift: f64,
    /// Relative energy drift, `max |E(t) - E(0)| / |E(0)|`.
    pub energy_drift: f64,
    /// Number of sign changes of `ω - ω_+` outside a hysteresis band.
    pub omega_plus_crossings: Option<usize>,
    pub sup_omega_offset: f64,
    pub sup_lambda: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    /// Largest rise of `ω` above its running minimum.
    pub omega_max_rise: f64,
    pub pde_period: Option<PeriodEstimate>,
    pub reduced_period: Option<f64>,
    /// `sup |E_Q(ω, λ) - E_Q(0)|` along the track.
    pub energy_q_drift: Option<f64>,
}

pub struct PdeRun {
    pub summary: EvolveSummary,
    pub track: ModulationTrack,
    /// Reduced orbit from the first track point, on the track's time grid.
    pub companion: ReducedTrajectory,
    pub conserved: EvolveReport,
    pub model: ReducedModel,
}

/// Sign changes of `x - level`; excursions inside `±band` do not switch
/// sides.
pub fn count_crossings(x: &[f64], level: f64, band: f64) -> usize {
    let mut side = 0i8;
    let mut count = 0;
    for v in x {
        let s = if *v > level + band {
            1
        } else if *v < level - band {
            -1
        } else {
            continue;
        };
        if side != 0 && s != side {
            count += 1;
        }
        side = s;
    }
    count
}

/// `max_k (x_k - min_{j ≤ k} x_j)`.
pub fn max_rise(x: &[f64]) -> f64 {
    let mut low = f64::INFINITY;
    let mut rise = 0.0f64;
    for v in x {
        low = low.min(*v);
        rise = rise.max(v - low);
    }
    rise
}

fn raw_perturbation(grid: &nlslab_core::RadialGrid, p: &PerturbationConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let r = grid.nodes();
    match p.shape {
        PerturbationShape::Gaussian => {
            let g = |x: f64| (-(x / p.width).powi(2)).exp();
            (r.iter().map(|x| g(*x)).collect(), r.iter().map(|x| x / p.width * g(*x)).collect())
        }
        PerturbationShape::Random => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut re = vec![0.0; r.len()];
            let mut im = vec![0.0; r.len()];
            for _ in 0..p.bumps.max(1) {
                let c = rng.gen_range(0.0..2.0 * p.width);
                let w = p.width * rng.gen_range(0.5..1.5);
                let (s, co) = rng.gen_range(0.0..std::f64::consts::TAU).sin_cos();
                let amp = rng.gen_range(0.5..1.0);
                for (k, x) in r.iter().enumerate() {
                    let b = amp * (-((x - c) / w).powi(2)).exp();
                    re[k] += co * b;
                    im[k] += s * b;
                }
            }
            (re, im)
        }
    }
}

pub fn compute_evolve(cfg: &ExperimentConfig, setup: &Setup, snapshots: Option<&Path>) -> LabResult<PdeRun> {
    let ev = &cfg.evolve;
    let (q_total, epsilon) = setup.mass(cfg)?;
    let below = q_total < setup.q_star;
    let model = setup.model(q_total, &cfg.reduced)?;
    let well = model.well().copied();
    let fam = &setup.family;
    let start = &ev.start;

    let omega0 = match (start.zeta0, &well) {
        (Some(z), Some(w)) => w.omega_plus + z * epsilon,
        (Some(z), None) => setup.omega_star + z * epsilon,
        (None, Some(w)) => {
            let e_ref = start.reference_epsilon.unwrap_or(epsilon);
            let q_ref = setup.q_star + e_ref * e_ref;
            let reference = nlslab_core::reduced::ReducedModel::frozen(fam, q_ref, setup.kernel_star.pairing_a)
                .context("reference model")?;
            let tp = reference.turning_point(start.energy_fraction).context("reference turning point")?;
            let w_ref = reference.well().expect("reference above q(omega*)").omega_plus;
            w.omega_plus + (tp - w_ref) / e_ref * epsilon
        }
        (None, None) => return Err(invalid("evolve.start.zeta0", "required when Q is below q(omega*)")),
    };

    let frames = FrameSource::full(fam);
    let k0 = frames.frame(omega0).context("frame at the initial frequency")?;
    let grid = fam.grid();
    let r0 = match &ev.perturbation {
        Some(p) => {
            let raw = raw_perturbation(grid, p, cfg.seed);
            let (pr, pi) = k0.project_continuous((&raw.0, &raw.1)).context("projecting the perturbation")?;
            let h1 = (grid.h1_norm(&pr).powi(2) + grid.h1_norm(&pi).powi(2)).sqrt();
            let s = p.amplitude * epsilon.powf(1.5) / h1;
            Some((pr.iter().map(|x| x * s).collect::<Vec<_>>(), pi.iter().map(|x| x * s).collect::<Vec<_>>()))
        }
        None => None,
    };
    let r0_h1 = r0
        .as_ref()
        .map_or(0.0, |(a, b)| (grid.h1_norm(a).powi(2) + grid.h1_norm(b).powi(2)).sqrt());
    let r_ref = r0.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice()));
    let (mut field, _, mu0) =
        init_field(&k0, start.lambda0, q_total, r_ref, start.theta0, cfg.nonlinearity).context("initial field")?;

    let sample = ev.sample_every;
    let sub = (sample / cfg.reduced.dt).ceil().max(1.0) as usize;
    let reduced_dt = sample / sub as f64;
    let t_end = match (ev.t_end, &well) {
        (Some(t), _) => t,
        (None, Some(_)) => {
            let th = model.harmonic_period().context("harmonic period")?;
            let s0 = ReducedState {
                t: 0.0,
                omega: omega0,
                lambda: start.lambda0,
            };
            let probe = model.integrate(s0, (ev.n_periods + 1.0) * th * 1.5, reduced_dt).context("period probe")?;
            let tf = probe.period().context("reduced period")?.period;
            ev.n_periods * tf + sample
        }
        (None, None) => return Err(invalid("evolve.t_end", "required when Q is below q(omega*)")),
    };
    let t_end = (t_end / sample).ceil() * sample;

    let initial = ModulationCoords::at(start.theta0, omega0, start.lambda0, mu0);
    let opts = TrackOptions {
        max_omega_jump: ev.max_omega_jump,
        ..TrackOptions::default()
    };
    let mut tracker = Tracker::new(&frames, q_total, initial, opts).with_model(&model);
    let evolve_opts = EvolveOptions {
        dt: ev.dt,
        observe_every: (sample / ev.dt).round() as usize,
        step_cap: ev.step_cap,
        tail_floor: ev.tail_floor,
        sponge: ev.sponge,
        scheme: ev.scheme,
    };
    let mut index = 0usize;
    let conserved = evolve(&mut field, t_end, cfg.nonlinearity, &evolve_opts, |f, _| {
        if let (Some(dir), Some(every)) = (snapshots, ev.snapshot_every) {
            if every > 0 && index % every == 0 {
                let path = dir.join(format!("snapshot_{index:06}.csv"));
                let out = std::fs::File::create(&path).map(BufWriter::new)?;
                f.write_csv(out, ev.dt)?;
            }
        }
        index += 1;
        Ok(tracker.push(f.t, &f.u))
    })
    .context("evolution")?;
    let track = tracker.finish();

    let first = track.points.first().ok_or_else(|| LabError::Numerical {
        context: "tracking".into(),
        source: nlslab_core::Error::NewtonDiverged("no decomposed samples".into()),
    })?;
    let last_t = track.points.last().map_or(0.0, |p| p.t);
    let s0 = ReducedState {
        t: first.t,
        omega: first.coords.omega,
        lambda: first.coords.lambda,
    };
    let fine = model.integrate(s0, last_t.max(first.t + sample), reduced_dt).context("companion orbit")?;
    let companion = ReducedTrajectory {
        dt: sample,
        states: fine.states.iter().step_by(sub).copied().collect(),
        energy: fine.energy.iter().step_by(sub).copied().collect(),
        ..fine
    };

    let omegas = track.omegas();
    let lambdas = track.lambdas();
    let times = track.times();
    let omega_plus_crossings = well.map(|w| count_crossings(&omegas, w.omega_plus, 0.02 * (w.omega_plus - w.omega_star)));
    let sup_lambda = lambdas.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    // Hysteresis relative to the observed amplitude, so radiation jitter near
    // λ = 0 cannot register as a crossing.
    let pde_period = well.and_then(|_| measure_period(&times, &lambdas, 2.0 * sample, 0.1 * sup_lambda).ok());
    let reduced_period = well.and_then(|_| companion.period().ok().map(|p| p.period));
    let energy_q_drift = energy_drift(&track, &model).ok().map(|(d, _)| d);
    let summary = EvolveSummary {
        schema_version: SCHEMA_VERSION,
        q_total,
        epsilon,
        below,
        omega_star: setup.omega_star,
        well,
        omega0,
        lambda0: start.lambda0,
        mu0,
        r0_h1,
        dt: ev.dt,
        scheme: ev.scheme,
        sample_every: sample,
        t_end,
        steps: conserved.steps,
        stopped_early: conserved.stopped_early,
        lost_lock: track.lost_lock.clone(),
        samples: track.points.len(),
        last_t,
        mass_drift: conserved.max_mass_drift,
        energy_drift: conserved.max_energy_drift,
        omega_plus_crossings,
        sup_omega_offset: omegas.iter().fold(0.0f64, |m, w| m.max((w - setup.omega_star).abs())),
        sup_lambda,
        omega_min: omegas.iter().copied().fold(f64::INFINITY, f64::min),
        omega_max: omegas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        omega_max_rise: max_rise(&omegas),
        pde_period,
        reduced_period,
        energy_q_drift,
    };
    Ok(PdeRun {
        summary,
        track,
        companion,
        conserved,
        model,
    })
}

fn write_pde(run: &PdeRun, out: &Path) -> LabResult<()> {
    core_csv(&out.join("track.csv"), |w| run.track.write_csv(w))?;
    core_csv(&out.join("conserved.csv"), |w| run.conserved.write_conserved_csv(w))?;
    core_csv(&out.join("reduced.csv"), |w| run.companion.write_csv(w))?;
    Ok(())
}

fn snapshot_dir(cfg: &ExperimentConfig, out: &Path) -> LabResult<Option<PathBuf>> {
    if cfg.evolve.snapshot_every.is_none() {
        return Ok(None);
    }
    let dir = out.join("snapshots");
    std::fs::create_dir_all(&dir).map_err(io_at(&dir))?;
    Ok(Some(dir))
}

fn run_evolve(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let snaps = snapshot_dir(cfg, out)?;
    let run = compute_evolve(cfg, setup, snaps.as_deref())?;
    write_pde(&run, out)?;
    finish(out, &run.summary)
}

// ---------------------------------------------------------------- shadow

pub fn compute_shadow(run: &PdeRun, setup: &Setup, n_periods: f64) -> LabResult<ShadowReport> {
    let tf = run.summary.reduced_period.ok_or_else(|| LabError::Numerical {
        context: "shadowing".into(),
        source: nlslab_core::Error::NotPeriodic { found: 0 },
    })?;
    shadow_compare(
        &run.track,
        &run.companion,
        run.summary.epsilon,
        n_periods * tf,
        n_periods,
        Some((&setup.kernel_star, &setup.family)),
    )
    .context("shadow comparison")
}

fn run_shadow(cfg: &ExperimentConfig, setup: &Setup, out: &Path) -> LabResult<serde_json::Value> {
    let mut cfg = cfg.clone();
    // the run must cover the comparison horizon
    cfg.evolve.n_periods = cfg.evolve.n_periods.max(cfg.shadow.n_periods);
    let snaps = snapshot_dir(&cfg, out)?;
    let run = compute_evolve(&cfg, setup, snaps.as_deref())?;
    write_pde(&run, out)?;
    let report = compute_shadow(&run, setup, cfg.shadow.n_periods)?;
    store::write_json(&out.join("shadow.json"), &report)?;
    finish(out, &run.summary)
}

// ---------------------------------------------------------------- dispatch

fn finish<T: Serialize>(out: &Path, report: &T) -> LabResult<serde_json::Value> {
    store::write_json(&out.join("report.json"), report)?;
    Ok(serde_json::to_value(report).expect("serializable"))
}

/// Runs one experiment, writing the resolved config, artifacts and
/// `report.json` into `out`. Returns the report.
pub fn run(kind: Kind, cfg: &ExperimentConfig, out: &Path, cache: &Cache) -> LabResult<serde_json::Value> {
    let mut resolved = cfg.clone();
    resolved.kind = Some(kind);
    std::fs::create_dir_all(out).map_err(io_at(out))?;
    store::write_atomic(&out.join("config.resolved.toml"), resolved.to_toml().as_bytes())?;
    let setup = Setup::load(&resolved, cache)?;
    match kind {
        Kind::Ground => run_ground(&resolved, &setup, out),
        Kind::Spectrum => run_spectrum(&resolved, &setup, out),
        Kind::Reduced => run_reduced(&resolved, &setup, out),
        Kind::Evolve => run_evolve(&resolved, &setup, out),
        Kind::Shadow => run_shadow(&resolved, &setup, out),
        Kind::Sweep => run_sweep(&resolved, &setup, out),
    }
}
