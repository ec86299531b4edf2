//! On-disk formats for families and kernel bases, and the content-addressed
//! cache that holds them.
//!
//! A family file is JSON with scalar curves and, for the profiles, either
//! inline flat arrays or a sidecar of little-endian `f64` values. Sidecar
//! layout is point-major: for each `ω` in order, `φ`, `∂φ`, `∂²φ`, each with
//! `n_points` samples. Kernel files follow the same scheme with `φ, Ψ₂, Ψ₃,
//! Ψ₄`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nlslab_core::ground::{GroundPoint, GroundSolverOptions};
use nlslab_core::linearization::KernelBasis;
use nlslab_core::{GroundStateFamily, Nonlinearity, RadialGrid, RadialProfile};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Context, LabError, LabResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the cache directory.
pub const CACHE_ENV: &str = "NLSLAB_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub r_max: f64,
    pub n_points: usize,
}

impl From<&RadialGrid> for GridSpec {
    fn from(g: &RadialGrid) -> Self {
        Self {
            r_max: g.r_max(),
            n_points: g.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profiles {
    Inline { layout: String, values: Vec<f64> },
    Sidecar { layout: String, file: String, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFile {
    pub schema_version: u32,
    pub nonlinearity: Nonlinearity,
    pub grid: GridSpec,
    pub solver: GroundSolverOptions,
    pub omega: Vec<f64>,
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub d2q: Vec<f64>,
    pub energy: Vec<f64>,
    /// `d(ω) = E + ωq`.
    pub d: Vec<f64>,
    pub omega_star: f64,
    pub q_star: f64,
    pub profiles: Profiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelFile {
    pub schema_version: u32,
    pub grid: GridSpec,
    pub omega: f64,
    pub q: f64,
    pub dq: f64,
    #[serde(rename = "A")]
    pub pairing_a: f64,
    #[serde(rename = "B")]
    pub pairing_b: f64,
    pub a: f64,
    pub iterations: usize,
    pub profiles: Profiles,
}

const FAMILY_LAYOUT: &str = "point-major: phi, dphi, d2phi";
const KERNEL_LAYOUT: &str = "phi, psi2, psi3, psi4";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LabError + '_ {
    move |source| LabError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn corrupt(path: &Path, message: impl Into<String>) -> LabError {
    LabError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, message.into()),
    }
}

/// Writes through a temporary file and renames, so concurrent readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| corrupt(path, e.to_string()))
}

fn to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn from_le_bytes(path: &Path, bytes: &[u8]) -> LabResult<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(corrupt(path, "sidecar length is not a multiple of 8"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn store_profiles(json_path: &Path, values: Vec<f64>, layout: &str, sidecar: bool) -> LabResult<Profiles> {
    if !sidecar {
        return Ok(Profiles::Inline {
            layout: layout.into(),
            values,
        });
    }
    let bin = json_path.with_extension("bin");
    write_atomic(&bin, &to_le_bytes(&values))?;
    Ok(Profiles::Sidecar {
        layout: layout.into(),
        file: bin.file_name().expect("file name").to_string_lossy().into_owned(),
        count: values.len(),
    })
}

fn load_profiles(json_path: &Path, profiles: &Profiles, expected: usize) -> LabResult<Vec<f64>> {
    let values = match profiles {
        Profiles::Inline { values, .. } => values.clone(),
        Profiles::Sidecar { file, count, .. } => {
            let bin = json_path.with_file_name(file);
            let bytes = fs::read(&bin).map_err(io_err(&bin))?;
            let v = from_le_bytes(&bin, &bytes)?;
            if v.len() != *count {
                return Err(corrupt(&bin, format!("expected {count} values, found {}", v.len())));
            }
            v
        }
    };
    if values.len() != expected {
        return Err(corrupt(json_path, format!("expected {expected} profile samples, found {}", values.len())));
    }
    Ok(values)
}

pub fn write_family(path: &Path, family: &GroundStateFamily, omega_star: f64, sidecar: bool) -> LabResult<()> {
    let mut flat = Vec::with_capacity(3 * family.len() * family.grid().len());
    for p in family.points() {
        flat.extend_from_slice(p.phi.values());
        flat.extend_from_slice(p.dphi.values());
        flat.extend_from_slice(p.d2phi.values());
    }
    let file = FamilyFile {
        schema_version: SCHEMA_VERSION,
        nonlinearity: family.nonlinearity(),
        grid: family.grid().into(),
        solver: family.options().clone(),
        omega: family.omegas(),
        q: family.q_values(),
        dq: family.dq_values(),
        d2q: family.d2q_values(),
        energy: family.energies(),
        d: family.actions(),
        omega_star,
        q_star: family.q_at(omega_star).context("mass at the critical frequency")?,
        profiles: store_profiles(path, flat, FAMILY_LAYOUT, sidecar)?,
    };
    write_json(path, &file)
}

/// Loads a family file; returns the family and the stored `ω*`.
pub fn read_family(path: &Path) -> LabResult<(GroundStateFamily, f64)> {
    let file: FamilyFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(corrupt(path, format!("unsupported schema_version {}", file.schema_version)));
    }
    let grid = RadialGrid::new(file.grid.r_max, file.grid.n_points).context("family grid")?;
    let n = grid.len();
    let m = file.omega.len();
    let curves = [&file.q, &file.dq, &file.d2q, &file.energy];
    if curves.iter().any(|c| c.len() != m) {
        return Err(corrupt(path, "curve lengths differ from the frequency grid"));
    }
    let flat = load_profiles(path, &file.profiles, 3 * m * n)?;
    let profile = |k: usize| RadialProfile::new(grid.clone(), flat[k * n..(k + 1) * n].to_vec()).context("stored profile");
    let mut points = Vec::with_capacity(m);
    for i in 0..m {
        points.push(GroundPoint {
            omega: file.omega[i],
            phi: profile(3 * i)?,
            dphi: profile(3 * i + 1)?,
            d2phi: profile(3 * i + 2)?,
            q: file.q[i],
            dq: file.dq[i],
            d2q: file.d2q[i],
            energy: file.energy[i],
        });
    }
    let family =
        GroundStateFamily::from_points(grid, file.nonlinearity, file.solver, points).context("stored family")?;
    Ok((family, file.omega_star))
}

pub fn write_kernel(path: &Path, kernel: &KernelBasis, sidecar: bool) -> LabResult<()> {
    let mut flat = Vec::with_capacity(4 * kernel.phi.values().len());
    for p in [&kernel.phi, &kernel.psi2, &kernel.psi3, &kernel.psi4] {
        flat.extend_from_slice(p.values());
    }
    let file = KernelFile {
        schema_version: SCHEMA_VERSION,
        grid: kernel.grid().into(),
        omega: kernel.omega,
        q: kernel.q,
        dq: kernel.dq,
        pairing_a: kernel.pairing_a,
        pairing_b: kernel.pairing_b,
        a: kernel.a,
        iterations: kernel.iterations,
        profiles: store_profiles(path, flat, KERNEL_LAYOUT, sidecar)?,
    };
    write_json(path, &file)
}

pub fn read_kernel(path: &Path) -> LabResult<KernelBasis> {
    let file: KernelFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(corrupt(path, format!("unsupported schema_version {}", file.schema_version)));
    }
    let grid = RadialGrid::new(file.grid.r_max, file.grid.n_points).context("kernel grid")?;
    let n = grid.len();
    let flat = load_profiles(path, &file.profiles, 4 * n)?;
    let profile = |k: usize| RadialProfile::new(grid.clone(), flat[k * n..(k + 1) * n].to_vec()).context("stored profile");
    Ok(KernelBasis {
        omega: file.omega,
        q: file.q,
        dq: file.dq,
        phi: profile(0)?,
        psi2: profile(1)?,
        psi3: profile(2)?,
        psi4: profile(3)?,
        pairing_a: file.pairing_a,
        pairing_b: file.pairing_b,
        a: file.a,
        iterations: file.iterations,
    })
}

/// Hex SHA-256 of the JSON encoding of `inputs`.
pub fn content_hash<T: Serialize>(inputs: &T) -> String {
    let bytes = serde_json::to_vec(inputs).expect("serializable");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Content-addressed store: every entry lives under `root/<kind>/<hash>/`.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Directory from the environment, else `.nlslab-cache` in the working
    /// directory.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(CACHE_ENV).map_or_else(|| PathBuf::from(".nlslab-cache"), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry(&self, kind: &str, hash: &str) -> PathBuf {
        self.root.join(kind).join(hash)
    }

    /// Returns the cached value under `file` in the entry, or computes,
    /// stores and returns it. Unreadable entries are recomputed.
    pub fn get_or_insert<T, L, S, C>(&self, kind: &str, hash: &str, file: &str, load: L, store: S, compute: C) -> LabResult<T>
    where
        L: Fn(&Path) -> LabResult<T>,
        S: Fn(&Path, &T) -> LabResult<()>,
        C: FnOnce() -> LabResult<T>,
    {
        let path = self.entry(kind, hash).join(file);
        if path.exists() {
            if let Ok(v) = load(&path) {
                return Ok(v);
            }
        }
        let value = compute()?;
        store(&path, &value)?;
        Ok(value)
    }
}
