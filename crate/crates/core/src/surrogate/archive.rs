//! Surrogate archives: a JSON sidecar describing the stepper plus, for the
//! linear map, a flat little-endian `f64` payload.
//!
//! Payload layout: 8-byte magic `ANCHLMAP`, `n` and `m` as `u64`, then the
//! mean (`n`), basis (`n·m`, column-major), `A` (`m·m`, column-major) and
//! bias (`m`).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::pde::PdeSpec;
use crate::solver::SolverConfig;

use super::{CoarseScheme, CoarseSpectralSurrogate, LinearMapSurrogate, SolverSurrogate, SurrogateStepper};

const MAGIC: &[u8; 8] = b"ANCHLMAP";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurrogateArchive {
    LinearMap {
        pde: PdeSpec,
        dt_save: f64,
        modes: usize,
        nodes: usize,
        training_residual: f64,
        energies: Vec<f64>,
        payload: String,
    },
    CoarseSpectral {
        pde: PdeSpec,
        dt_save: f64,
        factor: usize,
        #[serde(default)]
        scheme: CoarseScheme,
    },
    Solver {
        pde: PdeSpec,
        solver: SolverConfig,
    },
}

impl SurrogateArchive {
    pub fn pde(&self) -> &PdeSpec {
        match self {
            SurrogateArchive::LinearMap { pde, .. }
            | SurrogateArchive::CoarseSpectral { pde, .. }
            | SurrogateArchive::Solver { pde, .. } => pde,
        }
    }

    pub fn coarse(pde: &PdeSpec, dt_save: f64, factor: usize, scheme: CoarseScheme) -> Self {
        SurrogateArchive::CoarseSpectral { pde: pde.clone(), dt_save, factor, scheme }
    }

    pub fn solver(pde: &PdeSpec, cfg: &SolverConfig) -> Self {
        SurrogateArchive::Solver { pde: pde.clone(), solver: cfg.clone() }
    }
}

fn payload_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

fn put(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Writes the sidecar at `path`; a linear map also writes `path.bin`.
pub fn save_surrogate(path: &Path, archive: &SurrogateArchive, linear: Option<&LinearMapSurrogate>) -> Result<()> {
    let mut archive = archive.clone();
    if let SurrogateArchive::LinearMap { payload, .. } = &mut archive {
        let s = linear.ok_or_else(|| AnchorError::InvalidConfig("linear archive needs the fitted map".into()))?;
        let bin = payload_path(path);
        let mut w = BufWriter::new(fs::File::create(&bin)?);
        w.write_all(MAGIC)?;
        w.write_all(&(s.basis().nrows() as u64).to_le_bytes())?;
        w.write_all(&(s.modes() as u64).to_le_bytes())?;
        put(&mut w, s.mean().as_slice())?;
        put(&mut w, s.basis().as_slice())?;
        put(&mut w, s.operator().as_slice())?;
        put(&mut w, s.bias().as_slice())?;
        w.flush()?;
        *payload = bin.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
    }
    fs::write(path, serde_json::to_string_pretty(&archive)?)?;
    Ok(())
}

/// Builds an archive record for a fitted linear map.
pub fn linear_archive(pde: &PdeSpec, s: &LinearMapSurrogate) -> SurrogateArchive {
    SurrogateArchive::LinearMap {
        pde: pde.clone(),
        dt_save: s.dt_save(),
        modes: s.modes(),
        nodes: s.basis().nrows(),
        training_residual: s.training_residual(),
        energies: s.energies().to_vec(),
        payload: String::new(),
    }
}

fn read_f64s(bytes: &[u8], offset: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = *offset + 8 * n;
    let chunk = bytes.get(*offset..end).ok_or_else(|| AnchorError::Format("surrogate payload truncated".into()))?;
    *offset = end;
    Ok(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
}

pub fn load_linear(path: &Path, pde: &PdeSpec, dt_save: f64, payload: &str) -> Result<LinearMapSurrogate> {
    let bin = path.parent().unwrap_or_else(|| Path::new(".")).join(payload);
    let bytes = fs::read(bin)?;
    if bytes.len() < 24 || &bytes[..8] != MAGIC {
        return Err(AnchorError::Format("not a linear surrogate payload".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let m = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let mut off = 24;
    let mean = DVector::from_vec(read_f64s(&bytes, &mut off, n)?);
    let basis = DMatrix::from_vec(n, m, read_f64s(&bytes, &mut off, n * m)?);
    let a = DMatrix::from_vec(m, m, read_f64s(&bytes, &mut off, m * m)?);
    let bias = DVector::from_vec(read_f64s(&bytes, &mut off, m)?);
    if off != bytes.len() {
        return Err(AnchorError::Format("trailing bytes in surrogate payload".into()));
    }
    LinearMapSurrogate::from_parts(pde.grid.clone(), dt_save, mean, basis, a, bias)
}

/// Reads a sidecar and reconstructs its stepper.
pub fn load_surrogate(path: &Path) -> Result<(SurrogateArchive, Box<dyn SurrogateStepper>)> {
    let archive: SurrogateArchive = serde_json::from_str(&fs::read_to_string(path)?)?;
    let stepper: Box<dyn SurrogateStepper> = match &archive {
        SurrogateArchive::LinearMap { pde, dt_save, payload, .. } => Box::new(load_linear(path, pde, *dt_save, payload)?),
        SurrogateArchive::CoarseSpectral { pde, dt_save, factor, scheme } => {
            Box::new(CoarseSpectralSurrogate::with_scheme(pde, *dt_save, *factor, *scheme)?)
        }
        SurrogateArchive::Solver { pde, solver } => Box::new(SolverSurrogate::new(pde, solver)?),
    };
    Ok((archive, stepper))
}
