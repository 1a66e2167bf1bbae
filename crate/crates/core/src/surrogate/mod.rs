//! Fast autoregressive steppers that stand in for a learned operator.

mod archive;
mod coarse;
mod linear;

use std::sync::Arc;

use crate::error::{AnchorError, Result};
use crate::grid::FieldState;
use crate::pde::PdeSpec;
use crate::solver::{HifiSolver, SolverConfig};

pub use archive::{linear_archive, load_linear, load_surrogate, save_surrogate, SurrogateArchive};
pub use coarse::{CoarseScheme, CoarseSpectralSurrogate};
pub use linear::{fit_linear_surrogate, fit_linear_surrogate_with, LinearFit, LinearMapSurrogate};

/// A Markovian one-save-interval stepper.
pub trait SurrogateStepper: Send + Sync {
    fn step(&self, f: &FieldState) -> Result<FieldState>;
    fn descriptor(&self) -> String;
    fn dt_save(&self) -> f64;
}

pub fn surrogate_step(s: &dyn SurrogateStepper, f: &FieldState) -> Result<FieldState> {
    s.step(f)
}

/// The reference solver behind the surrogate interface.
pub struct SolverSurrogate {
    solver: HifiSolver,
}

impl SolverSurrogate {
    pub fn new(spec: &PdeSpec, cfg: &SolverConfig) -> Result<Self> {
        Ok(SolverSurrogate { solver: HifiSolver::new(spec, cfg)? })
    }
}

impl SurrogateStepper for SolverSurrogate {
    fn step(&self, f: &FieldState) -> Result<FieldState> {
        self.solver.step(f).map_err(|e| match e {
            AnchorError::SolverDiverged { .. } => AnchorError::SurrogateDiverged,
            other => other,
        })
    }

    fn descriptor(&self) -> String {
        format!("solver({})", self.solver.spec().kind.name())
    }

    fn dt_save(&self) -> f64 {
        self.solver.dt_save()
    }
}

impl<T: SurrogateStepper + ?Sized> SurrogateStepper for Arc<T> {
    fn step(&self, f: &FieldState) -> Result<FieldState> {
        (**self).step(f)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn dt_save(&self) -> f64 {
        (**self).dt_save()
    }
}

impl<T: SurrogateStepper + ?Sized> SurrogateStepper for Box<T> {
    fn step(&self, f: &FieldState) -> Result<FieldState> {
        (**self).step(f)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn dt_save(&self) -> f64 {
        (**self).dt_save()
    }
}

/// Rejects surrogate output that is non-finite.
pub(crate) fn finite_or_diverged(f: FieldState) -> Result<FieldState> {
    if f.is_finite() {
        Ok(f)
    } else {
        Err(AnchorError::SurrogateDiverged)
    }
}
