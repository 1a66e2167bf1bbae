//! Right-hand-side operators `u_t = N(u)` for the supported PDEs.
//!
//! Periodic problems are evaluated pseudospectrally with 2/3-rule dealiasing
//! of the nonlinear products; the heat equation uses a 7-point stencil with
//! Dirichlet-zero values on box faces and masked cells.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{FieldState, Grid};
use crate::spectral::{Spectral, Wavenumbers};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdeKind {
    Burgers1d,
    Burgers2d,
    AllenCahn2d,
    Heat3d,
}

impl PdeKind {
    pub const ALL: [PdeKind; 4] = [PdeKind::Burgers1d, PdeKind::Burgers2d, PdeKind::AllenCahn2d, PdeKind::Heat3d];

    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Burgers1d => "burgers1d",
            PdeKind::Burgers2d => "burgers2d",
            PdeKind::AllenCahn2d => "allen-cahn2d",
            PdeKind::Heat3d => "heat3d",
        }
    }

    pub fn dims(self) -> usize {
        match self {
            PdeKind::Burgers1d => 1,
            PdeKind::Burgers2d | PdeKind::AllenCahn2d => 2,
            PdeKind::Heat3d => 3,
        }
    }

    pub fn is_spectral(self) -> bool {
        self != PdeKind::Heat3d
    }
}

impl std::str::FromStr for PdeKind {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['_', ' '], "-");
        match norm.as_str() {
            "burgers1d" | "burgers-1d" => Ok(PdeKind::Burgers1d),
            "burgers2d" | "burgers-2d" => Ok(PdeKind::Burgers2d),
            "allen-cahn2d" | "allencahn2d" | "allen-cahn" | "allen-cahn-2d" => Ok(PdeKind::AllenCahn2d),
            "heat3d" | "heat-3d" | "heat" => Ok(PdeKind::Heat3d),
            _ => Err(AnchorError::InvalidConfig(format!("unknown PDE '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    Periodic,
    Dirichlet0,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    /// Burgers viscosity.
    pub nu: f64,
    /// Allen-Cahn interfacial width.
    pub epsilon: f64,
    /// Thermal diffusivity.
    pub alpha: f64,
    pub grid: Arc<Grid>,
    pub bc: Boundary,
}

impl PdeSpec {
    pub fn burgers1d(nu: f64, points: usize) -> Result<Self> {
        Self::build(PdeKind::Burgers1d, nu, Grid::periodic(&[points])?)
    }

    pub fn burgers2d(nu: f64, points: usize) -> Result<Self> {
        Self::build(PdeKind::Burgers2d, nu, Grid::periodic(&[points, points])?)
    }

    pub fn allen_cahn2d(epsilon: f64, points: usize) -> Result<Self> {
        Self::build(PdeKind::AllenCahn2d, epsilon, Grid::periodic(&[points, points])?)
    }

    pub fn heat3d(alpha: f64, grid: Grid) -> Result<Self> {
        Self::build(PdeKind::Heat3d, alpha, grid)
    }

    fn build(kind: PdeKind, coefficient: f64, grid: Grid) -> Result<Self> {
        let mut spec = PdeSpec {
            kind,
            nu: 0.0,
            epsilon: 0.0,
            alpha: 0.0,
            grid: Arc::new(grid),
            bc: if kind == PdeKind::Heat3d { Boundary::Dirichlet0 } else { Boundary::Periodic },
        };
        match kind {
            PdeKind::Burgers1d | PdeKind::Burgers2d => spec.nu = coefficient,
            PdeKind::AllenCahn2d => spec.epsilon = coefficient,
            PdeKind::Heat3d => spec.alpha = coefficient,
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Benchmark configuration for each PDE.
    pub fn benchmark(kind: PdeKind) -> Self {
        match kind {
            PdeKind::Burgers1d => Self::burgers1d(0.01, 101),
            PdeKind::Burgers2d => Self::burgers2d(0.01, 64),
            PdeKind::AllenCahn2d => Self::allen_cahn2d(0.05, 32),
            PdeKind::Heat3d => Grid::l_shaped(&[32, 32, 16]).and_then(|g| Self::heat3d(1.0, g)),
        }
        .expect("benchmark PDE configuration is valid")
    }

    pub fn coefficient(&self) -> f64 {
        match self.kind {
            PdeKind::Burgers1d | PdeKind::Burgers2d => self.nu,
            PdeKind::AllenCahn2d => self.epsilon,
            PdeKind::Heat3d => self.alpha,
        }
    }

    /// Same PDE on another grid.
    pub fn on_grid(&self, grid: Arc<Grid>) -> Result<Self> {
        let spec = PdeSpec { grid, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coefficient();
        if !(c > 0.0 && c.is_finite()) {
            return Err(AnchorError::InvalidConfig(format!(
                "{} coefficient must be positive, got {c}",
                self.kind.name()
            )));
        }
        if self.grid.dims() != self.kind.dims() {
            return Err(AnchorError::mismatch(format!(
                "{} needs a {}-d grid",
                self.kind.name(),
                self.kind.dims()
            )));
        }
        let ok = match self.bc {
            Boundary::Periodic => self.kind.is_spectral() && self.grid.all_periodic(),
            Boundary::Dirichlet0 => {
                self.kind == PdeKind::Heat3d && self.grid.axes().iter().all(|a| !a.periodic)
            }
        };
        if !ok {
            return Err(AnchorError::InvalidConfig(format!(
                "boundary {:?} is incompatible with {} on this grid",
                self.bc,
                self.kind.name()
            )));
        }
        Ok(())
    }
}

enum Kernel {
    Spectral { plan: Arc<Spectral>, waves: Wavenumbers, symbol: Vec<f64> },
    Stencil { interior: Vec<bool>, inv_h2: Vec<f64>, strides: Vec<usize> },
}

/// `rhs` evaluator with its transform plans and tables prepared once.
pub struct PdeOperator {
    spec: PdeSpec,
    kernel: Kernel,
}

impl PdeOperator {
    pub fn new(spec: &PdeSpec) -> Result<Self> {
        spec.validate()?;
        let grid = &spec.grid;
        let kernel = if spec.kind.is_spectral() {
            let waves = Wavenumbers::new(grid);
            let diff = match spec.kind {
                PdeKind::AllenCahn2d => spec.epsilon * spec.epsilon,
                _ => spec.nu,
            };
            let symbol = waves.k2.iter().map(|k2| -diff * k2).collect();
            Kernel::Spectral { plan: Spectral::for_shape(&grid.shape()), waves, symbol }
        } else {
            Kernel::Stencil {
                interior: (0..grid.len()).map(|i| grid.is_interior(i)).collect(),
                inv_h2: (0..grid.dims()).map(|d| grid.spacing(d).powi(-2)).collect(),
                strides: grid.strides(),
            }
        };
        Ok(PdeOperator { spec: spec.clone(), kernel })
    }

    pub fn spec(&self) -> &PdeSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.spec.grid
    }

    pub fn rhs(&self, f: &FieldState) -> Result<FieldState> {
        if *f.grid != *self.spec.grid {
            return Err(AnchorError::mismatch("field grid differs from the PDE grid"));
        }
        let values = match &self.kernel {
            Kernel::Spectral { plan, symbol, .. } => {
                let v = plan.forward_real(&f.values);
                let mut out = self.nonlinear_hat(&v);
                for ((o, &l), &vh) in out.iter_mut().zip(symbol).zip(&v) {
                    *o += l * vh;
                }
                plan.inverse_real(out)
            }
            Kernel::Stencil { interior, inv_h2, strides } => {
                self.laplacian(&f.values, interior, inv_h2, strides)
            }
        };
        let out = f.with_values(values, f.time);
        if !out.is_finite() {
            return Err(AnchorError::NonFiniteField);
        }
        Ok(out)
    }

    fn laplacian(&self, u: &[f64], interior: &[bool], inv_h2: &[f64], strides: &[usize]) -> Vec<f64> {
        let alpha = self.spec.alpha;
        let mut out = vec![0.0; u.len()];
        let at = |j: usize| if interior[j] { u[j] } else { 0.0 };
        for (i, o) in out.iter_mut().enumerate() {
            if !interior[i] {
                continue;
            }
            let mut acc = 0.0;
            for (d, &s) in strides.iter().enumerate() {
                acc += (at(i + s) - 2.0 * u[i] + at(i - s)) * inv_h2[d];
            }
            *o = alpha * acc;
        }
        out
    }

    /// Fourier-space nonlinear term for spectral kinds; `Nû` from `û`.
    pub fn nonlinear_hat(&self, v_hat: &[Complex64]) -> Vec<Complex64> {
        let Kernel::Spectral { plan, waves, .. } = &self.kernel else {
            unreachable!("nonlinear_hat on a stencil operator");
        };
        let u = plan.inverse_real(v_hat.to_vec());
        match self.spec.kind {
            PdeKind::Burgers1d | PdeKind::Burgers2d => {
                let mut sq = plan.forward_real(&u.iter().map(|x| x * x).collect::<Vec<_>>());
                let two_d = self.spec.kind == PdeKind::Burgers2d;
                for (i, c) in sq.iter_mut().enumerate() {
                    if !waves.keep[i] {
                        *c = Complex64::new(0.0, 0.0);
                        continue;
                    }
                    let k = waves.k[i];
                    let kd = if two_d { k[0] + k[1] } else { k[0] };
                    // -½ ∂(u²) -> -½ i k (u²)^
                    *c *= Complex64::new(0.0, -0.5 * kd);
                }
                sq
            }
            PdeKind::AllenCahn2d => {
                let mut cube = plan.forward_real(&u.iter().map(|x| x * x * x).collect::<Vec<_>>());
                for (i, c) in cube.iter_mut().enumerate() {
                    let p = if waves.keep[i] { *c } else { Complex64::new(0.0, 0.0) };
                    *c = v_hat[i] - p;
                }
                cube
            }
            PdeKind::Heat3d => unreachable!(),
        }
    }

    pub fn linear_symbol(&self) -> Option<&[f64]> {
        match &self.kernel {
            Kernel::Spectral { symbol, .. } => Some(symbol),
            Kernel::Stencil { .. } => None,
        }
    }

    pub(crate) fn plan(&self) -> Option<&Arc<Spectral>> {
        match &self.kernel {
            Kernel::Spectral { plan, .. } => Some(plan),
            Kernel::Stencil { .. } => None,
        }
    }

    pub(crate) fn interior(&self) -> Option<&[bool]> {
        match &self.kernel {
            Kernel::Stencil { interior, .. } => Some(interior),
            Kernel::Spectral { .. } => None,
        }
    }
}

/// `N(u)` for the given PDE.
pub fn rhs(spec: &PdeSpec, f: &FieldState) -> Result<FieldState> {
    PdeOperator::new(spec)?.rhs(f)
}

/// Stiff linear multiplier per Fourier mode plus the remaining nonlinear part.
pub struct SplitOperator {
    op: Arc<PdeOperator>,
}

impl SplitOperator {
    pub fn linear_symbol(&self) -> &[f64] {
        self.op.linear_symbol().expect("split operators are spectral")
    }

    pub fn operator(&self) -> &Arc<PdeOperator> {
        &self.op
    }

    pub fn nonlinear_hat(&self, v_hat: &[Complex64]) -> Vec<Complex64> {
        self.op.nonlinear_hat(v_hat)
    }

    pub fn nonlinear_eval(&self, f: &FieldState) -> Result<FieldState> {
        let plan = self.op.plan().expect("split operators are spectral");
        let out = plan.inverse_real(self.nonlinear_hat(&plan.forward_real(&f.values)));
        Ok(f.with_values(out, f.time))
    }

    /// `IFFT(L̂ · FFT(u))`.
    pub fn linear_eval(&self, f: &FieldState) -> Result<FieldState> {
        let plan = self.op.plan().expect("split operators are spectral");
        let mut v = plan.forward_real(&f.values);
        for (c, &l) in v.iter_mut().zip(self.linear_symbol()) {
            *c *= l;
        }
        Ok(f.with_values(plan.inverse_real(v), f.time))
    }
}

pub fn split(spec: &PdeSpec) -> Result<SplitOperator> {
    if !spec.kind.is_spectral() {
        return Err(AnchorError::NoSpectralSplit(spec.kind));
    }
    Ok(SplitOperator { op: Arc::new(PdeOperator::new(spec)?) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::norm_l2;
    use std::f64::consts::PI;

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn burgers1d_sine_matches_symbolic_rhs() {
        let spec = PdeSpec::burgers1d(0.01, 101).unwrap();
        let u = FieldState::from_fn(spec.grid.clone(), 0.0, |x| (2.0 * PI * x[0]).sin());
        let r = rhs(&spec, &u).unwrap();
        let exact = FieldState::from_fn(spec.grid.clone(), 0.0, |x| {
            -PI * (4.0 * PI * x[0]).sin() - 0.04 * PI * PI * (2.0 * PI * x[0]).sin()
        });
        assert!(max_abs_diff(&r.values, &exact.values) < 1e-8);
    }

    #[test]
    fn heat_constant_has_zero_interior_laplacian() {
        let spec = PdeSpec::heat3d(1.0, Grid::bounded(&[8, 8, 8]).unwrap()).unwrap();
        let u = FieldState::from_fn(spec.grid.clone(), 0.0, |_| 3.0);
        let r = rhs(&spec, &u).unwrap();
        let g = &spec.grid;
        for i in 0..g.len() {
            let ijk = g.unravel(i);
            // Nodes not adjacent to the boundary see only the constant.
            if ijk.iter().take(3).all(|&c| (2..6).contains(&c)) {
                assert_eq!(r.values[i], 0.0);
            }
        }
    }

    #[test]
    fn heat_sine_mode_is_laplacian_eigenfunction() {
        let spec = PdeSpec::heat3d(1.0, Grid::bounded(&[32, 32, 32]).unwrap()).unwrap();
        let t = FieldState::from_fn(spec.grid.clone(), 0.0, |x| {
            (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin()
        });
        let r = rhs(&spec, &t).unwrap();
        let g = &spec.grid;
        let mut worst: f64 = 0.0;
        for i in (0..g.len()).filter(|&i| g.is_interior(i)) {
            let exact = -3.0 * PI * PI * t.values[i];
            worst = worst.max(((r.values[i] - exact) / exact).abs());
        }
        assert!(worst < 1e-2, "{worst}");
    }

    #[test]
    fn split_symbol_burgers_mode_one() {
        let spec = PdeSpec::burgers1d(0.01, 101).unwrap();
        let s = split(&spec).unwrap();
        assert!((s.linear_symbol()[1] + 0.01 * (2.0 * PI).powi(2)).abs() < 1e-15);
        assert!((s.linear_symbol()[1] + 0.394784).abs() < 1e-6);
    }

    #[test]
    fn split_rejects_heat() {
        let spec = PdeSpec::benchmark(PdeKind::Heat3d);
        assert!(matches!(split(&spec), Err(AnchorError::NoSpectralSplit(PdeKind::Heat3d))));
    }

    #[test]
    fn nonlinear_part_vanishes_at_zero() {
        for kind in [PdeKind::Burgers1d, PdeKind::Burgers2d, PdeKind::AllenCahn2d] {
            let spec = PdeSpec::benchmark(kind);
            let s = split(&spec).unwrap();
            let z = FieldState::zeros(spec.grid.clone(), 0.0);
            assert_eq!(norm_l2(&s.nonlinear_eval(&z).unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn allen_cahn_symbol() {
        let spec = PdeSpec::allen_cahn2d(0.05, 32).unwrap();
        let s = split(&spec).unwrap();
        // mode (1, 2)
        let idx = spec.grid.ravel(&[1, 2]);
        let expect = -0.0025 * (2.0 * PI).powi(2) * 5.0;
        assert!((s.linear_symbol()[idx] - expect).abs() < 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(PdeSpec::burgers1d(0.0, 16).is_err());
        assert!(PdeSpec::heat3d(1.0, Grid::periodic(&[4, 4, 4]).unwrap()).is_err());
        let mut s = PdeSpec::benchmark(PdeKind::Burgers2d);
        s.bc = Boundary::Dirichlet0;
        assert!(s.validate().is_err());
        assert_eq!("allen_cahn2d".parse::<PdeKind>().unwrap(), PdeKind::AllenCahn2d);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let spec = PdeSpec::burgers1d(0.01, 64).unwrap();
        let f = FieldState::zeros(Arc::new(Grid::periodic(&[32]).unwrap()), 0.0);
        assert!(matches!(rhs(&spec, &f), Err(AnchorError::GridMismatch(_))));
    }
}
