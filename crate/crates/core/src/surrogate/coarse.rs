use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{restrict, FieldState, Grid};
use crate::pde::{split, PdeSpec, SplitOperator};
use crate::solver::{etdrk4_precompute, etdrk4_step, phi1, Etdrk4Coefficients};
use crate::spectral::{frequency, is_nyquist, Spectral};

use super::{finite_or_diverged, SurrogateStepper};

/// Exponential integrator used for the single coarse step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoarseScheme {
    /// Exponential Euler: `v' = e^{hL} v + h φ₁(hL) N(v)`.
    Etd1,
    #[default]
    Etdrk4,
}

impl CoarseScheme {
    pub fn name(self) -> &'static str {
        match self {
            CoarseScheme::Etd1 => "etd1",
            CoarseScheme::Etdrk4 => "etdrk4",
        }
    }
}

impl FromStr for CoarseScheme {
    type Err = AnchorError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "etd1" => Ok(CoarseScheme::Etd1),
            "etdrk4" => Ok(CoarseScheme::Etdrk4),
            other => Err(AnchorError::InvalidConfig(format!("unknown coarse scheme '{other}'"))),
        }
    }
}

/// One large exponential step per save interval on a grid coarsened by
/// `factor` along every axis, with injection down and Fourier padding back up.
pub struct CoarseSpectralSurrogate {
    fine: Arc<Grid>,
    coarse: Arc<Grid>,
    factor: usize,
    dt_save: f64,
    scheme: CoarseScheme,
    split: SplitOperator,
    coeffs: Etdrk4Coefficients,
    phi: Vec<f64>,
    fine_plan: Arc<Spectral>,
    /// Coarse spectral index -> (fine index, weight).
    embed: Vec<Vec<(usize, f64)>>,
}

impl CoarseSpectralSurrogate {
    pub fn new(spec: &PdeSpec, dt_save: f64, factor: usize) -> Result<Self> {
        Self::with_scheme(spec, dt_save, factor, CoarseScheme::default())
    }

    pub fn with_scheme(spec: &PdeSpec, dt_save: f64, factor: usize, scheme: CoarseScheme) -> Result<Self> {
        if !spec.kind.is_spectral() {
            return Err(AnchorError::NoSpectralSplit(spec.kind));
        }
        let fine = Arc::clone(&spec.grid);
        let shape = fine.shape();
        if factor < 1 || shape.iter().any(|&n| n % factor != 0 || n / factor < 4) {
            return Err(AnchorError::mismatch(format!("grid {shape:?} cannot be coarsened by {factor}")));
        }
        let coarse_shape: Vec<usize> = shape.iter().map(|n| n / factor).collect();
        let coarse = Arc::new(Grid::periodic(&coarse_shape)?);
        let coarse_spec = spec.on_grid(Arc::clone(&coarse))?;
        let split = split(&coarse_spec)?;
        let coeffs = etdrk4_precompute(&split, dt_save, 32)?;
        let phi = match scheme {
            CoarseScheme::Etd1 => split.linear_symbol().iter().map(|&l| phi1(l * dt_save, dt_save, 32)).collect(),
            CoarseScheme::Etdrk4 => Vec::new(),
        };
        let embed = embedding(&coarse_shape, &shape);
        Ok(CoarseSpectralSurrogate {
            fine_plan: Spectral::for_shape(&shape),
            fine,
            coarse,
            factor,
            dt_save,
            scheme,
            split,
            coeffs,
            phi,
            embed,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn scheme(&self) -> CoarseScheme {
        self.scheme
    }

    pub fn coarse_grid(&self) -> &Arc<Grid> {
        &self.coarse
    }
}

/// Zero-padding map between periodic lattices; Nyquist coefficients of the
/// coarse lattice are split evenly between `±n/2`.
fn embedding(coarse: &[usize], fine: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let nc: usize = coarse.iter().product();
    let scale = fine.iter().product::<usize>() as f64 / nc as f64;
    let mut out = Vec::with_capacity(nc);
    for idx in 0..nc {
        let mut rem = idx;
        let mut per_axis: Vec<Vec<(i64, f64)>> = vec![Vec::new(); coarse.len()];
        for d in (0..coarse.len()).rev() {
            let j = rem % coarse[d];
            rem /= coarse[d];
            let f = frequency(j, coarse[d]);
            per_axis[d] = if is_nyquist(j, coarse[d]) { vec![(f, 0.5), (-f, 0.5)] } else { vec![(f, 1.0)] };
        }
        let mut targets = vec![(0usize, scale)];
        for d in 0..coarse.len() {
            let mut next = Vec::new();
            for &(base, w) in &targets {
                for &(f, wf) in &per_axis[d] {
                    let j = f.rem_euclid(fine[d] as i64) as usize;
                    next.push((base * fine[d] + j, w * wf));
                }
            }
            targets = next;
        }
        out.push(targets);
    }
    out
}

impl SurrogateStepper for CoarseSpectralSurrogate {
    fn step(&self, f: &FieldState) -> Result<FieldState> {
        if *f.grid != *self.fine {
            return Err(AnchorError::mismatch("field grid differs from the surrogate grid"));
        }
        let c = restrict(f, &self.coarse)?;
        let plan = self.split.operator().plan().expect("spectral plan");
        let v = plan.forward_real(&c.values);
        let v = match self.scheme {
            CoarseScheme::Etdrk4 => etdrk4_step(&v, &self.coeffs, |x: &[Complex64]| self.split.nonlinear_hat(x)),
            CoarseScheme::Etd1 => {
                let nv = self.split.nonlinear_hat(&v);
                v.iter().zip(&nv).enumerate().map(|(i, (x, n))| self.coeffs.e[i] * x + self.phi[i] * n).collect()
            }
        };
        let mut padded = vec![Complex64::new(0.0, 0.0); self.fine.len()];
        for (c, targets) in v.iter().zip(&self.embed) {
            for &(j, w) in targets {
                padded[j] += c * w;
            }
        }
        let values = self.fine_plan.inverse_real(padded);
        finite_or_diverged(f.with_values(values, f.time + self.dt_save))
    }

    fn descriptor(&self) -> String {
        format!("coarse-spectral({}, factor={}, coarse={:?})", self.scheme.name(), self.factor, self.coarse.shape())
    }

    fn dt_save(&self) -> f64 {
        self.dt_save
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::prolong;
    use crate::pde::PdeKind;

    #[test]
    fn zero_is_fixed_point() {
        let spec = PdeSpec::benchmark(PdeKind::Burgers2d);
        let s = CoarseSpectralSurrogate::new(&spec, 0.01, 2).unwrap();
        let z = FieldState::zeros(spec.grid.clone(), 0.0);
        let out = s.step(&z).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert!((out.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn embedding_matches_prolong() {
        let spec = PdeSpec::benchmark(PdeKind::AllenCahn2d);
        let coarse = Arc::new(Grid::periodic(&[16, 16]).unwrap());
        let f = FieldState::from_fn(coarse.clone(), 0.0, |x| {
            (2.0 * std::f64::consts::PI * x[0]).sin() + (8.0 * std::f64::consts::PI * x[1]).cos()
        });
        let via_prolong = prolong(&f, &spec.grid).unwrap();
        let plan = Spectral::for_shape(&[16, 16]);
        let v = plan.forward_real(&f.values);
        let map = embedding(&[16, 16], &[32, 32]);
        let mut padded = vec![Complex64::new(0.0, 0.0); 1024];
        for (c, t) in v.iter().zip(&map) {
            for &(j, w) in t {
                padded[j] += c * w;
            }
        }
        let direct = Spectral::for_shape(&[32, 32]).inverse_real(padded);
        for (a, b) in direct.iter().zip(&via_prolong.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_heat_and_odd_grids() {
        assert!(CoarseSpectralSurrogate::new(&PdeSpec::benchmark(PdeKind::Heat3d), 0.01, 2).is_err());
        assert!(CoarseSpectralSurrogate::new(&PdeSpec::benchmark(PdeKind::Burgers1d), 0.01, 2).is_err());
    }
}
