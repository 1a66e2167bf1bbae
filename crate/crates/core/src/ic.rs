//! Seeded random initial conditions.
//!
//! Every sample draws from a ChaCha8 stream selected by `(seed, stream)`, so
//! an ensemble member depends only on its index and never on scheduling.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{FieldState, Grid};
use crate::pde::PdeKind;
use crate::spectral::{Spectral, Wavenumbers};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcKind {
    /// Periodic GRF with density `σ²(τ² + (2πk)²)^(-γ)`.
    Grf1d,
    /// Periodic Matérn field with pointwise standard deviation `σ`.
    Matern2d,
    /// Gaussian-smoothed white noise rescaled to `[-1, 1]`.
    Filtered2d,
    /// Gaussian blob in the retained corner of the L-shaped block.
    Blob3d,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcSpec {
    pub kind: IcKind,
    pub sigma: f64,
    pub tau: f64,
    /// Spectral decay exponent of the 1-D field (unrelated to the threshold decay rate).
    pub gamma_grf: f64,
    pub length_scale: f64,
    /// Matérn smoothness ν.
    pub smoothness: f64,
    /// Smoothing kernel standard deviation in grid cells.
    pub filter_width: f64,
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
    /// Fixed blob peak; drawn uniformly from (0, 1] when absent.
    #[serde(default)]
    pub amplitude: Option<f64>,
}

impl IcSpec {
    pub fn new(kind: IcKind, seed: u64) -> Self {
        let mut s = IcSpec {
            kind,
            sigma: 0.0,
            tau: 5.0,
            gamma_grf: 4.0,
            length_scale: 0.125,
            smoothness: 1.5,
            filter_width: 2.0,
            seed,
            stream: 0,
            amplitude: None,
        };
        s.sigma = match kind {
            IcKind::Grf1d => 25.0,
            IcKind::Matern2d => 0.15,
            IcKind::Filtered2d => 1.0,
            IcKind::Blob3d => 4.0,
        };
        s
    }

    pub fn for_pde(kind: PdeKind, seed: u64) -> Self {
        let ic = match kind {
            PdeKind::Burgers1d => IcKind::Grf1d,
            PdeKind::Burgers2d => IcKind::Matern2d,
            PdeKind::AllenCahn2d => IcKind::Filtered2d,
            PdeKind::Heat3d => IcKind::Blob3d,
        };
        Self::new(ic, seed)
    }

    pub fn with_stream(&self, stream: u64) -> Self {
        IcSpec { stream, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        let positive = [self.sigma, self.tau, self.gamma_grf, self.length_scale, self.smoothness, self.filter_width];
        if positive.iter().all(|&p| p > 0.0 && p.is_finite()) {
            Ok(())
        } else {
            Err(AnchorError::InvalidConfig(format!("initial-condition parameters must be positive: {self:?}")))
        }
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

pub fn sample_ic(spec: &IcSpec, grid: &Arc<Grid>) -> Result<FieldState> {
    spec.validate()?;
    let (dims, periodic) = match spec.kind {
        IcKind::Grf1d => (1, true),
        IcKind::Matern2d | IcKind::Filtered2d => (2, true),
        IcKind::Blob3d => (3, false),
    };
    let periodic_ok = grid.axes().iter().all(|a| a.periodic == periodic);
    if grid.dims() != dims || !periodic_ok {
        return Err(AnchorError::mismatch(format!(
            "{:?} needs a {dims}-d {} grid",
            spec.kind,
            if periodic { "periodic" } else { "bounded" }
        )));
    }
    let mut rng = spec.rng();
    let values = match spec.kind {
        IcKind::Grf1d => {
            let w = Wavenumbers::new(grid);
            let n = grid.len() as f64;
            let amp: Vec<f64> = w
                .k2
                .iter()
                .map(|&k2| if k2 == 0.0 { 0.0 } else { n * spec.sigma.powi(2) * (spec.tau.powi(2) + k2).powf(-spec.gamma_grf) })
                .collect();
            filtered_noise(grid, &amp, &mut rng)
        }
        IcKind::Matern2d => {
            let w = Wavenumbers::new(grid);
            let nu = spec.smoothness;
            let base = 2.0 * nu / spec.length_scale.powi(2);
            let dens: Vec<f64> = w
                .k2
                .iter()
                .map(|&k2| if k2 == 0.0 { 0.0 } else { (base + k2).powf(-(nu + 1.0)) })
                .collect();
            let total: f64 = dens.iter().sum();
            let n = grid.len() as f64;
            let amp: Vec<f64> = dens.iter().map(|d| n * spec.sigma.powi(2) * d / total).collect();
            filtered_noise(grid, &amp, &mut rng)
        }
        IcKind::Filtered2d => {
            let w = Wavenumbers::new(grid);
            let shape = grid.shape();
            let amp: Vec<f64> = w
                .freq
                .iter()
                .map(|f| {
                    let s: f64 = (0..2).map(|d| (f[d] as f64 / shape[d] as f64).powi(2)).sum();
                    (-2.0 * std::f64::consts::PI.powi(2) * spec.filter_width.powi(2) * s).exp()
                })
                .collect();
            let raw = filtered_noise(grid, &amp, &mut rng);
            rescale_unit(&raw)
        }
        IcKind::Blob3d => blob(spec, grid, &mut rng)?,
    };
    FieldState::new(Arc::clone(grid), values, 0.0)
}

/// Real white noise shaped in Fourier space by `sqrt(power)`.
fn filtered_noise(grid: &Grid, power: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let plan = Spectral::for_shape(&grid.shape());
    let noise: Vec<f64> = (0..grid.len()).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = plan.forward_real(&noise);
    for (c, &p) in spec.iter_mut().zip(power) {
        *c *= Complex64::new(p.sqrt(), 0.0);
    }
    plan.inverse_real(spec)
}

fn rescale_unit(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    v.iter().map(|&x| 2.0 * (x - lo) / range - 1.0).collect()
}

fn blob(spec: &IcSpec, grid: &Grid, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let shape = grid.shape();
    let drawn = 1.0 - rng.random::<f64>();
    let amplitude = spec.amplitude.unwrap_or(drawn);
    // Centre in index units: x, y in the lower half (retained corner), z anywhere.
    let centre: Vec<f64> = (0..3)
        .map(|d| {
            let span = (shape[d] - 1) as f64;
            let frac = if d < 2 { 0.5 } else { 1.0 };
            rng.random::<f64>() * frac * span
        })
        .collect();
    let two_s2 = 2.0 * spec.sigma * spec.sigma;
    let mut values: Vec<f64> = (0..grid.len())
        .map(|i| {
            if !grid.is_interior(i) {
                return 0.0;
            }
            let ijk = grid.unravel(i);
            let r2: f64 = (0..3).map(|d| (ijk[d] as f64 - centre[d]).powi(2)).sum();
            (-r2 / two_s2).exp()
        })
        .collect();
    let peak = values.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(AnchorError::EmptyDomain);
    }
    let scale = amplitude / peak;
    values.iter_mut().for_each(|v| *v *= scale);
    Ok(values)
}

/// Largest magnitude over active cells.
pub fn u0_max(f: &FieldState) -> Result<f64> {
    if f.grid.active_count() == 0 {
        return Err(AnchorError::EmptyDomain);
    }
    Ok(f.max_abs())
}

/// `n` ensemble members starting at stream `first`.
pub fn sample_ensemble(spec: &IcSpec, grid: &Arc<Grid>, first: u64, n: usize) -> Result<Vec<FieldState>> {
    (0..n as u64).map(|i| sample_ic(&spec.with_stream(first + i), grid)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::PdeSpec;

    fn grid_for(kind: PdeKind) -> Arc<Grid> {
        PdeSpec::benchmark(kind).grid
    }

    #[test]
    fn seeds_are_deterministic_and_streams_differ() {
        let g = grid_for(PdeKind::Burgers2d);
        let s = IcSpec::new(IcKind::Matern2d, 11);
        let a = sample_ic(&s, &g).unwrap();
        let b = sample_ic(&s, &g).unwrap();
        assert_eq!(a.values, b.values);
        let c = sample_ic(&s.with_stream(1), &g).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn grf1d_is_periodic_field_with_zero_mean() {
        let g = grid_for(PdeKind::Burgers1d);
        let f = sample_ic(&IcSpec::new(IcKind::Grf1d, 3), &g).unwrap();
        assert_eq!(f.values.len(), 101);
        assert!(f.mean().abs() < 1e-15);
    }

    #[test]
    fn filtered_field_spans_unit_interval() {
        let g = grid_for(PdeKind::AllenCahn2d);
        let f = sample_ic(&IcSpec::new(IcKind::Filtered2d, 5), &g).unwrap();
        let lo = f.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = f.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, -1.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn matern_pointwise_std_matches_sigma() {
        let g = grid_for(PdeKind::Burgers2d);
        let spec = IcSpec::new(IcKind::Matern2d, 9);
        let fields = sample_ensemble(&spec, &g, 0, 40).unwrap();
        let var: f64 = fields.iter().flat_map(|f| f.values.iter()).map(|v| v * v).sum::<f64>()
            / (40.0 * g.len() as f64);
        assert!((var.sqrt() - 0.15).abs() < 0.015, "{}", var.sqrt());
    }

    #[test]
    fn blob_respects_mask_boundary_and_amplitude() {
        let g = grid_for(PdeKind::Heat3d);
        for s in 0..10 {
            let f = sample_ic(&IcSpec::new(IcKind::Blob3d, 1).with_stream(s), &g).unwrap();
            let a = u0_max(&f).unwrap();
            assert!(a > 0.0 && a <= 1.0);
            for i in 0..g.len() {
                if !g.is_interior(i) {
                    assert_eq!(f.values[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn blob_with_fixed_amplitude() {
        let g = grid_for(PdeKind::Heat3d);
        let spec = IcSpec { amplitude: Some(0.7), ..IcSpec::new(IcKind::Blob3d, 4) };
        let f = sample_ic(&spec, &g).unwrap();
        assert!((u0_max(&f).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn u0_max_examples() {
        let g = Arc::new(Grid::periodic(&[2]).unwrap());
        assert_eq!(u0_max(&FieldState::zeros(g.clone(), 0.0)).unwrap(), 0.0);
        let f = FieldState::new(g, vec![-2.0, 1.0], 0.0).unwrap();
        assert_eq!(u0_max(&f).unwrap(), 2.0);
    }

    #[test]
    fn dimensionality_checked() {
        let g = grid_for(PdeKind::Burgers1d);
        assert!(matches!(sample_ic(&IcSpec::new(IcKind::Matern2d, 0), &g), Err(AnchorError::GridMismatch(_))));
        let h = grid_for(PdeKind::Heat3d);
        assert!(matches!(sample_ic(&IcSpec::new(IcKind::Grf1d, 0), &h), Err(AnchorError::GridMismatch(_))));
    }
}
