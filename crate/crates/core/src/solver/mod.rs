//! High-fidelity reference steppers.

mod etdrk4;

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use etdrk4::{etdrk4_precompute, etdrk4_step, mode_coefficients, phi1, phi2, Etdrk4Coefficients};

use crate::error::{AnchorError, Result};
use crate::grid::{norm_l2, FieldState};
use crate::pde::{split, PdeKind, PdeOperator, PdeSpec, SplitOperator};
use crate::record::{Engine, RolloutRecord};

pub const DT_SAVE: f64 = 0.01;
const DIVERGENCE_GROWTH: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt_internal: f64,
    pub dt_save: f64,
    pub contour_points: usize,
}

impl SolverConfig {
    pub fn for_spec(spec: &PdeSpec) -> Self {
        let dt_internal = match spec.kind {
            PdeKind::Burgers1d | PdeKind::Burgers2d => 1e-4,
            PdeKind::AllenCahn2d => DT_SAVE / 200.0,
            PdeKind::Heat3d => {
                let h = spec.grid.min_spacing();
                let stable = 0.9 * h * h / (6.0 * spec.alpha);
                DT_SAVE / (DT_SAVE / stable).ceil()
            }
        };
        SolverConfig { dt_internal, dt_save: DT_SAVE, contour_points: 32 }
    }

    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.dt_save / self.dt_internal;
        let n = ratio.round();
        if !(self.dt_internal > 0.0) || n < 1.0 || (ratio - n).abs() > 1e-6 * n {
            return Err(AnchorError::InvalidConfig(format!(
                "dt_save / dt_internal must be a positive integer (got {ratio})"
            )));
        }
        Ok(n as usize)
    }
}

/// Number of saved steps covering `horizon`.
pub fn save_count(horizon: f64, dt_save: f64) -> Result<usize> {
    let r = horizon / dt_save;
    let n = r.round();
    if horizon < 0.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
        return Err(AnchorError::InvalidConfig(format!(
            "horizon {horizon} is not a multiple of dt_save {dt_save}"
        )));
    }
    Ok(n as usize)
}

enum Integrator {
    Etdrk4 { split: SplitOperator, coeffs: Etdrk4Coefficients },
    ForwardEuler { op: PdeOperator },
}

/// ETDRK4 pseudospectral integrator for periodic PDEs, or forward-Euler
/// finite differences for the heat equation.
pub struct HifiSolver {
    spec: PdeSpec,
    cfg: SolverConfig,
    substeps: usize,
    integrator: Integrator,
}

impl HifiSolver {
    pub fn new(spec: &PdeSpec, cfg: &SolverConfig) -> Result<Self> {
        let substeps = cfg.substeps()?;
        let integrator = if spec.kind.is_spectral() {
            let split = split(spec)?;
            let coeffs = etdrk4_precompute(&split, cfg.dt_internal, cfg.contour_points)?;
            Integrator::Etdrk4 { split, coeffs }
        } else {
            let h = spec.grid.min_spacing();
            let limit = h * h / (2.0 * spec.grid.dims() as f64 * spec.alpha);
            if cfg.dt_internal > limit {
                log::warn!("explicit heat step {} exceeds the stability bound {limit}", cfg.dt_internal);
            }
            Integrator::ForwardEuler { op: PdeOperator::new(spec)? }
        };
        Ok(HifiSolver { spec: spec.clone(), cfg: cfg.clone(), substeps, integrator })
    }

    pub fn for_spec(spec: &PdeSpec) -> Result<Self> {
        Self::new(spec, &SolverConfig::for_spec(spec))
    }

    pub fn spec(&self) -> &PdeSpec {
        &self.spec
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn dt_save(&self) -> f64 {
        self.cfg.dt_save
    }

    /// Advances exactly one save interval.
    pub fn step(&self, f: &FieldState) -> Result<FieldState> {
        self.step_indexed(f, 0, norm_l2(f)?)
    }

    /// `reference` is the norm against which growth is judged.
    fn step_indexed(&self, f: &FieldState, index: usize, reference: f64) -> Result<FieldState> {
        if *f.grid != *self.spec.grid {
            return Err(AnchorError::mismatch("field grid differs from the solver grid"));
        }
        let values = match &self.integrator {
            Integrator::Etdrk4 { split, coeffs } => {
                let plan = split.operator().plan().expect("spectral plan");
                let mut v = plan.forward_real(&f.values);
                for _ in 0..self.substeps {
                    v = etdrk4_step(&v, coeffs, |x: &[Complex64]| split.nonlinear_hat(x));
                }
                plan.inverse_real(v)
            }
            Integrator::ForwardEuler { op } => self.euler(op, &f.values),
        };
        let out = f.with_values(values, f.time + self.cfg.dt_save);
        match norm_l2(&out) {
            Ok(after) if after <= DIVERGENCE_GROWTH * reference || after == 0.0 => Ok(out),
            _ => Err(AnchorError::SolverDiverged { step: index }),
        }
    }

    fn euler(&self, op: &PdeOperator, u0: &[f64]) -> Vec<f64> {
        let grid = op.grid();
        let interior = op.interior().expect("stencil operator");
        let strides = grid.strides();
        let w: Vec<f64> = (0..grid.dims())
            .map(|d| self.spec.alpha * self.cfg.dt_internal * grid.spacing(d).powi(-2))
            .collect();
        let wsum: f64 = 2.0 * w.iter().sum::<f64>();
        let mut u: Vec<f64> = u0.iter().zip(interior).map(|(&v, &i)| if i { v } else { 0.0 }).collect();
        let mut next = vec![0.0; u.len()];
        for _ in 0..self.substeps {
            for i in 0..u.len() {
                if !interior[i] {
                    continue;
                }
                let mut acc = (1.0 - wsum) * u[i];
                for (d, &s) in strides.iter().enumerate() {
                    // Non-interior neighbours hold zero.
                    acc += w[d] * (u[i + s] + u[i - s]);
                }
                next[i] = acc;
            }
            std::mem::swap(&mut u, &mut next);
        }
        u
    }

    /// Saved states from `f0` up to `horizon` (inclusive), all tagged solver.
    pub fn solve_trajectory(&self, f0: &FieldState, horizon: f64) -> Result<RolloutRecord> {
        let n = save_count(horizon, self.cfg.dt_save)?;
        let mut rec = RolloutRecord::with_capacity(n + 1);
        rec.push(f0.clone(), Engine::Solver, f64::NAN, f64::NAN, 0.0);
        let mut cur = f0.clone();
        let reference = norm_l2(f0)?;
        for i in 1..=n {
            let start = Instant::now();
            let mut next = self.step_indexed(&cur, i, reference)?;
            next.time = f0.time + i as f64 * self.cfg.dt_save;
            rec.push(next.clone(), Engine::Solver, f64::NAN, f64::NAN, start.elapsed().as_secs_f64());
            cur = next;
        }
        Ok(rec)
    }
}

pub fn solver_step(spec: &PdeSpec, cfg: &SolverConfig, f: &FieldState) -> Result<FieldState> {
    HifiSolver::new(spec, cfg)?.step(f)
}

pub fn solve_trajectory(spec: &PdeSpec, cfg: &SolverConfig, f0: &FieldState, horizon: f64) -> Result<RolloutRecord> {
    HifiSolver::new(spec, cfg)?.solve_trajectory(f0, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::f64::consts::PI;

    #[test]
    fn heat_config_substeps_below_stability_bound() {
        let spec = PdeSpec::benchmark(PdeKind::Heat3d);
        let cfg = SolverConfig::for_spec(&spec);
        assert_eq!(cfg.substeps().unwrap(), 65);
        assert!(cfg.dt_internal <= 0.9 / (31.0f64 * 31.0 * 6.0));
    }

    #[test]
    fn allen_cahn_refines_by_200() {
        let spec = PdeSpec::benchmark(PdeKind::AllenCahn2d);
        assert_eq!(SolverConfig::for_spec(&spec).substeps().unwrap(), 200);
    }

    #[test]
    fn non_integer_ratio_rejected() {
        let cfg = SolverConfig { dt_internal: 0.003, dt_save: 0.01, contour_points: 32 };
        assert!(cfg.substeps().is_err());
        assert!(save_count(0.0155, 0.01).is_err());
        assert_eq!(save_count(1.0, 0.01).unwrap(), 100);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let spec = PdeSpec::benchmark(PdeKind::Burgers1d);
        let z = FieldState::zeros(spec.grid.clone(), 0.0);
        let out = solver_step(&spec, &SolverConfig::for_spec(&spec), &z).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0));
        assert!((out.time - 0.01).abs() < 1e-15);
    }

    #[test]
    fn heat_sine_mode_decay() {
        let spec = PdeSpec::heat3d(1.0, Grid::bounded(&[32, 32, 32]).unwrap()).unwrap();
        let mode = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin() * (PI * x[2]).sin();
        let t0 = FieldState::from_fn(spec.grid.clone(), 0.0, mode);
        let t1 = solver_step(&spec, &SolverConfig::for_spec(&spec), &t0).unwrap();
        let decay = (-3.0 * PI * PI * 0.01f64).exp();
        assert!((decay - 0.74380).abs() < 1e-4);
        let exact = t0.scaled(decay);
        let err = norm_l2(&t1.sub(&exact).unwrap()).unwrap() / norm_l2(&exact).unwrap();
        assert!(err < 2e-2, "{err}");
    }

    #[test]
    fn horizon_zero_gives_single_snapshot() {
        let spec = PdeSpec::benchmark(PdeKind::Burgers1d);
        let f0 = FieldState::zeros(spec.grid.clone(), 0.0);
        let rec = solve_trajectory(&spec, &SolverConfig::for_spec(&spec), &f0, 0.0).unwrap();
        assert_eq!(rec.len(), 1);
    }

    #[test]
    fn unstable_heat_step_diverges() {
        let spec = PdeSpec::heat3d(1.0, Grid::bounded(&[16, 16, 16]).unwrap()).unwrap();
        let cfg = SolverConfig { dt_internal: 0.01 / 10.0, dt_save: 0.01, contour_points: 32 };
        let g = spec.grid.clone();
        // Checkerboard excites the most unstable mode.
        let f0 = FieldState::from_fn(g.clone(), 0.0, |x| {
            let s: f64 = x.iter().map(|c| (c * 15.0).round()).sum();
            if s as i64 % 2 == 0 { 1.0 } else { -1.0 }
        });
        let mut f0 = f0;
        for i in 0..g.len() {
            if !g.is_interior(i) {
                f0.values[i] = 0.0;
            }
        }
        let r = solve_trajectory(&spec, &cfg, &f0, 0.05);
        assert!(matches!(r, Err(AnchorError::SolverDiverged { .. })));
    }
}
