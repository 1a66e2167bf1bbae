//! Residual-based error estimator and its decaying trigger threshold.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{check_same_grid, norm_l2, FieldState};
use crate::pde::{PdeOperator, PdeSpec};
use crate::solver::{phi1, phi2};

pub const NORM_FLOOR: f64 = 1e-12;

/// Discretization of `u_t` inside the residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualStencil {
    /// `(u_t - u_{t-1})/dt - N(u_t)`.
    #[default]
    Backward,
    /// `(u_t - u_{t-1})/dt - (N(u_t) + N(u_{t-1}))/2`.
    Trapezoidal,
    /// Trapezoidal rule in integrating-factor form for spectral kinds:
    /// `(u_t - e^{hL} u_{t-1} - h φ₁ N_{t-1} - h φ₂ (N_t - N_{t-1}))/h`, with
    /// the stiff linear part integrated exactly.
    Exponential,
}

impl std::str::FromStr for ResidualStencil {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "backward" => Ok(ResidualStencil::Backward),
            "trapezoidal" => Ok(ResidualStencil::Trapezoidal),
            "exponential" => Ok(ResidualStencil::Exponential),
            other => Err(AnchorError::InvalidConfig(format!("unknown residual stencil '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub a: f64,
    pub eta: f64,
    pub initialized: bool,
    pub norm_floor: f64,
}

impl EstimatorState {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(AnchorError::InvalidConfig(format!("smoothing parameter a = {a} outside (0, 1]")));
        }
        Ok(EstimatorState { a, eta: 0.0, initialized: false, norm_floor: NORM_FLOOR })
    }

    pub fn reset(&self) -> Self {
        EstimatorState { eta: 0.0, initialized: false, ..*self }
    }
}

/// One EMA step. The first update seeds `eta = a * r_hat`.
pub fn ema_update(state: &EstimatorState, r_hat: f64) -> EstimatorState {
    let eta = if state.initialized { state.a * r_hat + (1.0 - state.a) * state.eta } else { state.a * r_hat };
    EstimatorState { eta, initialized: true, ..*state }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub u0max: f64,
    pub gamma: f64,
}

impl ThresholdPolicy {
    pub fn new(u0max: f64, gamma: f64) -> Result<Self> {
        if !(u0max >= 0.0) || !(gamma > 0.0) {
            return Err(AnchorError::InvalidConfig(format!("threshold needs u0max >= 0 and gamma > 0 (got {u0max}, {gamma})")));
        }
        Ok(ThresholdPolicy { u0max, gamma })
    }

    pub fn at(&self, t: f64) -> f64 {
        threshold_at(self, t)
    }
}

/// `u0max · e^{-γt} · e^{-u0max}` at physical time `t`.
pub fn threshold_at(p: &ThresholdPolicy, t: f64) -> f64 {
    p.u0max * (-p.gamma * t).exp() * (-p.u0max).exp()
}

/// Per-mode `(e^{hL}, hφ₁, hφ₂)` for one step size.
struct ExpTable {
    dt: f64,
    e: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
}

impl ExpTable {
    fn new(symbol: &[f64], dt: f64) -> Self {
        let (mut e, mut p1, mut p2) = (Vec::new(), Vec::new(), Vec::new());
        for &l in symbol {
            let z = l * dt;
            e.push(z.exp());
            p1.push(phi1(z, dt, 32));
            p2.push(phi2(z, dt, 32));
        }
        ExpTable { dt, e, p1, p2 }
    }
}

/// Evaluates residuals for consecutive saved states with a reusable operator.
pub struct ResidualEvaluator {
    op: PdeOperator,
    stencil: ResidualStencil,
    table: OnceLock<ExpTable>,
}

impl ResidualEvaluator {
    pub fn new(spec: &PdeSpec, stencil: ResidualStencil) -> Result<Self> {
        if stencil == ResidualStencil::Exponential && !spec.kind.is_spectral() {
            return Err(AnchorError::NoSpectralSplit(spec.kind));
        }
        Ok(ResidualEvaluator { op: PdeOperator::new(spec)?, stencil, table: OnceLock::new() })
    }

    pub fn stencil(&self) -> ResidualStencil {
        self.stencil
    }

    pub fn residual(&self, prev: &FieldState, curr: &FieldState, dt: f64) -> Result<FieldState> {
        check_pair(prev, curr, dt)?;
        if self.stencil == ResidualStencil::Exponential {
            return self.exponential(prev, curr, dt);
        }
        let n_curr = self.op.rhs(curr)?;
        let n_prev = match self.stencil {
            ResidualStencil::Backward => None,
            _ => Some(self.op.rhs(prev)?),
        };
        let inv = 1.0 / dt;
        let values = (0..curr.values.len())
            .map(|i| {
                let drive = match &n_prev {
                    None => n_curr.values[i],
                    Some(p) => 0.5 * (n_curr.values[i] + p.values[i]),
                };
                (curr.values[i] - prev.values[i]) * inv - drive
            })
            .collect();
        Ok(curr.with_values(values, curr.time))
    }

    fn exponential(&self, prev: &FieldState, curr: &FieldState, dt: f64) -> Result<FieldState> {
        if *curr.grid != *self.op.spec().grid {
            return Err(AnchorError::mismatch("field grid differs from the PDE grid"));
        }
        let symbol = self.op.linear_symbol().expect("spectral operator");
        let cached = self.table.get_or_init(|| ExpTable::new(symbol, dt));
        let local;
        let t = if cached.dt == dt {
            cached
        } else {
            local = ExpTable::new(symbol, dt);
            &local
        };
        let plan = self.op.plan().expect("spectral operator");
        let v0 = plan.forward_real(&prev.values);
        let v1 = plan.forward_real(&curr.values);
        let n0 = self.op.nonlinear_hat(&v0);
        let n1 = self.op.nonlinear_hat(&v1);
        let inv = 1.0 / dt;
        let r: Vec<Complex64> = (0..v0.len())
            .map(|i| (v1[i] - t.e[i] * v0[i] - t.p1[i] * n0[i] - t.p2[i] * (n1[i] - n0[i])) * inv)
            .collect();
        let out = curr.with_values(plan.inverse_real(r), curr.time);
        if !out.is_finite() {
            return Err(AnchorError::NonFiniteField);
        }
        Ok(out)
    }

    /// `‖r‖ / max(‖u_curr‖, floor)`.
    pub fn normalized(&self, prev: &FieldState, curr: &FieldState, dt: f64, floor: f64) -> Result<f64> {
        let r = self.residual(prev, curr, dt)?;
        normalized_residual(&r, curr, floor)
    }
}

fn check_pair(prev: &FieldState, curr: &FieldState, dt: f64) -> Result<()> {
    check_same_grid(prev, curr).map_err(|_| AnchorError::TrajectoryGap("states live on different grids".into()))?;
    let gap = curr.time - prev.time;
    if !(dt > 0.0) || (gap - dt).abs() > 1e-9 * dt.max(curr.time.abs()) {
        return Err(AnchorError::TrajectoryGap(format!(
            "states at t = {} and t = {} are not {dt} apart",
            prev.time, curr.time
        )));
    }
    Ok(())
}

pub fn pde_residual(spec: &PdeSpec, prev: &FieldState, curr: &FieldState, dt: f64) -> Result<FieldState> {
    ResidualEvaluator::new(spec, ResidualStencil::Backward)?.residual(prev, curr, dt)
}

pub fn normalized_residual(r: &FieldState, u: &FieldState, floor: f64) -> Result<f64> {
    check_same_grid(r, u)?;
    Ok(norm_l2(r)? / norm_l2(u)?.max(floor))
}
