//! Surrogate-primary rollouts with estimator-gated solver interventions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::estimator::{ema_update, EstimatorState, ResidualEvaluator, ResidualStencil, ThresholdPolicy, NORM_FLOOR};
use crate::grid::FieldState;
use crate::ic::u0_max;
use crate::metrics::{error_series, pearson, time_block};
use crate::pde::{PdeKind, PdeSpec};
use crate::record::{Engine, RolloutRecord};
use crate::solver::{save_count, HifiSolver};
use crate::surrogate::SurrogateStepper;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    /// Saved steps per solver intervention.
    pub k_steps: usize,
    pub horizon: f64,
    /// EMA smoothing parameter.
    pub a: f64,
    /// Threshold decay rate.
    pub gamma: f64,
    #[serde(default)]
    pub stencil: ResidualStencil,
    #[serde(default = "default_floor")]
    pub norm_floor: f64,
    /// Replaces the decaying threshold by a constant (e.g. `+inf`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<f64>,
}

fn default_floor() -> f64 {
    NORM_FLOOR
}

impl AnchorConfig {
    pub fn new(a: f64, gamma: f64) -> Self {
        AnchorConfig {
            k_steps: 10,
            horizon: 1.0,
            a,
            gamma,
            stencil: ResidualStencil::Backward,
            norm_floor: NORM_FLOOR,
            threshold_override: None,
        }
    }

    /// Smoothing and decay rates used for each benchmark, with a residual
    /// stencil that integrates the stiff linear part exactly where a Fourier
    /// split exists.
    pub fn for_pde(kind: PdeKind) -> Self {
        let (a, gamma) = match kind {
            PdeKind::Burgers1d => (0.1, 2.0),
            PdeKind::Burgers2d => (0.02, 2.0),
            PdeKind::AllenCahn2d | PdeKind::Heat3d => (0.01, 3.0),
        };
        let mut cfg = Self::new(a, gamma);
        cfg.stencil = if kind.is_spectral() { ResidualStencil::Exponential } else { ResidualStencil::Trapezoidal };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(AnchorError::InvalidConfig(format!("horizon must be finite and non-negative, got {}", self.horizon)));
        }
        if self.k_steps == 0 {
            return Err(AnchorError::InvalidConfig("intervention length must be at least 1".into()));
        }
        EstimatorState::new(self.a)?;
        ThresholdPolicy::new(0.0, self.gamma)?;
        Ok(())
    }

    fn estimator(&self) -> Result<EstimatorState> {
        let mut e = EstimatorState::new(self.a)?;
        e.norm_floor = self.norm_floor;
        Ok(e)
    }

    fn threshold(&self, policy: &ThresholdPolicy, t: f64) -> f64 {
        self.threshold_override.unwrap_or_else(|| policy.at(t))
    }
}

/// Everything a rollout needs besides the initial condition.
pub struct Engines<'a> {
    pub spec: &'a PdeSpec,
    pub solver: &'a HifiSolver,
    pub surrogate: &'a dyn SurrogateStepper,
}

struct Monitor {
    residual: ResidualEvaluator,
    state: EstimatorState,
    policy: ThresholdPolicy,
    dt: f64,
}

impl Monitor {
    fn new(cfg: &AnchorConfig, spec: &PdeSpec, f0: &FieldState, dt: f64) -> Result<Self> {
        Ok(Monitor {
            residual: ResidualEvaluator::new(spec, cfg.stencil)?,
            state: cfg.estimator()?,
            policy: ThresholdPolicy::new(u0_max(f0)?, cfg.gamma)?,
            dt,
        })
    }

    fn observe(&mut self, prev: &FieldState, curr: &FieldState, step: usize) -> Result<f64> {
        let r_hat = match self.residual.normalized(prev, curr, self.dt, self.state.norm_floor) {
            Ok(v) => v,
            Err(AnchorError::NonFiniteField) => f64::NAN,
            Err(e) => return Err(e),
        };
        self.state = ema_update(&self.state, r_hat);
        if !self.state.eta.is_finite() {
            return Err(AnchorError::EstimatorCorrupt { step });
        }
        Ok(self.state.eta)
    }
}

/// The hybrid loop. Row 0 holds `f0`; row `i` the state after step `i`
/// together with the engine that produced it.
pub fn anchor_rollout(cfg: &AnchorConfig, engines: &Engines, f0: &FieldState) -> Result<RolloutRecord> {
    cfg.validate()?;
    let dt = engines.solver.dt_save();
    let n = save_count(cfg.horizon, dt)?;
    let mut monitor = Monitor::new(cfg, engines.spec, f0, dt)?;
    let mut rec = RolloutRecord::with_capacity(n + 1);
    rec.push(f0.clone(), Engine::Surrogate, f64::NAN, cfg.threshold(&monitor.policy, f0.time), 0.0);

    let mut engine = Engine::Surrogate;
    let mut remaining = 0usize;
    let mut cur = f0.clone();
    for i in 1..=n {
        let start = Instant::now();
        let mut next = match engine {
            Engine::Surrogate => match engines.surrogate.step(&cur) {
                Ok(s) => s,
                Err(AnchorError::SurrogateDiverged) => {
                    log::warn!("surrogate diverged at step {i}; forcing a solver intervention");
                    engine = Engine::Solver;
                    remaining = cfg.k_steps;
                    solver_step(engines.solver, &cur, i)?
                }
                Err(e) => return Err(e),
            },
            Engine::Solver => solver_step(engines.solver, &cur, i)?,
        };
        next.time = f0.time + i as f64 * dt;
        let eta = monitor.observe(&cur, &next, i)?;
        let thr = cfg.threshold(&monitor.policy, next.time);
        let used = engine;
        match used {
            Engine::Solver => {
                remaining -= 1;
                if remaining == 0 {
                    engine = Engine::Surrogate;
                }
            }
            Engine::Surrogate if eta > thr => {
                engine = Engine::Solver;
                remaining = cfg.k_steps;
            }
            Engine::Surrogate => {}
        }
        let secs = start.elapsed().as_secs_f64();
        rec.push(next.clone(), used, eta, thr, secs);
        cur = next;
    }
    Ok(rec)
}

fn solver_step(solver: &HifiSolver, f: &FieldState, i: usize) -> Result<FieldState> {
    solver.step(f).map_err(|e| match e {
        AnchorError::SolverDiverged { .. } => AnchorError::SolverDiverged { step: i },
        other => other,
    })
}

/// Pure surrogate rollout; no monitoring cost is paid inside the loop.
pub fn surrogate_rollout(surrogate: &dyn SurrogateStepper, f0: &FieldState, horizon: f64) -> Result<RolloutRecord> {
    let dt = surrogate.dt_save();
    let n = save_count(horizon, dt)?;
    let mut rec = RolloutRecord::with_capacity(n + 1);
    rec.push(f0.clone(), Engine::Surrogate, f64::NAN, f64::NAN, 0.0);
    let mut cur = f0.clone();
    for i in 1..=n {
        let start = Instant::now();
        let mut next = surrogate.step(&cur)?;
        next.time = f0.time + i as f64 * dt;
        rec.push(next.clone(), Engine::Surrogate, f64::NAN, f64::NAN, start.elapsed().as_secs_f64());
        cur = next;
    }
    Ok(rec)
}

/// Fills the estimator and threshold series of an existing record after the
/// fact, as ANCHOR would have seen them.
pub fn annotate_estimator(cfg: &AnchorConfig, spec: &PdeSpec, rec: &mut RolloutRecord) -> Result<()> {
    let Some(f0) = rec.snapshots.first() else {
        return Ok(());
    };
    let dt = match rec.snapshots.get(1) {
        Some(s) => s.time - f0.time,
        None => return Ok(()),
    };
    let mut monitor = Monitor::new(cfg, spec, f0, dt)?;
    rec.eta[0] = f64::NAN;
    rec.threshold[0] = cfg.threshold(&monitor.policy, f0.time);
    for i in 1..rec.len() {
        let (a, b) = (&rec.snapshots[i - 1], &rec.snapshots[i]);
        rec.eta[i] = monitor.observe(a, b, i)?;
        rec.threshold[i] = cfg.threshold(&monitor.policy, b.time);
    }
    Ok(())
}

/// Per-sample comparison of solver-only, surrogate-only and ANCHOR.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub solver_seconds: f64,
    pub surrogate_seconds: f64,
    pub anchor_seconds: f64,
    pub surrogate_max_error: f64,
    pub surrogate_final_error: f64,
    pub anchor_max_error: f64,
    pub anchor_final_error: f64,
    /// Step at which the estimator first crossed the threshold.
    pub first_trigger: Option<usize>,
    pub anchor_error_at_first_trigger: Option<f64>,
    pub interventions: usize,
    pub solver_steps: usize,
    pub steps: usize,
    /// Estimator/error correlation over the surrogate-only rollout.
    pub rho_surrogate: Option<f64>,
    /// Same over the ANCHOR rollout, for diagnostics.
    pub rho_anchor: Option<f64>,
    pub config: AnchorConfig,
    #[serde(skip)]
    pub reference: RolloutRecord,
    #[serde(skip)]
    pub surrogate: RolloutRecord,
    #[serde(skip)]
    pub anchor: RolloutRecord,
}

impl ComparisonReport {
    pub fn surrogate_fraction(&self) -> f64 {
        if self.steps == 0 {
            return 1.0;
        }
        1.0 - self.solver_steps as f64 / self.steps as f64
    }

    /// Max ANCHOR error over the error at its first trigger; `None` without
    /// a trigger.
    pub fn boundedness_ratio(&self) -> Option<f64> {
        let at = self.anchor_error_at_first_trigger?;
        Some(if at > 0.0 { self.anchor_max_error / at } else if self.anchor_max_error == 0.0 { 1.0 } else { f64::INFINITY })
    }
}

/// Correlation of estimator and error over rows `1..` whose time lies in
/// `window` (all rows when `None`).
pub fn estimator_correlation(rec: &RolloutRecord, window: Option<(f64, f64)>) -> Option<f64> {
    let errs = rec.rel_l2.as_ref()?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for i in 1..rec.len() {
        let t = rec.snapshots[i].time;
        if window.is_none_or(|(lo, hi)| t >= lo - 1e-12 && t <= hi + 1e-12) {
            x.push(rec.eta[i]);
            y.push(errs[i]);
        }
    }
    pearson(&x, &y).ok()
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(0.0, f64::max)
}

pub fn compare_rollouts(
    cfg: &AnchorConfig,
    engines: &Engines,
    f0: &FieldState,
    window: Option<(f64, f64)>,
) -> Result<ComparisonReport> {
    let (reference, solver_seconds) = time_block("solver", || engines.solver.solve_trajectory(f0, cfg.horizon));
    let reference = reference?;
    let (surrogate, surrogate_seconds) = time_block("surrogate", || surrogate_rollout(engines.surrogate, f0, cfg.horizon));
    let mut surrogate = surrogate?;
    let (anchor, anchor_seconds) = time_block("anchor", || anchor_rollout(cfg, engines, f0));
    let mut anchor = anchor?;

    annotate_estimator(cfg, engines.spec, &mut surrogate)?;
    let sur_err = error_series(&reference.snapshots, &surrogate.snapshots)?;
    let anc_err = error_series(&reference.snapshots, &anchor.snapshots)?;
    surrogate.rel_l2 = Some(sur_err.clone());
    anchor.rel_l2 = Some(anc_err.clone());

    let first_trigger = anchor.first_trigger();
    Ok(ComparisonReport {
        solver_seconds,
        surrogate_seconds,
        anchor_seconds,
        surrogate_max_error: max_of(&sur_err),
        surrogate_final_error: *sur_err.last().unwrap_or(&0.0),
        anchor_max_error: max_of(&anc_err),
        anchor_final_error: *anc_err.last().unwrap_or(&0.0),
        first_trigger,
        anchor_error_at_first_trigger: first_trigger.map(|i| anc_err[i]),
        interventions: anchor.intervention_count(),
        solver_steps: anchor.solver_steps(),
        steps: anchor.len().saturating_sub(1),
        rho_surrogate: estimator_correlation(&surrogate, window),
        rho_anchor: estimator_correlation(&anchor, window),
        config: cfg.clone(),
        reference,
        surrogate,
        anchor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::PdeKind;
    use crate::record::replay_gate;
    use crate::surrogate::{CoarseSpectralSurrogate, SolverSurrogate};

    fn burgers2d_small() -> PdeSpec {
        PdeSpec::burgers2d(0.01, 32).unwrap()
    }

    #[test]
    fn zero_ic_never_triggers_and_has_zero_error() {
        let spec = burgers2d_small();
        let solver = HifiSolver::for_spec(&spec).unwrap();
        let sur = CoarseSpectralSurrogate::new(&spec, 0.01, 2).unwrap();
        let eng = Engines { spec: &spec, solver: &solver, surrogate: &sur };
        let mut cfg = AnchorConfig::new(0.02, 2.0);
        cfg.horizon = 0.2;
        let f0 = FieldState::zeros(spec.grid.clone(), 0.0);
        let rep = compare_rollouts(&cfg, &eng, &f0, None).unwrap();
        assert_eq!(rep.anchor_max_error, 0.0);
        assert_eq!(rep.surrogate_max_error, 0.0);
        assert_eq!(rep.solver_steps, 0);
        assert!(rep.anchor.threshold.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn infinite_threshold_reproduces_surrogate_rollout() {
        let spec = burgers2d_small();
        let solver = HifiSolver::for_spec(&spec).unwrap();
        let sur = CoarseSpectralSurrogate::new(&spec, 0.01, 2).unwrap();
        let eng = Engines { spec: &spec, solver: &solver, surrogate: &sur };
        let mut cfg = AnchorConfig::new(0.02, 2.0);
        cfg.horizon = 0.1;
        cfg.threshold_override = Some(f64::INFINITY);
        let f0 = FieldState::from_fn(spec.grid.clone(), 0.0, |x| 0.2 * (2.0 * std::f64::consts::PI * (x[0] + x[1])).sin());
        let a = anchor_rollout(&cfg, &eng, &f0).unwrap();
        let s = surrogate_rollout(&sur, &f0, cfg.horizon).unwrap();
        assert_eq!(a.snapshots, s.snapshots);
        assert_eq!(a.solver_steps(), 0);
    }

    #[test]
    fn zero_threshold_hands_over_after_every_surrogate_step() {
        let spec = burgers2d_small();
        let solver = HifiSolver::for_spec(&spec).unwrap();
        let sur = CoarseSpectralSurrogate::new(&spec, 0.01, 2).unwrap();
        let eng = Engines { spec: &spec, solver: &solver, surrogate: &sur };
        let mut cfg = AnchorConfig::new(0.02, 2.0);
        cfg.horizon = 0.25;
        cfg.k_steps = 3;
        cfg.threshold_override = Some(0.0);
        let f0 = FieldState::from_fn(spec.grid.clone(), 0.0, |x| 0.2 * (2.0 * std::f64::consts::PI * x[0]).cos());
        let a = anchor_rollout(&cfg, &eng, &f0).unwrap();
        for i in 1..a.len() - 1 {
            if a.engines[i] == Engine::Surrogate {
                assert_eq!(a.engines[i + 1], Engine::Solver, "step {i}");
            }
        }
        assert_eq!(replay_gate(&a.eta, &a.threshold, 3, a.engines[0]), a.engines);
        assert!(a.solver_segments().iter().all(|&(s, l)| l == 3 || s + l == a.len()));
    }

    #[test]
    fn solver_as_surrogate_has_zero_error() {
        let spec = PdeSpec::benchmark(PdeKind::Burgers1d);
        let cfg_s = crate::solver::SolverConfig::for_spec(&spec);
        let solver = HifiSolver::new(&spec, &cfg_s).unwrap();
        let sur = SolverSurrogate::new(&spec, &cfg_s).unwrap();
        let eng = Engines { spec: &spec, solver: &solver, surrogate: &sur };
        let mut cfg = AnchorConfig::new(0.1, 2.0);
        cfg.horizon = 0.1;
        let f0 = FieldState::from_fn(spec.grid.clone(), 0.0, |x| 0.5 * (2.0 * std::f64::consts::PI * x[0]).sin());
        let rep = compare_rollouts(&cfg, &eng, &f0, None).unwrap();
        assert_eq!(rep.surrogate_max_error, 0.0);
        assert_eq!(rep.anchor_max_error, 0.0);
    }
}
