use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::FieldState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Surrogate,
    Solver,
}

impl Engine {
    pub fn as_str(self) -> &'static str {
        match self {
            Engine::Surrogate => "surrogate",
            Engine::Solver => "solver",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = AnchorError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "surrogate" => Ok(Engine::Surrogate),
            "solver" => Ok(Engine::Solver),
            other => Err(AnchorError::Format(format!("unknown engine tag '{other}'"))),
        }
    }
}

/// Per-saved-step trajectory. Row 0 is the initial condition; `eta` and
/// `threshold` are NaN where no monitoring took place.
#[derive(Clone, Debug, Default)]
pub struct RolloutRecord {
    pub snapshots: Vec<FieldState>,
    pub engines: Vec<Engine>,
    pub eta: Vec<f64>,
    pub threshold: Vec<f64>,
    pub rel_l2: Option<Vec<f64>>,
    pub step_seconds: Vec<f64>,
}

impl RolloutRecord {
    pub fn with_capacity(n: usize) -> Self {
        RolloutRecord {
            snapshots: Vec::with_capacity(n),
            engines: Vec::with_capacity(n),
            eta: Vec::with_capacity(n),
            threshold: Vec::with_capacity(n),
            rel_l2: None,
            step_seconds: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, snapshot: FieldState, engine: Engine, eta: f64, threshold: f64, seconds: f64) {
        self.snapshots.push(snapshot);
        self.engines.push(engine);
        self.eta.push(eta);
        self.threshold.push(threshold);
        self.step_seconds.push(seconds);
    }

    pub fn len(&self) -> usize {
        self.engines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.engines.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> Option<&FieldState> {
        self.snapshots.last()
    }

    pub fn total_seconds(&self) -> f64 {
        self.step_seconds.iter().sum()
    }

    pub fn solver_steps(&self) -> usize {
        self.engines.iter().skip(1).filter(|&&e| e == Engine::Solver).count()
    }

    /// Contiguous runs of solver-tagged steps after the initial row, as
    /// `(first_step, length)`.
    pub fn solver_segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &e) in self.engines.iter().enumerate().skip(1) {
            match (e, start) {
                (Engine::Solver, None) => start = Some(i),
                (Engine::Surrogate, Some(s)) => {
                    out.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, self.engines.len() - s));
        }
        out
    }

    pub fn intervention_count(&self) -> usize {
        self.solver_segments().len()
    }

    /// Step index of the first surrogate step whose estimator exceeded the
    /// threshold.
    pub fn first_trigger(&self) -> Option<usize> {
        (1..self.len()).find(|&i| {
            self.engines[i] == Engine::Surrogate
                && self.engines.get(i + 1) == Some(&Engine::Solver)
        })
    }

    pub fn check_lengths(&self) -> Result<()> {
        let n = self.engines.len();
        let ok = self.snapshots.len() == n
            && self.eta.len() == n
            && self.threshold.len() == n
            && self.step_seconds.len() == n
            && self.rel_l2.as_ref().is_none_or(|e| e.len() == n);
        if ok {
            Ok(())
        } else {
            Err(AnchorError::Format("rollout record series have different lengths".into()))
        }
    }
}

/// Recomputes engine tags from the recorded estimator and threshold series
/// using the intervention rule: a surrogate step whose `eta > threshold`
/// hands the next `k` steps to the solver.
pub fn replay_gate(eta: &[f64], threshold: &[f64], k: usize, initial: Engine) -> Vec<Engine> {
    let n = eta.len();
    let mut tags = Vec::with_capacity(n);
    if n == 0 {
        return tags;
    }
    tags.push(initial);
    let mut remaining = 0usize;
    for i in 1..n {
        let prev = tags[i - 1];
        let engine = if remaining > 0 {
            Engine::Solver
        } else if prev == Engine::Surrogate && eta[i - 1] > threshold[i - 1] {
            remaining = k;
            Engine::Solver
        } else {
            Engine::Surrogate
        };
        if engine == Engine::Solver {
            remaining -= 1;
        }
        tags.push(engine);
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use Engine::*;

    #[test]
    fn segments_and_trigger() {
        let rec = RolloutRecord {
            engines: vec![Surrogate, Surrogate, Surrogate, Solver, Solver, Surrogate, Solver],
            ..Default::default()
        };
        assert_eq!(rec.solver_segments(), vec![(3, 2), (6, 1)]);
        assert_eq!(rec.first_trigger(), Some(2));
        assert_eq!(rec.solver_steps(), 3);
    }

    #[test]
    fn replay_applies_fixed_length_runs() {
        let eta = [f64::NAN, 0.1, 0.5, 0.5, 0.5, 0.5, 0.1, 0.1];
        let thr = [0.3; 8];
        let tags = replay_gate(&eta, &thr, 3, Surrogate);
        assert_eq!(tags, vec![Surrogate, Surrogate, Surrogate, Solver, Solver, Solver, Surrogate, Surrogate]);
    }
}
