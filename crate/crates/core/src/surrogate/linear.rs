use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};
use crate::grid::{FieldState, Grid};
use crate::record::RolloutRecord;

use super::{finite_or_diverged, SurrogateStepper};

/// Relative eigenvalue cut below which a snapshot mode counts as absent.
const RANK_TOL: f64 = 1e-12;

/// Affine one-step map on the leading POD coefficients of the centred
/// snapshots: `c' = A c + b`, `u = mean + basis · c`.
#[derive(Clone, Debug)]
pub struct LinearMapSurrogate {
    grid: Arc<Grid>,
    dt_save: f64,
    mean: DVector<f64>,
    basis: DMatrix<f64>,
    a: DMatrix<f64>,
    bias: DVector<f64>,
    energies: Vec<f64>,
    training_residual: f64,
}

impl LinearMapSurrogate {
    pub fn from_parts(
        grid: Arc<Grid>,
        dt_save: f64,
        mean: DVector<f64>,
        basis: DMatrix<f64>,
        a: DMatrix<f64>,
        bias: DVector<f64>,
    ) -> Result<Self> {
        let (n, m) = basis.shape();
        if n != grid.len() || mean.len() != n || a.shape() != (m, m) || bias.len() != m {
            return Err(AnchorError::Format(format!(
                "inconsistent linear surrogate shapes: grid {}, mean {}, basis {n}x{m}, A {:?}, b {}",
                grid.len(),
                mean.len(),
                a.shape(),
                bias.len()
            )));
        }
        Ok(LinearMapSurrogate {
            grid,
            dt_save,
            mean,
            basis,
            a,
            bias,
            energies: Vec::new(),
            training_residual: f64::NAN,
        })
    }

    pub fn modes(&self) -> usize {
        self.basis.ncols()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn operator(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    /// POD eigenvalues of the retained modes, largest first.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `‖Y - A X - b‖ / ‖Y‖` over the training pairs.
    pub fn training_residual(&self) -> f64 {
        self.training_residual
    }

    pub fn encode(&self, f: &FieldState) -> DVector<f64> {
        let u = DVector::from_column_slice(&f.values);
        self.basis.tr_mul(&(u - &self.mean))
    }

    pub fn decode(&self, c: &DVector<f64>, like: &FieldState, time: f64) -> FieldState {
        let u = &self.mean + &self.basis * c;
        like.with_values(u.as_slice().to_vec(), time)
    }
}

impl SurrogateStepper for LinearMapSurrogate {
    fn step(&self, f: &FieldState) -> Result<FieldState> {
        if *f.grid != *self.grid {
            return Err(AnchorError::mismatch("field grid differs from the surrogate grid"));
        }
        let c = &self.a * self.encode(f) + &self.bias;
        finite_or_diverged(self.decode(&c, f, f.time + self.dt_save))
    }

    fn descriptor(&self) -> String {
        format!("linear-map(m={})", self.modes())
    }

    fn dt_save(&self) -> f64 {
        self.dt_save
    }
}

/// Leading `m` POD modes of the columns of `x` (already centred), largest
/// energy first, with a fixed sign convention.
fn pod(x: &DMatrix<f64>, m: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (n, s) = x.shape();
    let (vals, vecs, from_gram) = if s <= n {
        let e = SymmetricEigen::new(x.tr_mul(x));
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let e = SymmetricEigen::new(x * x.transpose());
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].total_cmp(&vals[i]));
    let top = vals[order[0]].max(0.0);
    let rank = order.iter().filter(|&&i| vals[i] > RANK_TOL * top && top > 0.0).count();
    if rank < m {
        return Err(AnchorError::InsufficientRank { rank, requested: m });
    }
    let mut basis = DMatrix::zeros(n, m);
    let mut energies = Vec::with_capacity(m);
    for (col, &i) in order.iter().take(m).enumerate() {
        let mut v: DVector<f64> = if from_gram {
            (x * vecs.column(i)) / vals[i].sqrt()
        } else {
            vecs.column(i).into_owned()
        };
        v /= v.norm();
        let pivot = v.iter().copied().fold(0.0f64, |p, c| if c.abs() > p.abs() { c } else { p });
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(col, &v);
        energies.push(vals[i]);
    }
    Ok((basis, energies))
}

/// Fitting choices beyond the basis size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearFit {
    /// Subtract the snapshot mean and fit an affine map. Without centring the
    /// map is purely linear, so `u = 0` is a fixed point and the step commutes
    /// with scaling.
    pub centered: bool,
}

impl Default for LinearFit {
    fn default() -> Self {
        LinearFit { centered: true }
    }
}

/// Fits a `m`-mode affine map to consecutive snapshot pairs of every record.
pub fn fit_linear_surrogate(trajectories: &[RolloutRecord], m: usize) -> Result<LinearMapSurrogate> {
    fit_linear_surrogate_with(trajectories, m, LinearFit::default())
}

pub fn fit_linear_surrogate_with(trajectories: &[RolloutRecord], m: usize, opts: LinearFit) -> Result<LinearMapSurrogate> {
    if trajectories.len() < 2 {
        return Err(AnchorError::InvalidConfig("at least two training trajectories required".into()));
    }
    if m == 0 {
        return Err(AnchorError::InvalidConfig("basis size must be positive".into()));
    }
    let first = trajectories[0].snapshots.first().ok_or(AnchorError::EmptyDomain)?;
    let grid = Arc::clone(&first.grid);
    let dt_save = match trajectories[0].snapshots.get(1) {
        Some(s) => s.time - first.time,
        None => return Err(AnchorError::InvalidConfig("training trajectories need two or more snapshots".into())),
    };
    let n = grid.len();
    let total: usize = trajectories.iter().map(|r| r.snapshots.len()).sum();
    if total <= m {
        return Err(AnchorError::InsufficientRank { rank: total, requested: m });
    }
    let mut x = DMatrix::zeros(n, total);
    let mut col = 0;
    for rec in trajectories {
        for w in rec.snapshots.windows(2) {
            let gap = w[1].time - w[0].time;
            if (gap - dt_save).abs() > 1e-9 {
                return Err(AnchorError::TrajectoryGap(format!("snapshot spacing {gap} differs from {dt_save}")));
            }
        }
        for s in &rec.snapshots {
            if *s.grid != *grid {
                return Err(AnchorError::mismatch("training snapshots live on different grids"));
            }
            x.set_column(col, &DVector::from_column_slice(&s.values));
            col += 1;
        }
    }
    let mean = if opts.centered { x.column_mean() } else { DVector::zeros(n) };
    for mut c in x.column_iter_mut() {
        c -= &mean;
    }
    let (basis, energies) = pod(&x, m)?;
    let coeffs = basis.tr_mul(&x);

    let pairs = total - trajectories.len();
    let cols = if opts.centered { m + 1 } else { m };
    let mut z = DMatrix::zeros(pairs, cols);
    let mut y = DMatrix::zeros(pairs, m);
    let mut row = 0;
    let mut offset = 0;
    for rec in trajectories {
        let len = rec.snapshots.len();
        for i in 0..len.saturating_sub(1) {
            for k in 0..m {
                z[(row, k)] = coeffs[(k, offset + i)];
                y[(row, k)] = coeffs[(k, offset + i + 1)];
            }
            if opts.centered {
                z[(row, m)] = 1.0;
            }
            row += 1;
        }
        offset += len;
    }
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if rank < cols {
        return Err(AnchorError::InsufficientRank { rank: rank.min(m), requested: m });
    }
    let w = svd.solve(&y, 1e-10 * smax).map_err(|e| AnchorError::InvalidConfig(e.to_string()))?;
    let a = w.rows(0, m).transpose();
    let bias = if opts.centered { w.row(m).transpose() } else { DVector::zeros(m) };
    let fit = &z * &w;
    let training_residual = (&y - fit).norm() / y.norm().max(f64::MIN_POSITIVE);

    let mut s = LinearMapSurrogate::from_parts(grid, dt_save, mean, basis, a, bias)?;
    s.energies = energies;
    s.training_residual = training_residual;
    Ok(s)
}
