//! Structured grids, discretized fields and the inter-grid transfer operators.
//!
//! Values are stored row-major with the last axis fastest. Node `i` on an axis
//! sits at `lo + i * h`; periodic axes omit the duplicated endpoint.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{AnchorError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
    pub periodic: bool,
}

impl Axis {
    pub fn periodic(points: usize) -> Self {
        Axis { points, lo: 0.0, hi: 1.0, periodic: true }
    }

    pub fn bounded(points: usize) -> Self {
        Axis { points, lo: 0.0, hi: 1.0, periodic: false }
    }

    pub fn extent(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn spacing(&self) -> f64 {
        if self.periodic {
            self.extent() / self.points as f64
        } else {
            self.extent() / (self.points - 1) as f64
        }
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }
}

/// Which cells of the bounding box belong to the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mask {
    Full,
    /// Bounding box minus the block `x > mid ∧ y > mid` over the full z-extent.
    LShaped,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GridSpec {
    axes: Vec<Axis>,
    mask: Mask,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid {
    axes: Vec<Axis>,
    mask: Mask,
    active: Option<Vec<bool>>,
}

impl TryFrom<GridSpec> for Grid {
    type Error = AnchorError;

    fn try_from(spec: GridSpec) -> Result<Self> {
        Grid::new(spec.axes, spec.mask)
    }
}

impl From<Grid> for GridSpec {
    fn from(g: Grid) -> Self {
        GridSpec { axes: g.axes, mask: g.mask }
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes && self.mask == other.mask
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>, mask: Mask) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 {
            return Err(AnchorError::InvalidConfig(format!(
                "grids have 1 to 3 axes, got {}",
                axes.len()
            )));
        }
        for (i, a) in axes.iter().enumerate() {
            let min_points = if a.periodic { 1 } else { 2 };
            if a.points < min_points || !(a.hi > a.lo) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(AnchorError::InvalidConfig(format!("axis {i} is degenerate: {a:?}")));
            }
        }
        let mut grid = Grid { axes, mask, active: None };
        if mask == Mask::LShaped {
            if grid.dims() < 2 {
                return Err(AnchorError::InvalidConfig("L-shaped mask needs at least 2 axes".into()));
            }
            let (ax, ay) = (&grid.axes[0], &grid.axes[1]);
            let (mx, my) = (0.5 * (ax.lo + ax.hi), 0.5 * (ay.lo + ay.hi));
            let active = (0..grid.len())
                .map(|idx| {
                    let ijk = grid.unravel(idx);
                    !(ax.coord(ijk[0]) > mx && ay.coord(ijk[1]) > my)
                })
                .collect();
            grid.active = Some(active);
        }
        Ok(grid)
    }

    /// Periodic unit cube/square/interval with `shape` nodes per axis.
    pub fn periodic(shape: &[usize]) -> Result<Self> {
        Grid::new(shape.iter().map(|&n| Axis::periodic(n)).collect(), Mask::Full)
    }

    /// Non-periodic unit box including boundary nodes.
    pub fn bounded(shape: &[usize]) -> Result<Self> {
        Grid::new(shape.iter().map(|&n| Axis::bounded(n)).collect(), Mask::Full)
    }

    pub fn l_shaped(shape: &[usize]) -> Result<Self> {
        Grid::new(shape.iter().map(|&n| Axis::bounded(n)).collect(), Mask::LShaped)
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn mask(&self) -> Mask {
        self.mask
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    pub fn all_periodic(&self) -> bool {
        self.axes.iter().all(|a| a.periodic)
    }

    /// Per-axis strides of the row-major layout.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims()];
        for d in (0..self.dims().saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.axes[d + 1].points;
        }
        s
    }

    pub fn unravel(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        for d in (0..self.dims()).rev() {
            let n = self.axes[d].points;
            out[d] = idx % n;
            idx /= n;
        }
        out
    }

    pub fn ravel(&self, ijk: &[usize]) -> usize {
        ijk.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.points + i)
    }

    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let ijk = self.unravel(idx);
        let mut x = [0.0; 3];
        for (d, a) in self.axes.iter().enumerate() {
            x[d] = a.coord(ijk[d]);
        }
        x
    }

    pub fn active_mask(&self) -> Option<&[bool]> {
        self.active.as_deref()
    }

    pub fn is_active(&self, idx: usize) -> bool {
        self.active.as_ref().is_none_or(|m| m[idx])
    }

    pub fn active_count(&self) -> usize {
        match &self.active {
            Some(m) => m.iter().filter(|&&a| a).count(),
            None => self.len(),
        }
    }

    /// Active nodes at which the solution is free to evolve: not on a
    /// non-periodic box face. Masked nodes and box faces carry Dirichlet zero.
    pub fn is_interior(&self, idx: usize) -> bool {
        if !self.is_active(idx) {
            return false;
        }
        let ijk = self.unravel(idx);
        self.axes
            .iter()
            .enumerate()
            .all(|(d, a)| a.periodic || (ijk[d] > 0 && ijk[d] + 1 < a.points))
    }
}

/// A discretized field on a grid at a physical time.
#[derive(Clone, Debug)]
pub struct FieldState {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl PartialEq for FieldState {
    fn eq(&self, other: &Self) -> bool {
        *self.grid == *other.grid && self.time == other.time && self.values == other.values
    }
}

impl FieldState {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(AnchorError::mismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let mut f = FieldState { grid, values, time };
        f.zero_inactive();
        Ok(f)
    }

    pub fn zeros(grid: Arc<Grid>, time: f64) -> Self {
        let n = grid.len();
        FieldState { grid, values: vec![0.0; n], time }
    }

    /// Samples `f(x)` at every node; masked nodes are left at zero.
    pub fn from_fn(grid: Arc<Grid>, time: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let dims = grid.dims();
        let values = (0..grid.len())
            .map(|i| if grid.is_active(i) { f(&grid.coords(i)[..dims]) } else { 0.0 })
            .collect();
        FieldState { grid, values, time }
    }

    pub fn zero_inactive(&mut self) {
        if let Some(m) = self.grid.active_mask() {
            for (v, &a) in self.values.iter_mut().zip(m) {
                if !a {
                    *v = 0.0;
                }
            }
        }
    }

    pub fn with_values(&self, values: Vec<f64>, time: f64) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        let mut f = FieldState { grid: Arc::clone(&self.grid), values, time };
        f.zero_inactive();
        f
    }

    pub fn is_finite(&self) -> bool {
        self.active_values().all(f64::is_finite)
    }

    pub fn active_values(&self) -> impl Iterator<Item = f64> + '_ {
        let g = &self.grid;
        self.values
            .iter()
            .enumerate()
            .filter(move |(i, _)| g.is_active(*i))
            .map(|(_, &v)| v)
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.with_values(self.values.iter().map(|v| c * v).collect(), self.time)
    }

    /// `self - other`, keeping `self.time`.
    pub fn sub(&self, other: &FieldState) -> Result<Self> {
        check_same_grid(self, other)?;
        Ok(self.with_values(
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            self.time,
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.active_values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        let n = self.grid.active_count();
        self.active_values().sum::<f64>() / n as f64
    }
}

pub(crate) fn check_same_grid(a: &FieldState, b: &FieldState) -> Result<()> {
    if Arc::ptr_eq(&a.grid, &b.grid) || *a.grid == *b.grid {
        Ok(())
    } else {
        Err(AnchorError::mismatch("fields live on different grids"))
    }
}

/// Unweighted discrete l2 norm over active cells.
pub fn norm_l2(f: &FieldState) -> Result<f64> {
    let mut ss = 0.0;
    for v in f.active_values() {
        if !v.is_finite() {
            return Err(AnchorError::NonFiniteField);
        }
        ss += v * v;
    }
    Ok(ss.sqrt())
}

fn transfer_ratio(fine: &Axis, coarse: &Axis, d: usize) -> Result<usize> {
    if fine.periodic != coarse.periodic || fine.lo != coarse.lo || fine.hi != coarse.hi {
        return Err(AnchorError::mismatch(format!("axis {d} extents or periodicity differ")));
    }
    let (nf, nc) = if fine.periodic {
        (fine.points, coarse.points)
    } else {
        (fine.points - 1, coarse.points - 1)
    };
    if nc == 0 || nf % nc != 0 {
        return Err(AnchorError::mismatch(format!(
            "axis {d}: {} nodes do not align with {}",
            coarse.points, fine.points
        )));
    }
    Ok(nf / nc)
}

fn transfer_ratios(fine: &Grid, coarse: &Grid) -> Result<Vec<usize>> {
    if fine.dims() != coarse.dims() || fine.mask != coarse.mask {
        return Err(AnchorError::mismatch("dimensionality or mask differs"));
    }
    fine.axes
        .iter()
        .zip(&coarse.axes)
        .enumerate()
        .map(|(d, (f, c))| transfer_ratio(f, c, d))
        .collect()
}

/// Injection sampling onto a coarser, node-aligned grid.
pub fn restrict(f: &FieldState, coarse: &Arc<Grid>) -> Result<FieldState> {
    let ratios = transfer_ratios(&f.grid, coarse)?;
    let values = (0..coarse.len())
        .map(|idx| {
            let c = coarse.unravel(idx);
            let mut fine_ijk = [0usize; 3];
            for d in 0..coarse.dims() {
                fine_ijk[d] = c[d] * ratios[d];
            }
            f.values[f.grid.ravel(&fine_ijk[..coarse.dims()])]
        })
        .collect();
    FieldState::new(Arc::clone(coarse), values, f.time)
}

/// Interpolation onto a finer grid: trigonometric (Fourier zero padding) on
/// periodic axes, piecewise linear otherwise. Applied one axis at a time.
pub fn prolong(f: &FieldState, fine: &Arc<Grid>) -> Result<FieldState> {
    let ratios = transfer_ratios(fine, &f.grid)?;
    let mut shape = f.grid.shape();
    let mut data = f.values.clone();
    for d in 0..shape.len() {
        if ratios[d] == 1 {
            continue;
        }
        let n_out = fine.axes[d].points;
        data = if fine.axes[d].periodic {
            resample_axis(&data, &shape, d, n_out, spectral_interp_line)
        } else {
            resample_axis(&data, &shape, d, n_out, linear_interp_line)
        };
        shape[d] = n_out;
    }
    FieldState::new(Arc::clone(fine), data, f.time)
}

fn resample_axis(
    data: &[f64],
    shape: &[usize],
    axis: usize,
    n_out: usize,
    interp: impl Fn(&[f64], usize) -> Vec<f64>,
) -> Vec<f64> {
    let n_in = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; outer * n_out * inner];
    let mut line = vec![0.0; n_in];
    for o in 0..outer {
        for s in 0..inner {
            for (i, l) in line.iter_mut().enumerate() {
                *l = data[(o * n_in + i) * inner + s];
            }
            for (i, v) in interp(&line, n_out).into_iter().enumerate() {
                out[(o * n_out + i) * inner + s] = v;
            }
        }
    }
    out
}

fn linear_interp_line(line: &[f64], n_out: usize) -> Vec<f64> {
    let r = (n_out - 1) / (line.len() - 1);
    (0..n_out)
        .map(|i| {
            let (c, rem) = (i / r, i % r);
            if rem == 0 {
                line[c]
            } else {
                let w = rem as f64 / r as f64;
                (1.0 - w) * line[c] + w * line[c + 1]
            }
        })
        .collect()
}

fn spectral_interp_line(line: &[f64], n_out: usize) -> Vec<f64> {
    let n_in = line.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = line.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n_in).process(&mut buf);
    let mut padded = vec![Complex64::new(0.0, 0.0); n_out];
    let half = n_in / 2;
    for (j, &c) in buf.iter().enumerate() {
        if n_in % 2 == 0 && j == half {
            // Split the Nyquist coefficient so the interpolant stays real.
            padded[half] += 0.5 * c;
            padded[n_out - half] += 0.5 * c;
        } else if j <= half {
            padded[j] += c;
        } else {
            padded[n_out - (n_in - j)] += c;
        }
    }
    planner.plan_fft_inverse(n_out).process(&mut padded);
    let scale = 1.0 / n_in as f64;
    padded.iter().map(|c| c.re * scale).collect()
}
