//! Multi-dimensional FFTs over row-major lattices and the wavenumber tables
//! used by the pseudospectral operators.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

pub struct Spectral {
    shape: Vec<usize>,
    len: usize,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

static PLANS: OnceLock<Mutex<HashMap<Vec<usize>, Arc<Spectral>>>> = OnceLock::new();

impl Spectral {
    /// Shared plan for a lattice shape.
    pub fn for_shape(shape: &[usize]) -> Arc<Spectral> {
        let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
        let mut cache = cache.lock().expect("spectral plan cache poisoned");
        Arc::clone(cache.entry(shape.to_vec()).or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(Spectral {
                shape: shape.to_vec(),
                len: shape.iter().product(),
                forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
                inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
            })
        }))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform in place, scaled by `1 / len`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inverse);
        let s = 1.0 / self.len as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform returning the real part.
    pub fn inverse_real(&self, mut spectrum: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spectrum);
        spectrum.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len);
        let dims = self.shape.len();
        for (axis, fft) in plans.iter().enumerate() {
            let n = self.shape[axis];
            if n == 1 {
                continue;
            }
            let inner: usize = self.shape[axis + 1..].iter().product();
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            if axis + 1 == dims {
                fft.process_with_scratch(data, &mut scratch);
                continue;
            }
            let outer = self.len / (n * inner);
            let mut line = vec![Complex64::new(0.0, 0.0); n * inner];
            for o in 0..outer {
                let block = &mut data[o * n * inner..(o + 1) * n * inner];
                // Transpose the (n, inner) block so each line is contiguous.
                for i in 0..n {
                    for s in 0..inner {
                        line[s * n + i] = block[i * inner + s];
                    }
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for i in 0..n {
                    for s in 0..inner {
                        block[i * inner + s] = line[s * n + i];
                    }
                }
            }
        }
    }
}

/// Signed integer frequency of DFT index `j` for length `n`. The Nyquist
/// index of an even length maps to `+n/2`.
pub fn frequency(j: usize, n: usize) -> i64 {
    if 2 * j <= n {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

pub fn is_nyquist(j: usize, n: usize) -> bool {
    n % 2 == 0 && 2 * j == n
}

/// Wavenumber tables for a periodic grid.
#[derive(Clone)]
pub struct Wavenumbers {
    /// Physical wavenumber 2πf/L per axis, zero at Nyquist (odd derivatives).
    pub k: Vec<[f64; 3]>,
    /// |k|² including the Nyquist modes.
    pub k2: Vec<f64>,
    /// 2/3-rule retention mask.
    pub keep: Vec<bool>,
    /// Integer frequencies per axis.
    pub freq: Vec<[i64; 3]>,
}

impl Wavenumbers {
    pub fn new(grid: &Grid) -> Self {
        let shape = grid.shape();
        let n = grid.len();
        let mut k = Vec::with_capacity(n);
        let mut k2 = Vec::with_capacity(n);
        let mut keep = Vec::with_capacity(n);
        let mut freq = Vec::with_capacity(n);
        for idx in 0..n {
            let ijk = grid.unravel(idx);
            let mut kv = [0.0; 3];
            let mut fv = [0i64; 3];
            let mut ksq = 0.0;
            let mut retained = true;
            for (d, axis) in grid.axes().iter().enumerate() {
                let f = frequency(ijk[d], shape[d]);
                let kw = 2.0 * std::f64::consts::PI * f as f64 / axis.extent();
                ksq += kw * kw;
                kv[d] = if is_nyquist(ijk[d], shape[d]) { 0.0 } else { kw };
                fv[d] = f;
                retained &= 3 * f.unsigned_abs() < shape[d] as u64;
            }
            k.push(kv);
            k2.push(ksq);
            keep.push(retained);
            freq.push(fv);
        }
        Wavenumbers { k, k2, keep, freq }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequencies_follow_dft_ordering() {
        assert_eq!((0..5).map(|j| frequency(j, 5)).collect::<Vec<_>>(), vec![0, 1, 2, -2, -1]);
        assert_eq!((0..4).map(|j| frequency(j, 4)).collect::<Vec<_>>(), vec![0, 1, 2, -1]);
        assert!(is_nyquist(2, 4) && !is_nyquist(2, 5));
    }

    #[test]
    fn nd_roundtrip_matches_naive_dft() {
        let shape = [3, 4, 5];
        let s = Spectral::for_shape(&shape);
        let n: usize = shape.iter().product();
        let data: Vec<Complex64> = (0..n).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut fast = data.clone();
        s.forward(&mut fast);
        // Naive separable DFT oracle.
        let mut naive = vec![Complex64::new(0.0, 0.0); n];
        for (out, slot) in naive.iter_mut().enumerate() {
            let o = [out / 20, (out / 5) % 4, out % 5];
            for (inp, &v) in data.iter().enumerate() {
                let i = [inp / 20, (inp / 5) % 4, inp % 5];
                let phase: f64 = (0..3)
                    .map(|d| -2.0 * std::f64::consts::PI * (o[d] * i[d]) as f64 / shape[d] as f64)
                    .sum();
                *slot += v * Complex64::from_polar(1.0, phase);
            }
        }
        for (a, b) in fast.iter().zip(&naive) {
            assert!((a - b).norm() < 1e-10);
        }
        s.inverse(&mut fast);
        for (a, b) in fast.iter().zip(&data) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn dealias_keeps_lower_two_thirds() {
        let g = Grid::periodic(&[12]).unwrap();
        let w = Wavenumbers::new(&g);
        let kept: Vec<i64> = w.freq.iter().zip(&w.keep).filter(|(_, &k)| k).map(|(f, _)| f[0]).collect();
        assert_eq!(kept, vec![0, 1, 2, 3, -3, -2, -1]);
    }
}
