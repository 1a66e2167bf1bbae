//! Fourth-order exponential time differencing Runge-Kutta coefficients,
//! evaluated by contour averaging around each `L̂·dt` to avoid the
//! cancellation of the closed-form φ-functions near zero.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::error::{AnchorError, Result};
use crate::pde::SplitOperator;

#[derive(Clone, Debug)]
pub struct Etdrk4Coefficients {
    pub dt: f64,
    pub e: Vec<f64>,
    pub e2: Vec<f64>,
    pub q: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub f3: Vec<f64>,
}

/// Coefficients for a single mode with `z = L̂·dt`, returned in the order
/// `(e, e2, q, f1, f2, f3)`. `q` and `f*` carry the factor `dt`.
pub fn mode_coefficients(z: f64, dt: f64, contour_points: usize) -> [f64; 6] {
    let m = contour_points as f64;
    let (mut q, mut f1, mut f2, mut f3) = (Complex64::default(), Complex64::default(), Complex64::default(), Complex64::default());
    for j in 0..contour_points {
        let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m;
        let lr = Complex64::new(z, 0.0) + Complex64::from_polar(1.0, theta);
        let ex = lr.exp();
        let lr3 = lr * lr * lr;
        q += ((lr * 0.5).exp() - 1.0) / lr;
        f1 += (-4.0 - lr + ex * (4.0 - 3.0 * lr + lr * lr)) / lr3;
        f2 += (2.0 + lr + ex * (lr - 2.0)) / lr3;
        f3 += (-4.0 - 3.0 * lr - lr * lr + ex * (4.0 - lr)) / lr3;
    }
    [
        z.exp(),
        (0.5 * z).exp(),
        dt * q.re / m,
        dt * f1.re / m,
        dt * f2.re / m,
        dt * f3.re / m,
    ]
}

impl Etdrk4Coefficients {
    pub fn from_symbol(symbol: &[f64], dt: f64, contour_points: usize) -> Result<Self> {
        if !(dt > 0.0) || contour_points < 16 {
            return Err(AnchorError::InvalidConfig(format!(
                "ETDRK4 needs dt > 0 and at least 16 contour points (dt = {dt}, M = {contour_points})"
            )));
        }
        let n = symbol.len();
        let mut c = Etdrk4Coefficients {
            dt,
            e: Vec::with_capacity(n),
            e2: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
            f1: Vec::with_capacity(n),
            f2: Vec::with_capacity(n),
            f3: Vec::with_capacity(n),
        };
        // Many modes share |k|; evaluate each distinct L̂ once.
        let mut seen: HashMap<u64, [f64; 6]> = HashMap::new();
        for &l in symbol {
            let z = l * dt;
            let v = *seen.entry(z.to_bits()).or_insert_with(|| mode_coefficients(z, dt, contour_points));
            if v.iter().any(|x| !x.is_finite()) {
                return Err(AnchorError::CoefficientOverflow(z));
            }
            c.e.push(v[0]);
            c.e2.push(v[1]);
            c.q.push(v[2]);
            c.f1.push(v[3]);
            c.f2.push(v[4]);
            c.f3.push(v[5]);
        }
        Ok(c)
    }
}

fn contour_mean(z: f64, contour_points: usize, f: impl Fn(Complex64) -> Complex64) -> f64 {
    let m = contour_points as f64;
    let mut acc = Complex64::default();
    for j in 0..contour_points {
        let theta = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m;
        acc += f(Complex64::new(z, 0.0) + Complex64::from_polar(1.0, theta));
    }
    acc.re / m
}

/// `dt·φ₁(z) = dt·(eᶻ − 1)/z` by the same contour average.
pub fn phi1(z: f64, dt: f64, contour_points: usize) -> f64 {
    dt * contour_mean(z, contour_points, |lr| (lr.exp() - 1.0) / lr)
}

/// `dt·φ₂(z) = dt·(eᶻ − 1 − z)/z²`.
pub fn phi2(z: f64, dt: f64, contour_points: usize) -> f64 {
    dt * contour_mean(z, contour_points, |lr| (lr.exp() - 1.0 - lr) / (lr * lr))
}

pub fn etdrk4_precompute(split: &SplitOperator, dt: f64, contour_points: usize) -> Result<Etdrk4Coefficients> {
    Etdrk4Coefficients::from_symbol(split.linear_symbol(), dt, contour_points)
}

/// One ETDRK4 step of `v̂' = L̂ v̂ + N̂(v̂)` in Fourier space.
pub fn etdrk4_step(
    v: &[Complex64],
    c: &Etdrk4Coefficients,
    nonlinear: impl Fn(&[Complex64]) -> Vec<Complex64>,
) -> Vec<Complex64> {
    let n = v.len();
    let nv = nonlinear(v);
    let a: Vec<Complex64> = (0..n).map(|i| c.e2[i] * v[i] + c.q[i] * nv[i]).collect();
    let na = nonlinear(&a);
    let b: Vec<Complex64> = (0..n).map(|i| c.e2[i] * v[i] + c.q[i] * na[i]).collect();
    let nb = nonlinear(&b);
    let cc: Vec<Complex64> = (0..n).map(|i| c.e2[i] * a[i] + c.q[i] * (2.0 * nb[i] - nv[i])).collect();
    let nc = nonlinear(&cc);
    (0..n)
        .map(|i| {
            c.e[i] * v[i] + c.f1[i] * nv[i] + 2.0 * c.f2[i] * (na[i] + nb[i]) + c.f3[i] * nc[i]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Taylor series of the φ-type combinations, independent of the contour.
    fn series_oracle(z: f64) -> [f64; 4] {
        let mut fact = vec![1.0f64; 80];
        for i in 1..80 {
            fact[i] = fact[i - 1] * i as f64;
        }
        let mut q = 0.0;
        let (mut f1, mut f2, mut f3) = (0.0, 0.0, 0.0);
        for n in 1..70 {
            // (e^{z/2} - 1)/z = Σ_{n≥1} z^{n-1} / (2^n n!)
            q += z.powi(n as i32 - 1) / (2f64.powi(n as i32) * fact[n]);
        }
        for n in 3..70 {
            let p = z.powi(n as i32 - 3);
            f1 += p * (4.0 / fact[n] - 3.0 / fact[n - 1] + 1.0 / fact[n - 2]);
            f2 += p * (-2.0 / fact[n] + 1.0 / fact[n - 1]);
            f3 += p * (4.0 / fact[n] - 1.0 / fact[n - 1]);
        }
        [q, f1, f2, f3]
    }

    #[test]
    fn zero_symbol_reduces_to_rk4_weights() {
        let c = mode_coefficients(0.0, 1.0, 32);
        assert_eq!(c[0], 1.0);
        assert_eq!(c[1], 1.0);
        assert!((c[2] - 0.5).abs() < 1e-14);
        for f in &c[3..] {
            assert!((f - 1.0 / 6.0).abs() < 1e-14);
        }
        assert!((c[3] + 2.0 * c[4] + c[5] - 4.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn unit_decay_exponential() {
        let c = Etdrk4Coefficients::from_symbol(&[-1.0], 1.0, 32).unwrap();
        assert!((c.e[0] - (-1.0f64).exp()).abs() < 1e-10);
        assert!((c.e[0] - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn contour_matches_series_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let z: f64 = -rng.random::<f64>() * 4.0;
            let c = mode_coefficients(z, 1.0, 32);
            let s = series_oracle(z);
            for (a, b) in c[2..].iter().zip(&s) {
                assert!((a - b).abs() < 1e-9, "z={z}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn overflow_is_reported() {
        let r = Etdrk4Coefficients::from_symbol(&[1e6], 1.0, 32);
        assert!(matches!(r, Err(AnchorError::CoefficientOverflow(_))));
        assert!(Etdrk4Coefficients::from_symbol(&[-1.0], 1.0, 8).is_err());
    }
}
