use std::time::Instant;

use crate::error::{AnchorError, Result};
use crate::grid::{check_same_grid, norm_l2, FieldState};

/// `‖truth - pred‖ / ‖truth‖`, with 0/0 taken as 0.
pub fn relative_l2(truth: &FieldState, pred: &FieldState) -> Result<f64> {
    check_same_grid(truth, pred)?;
    let diff = norm_l2(&truth.sub(pred)?)?;
    let base = norm_l2(truth)?;
    if base == 0.0 {
        return if diff == 0.0 { Ok(0.0) } else { Err(AnchorError::DegenerateReference) };
    }
    Ok(diff / base)
}

/// Per-step relative error of `pred` against `truth`, aligned by index.
pub fn error_series(truth: &[FieldState], pred: &[FieldState]) -> Result<Vec<f64>> {
    if truth.len() != pred.len() {
        return Err(AnchorError::mismatch(format!("{} reference vs {} predicted snapshots", truth.len(), pred.len())));
    }
    truth.iter().zip(pred).map(|(t, p)| relative_l2(t, p)).collect()
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AnchorError::UndefinedCorrelation("series must have equal length of at least 2"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(AnchorError::UndefinedCorrelation("non-finite series"));
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnchorError::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Runs `thunk` and returns its result with elapsed wall-clock seconds.
pub fn time_block<T>(label: &str, thunk: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = thunk();
    let secs = start.elapsed().as_secs_f64();
    log::debug!("{label}: {secs:.6} s");
    (out, secs)
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 0 { 0.5 * (v[m - 1] + v[m]) } else { v[m] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use std::sync::Arc;

    fn field(v: &[f64]) -> FieldState {
        FieldState::new(Arc::new(Grid::periodic(&[v.len()]).unwrap()), v.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn relative_l2_examples() {
        assert_eq!(relative_l2(&field(&[3.0, 4.0]), &field(&[3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(relative_l2(&field(&[3.0, 4.0]), &field(&[0.0, 0.0])).unwrap(), 1.0);
        assert!((relative_l2(&field(&[1.0, 0.0]), &field(&[1.0, 0.1])).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(relative_l2(&field(&[0.0, 0.0]), &field(&[0.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            relative_l2(&field(&[0.0, 0.0]), &field(&[0.0, 1.0])),
            Err(AnchorError::DegenerateReference)
        ));
    }

    #[test]
    fn pearson_examples() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn timing_is_non_negative() {
        let (v, s) = time_block("noop", || 7);
        assert_eq!(v, 7);
        assert!(s >= 0.0);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
