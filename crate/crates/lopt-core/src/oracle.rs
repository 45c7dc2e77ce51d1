//! Brute-force and closed-form oracles.
//!
//! These functions referee the main implementation: `finite_diff` checks
//! every backward pass, `grid_minimize` locates global minima of the rugged
//! test models. They operate on plain closures over `&[f64]` and share no
//! code with the tape adjoints.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// Central-difference gradient estimate of `fn` at `point`.
///
/// Errors if any sampled value is non-finite.
pub fn finite_diff(
    f: impl Fn(&[f64]) -> f64,
    point: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let hi = f(&probe);
        probe[i] = point[i] - step;
        let lo = f(&probe);
        probe[i] = point[i];
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Oracle(format!(
                "non-finite sample near coordinate {i}: f+ = {hi}, f- = {lo}"
            )));
        }
        grad.push((hi - lo) / (2.0 * step));
    }
    Ok(grad)
}

/// Default finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Relative error between an analytic gradient and its finite-difference
/// estimate, using max(1, |a|, |b|) scaling per coordinate.
pub fn max_relative_error(analytic: &[f64], estimate: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs())))
        .fold(0.0, f64::max)
}

/// Result of an exhaustive grid search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub argmin: Vec<f64>,
    pub value: f64,
}

/// Exhaustive minimization of `f` over a uniform grid on the given box,
/// `resolution` points per axis. Ties break toward the lexicographically
/// smallest point. Evaluation is parallel over the leading axis; the
/// reduction is serial, so the result is independent of thread count.
pub fn grid_minimize(
    f: impl Fn(&[f64]) -> f64 + Sync,
    bounds: &[(f64, f64)],
    resolution: usize,
) -> Result<GridMinimum> {
    if resolution < 11 {
        return Err(Error::invalid(format!(
            "grid_minimize resolution must be >= 11, got {resolution}"
        )));
    }
    if bounds.is_empty() {
        return Err(Error::invalid("grid_minimize needs at least one dimension"));
    }
    for (i, (lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) {
            return Err(Error::invalid(format!(
                "grid_minimize bounds[{i}] must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
    }

    let dim = bounds.len();
    let axis = |d: usize, idx: usize| -> f64 {
        let (lo, hi) = bounds[d];
        lo + (hi - lo) * idx as f64 / (resolution - 1) as f64
    };
    let tail_count = resolution.pow((dim - 1) as u32);

    // One candidate per leading-axis slice, then a serial reduce.
    let per_slice: Vec<(Vec<f64>, f64)> = (0..resolution)
        .into_par_iter()
        .map(|i0| {
            let mut best_point = Vec::new();
            let mut best_value = f64::INFINITY;
            let mut point = vec![0.0; dim];
            point[0] = axis(0, i0);
            for flat in 0..tail_count {
                let mut rest = flat;
                for d in (1..dim).rev() {
                    point[d] = axis(d, rest % resolution);
                    rest /= resolution;
                }
                let v = f(&point);
                if v < best_value || (v == best_value && lex_less(&point, &best_point)) {
                    best_value = v;
                    best_point = point.clone();
                }
            }
            (best_point, best_value)
        })
        .collect();

    let mut best: Option<GridMinimum> = None;
    for (point, value) in per_slice {
        let better = match &best {
            None => true,
            Some(b) => value < b.value || (value == b.value && lex_less(&point, &b.argmin)),
        };
        if better {
            best = Some(GridMinimum { argmin: point, value });
        }
    }
    best.ok_or_else(|| Error::Oracle("empty grid".into()))
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    if b.is_empty() {
        return true;
    }
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// One minted oracle result: inputs, expected values, and the tolerance the
/// consuming test must use. Written once into a fixture file; tests load and
/// assert, never silently regenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRecord {
    pub name: String,
    pub seed: u64,
    pub dims: Vec<usize>,
    pub expected: Vec<(String, Vec<f64>)>,
    pub tolerance: f64,
    pub created: String,
}

impl OracleRecord {
    pub fn expected_values(&self, key: &str) -> Result<&[f64]> {
        self.expected
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("oracle record {} has no entry {key}", self.name)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_linear() {
        let a = [2.0, -3.0, 0.5];
        let f = |x: &[f64]| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
        let g = finite_diff(f, &[0.1, 0.2, 0.3], FD_STEP).unwrap();
        for (gi, ai) in g.iter().zip(&a) {
            assert!((gi - ai).abs() < 1e-9, "{gi} vs {ai}");
        }
    }

    #[test]
    fn finite_diff_quadratic() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum();
        let point = [1.5, -2.5];
        let g = finite_diff(f, &point, FD_STEP).unwrap();
        for (gi, xi) in g.iter().zip(&point) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
    }

    #[test]
    fn finite_diff_rejects_non_finite() {
        let f = |x: &[f64]| x[0].ln();
        assert!(finite_diff(f, &[0.0], 1e-5).is_err());
    }

    #[test]
    fn grid_finds_convex_minimum() {
        let f = |p: &[f64]| p.iter().map(|v| v * v).sum();
        let m = grid_minimize(f, &[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        assert_eq!(m.argmin, vec![0.0, 0.0]);
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn grid_snaps_off_grid_optimum_to_nearest_vertex() {
        let f = |p: &[f64]| {
            (p[0] - 0.5) * (p[0] - 0.5) + (p[1] - 0.5) * (p[1] - 0.5)
        };
        let m = grid_minimize(f, &[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        // 21 points over [-1,1] step 0.1: both 0.5 exactly on-grid
        assert!((m.argmin[0] - 0.5).abs() < 1e-12);
        assert!((m.argmin[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn grid_tie_breaks_lexicographically() {
        // symmetric double well: minima at x = -1 and x = 1
        let f = |p: &[f64]| (p[0] * p[0] - 1.0) * (p[0] * p[0] - 1.0);
        let m = grid_minimize(f, &[(-2.0, 2.0)], 41).unwrap();
        assert_eq!(m.argmin, vec![-1.0]);
    }

    #[test]
    fn grid_rejects_low_resolution() {
        let f = |p: &[f64]| p[0];
        assert!(grid_minimize(f, &[(0.0, 1.0)], 5).is_err());
    }
}
