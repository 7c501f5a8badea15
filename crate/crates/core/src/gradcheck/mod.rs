//! Finite-difference machinery for checking analytic gradients.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of the backward code it is used to check.

mod suite;

pub use suite::{run_suite, Precision, SuiteConfig, SuiteEntry};

use serde::Serialize;

/// Fourth-order central differences of `f` at `x`, one coordinate at a time:
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`, exact for quartics.
pub fn central_differences(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            let mut eval = |offset: f64| {
                probe[i] = orig + offset;
                f(&probe)
            };
            let near = eval(step) - eval(-step);
            let far = eval(2.0 * step) - eval(-2.0 * step);
            probe[i] = orig;
            (8.0 * near - far) / (12.0 * step)
        })
        .collect()
}

/// Outcome of comparing one block of analytic gradients with numeric ones.
#[derive(Clone, Debug, Serialize)]
pub struct BlockReport {
    pub name: String,
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

impl BlockReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err <= tolerance
    }
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares a block coordinate by coordinate. Coordinates whose magnitude is
/// far below the block's largest numeric gradient are measured against
/// `floor_fraction * max|numeric|` instead of their own size, so rounding
/// noise on near-zero entries does not dominate.
pub fn compare_block(name: &str, analytic: &[f64], numeric: &[f64], floor_fraction: f64) -> BlockReport {
    assert_eq!(analytic.len(), numeric.len(), "gradient block length mismatch");
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (floor_fraction * scale).max(f64::MIN_POSITIVE);
    let mut report = BlockReport {
        name: name.to_string(),
        coords: analytic.len(),
        max_rel_err: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n, floor);
        if e > report.max_rel_err || !e.is_finite() {
            report.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
            report.worst_index = i;
            report.worst_analytic = a;
            report.worst_numeric = n;
        }
    }
    report
}

/// Finite-difference check of one block of coordinates that tolerates kinks
/// (ReLU-like activations, absolute values).
///
/// Relative errors are floored at `floor_fraction * scale`; pass the largest
/// gradient magnitude of the whole problem as `scale` so that blocks with
/// uniformly tiny gradients are judged against the finite-difference noise
/// level rather than their own size. A `scale` of zero uses the block maximum.
///
/// Numeric gradients are taken with the first step. A coordinate that misses
/// the tolerance is re-estimated with each further step and judged by its best
/// agreement: a wrong analytic gradient disagrees at every step size, while a
/// kink inside the stencil only spoils the larger ones.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub steps: Vec<f64>,
    pub floor_fraction: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn check(
        &self,
        name: &str,
        mut f: impl FnMut(&[f64]) -> f64,
        x: &[f64],
        analytic: &[f64],
        scale: f64,
    ) -> BlockReport {
        let (&first, retries) = self.steps.split_first().expect("at least one step");
        let mut numeric = central_differences(&mut f, x, first);
        let scale = if scale > 0.0 {
            scale
        } else {
            numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let floor = (self.floor_fraction * scale).max(f64::MIN_POSITIVE);
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            for &step in retries {
                if relative_error(analytic[i], numeric[i], floor) <= self.tolerance {
                    break;
                }
                let single = central_differences(
                    |v| {
                        probe[i] = v[0];
                        let r = f(&probe);
                        probe[i] = x[i];
                        r
                    },
                    &x[i..=i],
                    step,
                )[0];
                if relative_error(analytic[i], single, floor) < relative_error(analytic[i], numeric[i], floor) {
                    numeric[i] = single;
                }
            }
        }
        let mut report = compare_block(name, analytic, &numeric, 0.0);
        report.max_rel_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n, floor))
            .fold(0.0, f64::max);
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differences_of_a_quartic_are_exact() {
        let g = central_differences(|x| x[0].powi(4) + 3.0 * x[0] * x[1], &[2.0, -1.0], 1e-2);
        assert!((g[0] - 29.0).abs() < 1e-9);
        assert!((g[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn kink_inside_the_stencil_is_retried_with_smaller_steps() {
        // |x| at x = 1e-5: the 1e-4 stencil straddles the kink.
        let check = GradCheck {
            steps: vec![1e-4, 1e-7],
            floor_fraction: 0.0,
            tolerance: 1e-6,
        };
        let r = check.check("abs", |x| x[0].abs(), &[1e-5], &[1.0], 0.0);
        assert!(r.passes(1e-6), "{r:?}");
        let wrong = check.check("abs", |x| x[0].abs(), &[1e-5], &[0.5], 0.0);
        assert!(!wrong.passes(1e-3));
    }

    #[test]
    fn floor_tames_tiny_coordinates() {
        let r = compare_block("b", &[1.0, 1e-9], &[1.0, 2e-9], 1e-3);
        assert!(r.max_rel_err < 1e-5);
        let r = compare_block("b", &[1.0, 0.5], &[1.0, 0.6], 1e-3);
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_err - 0.1 / 0.6).abs() < 1e-12);
    }
}
