//! Small scalar solvers shared by the model and the simulator.

use roots::{find_root_brent, SimpleConvergency};

use crate::error::{Error, Result};

const MAX_EXPANSIONS: usize = 200;

/// Finds `x` with `f(x) = 0` for a continuous, increasing `f`, starting from
/// the guess `x0`. The bracket is grown geometrically until the sign changes,
/// then refined with Brent's method to `tol` in both `x` and `f(x)`.
pub fn root_increasing<F>(mut f: F, x0: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let f0 = f(x0);
    if !f0.is_finite() {
        return Err(Error::solver("objective not finite at initial guess", 0, &[x0]));
    }
    if f0 == 0.0 {
        return Ok(x0);
    }
    // Walk in the direction that brings f toward zero.
    let dir = if f0 > 0.0 { -1.0 } else { 1.0 };
    let mut step = 1.0;
    let mut inner = x0;
    let mut outer = x0 + dir * step;
    let mut expansions = 0;
    loop {
        let fo = f(outer);
        if fo.is_finite() && fo.signum() != f0.signum() {
            break;
        }
        if !fo.is_finite() {
            // Step overshot into an infeasible region; shrink toward the last good point.
            step *= 0.5;
            outer = inner + dir * step;
        } else {
            inner = outer;
            step *= 2.0;
            outer = inner + dir * step;
        }
        expansions += 1;
        if expansions > MAX_EXPANSIONS || step < 1e-300 {
            return Err(Error::solver("could not bracket root", expansions, &[inner, outer]));
        }
    }
    let (a, b) = if inner < outer { (inner, outer) } else { (outer, inner) };
    let mut conv = SimpleConvergency { eps: tol, max_iter: 500 };
    find_root_brent(a, b, &mut f, &mut conv).map_err(|e| Error::solver(format!("brent: {e:?}"), conv.max_iter, &[a, b]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_cube_root() {
        let x = root_increasing(|x| x * x * x - 27.0, 0.0, 1e-13).unwrap();
        assert!((x - 3.0).abs() < 1e-10);
    }

    #[test]
    fn expands_bracket_far_away() {
        let x = root_increasing(|x| x - 1e6, 0.0, 1e-9).unwrap();
        assert!((x - 1e6).abs() < 1e-6);
    }

    #[test]
    fn reports_missing_root() {
        let err = root_increasing(|x: f64| x.atan() - 10.0, 0.0, 1e-12).unwrap_err();
        assert!(matches!(err, Error::Solver { .. }));
    }
}
