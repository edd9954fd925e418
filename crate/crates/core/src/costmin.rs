//! Short-run cost minimization over the flexible inputs.
//!
//! The numeric solver works directly on the primal program and is used as the
//! oracle for the closed-form cost, unit-cost and marginal-cost functions.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Aggregate, Input, Technology, VariableInput};
use crate::solve::root_increasing;

const MAX_ITER: usize = 200;
const KKT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSolution {
    pub l_star: f64,
    pub m_star: f64,
    pub total_cost: f64,
    /// Constraint multiplier, i.e. marginal cost per unit of the target.
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimum cost of one unit of the variable aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C2Value {
    pub value: f64,
    pub p_l: f64,
    pub p_m: f64,
    pub k: f64,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be strictly positive and finite, got {x}")))
    }
}

/// Log-space constraint `g(x) = 0` with its gradient and Hessian in `x = log(L, M)`.
type LogConstraint<'a> = dyn Fn(f64, f64) -> (f64, [f64; 2], [[f64; 2]; 2]) + 'a;

/// Newton iteration on the KKT system of
/// `min pL e^x1 + pM e^x2  s.t.  g(x) = 0`, with multiplier `nu`.
fn newton_kkt(p: [f64; 2], x0: [f64; 2], g: &LogConstraint<'_>) -> Result<([f64; 2], f64, usize)> {
    let residual = |x: [f64; 2], nu: f64| -> (Vector3<f64>, [f64; 2], [[f64; 2]; 2]) {
        let (gv, grad, hess) = g(x[0], x[1]);
        let c = [p[0] * x[0].exp(), p[1] * x[1].exp()];
        (Vector3::new(c[0] - nu * grad[0], c[1] - nu * grad[1], gv), grad, hess)
    };
    let scale = |x: [f64; 2]| p[0] * x[0].exp() + p[1] * x[1].exp();

    let mut x = x0;
    // Multiplier estimate from the first-order conditions at the start point.
    let (_, grad0, _) = g(x[0], x[1]);
    let mut nu = scale(x) / (grad0[0] + grad0[1]).max(1e-12);
    let (mut r, mut grad, mut hess) = residual(x, nu);

    for it in 0..MAX_ITER {
        let rel = Vector3::new(r[0] / scale(x), r[1] / scale(x), r[2]).amax();
        if rel <= 1e-13 {
            return Ok((x, nu, it));
        }
        let c = [p[0] * x[0].exp(), p[1] * x[1].exp()];
        let j = Matrix3::new(
            c[0] - nu * hess[0][0],
            -nu * hess[0][1],
            -grad[0],
            -nu * hess[1][0],
            c[1] - nu * hess[1][1],
            -grad[1],
            grad[0],
            grad[1],
            0.0,
        );
        let step = match j.lu().solve(&(-r)) {
            Some(s) => s,
            None => return Err(Error::solver("singular KKT matrix", it, &[x[0], x[1], nu])),
        };
        // Backtrack on the residual norm, capping the log step.
        let cap = 2.0 / step.rows(0, 2).amax().max(2.0);
        let mut t = cap;
        let base = r.norm() / scale(x).max(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let xn = [x[0] + t * step[0], x[1] + t * step[1]];
            let nun = nu + t * step[2];
            let (rn, gn, hn) = residual(xn, nun);
            let norm = rn.norm() / scale(xn).max(1.0);
            if norm.is_finite() && (norm < (1.0 - 1e-4 * t) * base || norm < 1e-15) {
                x = xn;
                nu = nun;
                r = rn;
                grad = gn;
                hess = hn;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let rel = Vector3::new(r[0] / scale(x), r[1] / scale(x), r[2]).amax();
            if rel <= KKT_TOL {
                return Ok((x, nu, it));
            }
            return Err(Error::solver("line search failed", it, &[x[0], x[1], nu]));
        }
    }
    let rel = Vector3::new(r[0] / scale(x), r[1] / scale(x), r[2]).amax();
    if rel <= KKT_TOL {
        Ok((x, nu, MAX_ITER))
    } else {
        Err(Error::solver(format!("KKT residual {rel:e} above tolerance"), MAX_ITER, &[x[0], x[1], nu]))
    }
}

/// Globalized solve: the log input ratio `t = x1 - x2` is found by bracketing
/// the zero of the cost derivative along the constraint surface (each point of
/// which is reached by a monotone search along the ray `x + s (1, 1)`), then a
/// few Newton-KKT steps polish the solution and supply the multiplier.
///
/// Plain Newton from an arbitrary start can drift toward a corner where the
/// KKT residual vanishes only asymptotically, so it is not used alone.
fn solve_program(p: [f64; 2], start: f64, g: &LogConstraint<'_>) -> Result<([f64; 2], f64, usize)> {
    let evals = std::cell::Cell::new(0usize);
    let on_surface = |t: f64| -> Result<[f64; 2]> {
        let s = root_increasing(
            |s| {
                evals.set(evals.get() + 1);
                g(0.5 * t + s, -0.5 * t + s).0
            },
            start,
            1e-14,
        )?;
        Ok([0.5 * t + s, -0.5 * t + s])
    };
    // d cost / dt along the surface, using ds/dt = -(g1 - g2) / (2 (g1 + g2)).
    let slope = |t: f64| -> f64 {
        match on_surface(t) {
            Ok(x) => {
                let (_, gr, _) = g(x[0], x[1]);
                let ds = -0.5 * (gr[0] - gr[1]) / (gr[0] + gr[1]);
                let c = [p[0] * x[0].exp(), p[1] * x[1].exp()];
                (c[0] * (0.5 + ds) + c[1] * (-0.5 + ds)) / (c[0] + c[1])
            }
            Err(_) => f64::NAN,
        }
    };
    let t0 = (p[1] / p[0]).ln();
    let t = root_increasing(slope, t0, 1e-13)?;
    let x = on_surface(t)?;
    let (x, nu, it) = newton_kkt(p, x, g)?;
    Ok((x, nu, it + evals.get()))
}

/// Solves `min pL L + pM M  s.t.  F(K, h(L, M)) >= target` numerically.
///
/// `target` is in units of `F`, i.e. planned output divided by `exp(omega)`.
/// `lambda` is `dC/dtarget`.
pub fn cost_min_numeric(tech: &Technology, k: f64, p_l: f64, p_m: f64, target: f64) -> Result<CostSolution> {
    tech.validate()?;
    positive("K", k)?;
    positive("pL", p_l)?;
    positive("pM", p_m)?;
    positive("target", target)?;
    let agg = tech.aggregate();
    let h_req = tech.outer_inverse(k, target)?;
    let start = (h_req / agg.value(1.0, 1.0)).ln();
    let log_target = target.ln();
    let g = move |x1: f64, x2: f64| {
        let (l, m) = (x1.exp(), x2.exp());
        let gv = tech.output(k, l, m).ln() - log_target;
        let grad = [tech.elasticity(Input::L, k, l, m), tech.elasticity(Input::M, k, l, m)];
        (gv, grad, tech.log_hessian_variable(k, l, m))
    };
    let (x, nu, iterations) = solve_program([p_l, p_m], start, &g)?;
    let (l, m) = (x[0].exp(), x[1].exp());
    Ok(CostSolution {
        l_star: l,
        m_star: m,
        total_cost: p_l * l + p_m * m,
        lambda: nu / target,
        converged: true,
        iterations,
    })
}

/// Numeric solution of `min pL L + pM M  s.t.  h(L, M) >= 1`.
pub fn c2_numeric(tech: &Technology, p_l: f64, p_m: f64) -> Result<f64> {
    tech.validate()?;
    positive("pL", p_l)?;
    positive("pM", p_m)?;
    let agg = tech.aggregate();
    let g = move |x1: f64, x2: f64| {
        let (l, m) = (x1.exp(), x2.exp());
        let h = agg.value(l, m);
        let wl = agg.partial_log(VariableInput::L, l, m) / h;
        let wm = agg.partial_log(VariableInput::M, l, m) / h;
        let hess = match agg {
            Aggregate::CobbDouglas { .. } => [[0.0; 2]; 2],
            Aggregate::Ces { sigma, .. } => {
                [[sigma * wl * (1.0 - wl), -sigma * wl * wm], [-sigma * wm * wl, sigma * wm * (1.0 - wm)]]
            }
        };
        (h.ln(), [wl, wm], hess)
    };
    let start = -agg.value(1.0, 1.0).ln();
    let (x, _, _) = solve_program([p_l, p_m], start, &g)?;
    Ok(p_l * x[0].exp() + p_m * x[1].exp())
}

/// Closed-form unit cost of the variable aggregate.
pub fn c2_min(tech: &Technology, k: f64, p_l: f64, p_m: f64) -> Result<C2Value> {
    tech.validate()?;
    positive("K", k)?;
    positive("pL", p_l)?;
    positive("pM", p_m)?;
    Ok(C2Value { value: tech.aggregate().unit_cost(p_l, p_m), p_l, p_m, k })
}

/// Closed-form minimum cost of producing `target / exp(omega)` units of `F`.
///
/// Cobb-Douglas: `(y / K^bK)^(1/s) * C2` with `s = bL + bM`.
/// CES: `(y^(sigma/v) - bK K^sigma)^(1/sigma) * B^((sigma-1)/sigma)`.
pub fn cost_closed_form(tech: &Technology, k: f64, p_l: f64, p_m: f64, target: f64, omega: f64) -> Result<f64> {
    tech.validate()?;
    positive("K", k)?;
    positive("pL", p_l)?;
    positive("pM", p_m)?;
    positive("target", target)?;
    let y = target / omega.exp();
    let c2 = tech.aggregate().unit_cost(p_l, p_m);
    let h = match *tech {
        Technology::Cd(p) => (y / k.powf(p.beta_k)).powf(1.0 / p.short_run_scale()),
        Technology::Ces(p) => {
            let inner = y.powf(p.sigma / p.v) - p.beta_k() * k.powf(p.sigma);
            if !(inner > 0.0) {
                return Err(Error::domain(format!("target {y} is not attainable by varying L and M at K = {k}")));
            }
            inner.powf(1.0 / p.sigma)
        }
    };
    Ok(h * c2)
}

/// `|C_numeric - F^-1(K, target / exp(omega)) * C2| / C_numeric`.
pub fn factorization_check(tech: &Technology, k: f64, p_l: f64, p_m: f64, target: f64, omega: f64) -> Result<f64> {
    let y = target / omega.exp();
    let sol = cost_min_numeric(tech, k, p_l, p_m, y)?;
    let h = tech.outer_inverse(k, y)?;
    let c2 = c2_min(tech, k, p_l, p_m)?.value;
    Ok((sol.total_cost - h * c2).abs() / sol.total_cost)
}

/// `C2 / (dF/dh * exp(omega) * calE)` evaluated at the observed inputs.
#[allow(clippy::too_many_arguments)]
pub fn marginal_cost_closed_form(
    tech: &Technology,
    k: f64,
    l: f64,
    m: f64,
    p_l: f64,
    p_m: f64,
    omega: f64,
    cal_e: f64,
) -> Result<f64> {
    tech.validate()?;
    for (n, x) in [("K", k), ("L", l), ("M", m), ("pL", p_l), ("pM", p_m), ("calE", cal_e)] {
        positive(n, x)?;
    }
    let agg = tech.aggregate();
    let h = agg.value(l, m);
    Ok(agg.unit_cost(p_l, p_m) / (tech.outer_dh(k, h) * omega.exp() * cal_e))
}

/// Input price implied by the first-order condition, `C2 * dh/dV / calE`.
#[allow(clippy::too_many_arguments)]
pub fn foc_input_price(
    tech: &Technology,
    k: f64,
    l: f64,
    m: f64,
    p_l: f64,
    p_m: f64,
    cal_e: f64,
    which: VariableInput,
) -> Result<f64> {
    tech.validate()?;
    for (n, x) in [("K", k), ("L", l), ("M", m), ("pL", p_l), ("pM", p_m), ("calE", cal_e)] {
        positive(n, x)?;
    }
    let agg = tech.aggregate();
    Ok(agg.unit_cost(p_l, p_m) * agg.partial(which, l, m) / cal_e)
}
