//! Parametric technologies and the revenue-side objects built from them.
//!
//! A technology is stored in weakly separable form `Q = F(K, h(L, M))` with the
//! variable-input aggregate `h` normalized to be homogeneous of degree one.
//! The returns-to-scale information (and the capital coefficient) lives in the
//! outer function `F`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solve::root_increasing;

/// Cobb-Douglas exponents `K^beta_k L^beta_l M^beta_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdParams {
    pub beta_k: f64,
    pub beta_l: f64,
    pub beta_m: f64,
}

impl CdParams {
    pub fn new(beta_k: f64, beta_l: f64, beta_m: f64) -> Result<Self> {
        let p = CdParams { beta_k, beta_l, beta_m };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.beta_k, self.beta_l, self.beta_m].iter().all(|b| b.is_finite());
        if !finite || self.beta_l <= 0.0 || self.beta_m <= 0.0 || self.beta_k < 0.0 {
            return Err(Error::domain(format!("Cobb-Douglas needs beta_l, beta_m > 0 and beta_k >= 0, got {self:?}")));
        }
        Ok(())
    }

    /// Short-run returns to the variable inputs, `beta_l + beta_m`.
    pub fn short_run_scale(&self) -> f64 {
        self.beta_l + self.beta_m
    }

    /// Labor weight of the degree-one aggregate, `beta_l / (beta_l + beta_m)`.
    pub fn labor_weight(&self) -> f64 {
        self.beta_l / self.short_run_scale()
    }
}

/// CES technology `((1 - beta_l - beta_m) K^s + beta_l L^s + beta_m M^s)^(v/s)`,
/// with `s = sigma` the substitution exponent and `v` the returns to scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CesParams {
    pub beta_l: f64,
    pub beta_m: f64,
    pub sigma: f64,
    pub v: f64,
}

impl CesParams {
    pub fn new(beta_l: f64, beta_m: f64, sigma: f64, v: f64) -> Result<Self> {
        let p = CesParams { beta_l, beta_m, sigma, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let CesParams { beta_l, beta_m, sigma, v } = *self;
        if ![beta_l, beta_m, sigma, v].iter().all(|x| x.is_finite()) {
            return Err(Error::domain(format!("non-finite CES parameter in {self:?}")));
        }
        if beta_l <= 0.0 || beta_m <= 0.0 || beta_l + beta_m >= 1.0 {
            return Err(Error::domain(format!(
                "CES shares need beta_l, beta_m > 0 and beta_l + beta_m < 1, got {self:?}"
            )));
        }
        if sigma == 0.0 || sigma >= 1.0 {
            return Err(Error::UnsupportedParameter(format!(
                "CES sigma must satisfy sigma < 1 and sigma != 0, got {sigma}"
            )));
        }
        if v <= 0.0 {
            return Err(Error::domain(format!("CES returns to scale must be positive, got {v}")));
        }
        Ok(())
    }

    pub fn beta_k(&self) -> f64 {
        1.0 - self.beta_l - self.beta_m
    }

    /// Elasticity of substitution `1 / (1 - sigma)`.
    pub fn elasticity_of_substitution(&self) -> f64 {
        1.0 / (1.0 - self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TechKind {
    Cd,
    Ces,
}

impl fmt::Display for TechKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TechKind::Cd => "cd",
            TechKind::Ces => "ces",
        })
    }
}

impl FromStr for TechKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" | "cobb-douglas" | "cobb_douglas" => Ok(TechKind::Cd),
            "ces" => Ok(TechKind::Ces),
            other => Err(Error::Argument(format!("unknown technology kind '{other}'"))),
        }
    }
}

/// A flexible input, i.e. a member of the variable-input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariableInput {
    L,
    M,
}

impl VariableInput {
    pub const BOTH: [VariableInput; 2] = [VariableInput::L, VariableInput::M];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Input {
    K,
    L,
    M,
}

impl FromStr for Input {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" | "k" => Ok(Input::K),
            "L" | "l" => Ok(Input::L),
            "M" | "m" => Ok(Input::M),
            other => Err(Error::Argument(format!("unknown input name '{other}'"))),
        }
    }
}

impl From<VariableInput> for Input {
    fn from(v: VariableInput) -> Self {
        match v {
            VariableInput::L => Input::L,
            VariableInput::M => Input::M,
        }
    }
}

/// The degree-one variable-input aggregate `h` together with its unit cost
/// function. Deliberately carries no capital coefficient and no returns to
/// scale: anything computed from it cannot depend on them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Aggregate {
    /// `L^a M^(1-a)`
    CobbDouglas { a: f64 },
    /// `(beta_l L^s + beta_m M^s)^(1/s)`
    Ces { beta_l: f64, beta_m: f64, sigma: f64 },
}

impl Aggregate {
    pub fn value(&self, l: f64, m: f64) -> f64 {
        match *self {
            Aggregate::CobbDouglas { a } => l.powf(a) * m.powf(1.0 - a),
            Aggregate::Ces { beta_l, beta_m, sigma } => {
                (beta_l * l.powf(sigma) + beta_m * m.powf(sigma)).powf(1.0 / sigma)
            }
        }
    }

    /// `dh/dV`.
    pub fn partial(&self, which: VariableInput, l: f64, m: f64) -> f64 {
        let v = match which {
            VariableInput::L => l,
            VariableInput::M => m,
        };
        self.partial_log(which, l, m) / v
    }

    /// `dh/dlog V`.
    pub fn partial_log(&self, which: VariableInput, l: f64, m: f64) -> f64 {
        match *self {
            Aggregate::CobbDouglas { a } => {
                let w = match which {
                    VariableInput::L => a,
                    VariableInput::M => 1.0 - a,
                };
                w * self.value(l, m)
            }
            Aggregate::Ces { beta_l, beta_m, sigma } => {
                let (b, v) = match which {
                    VariableInput::L => (beta_l, l),
                    VariableInput::M => (beta_m, m),
                };
                self.value(l, m).powf(1.0 - sigma) * b * v.powf(sigma)
            }
        }
    }

    /// Minimum expenditure on `(L, M)` subject to `h(L, M) >= 1`.
    pub fn unit_cost(&self, p_l: f64, p_m: f64) -> f64 {
        match *self {
            Aggregate::CobbDouglas { a } => (p_l / a).powf(a) * (p_m / (1.0 - a)).powf(1.0 - a),
            Aggregate::Ces { beta_l, beta_m, sigma } => {
                let r = sigma / (sigma - 1.0);
                let e = 1.0 / (1.0 - sigma);
                let b = beta_l.powf(e) * p_l.powf(r) + beta_m.powf(e) * p_m.powf(r);
                b.powf(1.0 / r)
            }
        }
    }
}

/// A parametric production technology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Technology {
    Cd(CdParams),
    Ces(CesParams),
}

impl Technology {
    pub fn cd(beta_k: f64, beta_l: f64, beta_m: f64) -> Result<Self> {
        Ok(Technology::Cd(CdParams::new(beta_k, beta_l, beta_m)?))
    }

    pub fn ces(beta_l: f64, beta_m: f64, sigma: f64, v: f64) -> Result<Self> {
        Ok(Technology::Ces(CesParams::new(beta_l, beta_m, sigma, v)?))
    }

    pub fn kind(&self) -> TechKind {
        match self {
            Technology::Cd(_) => TechKind::Cd,
            Technology::Ces(_) => TechKind::Ces,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Technology::Cd(p) => p.validate(),
            Technology::Ces(p) => p.validate(),
        }
    }

    pub fn aggregate(&self) -> Aggregate {
        match *self {
            Technology::Cd(p) => Aggregate::CobbDouglas { a: p.labor_weight() },
            Technology::Ces(p) => Aggregate::Ces { beta_l: p.beta_l, beta_m: p.beta_m, sigma: p.sigma },
        }
    }

    /// The outer function `F(K, h)`.
    pub fn outer(&self, k: f64, h: f64) -> f64 {
        match *self {
            Technology::Cd(p) => k.powf(p.beta_k) * h.powf(p.short_run_scale()),
            Technology::Ces(p) => (p.beta_k() * k.powf(p.sigma) + h.powf(p.sigma)).powf(p.v / p.sigma),
        }
    }

    /// `dF/dh`, the derivative of the outer function in its second argument.
    pub fn outer_dh(&self, k: f64, h: f64) -> f64 {
        match *self {
            Technology::Cd(p) => {
                let s = p.short_run_scale();
                s * k.powf(p.beta_k) * h.powf(s - 1.0)
            }
            Technology::Ces(p) => {
                let inner = p.beta_k() * k.powf(p.sigma) + h.powf(p.sigma);
                p.v * inner.powf(p.v / p.sigma - 1.0) * h.powf(p.sigma - 1.0)
            }
        }
    }

    /// `dlog F / dlog h`.
    pub fn outer_elasticity(&self, k: f64, h: f64) -> f64 {
        match *self {
            Technology::Cd(p) => p.short_run_scale(),
            Technology::Ces(p) => {
                let hs = h.powf(p.sigma);
                p.v * hs / (p.beta_k() * k.powf(p.sigma) + hs)
            }
        }
    }

    /// Inverts `F(K, .)`: the aggregate level `h` with `F(K, h) = y`, found by
    /// bracketed root-finding in `log h`.
    pub fn outer_inverse(&self, k: f64, y: f64) -> Result<f64> {
        check_positive("capital", k)?;
        check_positive("output target", y)?;
        let log_y = y.ln();
        let x0 = match *self {
            Technology::Cd(p) => (log_y - p.beta_k * k.ln()) / p.short_run_scale(),
            Technology::Ces(_) => 0.0,
        };
        let x = root_increasing(|x| self.outer(k, x.exp()).ln() - log_y, x0, 1e-13)?;
        Ok(x.exp())
    }

    /// `F(K, h(L, M))`, i.e. output with `omega = eps = 0`.
    pub fn output(&self, k: f64, l: f64, m: f64) -> f64 {
        self.outer(k, self.aggregate().value(l, m))
    }

    /// `dlog F / dlog input`.
    pub fn elasticity(&self, input: Input, k: f64, l: f64, m: f64) -> f64 {
        match (*self, input) {
            (Technology::Cd(p), Input::K) => p.beta_k,
            (Technology::Cd(p), Input::L) => p.beta_l,
            (Technology::Cd(p), Input::M) => p.beta_m,
            (Technology::Ces(p), input) => {
                let (b, x) = match input {
                    Input::K => (p.beta_k(), k),
                    Input::L => (p.beta_l, l),
                    Input::M => (p.beta_m, m),
                };
                let inner = p.beta_k() * k.powf(p.sigma) + p.beta_l * l.powf(p.sigma) + p.beta_m * m.powf(p.sigma);
                p.v * b * x.powf(p.sigma) / inner
            }
        }
    }

    /// Second derivatives of `log F` in `(log L, log M)`.
    pub fn log_hessian_variable(&self, k: f64, l: f64, m: f64) -> [[f64; 2]; 2] {
        match *self {
            Technology::Cd(_) => [[0.0; 2]; 2],
            Technology::Ces(p) => {
                let tl = self.elasticity(Input::L, k, l, m);
                let tm = self.elasticity(Input::M, k, l, m);
                let s = p.sigma;
                [[s * tl * (1.0 - tl / p.v), -s * tl * tm / p.v], [-s * tm * tl / p.v, s * tm * (1.0 - tm / p.v)]]
            }
        }
    }

    /// Evaluates `F` allowing zero inputs (used only for the essentiality check).
    fn output_raw(&self, k: f64, l: f64, m: f64) -> f64 {
        match *self {
            Technology::Cd(p) => k.powf(p.beta_k) * l.powf(p.beta_l) * m.powf(p.beta_m),
            Technology::Ces(p) => {
                (p.beta_k() * k.powf(p.sigma) + p.beta_l * l.powf(p.sigma) + p.beta_m * m.powf(p.sigma))
                    .powf(p.v / p.sigma)
            }
        }
    }
}

/// Ex-post output shock design: `eps ~ Normal(mean_eps, sigma_eps^2)`.
///
/// `cal_e()` is `E[exp(eps)]`. The default mean `-sigma_eps^2 / 2` makes it one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShockConfig {
    pub sigma_eps: f64,
    pub mean_eps: f64,
}

impl ShockConfig {
    /// Shocks normalized so that `E[exp(eps)] = 1`.
    pub fn normalized(sigma_eps: f64) -> Self {
        ShockConfig { sigma_eps, mean_eps: -0.5 * sigma_eps * sigma_eps }
    }

    /// Mean-zero log shocks, so `E[exp(eps)] = exp(sigma_eps^2 / 2)`.
    pub fn mean_zero(sigma_eps: f64) -> Self {
        ShockConfig { sigma_eps, mean_eps: 0.0 }
    }

    pub fn cal_e(&self) -> f64 {
        (self.mean_eps + 0.5 * self.sigma_eps * self.sigma_eps).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_eps >= 0.0) || !self.mean_eps.is_finite() || !self.sigma_eps.is_finite() {
            return Err(Error::domain(format!("invalid shock configuration {self:?}")));
        }
        Ok(())
    }
}

impl Default for ShockConfig {
    fn default() -> Self {
        ShockConfig::normalized(0.1)
    }
}

/// Constant-elasticity demand `Q = scale * P^(-eta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub eta: f64,
    pub scale: f64,
}

impl DemandConfig {
    pub fn new(eta: f64, scale: f64) -> Result<Self> {
        let d = DemandConfig { eta, scale };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 1.0) || !self.eta.is_finite() || !(self.scale > 0.0) {
            return Err(Error::domain(format!("demand needs eta > 1 and a positive scale, got {self:?}")));
        }
        Ok(())
    }

    /// Implied markup `eta / (eta - 1)`.
    pub fn mu(&self) -> f64 {
        self.eta / (self.eta - 1.0)
    }
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig { eta: 4.0, scale: 1.0 }
    }
}

/// One firm-period observation.
///
/// `omega`, `eps`, `q` and `p` are absent for revenue-only data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmPeriod {
    pub firm_id: u32,
    pub t: i64,
    pub k: f64,
    pub l: f64,
    pub m: f64,
    pub p_l: f64,
    pub p_m: f64,
    pub p_k: f64,
    pub omega: Option<f64>,
    pub eps: Option<f64>,
    pub q: Option<f64>,
    pub p: Option<f64>,
    pub r: f64,
    pub s_l_star: f64,
    pub s_m_star: f64,
}

impl FirmPeriod {
    /// Planned output `Q / exp(eps)`.
    pub fn q_star(&self) -> Option<f64> {
        Some(self.q? / self.eps?.exp())
    }

    /// Target revenue `R / exp(eps)`.
    pub fn r_star(&self) -> Option<f64> {
        Some(self.r / self.eps?.exp())
    }

    pub fn share(&self, which: VariableInput) -> f64 {
        match which {
            VariableInput::L => self.s_l_star,
            VariableInput::M => self.s_m_star,
        }
    }

    pub fn price(&self, which: VariableInput) -> f64 {
        match which {
            VariableInput::L => self.p_l,
            VariableInput::M => self.p_m,
        }
    }

    pub fn has_quantities(&self) -> bool {
        self.q.is_some()
    }
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} must be strictly positive and finite, got {x}")))
    }
}

fn check_inputs(k: f64, l: f64, m: f64) -> Result<()> {
    check_positive("K", k)?;
    check_positive("L", l)?;
    check_positive("M", m)
}

/// `F(K, h(K, L, M)) exp(omega) exp(eps)`.
pub fn evaluate_quantity(tech: &Technology, k: f64, l: f64, m: f64, omega: f64, eps: f64) -> Result<f64> {
    tech.validate()?;
    check_inputs(k, l, m)?;
    Ok(tech.output(k, l, m) * (omega + eps).exp())
}

/// The degree-one variable aggregate `h(K, L, M)`.
pub fn h_separable(tech: &Technology, k: f64, l: f64, m: f64) -> Result<f64> {
    tech.validate()?;
    check_inputs(k, l, m)?;
    Ok(tech.aggregate().value(l, m))
}

/// Output elasticity with respect to `input` (`"K"`, `"L"` or `"M"`).
pub fn output_elasticity(tech: &Technology, k: f64, l: f64, m: f64, input: &str) -> Result<f64> {
    let input: Input = input.parse()?;
    tech.validate()?;
    check_inputs(k, l, m)?;
    Ok(tech.elasticity(input, k, l, m))
}

/// Markup as the ratio of a variable-input output elasticity to its revenue share.
pub fn markup_production_approach(elasticity: f64, revenue_share: f64) -> Result<f64> {
    check_positive("output elasticity", elasticity)?;
    check_positive("revenue share", revenue_share)?;
    Ok(elasticity / revenue_share)
}

pub fn price_from_markup(mu: f64, lambda: f64) -> Result<f64> {
    check_positive("markup", mu)?;
    check_positive("marginal cost", lambda)?;
    Ok(mu * lambda)
}

/// Target revenue implied by one flexible input:
/// `C2(K, pL, pM) * dh/dlog V * (S*V * calE)^-1`.
///
/// Only the aggregate `h` and its unit cost enter, so the capital coefficient,
/// the returns to scale and productivity cannot affect the result.
#[allow(clippy::too_many_arguments)]
pub fn revenue_pf_reduced_form(
    tech: &Technology,
    k: f64,
    l: f64,
    m: f64,
    p_l: f64,
    p_m: f64,
    s_v_star: f64,
    cal_e: f64,
    which: VariableInput,
) -> Result<f64> {
    tech.validate()?;
    check_inputs(k, l, m)?;
    check_positive("pL", p_l)?;
    check_positive("pM", p_m)?;
    check_positive("target share", s_v_star)?;
    check_positive("calE", cal_e)?;
    let agg = tech.aggregate();
    Ok(agg.unit_cost(p_l, p_m) * agg.partial_log(which, l, m) / (s_v_star * cal_e))
}

/// Constant of the log Cobb-Douglas revenue function for input `which`.
///
/// With `a = beta_l / (beta_l + beta_m)` this is
/// `log(w_V) - a log a - (1 - a) log(1 - a)`, `w_L = a`, `w_M = 1 - a`.
pub fn cd_revenue_constant(params: &CdParams, which: VariableInput) -> Result<f64> {
    if !(params.beta_l > 0.0 && params.beta_m > 0.0) {
        return Err(Error::domain(format!(
            "beta_l + beta_m must be positive with both terms positive, got {params:?}"
        )));
    }
    let a = params.labor_weight();
    let w = match which {
        VariableInput::L => a,
        VariableInput::M => 1.0 - a,
    };
    Ok(w.ln() - a * a.ln() - (1.0 - a) * (1.0 - a).ln())
}

/// Log target revenue under Cobb-Douglas, in logs of inputs, prices and the
/// target share. The capital coefficient is never read.
#[allow(clippy::too_many_arguments)]
pub fn log_revenue_cd(
    params: &CdParams,
    l: f64,
    m: f64,
    pl: f64,
    pm: f64,
    s_star: f64,
    cal_e: f64,
    which: VariableInput,
) -> Result<f64> {
    check_positive("calE", cal_e)?;
    let theta0 = cd_revenue_constant(params, which)?;
    let a = params.labor_weight();
    Ok(theta0 + a * (l + pl) + (1.0 - a) * (m + pm) - s_star - cal_e.ln())
}

/// Log target revenue under CES:
/// `log beta_V + sigma v + (1-sigma)/sigma log(beta_l L^sigma + beta_m M^sigma) +
/// (sigma-1)/sigma log B - s* - log calE`.
/// Returns to scale and the capital share are never read.
#[allow(clippy::too_many_arguments)]
pub fn log_revenue_ces(
    params: &CesParams,
    l: f64,
    m: f64,
    pl: f64,
    pm: f64,
    s_star: f64,
    cal_e: f64,
    which: VariableInput,
) -> Result<f64> {
    let CesParams { beta_l, beta_m, sigma, .. } = *params;
    if sigma == 0.0 || sigma == 1.0 || !sigma.is_finite() {
        return Err(Error::UnsupportedParameter(format!("CES revenue function undefined at sigma = {sigma}")));
    }
    if !(beta_l > 0.0 && beta_m > 0.0) {
        return Err(Error::domain(format!("CES shares must be positive, got {params:?}")));
    }
    check_positive("calE", cal_e)?;
    Ok(ces_log_revenue_unchecked(beta_l, beta_m, sigma, l, m, pl, pm, s_star, cal_e.ln(), which))
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn ces_log_revenue_unchecked(
    beta_l: f64,
    beta_m: f64,
    sigma: f64,
    l: f64,
    m: f64,
    pl: f64,
    pm: f64,
    s_star: f64,
    log_cal_e: f64,
    which: VariableInput,
) -> f64 {
    let (log_beta_v, v) = match which {
        VariableInput::L => (beta_l.ln(), l),
        VariableInput::M => (beta_m.ln(), m),
    };
    let d = beta_l * (sigma * l).exp() + beta_m * (sigma * m).exp();
    let r = sigma / (sigma - 1.0);
    let e = -1.0 / (sigma - 1.0);
    let b = (r * pl).exp() * beta_l.powf(e) + (r * pm).exp() * beta_m.powf(e);
    log_beta_v + sigma * v + (1.0 - sigma) / sigma * d.ln() + (sigma - 1.0) / sigma * b.ln() - s_star - log_cal_e
}

/// Outcome of the production-set property checks on a grid of input points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub points: usize,
    /// Pairs `(x, x')` with `x' >= x` but `F(x') < F(x)`.
    pub monotonicity: Vec<([f64; 3], [f64; 3])>,
    /// Points whose ray toward the origin does not drive output to zero.
    pub essentiality: Vec<[f64; 3]>,
    /// Pairs whose midpoint produces less than the weaker endpoint.
    pub quasi_concavity: Vec<([f64; 3], [f64; 3])>,
    pub zero_input_output: f64,
}

impl ValidityReport {
    pub fn passed(&self) -> bool {
        self.monotonicity.is_empty()
            && self.essentiality.is_empty()
            && self.quasi_concavity.is_empty()
            && self.zero_input_output == 0.0
    }
}

/// Checks monotonicity, weak essentiality and quasi-concavity of `F` on a grid
/// of `(K, L, M)` points. Reports counterexamples rather than failing.
pub fn validate_technology(tech: &Technology, grid: &[[f64; 3]]) -> ValidityReport {
    const REL: f64 = 1e-12;
    let f = |x: &[f64; 3]| tech.output(x[0], x[1], x[2]);
    let values: Vec<f64> = grid.iter().map(f).collect();
    let mut report =
        ValidityReport { points: grid.len(), zero_input_output: tech.output_raw(0.0, 0.0, 0.0), ..Default::default() };

    for (i, x) in grid.iter().enumerate() {
        // Ray toward the origin: output must fall monotonically to (numerically) zero.
        let mut prev = values[i];
        let mut ok = true;
        for j in 1..=30 {
            let t = 10f64.powi(-10 * j);
            let y = tech.output_raw(t * x[0], t * x[1], t * x[2]);
            if y > prev * (1.0 + REL) {
                ok = false;
                break;
            }
            prev = y;
        }
        if !ok || prev > 1e-6 * values[i] {
            report.essentiality.push(*x);
        }

        for (j, y) in grid.iter().enumerate().skip(i + 1) {
            let (fx, fy) = (values[i], values[j]);
            if dominates(y, x) && fy < fx * (1.0 - REL) {
                report.monotonicity.push((*x, *y));
            }
            if dominates(x, y) && fx < fy * (1.0 - REL) {
                report.monotonicity.push((*y, *x));
            }
            let mid = [(x[0] + y[0]) / 2.0, (x[1] + y[1]) / 2.0, (x[2] + y[2]) / 2.0];
            if f(&mid) < fx.min(fy) * (1.0 - REL) {
                report.quasi_concavity.push((*x, *y));
            }
        }
    }
    report
}

fn dominates(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a != b
}

/// A `n^3` grid in logs between `lo` and `hi` for each input.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<[f64; 3]> {
    let pts: Vec<f64> = (0..n)
        .map(|i| {
            let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    let mut grid = Vec::with_capacity(n * n * n);
    for &k in &pts {
        for &l in &pts {
            for &m in &pts {
                grid.push([k, l, m]);
            }
        }
    }
    grid
}
