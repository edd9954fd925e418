//! Proxy-variable GMM for quantity and revenue production functions.
//!
//! The first stage projects log output (or log revenue) on a polynomial in the
//! observables. The second stage forms moments on the Markov innovation of
//! implied productivity, with `g` concentrated out by least squares.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ces_log_revenue_unchecked, log_revenue_cd, CdParams, TechKind, Technology, VariableInput};
use crate::par::Execution;
use crate::simulator::Panel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Quantity,
    Revenue,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Quantity => "quantity",
            Mode::Revenue => "revenue",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quantity" | "q" => Ok(Mode::Quantity),
            "revenue" | "r" => Ok(Mode::Revenue),
            other => Err(Error::Argument(format!("unknown mode '{other}' (expected quantity or revenue)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Identity,
    TwoStep,
}

impl FromStr for Weighting {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(Weighting::Identity),
            "two-step" | "two_step" | "twostep" => Ok(Weighting::TwoStep),
            other => Err(Error::Argument(format!("unknown weighting '{other}'"))),
        }
    }
}

/// Logged observables of one row.
#[derive(Debug, Clone, Copy)]
struct Row {
    k: f64,
    l: f64,
    m: f64,
    pl: f64,
    pm: f64,
    sl: f64,
    sm: f64,
}

fn log_rows(panel: &Panel) -> Result<Vec<Row>> {
    panel
        .obs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let vals = [o.k, o.l, o.m, o.p_l, o.p_m, o.s_l_star, o.s_m_star, o.r];
            if vals.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Format(format!("row {i}: inputs, prices, shares and R must be positive")));
            }
            Ok(Row {
                k: o.k.ln(),
                l: o.l.ln(),
                m: o.m.ln(),
                pl: o.p_l.ln(),
                pm: o.p_m.ln(),
                sl: o.s_l_star.ln(),
                sm: o.s_m_star.ln(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub degree: usize,
    pub n_terms: usize,
    pub rank: usize,
    /// `exp(var(residuals) / 2)`.
    pub cal_e_hat: f64,
    pub warnings: Vec<String>,
}

fn monomials(vars: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, vars: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == vars {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=left {
            prefix.push(e);
            rec(prefix, vars, left - e, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), vars, degree as u32, &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// Least squares via SVD, discarding singular values below `1e-9 * max`.
fn svd_least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = 1e-9 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd.solve(y, eps).map_err(|e| Error::Estimation(format!("least squares failed: {e}")))?;
    Ok((beta, rank))
}

/// Regresses log Q (quantity mode) or log R (revenue mode) on a total-degree
/// polynomial in standardized `(log K, log L, log M, log pL, log pM)`.
pub fn first_stage_project(panel: &Panel, mode: Mode, degree: usize) -> Result<FirstStage> {
    if degree == 0 {
        return Err(Error::Argument("first-stage polynomial degree must be at least 1".into()));
    }
    if mode == Mode::Quantity && !panel.has_quantities() && !panel.is_empty() {
        return Err(Error::Argument("quantities unobserved: quantity mode needs a Q column on every row".into()));
    }
    let rows = log_rows(panel)?;
    let n = rows.len();
    let y: Vec<f64> = match mode {
        Mode::Quantity => panel.obs.iter().map(|o| o.q.expect("checked").ln()).collect(),
        Mode::Revenue => panel.obs.iter().map(|o| o.r.ln()).collect(),
    };
    let terms = monomials(5, degree);
    if n < terms.len() {
        return Err(Error::Estimation(format!(
            "{n} observations cannot support a degree-{degree} polynomial with {} terms",
            terms.len()
        )));
    }
    let mut cols: Vec<Vec<f64>> = vec![
        rows.iter().map(|r| r.k).collect(),
        rows.iter().map(|r| r.l).collect(),
        rows.iter().map(|r| r.m).collect(),
        rows.iter().map(|r| r.pl).collect(),
        rows.iter().map(|r| r.pm).collect(),
    ];
    for c in cols.iter_mut() {
        let mean = c.iter().sum::<f64>() / n as f64;
        let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        c.iter_mut().for_each(|x| *x = (*x - mean) / sd);
    }
    let x = DMatrix::from_fn(n, terms.len(), |i, j| {
        terms[j].iter().enumerate().map(|(v, &e)| cols[v][i].powi(e as i32)).product()
    });
    let yv = DVector::from_vec(y.clone());
    let (beta, rank) = svd_least_squares(&x, &yv)?;
    let fitted: Vec<f64> = (&x * beta).iter().copied().collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let mut warnings = Vec::new();
    if rank < terms.len() {
        warnings.push(format!(
            "first-stage design has rank {rank} of {} terms; collinear directions were dropped",
            terms.len()
        ));
    }
    let var = residuals.iter().map(|e| e * e).sum::<f64>() / n as f64;
    Ok(FirstStage { fitted, residuals, degree, n_terms: terms.len(), rank, cal_e_hat: (0.5 * var).exp(), warnings })
}

/// A product of (possibly lagged) logged observables, written like `k`,
/// `pl_lag` or `k*pl`. The empty product is the constant `1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instrument {
    pub factors: Vec<Factor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub var: InstrumentVar,
    pub lagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentVar {
    K,
    L,
    M,
    PL,
    PM,
}

impl Instrument {
    pub fn is_const(&self) -> bool {
        self.factors.is_empty()
    }
}

impl FromStr for Instrument {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" || s.eq_ignore_ascii_case("const") {
            return Ok(Instrument { factors: vec![] });
        }
        let factors = s
            .split('*')
            .map(|part| {
                let part = part.trim();
                let (base, lagged) = match part.strip_suffix("_lag") {
                    Some(b) => (b, true),
                    None => (part, false),
                };
                let var = match base.to_ascii_lowercase().as_str() {
                    "k" => InstrumentVar::K,
                    "l" => InstrumentVar::L,
                    "m" => InstrumentVar::M,
                    "pl" => InstrumentVar::PL,
                    "pm" => InstrumentVar::PM,
                    _ => return Err(Error::Argument(format!("unknown instrument '{s}'"))),
                };
                Ok(Factor { var, lagged })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Instrument { factors })
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_const() {
            return f.write_str("1");
        }
        let parts: Vec<String> = self
            .factors
            .iter()
            .map(|x| {
                let base = match x.var {
                    InstrumentVar::K => "k",
                    InstrumentVar::L => "l",
                    InstrumentVar::M => "m",
                    InstrumentVar::PL => "pl",
                    InstrumentVar::PM => "pm",
                };
                format!("{base}{}", if x.lagged { "_lag" } else { "" })
            })
            .collect();
        f.write_str(&parts.join("*"))
    }
}

pub const DEFAULT_INSTRUMENTS: [&str; 12] =
    ["1", "k", "l_lag", "m_lag", "pl_lag", "pm_lag", "pl", "pm", "pl*pm", "k*k", "pl*pl", "pm*pm"];

pub fn default_instruments() -> Vec<Instrument> {
    DEFAULT_INSTRUMENTS.iter().map(|s| s.parse().expect("valid default instrument")).collect()
}

fn instrument_value(inst: &Instrument, cur: &Row, lag: &Row) -> f64 {
    inst.factors
        .iter()
        .map(|f| {
            let r = if f.lagged { lag } else { cur };
            match f.var {
                InstrumentVar::K => r.k,
                InstrumentVar::L => r.l,
                InstrumentVar::M => r.m,
                InstrumentVar::PL => r.pl,
                InstrumentVar::PM => r.pm,
            }
        })
        .product()
}

/// Stacked sample moments for one technology family and one mode.
///
/// Parameters are `(beta_k, beta_l, beta_m)` for Cobb-Douglas and
/// `(sigma, beta_l, beta_m, v)` for CES. In revenue mode the residual never
/// reads `beta_k` or `v`; they are kept in the vector so diagnostics can show it.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    pub mode: Mode,
    pub kind: TechKind,
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub start_lower: Vec<f64>,
    pub start_upper: Vec<f64>,
    pub instruments: Vec<Instrument>,
    pub g_degree: usize,
    pub exec: Execution,
    rows: Vec<Row>,
    target: Vec<f64>,
    pairs: Vec<(usize, usize)>,
    /// Instrument values per pair, non-constant columns standardized.
    z: Vec<Vec<f64>>,
    log_cal_e: f64,
}

fn param_layout(kind: TechKind) -> (Vec<String>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    match kind {
        TechKind::Cd => (
            vec!["beta_k".into(), "beta_l".into(), "beta_m".into()],
            vec![0.01; 3],
            vec![0.98; 3],
            vec![0.1; 3],
            vec![0.5; 3],
        ),
        TechKind::Ces => (
            vec!["sigma".into(), "beta_l".into(), "beta_m".into(), "v".into()],
            vec![-1.0, 0.01, 0.01, 0.3],
            vec![0.95, 0.98, 0.98, 2.0],
            vec![-0.8, 0.1, 0.1, 0.6],
            vec![0.8, 0.45, 0.45, 1.4],
        ),
    }
}

/// Largest `beta_l + beta_m` accepted for CES, leaving room for capital.
pub const CES_SHARE_CAP: f64 = 0.98;
const SIGMA_FLOOR: f64 = 1e-7;

fn build_moments(
    mode: Mode,
    kind: TechKind,
    fitted: &[f64],
    panel: &Panel,
    g_degree: usize,
    instruments: &[Instrument],
    cal_e: f64,
) -> Result<MomentSystem> {
    if g_degree == 0 {
        return Err(Error::Argument("degree of g must be at least 1".into()));
    }
    if fitted.len() != panel.len() {
        return Err(Error::Argument(format!("fitted series has {} values for {} rows", fitted.len(), panel.len())));
    }
    if instruments.is_empty() {
        return Err(Error::Argument("instrument list is empty".into()));
    }
    if !(cal_e > 0.0) {
        return Err(Error::domain(format!("calE must be positive, got {cal_e}")));
    }
    let rows = log_rows(panel)?;
    let pairs = panel.lag_pairs();
    if pairs.len() <= g_degree + 1 {
        return Err(Error::Estimation(format!("only {} lagged pairs available", pairs.len())));
    }
    let mut z: Vec<Vec<f64>> = pairs
        .iter()
        .map(|&(i, j)| instruments.iter().map(|inst| instrument_value(inst, &rows[i], &rows[j])).collect())
        .collect();
    let np = pairs.len() as f64;
    for (c, inst) in instruments.iter().enumerate() {
        if inst.is_const() {
            continue;
        }
        let mean = z.iter().map(|r| r[c]).sum::<f64>() / np;
        let sd = (z.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / np).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        z.iter_mut().for_each(|r| r[c] = (r[c] - mean) / sd);
    }
    let (names, lower, upper, start_lower, start_upper) = param_layout(kind);
    Ok(MomentSystem {
        mode,
        kind,
        names,
        lower,
        upper,
        start_lower,
        start_upper,
        instruments: instruments.to_vec(),
        g_degree,
        exec: Execution::default(),
        rows,
        target: fitted.to_vec(),
        pairs,
        z,
        log_cal_e: cal_e.ln(),
    })
}

pub fn build_quantity_moments(
    kind: TechKind,
    fitted_qstar: &[f64],
    panel: &Panel,
    g_degree: usize,
    instruments: &[Instrument],
) -> Result<MomentSystem> {
    if !panel.has_quantities() {
        return Err(Error::Argument("quantities unobserved: quantity moments need a Q column".into()));
    }
    build_moments(Mode::Quantity, kind, fitted_qstar, panel, g_degree, instruments, 1.0)
}

pub fn build_revenue_moments(
    kind: TechKind,
    fitted_rstar: &[f64],
    panel: &Panel,
    g_degree: usize,
    instruments: &[Instrument],
    cal_e: f64,
) -> Result<MomentSystem> {
    build_moments(Mode::Revenue, kind, fitted_rstar, panel, g_degree, instruments, cal_e)
}

/// Solves a small symmetric positive semidefinite system by SVD.
fn small_solve(a: DMatrix<f64>, b: DVector<f64>) -> DVector<f64> {
    let smax = a.norm().max(f64::MIN_POSITIVE);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-13 * smax).unwrap_or_else(|_| DVector::zeros(b.len()))
}

impl MomentSystem {
    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_moments(&self) -> usize {
        match self.mode {
            Mode::Quantity => self.instruments.len(),
            Mode::Revenue => 2 * self.instruments.len(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// The `E[exp(eps)]` used by the revenue reduced form.
    pub fn cal_e(&self) -> f64 {
        self.log_cal_e.exp()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Argument(format!("expected {} parameters, got {}", self.n_params(), theta.len())));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain(format!("non-finite parameter in {theta:?}")));
        }
        match self.kind {
            TechKind::Cd => {
                if theta[1] <= 0.0 || theta[2] <= 0.0 {
                    return Err(Error::domain(format!("beta_l, beta_m must be positive: {theta:?}")));
                }
            }
            TechKind::Ces => {
                let (s, bl, bm, v) = (theta[0], theta[1], theta[2], theta[3]);
                if s == 0.0 || s >= 1.0 {
                    return Err(Error::UnsupportedParameter(format!("sigma = {s}")));
                }
                if bl <= 0.0 || bm <= 0.0 || v <= 0.0 {
                    return Err(Error::domain(format!("CES parameters must be positive: {theta:?}")));
                }
                if self.mode == Mode::Quantity && bl + bm >= 1.0 {
                    return Err(Error::domain(format!("beta_l + beta_m must be below one: {theta:?}")));
                }
            }
        }
        Ok(())
    }

    /// Model prediction per row and, in revenue mode, the L-minus-M gap.
    fn predict(&self, theta: &[f64]) -> Vec<(f64, f64)> {
        let lce = self.log_cal_e;
        match (self.mode, self.kind) {
            (Mode::Quantity, TechKind::Cd) => {
                let (bk, bl, bm) = (theta[0], theta[1], theta[2]);
                self.exec.map_slice(&self.rows, |r| (bk * r.k + bl * r.l + bm * r.m, 0.0))
            }
            (Mode::Quantity, TechKind::Ces) => {
                let (s, bl, bm, v) = (theta[0], theta[1], theta[2], theta[3]);
                let bk = 1.0 - bl - bm;
                self.exec.map_slice(&self.rows, |r| {
                    let inner = bk * (s * r.k).exp() + bl * (s * r.l).exp() + bm * (s * r.m).exp();
                    (v / s * inner.ln(), 0.0)
                })
            }
            (Mode::Revenue, TechKind::Cd) => {
                let p = CdParams { beta_k: theta[0], beta_l: theta[1], beta_m: theta[2] };
                let ce = lce.exp();
                self.exec.map_slice(&self.rows, |r| {
                    let a = log_revenue_cd(&p, r.l, r.m, r.pl, r.pm, r.sl, ce, VariableInput::L).unwrap_or(f64::NAN);
                    let b = log_revenue_cd(&p, r.l, r.m, r.pl, r.pm, r.sm, ce, VariableInput::M).unwrap_or(f64::NAN);
                    (0.5 * (a + b), a - b)
                })
            }
            (Mode::Revenue, TechKind::Ces) => {
                let (s, bl, bm) = (theta[0], theta[1], theta[2]);
                self.exec.map_slice(&self.rows, |r| {
                    let a = ces_log_revenue_unchecked(bl, bm, s, r.l, r.m, r.pl, r.pm, r.sl, lce, VariableInput::L);
                    let b = ces_log_revenue_unchecked(bl, bm, s, r.l, r.m, r.pl, r.pm, r.sm, lce, VariableInput::M);
                    (0.5 * (a + b), a - b)
                })
            }
        }
    }

    /// Implied productivity `fitted - model(theta)` for every row.
    pub fn implied_omega(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.predict(theta).iter().zip(&self.target).map(|(p, t)| t - p.0).collect())
    }

    /// OLS of `omega_t` on `(1, omega_{t-1}, ..., omega_{t-1}^d)`.
    fn fit_g(&self, omega: &[f64]) -> DVector<f64> {
        let d = self.g_degree + 1;
        let mut xtx = DMatrix::<f64>::zeros(d, d);
        let mut xty = DVector::<f64>::zeros(d);
        let mut basis = vec![0.0; d];
        for &(i, j) in &self.pairs {
            let w = omega[j];
            basis[0] = 1.0;
            for p in 1..d {
                basis[p] = basis[p - 1] * w;
            }
            for a in 0..d {
                xty[a] += basis[a] * omega[i];
                for b in 0..d {
                    xtx[(a, b)] += basis[a] * basis[b];
                }
            }
        }
        small_solve(xtx, xty)
    }

    /// Coefficients of the fitted Markov polynomial `g`, constant first.
    pub fn markov_coefficients(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let omega = self.implied_omega(theta)?;
        Ok(self.fit_g(&omega).iter().copied().collect())
    }

    /// Calls `visit` with the moment contribution of every lagged pair, in order.
    fn visit_contributions(&self, theta: &[f64], mut visit: impl FnMut(&[f64])) -> Result<()> {
        self.check_theta(theta)?;
        let pred = self.predict(theta);
        let omega: Vec<f64> = pred.iter().zip(&self.target).map(|(p, t)| t - p.0).collect();
        let coef = self.fit_g(&omega);

        let q0 = self.instruments.len();
        let mut row = vec![0.0; self.n_moments()];
        for (&(i, j), z) in self.pairs.iter().zip(&self.z) {
            let w = omega[j];
            let mut g = 0.0;
            let mut pw = 1.0;
            for c in coef.iter() {
                g += c * pw;
                pw *= w;
            }
            let xi = omega[i] - g;
            for (r, zv) in row.iter_mut().zip(z) {
                *r = xi * zv;
            }
            if self.mode == Mode::Revenue {
                let gap = pred[i].1;
                for (r, zv) in row[q0..].iter_mut().zip(z) {
                    *r = gap * zv;
                }
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::domain(format!("non-finite moments at {theta:?}")));
            }
            visit(&row);
        }
        Ok(())
    }

    /// Per-pair moment contributions (rows) at `theta`.
    pub fn contributions(&self, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(self.pairs.len());
        self.visit_contributions(theta, |r| out.push(r.to_vec()))?;
        Ok(out)
    }

    /// Sample moments (mean contributions).
    pub fn moments(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut m = vec![0.0; self.n_moments()];
        self.visit_contributions(theta, |r| {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        })?;
        let n = self.pairs.len() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        Ok(m)
    }

    /// `m' W m`; identity weight when `weight` is `None`.
    pub fn objective(&self, theta: &[f64], weight: Option<&DMatrix<f64>>) -> Result<f64> {
        let m = DVector::from_vec(self.moments(theta)?);
        Ok(match weight {
            None => m.dot(&m),
            Some(w) => (m.transpose() * w * &m)[(0, 0)].max(0.0),
        })
    }

    /// Centered covariance of the moment contributions.
    pub fn moment_covariance(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let c = self.contributions(theta)?;
        let q = self.n_moments();
        let n = c.len() as f64;
        let mean = self.moments(theta)?;
        let mut s = DMatrix::<f64>::zeros(q, q);
        for row in &c {
            for a in 0..q {
                for b in 0..q {
                    s[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]);
                }
            }
        }
        Ok(s / n)
    }

    /// Projects onto the box, moves `sigma` off zero and, for CES, caps
    /// `beta_l + beta_m` by shrinking the step from `from`.
    pub fn project(&self, from: &[f64], to: &[f64]) -> Vec<f64> {
        let clamp = |x: &[f64]| -> Vec<f64> {
            x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (lo, hi))| v.clamp(*lo, *hi)).collect()
        };
        let mut t = clamp(to);
        if self.kind == TechKind::Ces {
            let mut step: Vec<f64> = t.iter().zip(from).map(|(a, b)| a - b).collect();
            let mut tries = 0;
            while t[1] + t[2] >= CES_SHARE_CAP && tries < 60 {
                step.iter_mut().for_each(|s| *s *= 0.5);
                t = clamp(&from.iter().zip(&step).map(|(a, b)| a + b).collect::<Vec<_>>());
                tries += 1;
            }
            if t[1] + t[2] >= CES_SHARE_CAP {
                let c = (CES_SHARE_CAP - 1e-6) / (t[1] + t[2]);
                t[1] *= c;
                t[2] *= c;
            }
            if t[0].abs() < SIGMA_FLOOR {
                t[0] = if t[0] < 0.0 { -SIGMA_FLOOR } else { SIGMA_FLOOR };
            }
        }
        t
    }

    /// Draws `n` starting points uniformly from the start box.
    pub fn draw_starts(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| loop {
                let s: Vec<f64> =
                    self.start_lower.iter().zip(&self.start_upper).map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect();
                let ok = match self.kind {
                    TechKind::Ces => s[0].abs() > 0.05 && s[1] + s[2] < 0.9,
                    TechKind::Cd => true,
                };
                if ok {
                    break s;
                }
            })
            .collect()
    }

    /// Coordinates the residual never reads in this mode.
    pub fn non_identified_axes(&self) -> Vec<String> {
        match (self.mode, self.kind) {
            (Mode::Quantity, _) => vec![],
            (Mode::Revenue, TechKind::Cd) => vec!["beta_k".into()],
            (Mode::Revenue, TechKind::Ces) => vec!["v".into()],
        }
    }
}

/// Parameter vector of `tech` in the estimator layout.
pub fn theta_of(tech: &Technology) -> Vec<f64> {
    match tech {
        Technology::Cd(p) => vec![p.beta_k, p.beta_l, p.beta_m],
        Technology::Ces(p) => vec![p.sigma, p.beta_l, p.beta_m, p.v],
    }
}

pub fn technology_from_theta(kind: TechKind, theta: &[f64]) -> Result<Technology> {
    let want = match kind {
        TechKind::Cd => 3,
        TechKind::Ces => 4,
    };
    if theta.len() != want {
        return Err(Error::Argument(format!("{kind} needs {want} parameters, got {}", theta.len())));
    }
    match kind {
        TechKind::Cd => Technology::cd(theta[0], theta[1], theta[2]),
        TechKind::Ces => Technology::ces(theta[1], theta[2], theta[0], theta[3]),
    }
}

/// Functionals of the parameter vector that remain identified from revenue data.
pub fn identified_functionals(kind: TechKind, theta: &[f64]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    match kind {
        TechKind::Cd => {
            out.insert("beta_l/(beta_l+beta_m)".into(), theta[1] / (theta[1] + theta[2]));
        }
        TechKind::Ces => {
            out.insert("sigma".into(), theta[0]);
            out.insert("beta_l/beta_m".into(), theta[1] / theta[2]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub weighting: Weighting,
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        GmmOptions { weighting: Weighting::TwoStep, restarts: 20, seed: 7, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMinimum {
    pub start: Vec<f64>,
    pub theta: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub mode: Mode,
    pub kind: TechKind,
    pub param_names: Vec<String>,
    pub estimate: Vec<f64>,
    pub objective: f64,
    pub weighting: Weighting,
    pub converged: bool,
    /// One entry per restart, sorted by objective.
    pub minima: Vec<LocalMinimum>,
    pub moment_covariance: Vec<Vec<f64>>,
    pub n_obs: usize,
    pub n_pairs: usize,
    pub n_moments: usize,
    pub non_identified_axes: Vec<String>,
    pub identified_functionals: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

struct Residuals<'a> {
    ms: &'a MomentSystem,
    /// Rows of `L'` with `W = L L'`; `None` for identity weighting.
    root: Option<DMatrix<f64>>,
}

impl Residuals<'_> {
    fn eval(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let m = DVector::from_vec(self.ms.moments(theta).ok()?);
        Some(match &self.root {
            None => m,
            Some(r) => r * m,
        })
    }
}

/// Central (one-sided at bounds) difference Jacobian of `f`.
fn fd_jacobian(
    ms: &MomentSystem,
    f: &dyn Fn(&[f64]) -> Option<DVector<f64>>,
    theta: &[f64],
    f0: &DVector<f64>,
) -> Option<DMatrix<f64>> {
    let p = theta.len();
    let mut j = DMatrix::<f64>::zeros(f0.len(), p);
    for c in 0..p {
        let h = 1e-6 * theta[c].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[c] += h;
        dn[c] -= h;
        let up_ok = up[c] <= ms.upper[c] && ms.check_theta(&up).is_ok();
        let dn_ok = dn[c] >= ms.lower[c] && ms.check_theta(&dn).is_ok();
        let col = match (up_ok, dn_ok) {
            (true, true) => (f(&up)? - f(&dn)?) / (2.0 * h),
            (true, false) => (f(&up)? - f0) / h,
            (false, true) => (f0 - f(&dn)?) / h,
            (false, false) => return None,
        };
        j.set_column(c, &col);
    }
    Some(j)
}

fn levenberg_marquardt(res: &Residuals<'_>, start: &[f64], max_iter: usize) -> LocalMinimum {
    let ms = res.ms;
    let f = |t: &[f64]| res.eval(t);
    let mut theta = ms.project(start, start);
    let fail = |theta: Vec<f64>, it| LocalMinimum {
        start: start.to_vec(),
        theta,
        objective: f64::INFINITY,
        converged: false,
        iterations: it,
    };
    let Some(mut r) = f(&theta) else { return fail(theta, 0) };
    let mut cost = r.dot(&r);
    let mut mu = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        if cost <= 1e-30 {
            converged = true;
            break;
        }
        let Some(jac) = fd_jacobian(ms, &f, &theta, &r) else { break };
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let free_grad = (0..theta.len())
            .filter(|&c| !((theta[c] <= ms.lower[c] && grad[c] > 0.0) || (theta[c] >= ms.upper[c] && grad[c] < 0.0)))
            .map(|c| grad[c].abs())
            .fold(0.0, f64::max);
        if free_grad <= 1e-14 * cost.sqrt().max(1e-300) {
            converged = true;
            break;
        }
        let floor = 1e-12 * jtj.diagonal().max().max(1e-300);
        // Coordinates pinned at a bound with the gradient pointing outward stay fixed.
        let active: Vec<bool> = (0..theta.len())
            .map(|c| (theta[c] <= ms.lower[c] && grad[c] > 0.0) || (theta[c] >= ms.upper[c] && grad[c] < 0.0))
            .collect();
        let mut accepted = false;
        while mu < 1e16 {
            let mut a = jtj.clone();
            let mut rhs = -&grad;
            for d in 0..a.nrows() {
                a[(d, d)] += mu * (jtj[(d, d)] + floor);
            }
            for (c, &fixed) in active.iter().enumerate() {
                if fixed {
                    a.row_mut(c).fill(0.0);
                    a.column_mut(c).fill(0.0);
                    a[(c, c)] = 1.0;
                    rhs[c] = 0.0;
                }
            }
            let step = small_solve(a, rhs);
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + s).collect();
            let cand = ms.project(&theta, &cand);
            if let Some(rc) = f(&cand) {
                let cc = rc.dot(&rc);
                if cc < cost {
                    let moved = cand.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    let drop = cost - cc;
                    theta = cand;
                    r = rc;
                    cost = cc;
                    mu = (mu / 3.0).max(1e-12);
                    accepted = true;
                    if drop <= 1e-10 * cost || moved <= 1e-10 {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            // No descent direction within finite-difference precision.
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    LocalMinimum { start: start.to_vec(), theta, objective: cost, converged, iterations: it }
}

/// Square-root factor `L'` of `(S + tau I)^-1`, so that `m' W m = |L' m|^2`.
///
/// The ridge `tau = 1e-8 * max eigenvalue` keeps moments that hold exactly
/// (zero variance) in the objective with a large weight instead of dropping them.
fn weight_root(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let q = s.nrows();
    if !(lmax > 0.0) {
        return DMatrix::identity(q, q);
    }
    let tau = 1e-8 * lmax;
    let mut root = DMatrix::<f64>::zeros(q, q);
    for k in 0..q {
        let l = eig.eigenvalues[k].max(0.0) + tau;
        let v = eig.eigenvectors.column(k);
        for a in 0..q {
            root[(k, a)] = v[a] / l.sqrt();
        }
    }
    root
}

/// Efficient GMM weight `(S + tau I)^-1` from the moment covariance at `theta`.
pub fn efficient_weight(ms: &MomentSystem, theta: &[f64]) -> Result<DMatrix<f64>> {
    let root = weight_root(&ms.moment_covariance(theta)?);
    Ok(root.transpose() * root)
}

fn run_starts(res: &Residuals<'_>, starts: &[Vec<f64>], max_iter: usize) -> Vec<LocalMinimum> {
    // Collected in start order, so the merge is deterministic.
    res.ms.exec.map_slice(starts, |s| levenberg_marquardt(res, s, max_iter))
}

fn sort_minima(mut minima: Vec<LocalMinimum>) -> Vec<LocalMinimum> {
    minima.sort_by(|a, b| a.objective.total_cmp(&b.objective));
    minima
}

/// Multi-start GMM. Two-step weighting re-optimizes every first-step minimum
/// under the inverse moment covariance evaluated at the best first-step point.
pub fn gmm_minimize(ms: &MomentSystem, opts: &GmmOptions, starts: Option<Vec<Vec<f64>>>) -> Result<EstimateResult> {
    let starts = match starts {
        Some(s) if !s.is_empty() => s,
        _ => ms.draw_starts(opts.restarts.max(1), opts.seed),
    };
    for s in &starts {
        if s.len() != ms.n_params() {
            return Err(Error::Argument(format!("start {s:?} has wrong length")));
        }
    }
    let first = Residuals { ms, root: None };
    let mut minima = sort_minima(run_starts(&first, &starts, opts.max_iter));
    if minima.iter().all(|m| !m.objective.is_finite()) {
        return Err(Error::Estimation(format!(
            "all {} restarts failed; last iterates {:?}",
            minima.len(),
            minima.iter().map(|m| m.theta.clone()).collect::<Vec<_>>()
        )));
    }
    let mut warnings = Vec::new();
    let failed = minima.iter().filter(|m| !m.objective.is_finite()).count();
    if failed > 0 {
        warnings.push(format!("{failed} of {} restarts failed and were dropped", minima.len()));
        minima.retain(|m| m.objective.is_finite());
    }
    let mut weight = None;
    if opts.weighting == Weighting::TwoStep {
        let s = ms.moment_covariance(&minima[0].theta)?;
        let root = weight_root(&s);
        let second = Residuals { ms, root: Some(root.clone()) };
        // Restarts that landed on the same point are refined once.
        let mut refined_starts: Vec<Vec<f64>> = Vec::new();
        for m in &minima {
            let dup = refined_starts
                .iter()
                .any(|t| t.iter().zip(&m.theta).all(|(a, b)| (a - b).abs() <= 1e-6 * a.abs().max(1.0)));
            if !dup {
                refined_starts.push(m.theta.clone());
            }
        }
        let refined = run_starts(&second, &refined_starts, opts.max_iter);
        minima = sort_minima(
            refined
                .into_iter()
                .zip(&refined_starts)
                .map(|(mut m, s)| {
                    m.start = s.clone();
                    m
                })
                .collect(),
        );
        weight = Some(root.transpose() * root);
    }
    let best = minima[0].clone();
    if !best.converged {
        warnings.push("best restart stopped at the iteration limit".into());
    }
    let objective = ms.objective(&best.theta, weight.as_ref())?;
    let cov = ms.moment_covariance(&best.theta)?;
    Ok(EstimateResult {
        mode: ms.mode,
        kind: ms.kind,
        param_names: ms.names.clone(),
        estimate: best.theta.clone(),
        objective,
        weighting: opts.weighting,
        converged: best.converged,
        minima,
        moment_covariance: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        n_obs: ms.n_obs(),
        n_pairs: ms.n_pairs(),
        n_moments: ms.n_moments(),
        non_identified_axes: ms.non_identified_axes(),
        identified_functionals: identified_functionals(ms.kind, &best.theta),
        warnings,
    })
}

/// Settings for the whole two-stage pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub kind: TechKind,
    pub poly_degree: usize,
    pub g_degree: usize,
    pub instruments: Vec<String>,
    pub gmm: GmmOptions,
    /// Known `E[exp(eps)]`; estimated from first-stage residuals when absent.
    pub cal_e: Option<f64>,
}

impl EstimatorConfig {
    pub fn new(mode: Mode, kind: TechKind) -> Self {
        EstimatorConfig {
            mode,
            kind,
            poly_degree: 3,
            g_degree: 1,
            instruments: default_instruments().iter().map(|i| i.to_string()).collect(),
            gmm: GmmOptions::default(),
            cal_e: None,
        }
    }
}

/// First stage, moment construction and GMM in one call.
pub fn estimate(panel: &Panel, cfg: &EstimatorConfig, exec: Execution) -> Result<(EstimateResult, MomentSystem)> {
    let fs = first_stage_project(panel, cfg.mode, cfg.poly_degree)?;
    let instruments = cfg.instruments.iter().map(|s| s.parse()).collect::<Result<Vec<Instrument>>>()?;
    let ms = match cfg.mode {
        Mode::Quantity => build_quantity_moments(cfg.kind, &fs.fitted, panel, cfg.g_degree, &instruments)?,
        Mode::Revenue => {
            let cal_e = cfg.cal_e.unwrap_or(fs.cal_e_hat);
            build_revenue_moments(cfg.kind, &fs.fitted, panel, cfg.g_degree, &instruments, cal_e)?
        }
    }
    .with_execution(exec);
    let mut res = gmm_minimize(&ms, &cfg.gmm, None)?;
    let mut warnings = fs.warnings;
    warnings.append(&mut res.warnings);
    res.warnings = warnings;
    Ok((res, ms))
}
