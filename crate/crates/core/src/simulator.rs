//! Firm panels generated under cost minimization, constant-elasticity demand
//! and Markov productivity, with the truth retained for later checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costmin::{cost_min_numeric, foc_input_price, marginal_cost_closed_form};
use crate::error::{Error, Result};
use crate::model::{
    markup_production_approach, price_from_markup, revenue_pf_reduced_form, DemandConfig, FirmPeriod, Input,
    ShockConfig, Technology, VariableInput,
};
use crate::par::Execution;
use crate::solve::root_increasing;

/// `omega_t = c0 + rho * omega_{t-1} + xi_t`, `xi ~ N(0, sigma_xi^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductivityProcess {
    pub rho: f64,
    pub c0: f64,
    pub sigma_xi: f64,
}

impl ProductivityProcess {
    pub fn g(&self, omega_prev: f64) -> f64 {
        self.c0 + self.rho * omega_prev
    }

    pub fn stationary_mean(&self) -> f64 {
        self.c0 / (1.0 - self.rho)
    }

    pub fn stationary_sd(&self) -> f64 {
        self.sigma_xi / (1.0 - self.rho * self.rho).sqrt()
    }
}

impl Default for ProductivityProcess {
    fn default() -> Self {
        ProductivityProcess { rho: 0.7, c0: 0.0, sigma_xi: 0.1 }
    }
}

/// `log K_t = kappa0 + kappa_k log K_{t-1} + kappa_w omega_{t-1} + sigma_k u_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapitalPolicy {
    pub kappa0: f64,
    pub kappa_k: f64,
    pub kappa_w: f64,
    pub sigma_k: f64,
}

impl Default for CapitalPolicy {
    fn default() -> Self {
        CapitalPolicy { kappa0: 0.0, kappa_k: 0.8, kappa_w: 0.3, sigma_k: 0.2 }
    }
}

/// Firm-specific log-AR(1) input prices. The capital price is held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceProcess {
    pub mean_log_pl: f64,
    pub mean_log_pm: f64,
    pub rho_p: f64,
    pub sigma_pl: f64,
    pub sigma_pm: f64,
    pub p_k: f64,
}

impl Default for PriceProcess {
    fn default() -> Self {
        PriceProcess { mean_log_pl: 0.0, mean_log_pm: 0.0, rho_p: 0.3, sigma_pl: 0.5, sigma_pm: 0.5, p_k: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub tech: Technology,
    pub demand: DemandConfig,
    pub prod: ProductivityProcess,
    pub capital: CapitalPolicy,
    pub prices: PriceProcess,
    pub shocks: ShockConfig,
    pub n_firms: usize,
    pub t_periods: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Log standard deviation of firm-specific `eta - 1`. Zero keeps a common markup.
    pub firm_eta_sd: f64,
}

impl SimConfig {
    pub fn default_ces() -> Self {
        SimConfig { tech: Technology::ces(0.3, 0.4, 0.5, 0.9).expect("valid default"), ..SimConfig::default_cd() }
    }

    pub fn default_cd() -> Self {
        SimConfig {
            tech: Technology::cd(0.25, 0.3, 0.4).expect("valid default"),
            demand: DemandConfig::default(),
            prod: ProductivityProcess::default(),
            capital: CapitalPolicy::default(),
            prices: PriceProcess::default(),
            shocks: ShockConfig::default(),
            n_firms: 500,
            t_periods: 10,
            burn_in: 50,
            seed: 20240917,
            firm_eta_sd: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tech.validate()?;
        self.demand.validate()?;
        self.shocks.validate()?;
        if self.t_periods == 0 {
            return Err(Error::Argument("need at least one period".into()));
        }
        if !(self.prod.rho.abs() < 1.0) || !(self.prod.sigma_xi >= 0.0) {
            return Err(Error::domain(format!("productivity process not stationary: {:?}", self.prod)));
        }
        if !(self.capital.kappa_k.abs() < 1.0) || !(self.capital.sigma_k >= 0.0) {
            return Err(Error::domain(format!("capital policy not stationary: {:?}", self.capital)));
        }
        let p = &self.prices;
        if !(p.rho_p.abs() < 1.0) || !(p.sigma_pl >= 0.0) || !(p.sigma_pm >= 0.0) || !(p.p_k > 0.0) {
            return Err(Error::domain(format!("invalid price process: {p:?}")));
        }
        if !(self.firm_eta_sd >= 0.0) {
            return Err(Error::domain("firm_eta_sd must be nonnegative"));
        }
        Ok(())
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::default_ces()
    }
}

/// Observations sorted by `(firm_id, t)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub obs: Vec<FirmPeriod>,
}

impl Panel {
    pub fn new(mut obs: Vec<FirmPeriod>) -> Self {
        obs.sort_by_key(|o| (o.firm_id, o.t));
        Panel { obs }
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn has_quantities(&self) -> bool {
        !self.obs.is_empty() && self.obs.iter().all(|o| o.q.is_some())
    }

    pub fn has_omega(&self) -> bool {
        !self.obs.is_empty() && self.obs.iter().all(|o| o.omega.is_some())
    }

    /// Pairs `(i, j)` of row indices where row `j` is the previous period of row `i`'s firm.
    pub fn lag_pairs(&self) -> Vec<(usize, usize)> {
        self.obs
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].firm_id == w[1].firm_id && w[1].t == w[0].t + 1)
            .map(|(j, _)| (j + 1, j))
            .collect()
    }

    pub fn n_firms(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for o in &self.obs {
            if last != Some(o.firm_id) {
                n += 1;
                last = Some(o.firm_id);
            }
        }
        n
    }

    /// Drops the realized-quantity and truth columns, as in revenue-only data.
    pub fn revenue_only(&self) -> Panel {
        let obs = self.obs.iter().map(|o| FirmPeriod { omega: None, eps: None, q: None, p: None, ..*o }).collect();
        Panel { obs }
    }
}

struct FirmState {
    omega: f64,
    log_k: f64,
    log_pl: f64,
    log_pm: f64,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn step_state(cfg: &SimConfig, s: &FirmState, rng: &mut ChaCha8Rng) -> FirmState {
    let pr = &cfg.prices;
    // Capital uses last period's productivity; draw order is fixed for reproducibility.
    let omega = cfg.prod.g(s.omega) + cfg.prod.sigma_xi * normal(rng);
    let log_k = cfg.capital.kappa0
        + cfg.capital.kappa_k * s.log_k
        + cfg.capital.kappa_w * s.omega
        + cfg.capital.sigma_k * normal(rng);
    let log_pl = pr.mean_log_pl + pr.rho_p * (s.log_pl - pr.mean_log_pl) + pr.sigma_pl * normal(rng);
    let log_pm = pr.mean_log_pm + pr.rho_p * (s.log_pm - pr.mean_log_pm) + pr.sigma_pm * normal(rng);
    FirmState { omega, log_k, log_pl, log_pm }
}

/// Optimal choices for one firm-period given the state.
#[allow(clippy::too_many_arguments)]
fn firm_period(
    cfg: &SimConfig,
    demand: &DemandConfig,
    firm_id: u32,
    t: i64,
    s: &FirmState,
    eps: f64,
) -> Result<FirmPeriod> {
    let tech = &cfg.tech;
    let (k, pl, pm) = (s.log_k.exp(), s.log_pl.exp(), s.log_pm.exp());
    let cal_e = cfg.shocks.cal_e();
    let mu = demand.mu();
    let c2 = tech.aggregate().unit_cost(pl, pm);
    let (log_a, eta) = (demand.scale.ln(), demand.eta);

    // Planned output clears demand: log Q* - log A + eta log(mu lambda) = 0, solved in log h.
    let excess = |x: f64| {
        let h = x.exp();
        let log_q = tech.outer(k, h).ln() + s.omega;
        let lambda = c2 / (tech.outer_dh(k, h) * s.omega.exp() * cal_e);
        log_q - log_a + eta * (mu * lambda).ln()
    };
    let x = root_increasing(excess, 0.0, 1e-13)?;
    let target = tech.outer(k, x.exp());

    let sol = cost_min_numeric(tech, k, pl, pm, target)?;
    let (l, m) = (sol.l_star, sol.m_star);
    let lambda = marginal_cost_closed_form(tech, k, l, m, pl, pm, s.omega, cal_e)?;
    let p = price_from_markup(mu, lambda)?;
    let q_star = tech.output(k, l, m) * s.omega.exp();
    let q = q_star * eps.exp();
    Ok(FirmPeriod {
        firm_id,
        t,
        k,
        l,
        m,
        p_l: pl,
        p_m: pm,
        p_k: cfg.prices.p_k,
        omega: Some(s.omega),
        eps: Some(eps),
        q: Some(q),
        p: Some(p),
        r: p * q,
        s_l_star: pl * l / (p * q_star),
        s_m_star: pm * m / (p * q_star),
    })
}

fn simulate_firm(cfg: &SimConfig, firm: usize) -> Result<Vec<FirmPeriod>> {
    let firm_id = firm as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(firm as u64);

    let demand = if cfg.firm_eta_sd > 0.0 {
        let z = normal(&mut rng);
        DemandConfig { eta: 1.0 + (cfg.demand.eta - 1.0) * (cfg.firm_eta_sd * z).exp(), ..cfg.demand }
    } else {
        cfg.demand
    };

    let pr = &cfg.prices;
    let omega0 = cfg.prod.stationary_mean() + cfg.prod.stationary_sd() * normal(&mut rng);
    let k_mean = (cfg.capital.kappa0 + cfg.capital.kappa_w * cfg.prod.stationary_mean()) / (1.0 - cfg.capital.kappa_k);
    let mut state = FirmState { omega: omega0, log_k: k_mean, log_pl: pr.mean_log_pl, log_pm: pr.mean_log_pm };
    for _ in 0..cfg.burn_in {
        state = step_state(cfg, &state, &mut rng);
    }

    let mut out = Vec::with_capacity(cfg.t_periods);
    for t in 1..=cfg.t_periods as i64 {
        state = step_state(cfg, &state, &mut rng);
        let eps = cfg.shocks.mean_eps + cfg.shocks.sigma_eps * normal(&mut rng);
        let row = firm_period(cfg, &demand, firm_id, t, &state, eps).map_err(|e| Error::Simulation {
            firm_id,
            t,
            source: Box::new(e),
        })?;
        out.push(row);
    }
    Ok(out)
}

/// Simulates `n_firms` independent firms. Each firm draws from its own
/// substream of the master seed, so the panel does not depend on `exec`.
pub fn simulate_panel(cfg: &SimConfig, exec: Execution) -> Result<Panel> {
    cfg.validate()?;
    let firms = exec.try_map_range(cfg.n_firms, |i| simulate_firm(cfg, i))?;
    Ok(Panel { obs: firms.into_iter().flatten().collect() })
}

/// Row indices violating each maintained identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    pub rows: usize,
    pub revenue_identity: Vec<usize>,
    pub reduced_form: Vec<usize>,
    pub foc_price: Vec<usize>,
    pub markup: Vec<usize>,
    pub share_elasticity: Vec<usize>,
    /// Rows where a check could not be evaluated (missing columns).
    pub skipped: usize,
}

impl PanelReport {
    pub fn violations(&self) -> usize {
        self.revenue_identity.len()
            + self.reduced_form.len()
            + self.foc_price.len()
            + self.markup.len()
            + self.share_elasticity.len()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

pub const VERIFY_TOL: f64 = 1e-7;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Checks every observation against the identities the data-generating
/// process implies. Checks that need unobserved columns are skipped.
pub fn verify_panel(panel: &Panel, cfg: &SimConfig) -> Result<PanelReport> {
    cfg.tech.validate()?;
    let tech = &cfg.tech;
    let cal_e = cfg.shocks.cal_e();
    let mu = cfg.demand.mu();
    let mut rep = PanelReport { rows: panel.len(), ..Default::default() };
    for (i, o) in panel.obs.iter().enumerate() {
        for (name, x) in [("K", o.k), ("L", o.l), ("M", o.m), ("pL", o.p_l), ("pM", o.p_m), ("R", o.r)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::Format(format!("row {i}: {name} must be positive, got {x}")));
            }
        }
        for v in VariableInput::BOTH {
            let implied = foc_input_price(tech, o.k, o.l, o.m, o.p_l, o.p_m, cal_e, v)?;
            if rel(implied, o.price(v)) > VERIFY_TOL {
                rep.foc_price.push(i);
                break;
            }
        }
        for v in VariableInput::BOTH {
            let theta = tech.elasticity(Input::from(v), o.k, o.l, o.m);
            if rel(markup_production_approach(theta, o.share(v))?, mu) > VERIFY_TOL {
                rep.share_elasticity.push(i);
                break;
            }
        }
        let (Some(p), Some(q), Some(eps), Some(omega)) = (o.p, o.q, o.eps, o.omega) else {
            rep.skipped += 1;
            continue;
        };
        if rel(p * q, o.r) > VERIFY_TOL {
            rep.revenue_identity.push(i);
        }
        let r_star = o.r / eps.exp();
        for v in VariableInput::BOTH {
            let g = revenue_pf_reduced_form(tech, o.k, o.l, o.m, o.p_l, o.p_m, o.share(v), cal_e, v)?;
            if rel(g, r_star) > VERIFY_TOL {
                rep.reduced_form.push(i);
                break;
            }
        }
        let lambda = marginal_cost_closed_form(tech, o.k, o.l, o.m, o.p_l, o.p_m, omega, cal_e)?;
        if rel(p / lambda, mu) > VERIFY_TOL {
            rep.markup.push(i);
        }
    }
    Ok(rep)
}
