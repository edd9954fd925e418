//! Run configuration read from TOML. Every section is optional and falls
//! back to the library defaults.

use std::path::Path;

use revpf_core::estimator::{EstimatorConfig, GmmOptions, Mode, Weighting, DEFAULT_INSTRUMENTS};
use revpf_core::identlab::{DiagnoseConfig, Grid, ScanSpec, EQUIVALENCE_TOL, FD_STEPS, FLAT_TOL, RANK_RTOL};
use revpf_core::{SimConfig, TechKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed for simulation.
    pub seed: Option<u64>,
    pub simulate: SimConfig,
    pub estimate: EstimateSection,
    pub diagnose: DiagnoseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    pub mode: Option<Mode>,
    /// Defaults to the family of `[simulate] tech`.
    pub kind: Option<TechKind>,
    pub poly_degree: usize,
    pub g_degree: usize,
    pub instruments: Vec<String>,
    pub weighting: Weighting,
    pub restarts: usize,
    pub start_seed: u64,
    pub max_iter: usize,
    pub cal_e: Option<f64>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        let g = GmmOptions::default();
        EstimateSection {
            mode: None,
            kind: None,
            poly_degree: 3,
            g_degree: 1,
            instruments: DEFAULT_INSTRUMENTS.iter().map(|s| s.to_string()).collect(),
            weighting: g.weighting,
            restarts: g.restarts,
            start_seed: g.seed,
            max_iter: g.max_iter,
            cal_e: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanEntry {
    pub param: String,
    /// `lo:hi:n`.
    pub grid: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseSection {
    pub scans: Vec<ScanEntry>,
    pub fd_steps: Vec<f64>,
    pub equivalence_tol: f64,
    pub rank_rtol: f64,
    pub flat_tol: f64,
    /// Write every profile curve as CSV, not only the requested scans.
    pub plot_data: bool,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        DiagnoseSection {
            scans: vec![],
            fd_steps: FD_STEPS.to_vec(),
            equivalence_tol: EQUIVALENCE_TOL,
            rank_rtol: RANK_RTOL,
            flat_tol: FLAT_TOL,
            plot_data: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        // An explicit `[simulate] seed` counts as the master seed.
        let raw: toml::Table = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        let sim_seed = raw.get("simulate").and_then(|s| s.get("seed")).is_some();
        let seed = cfg.seed.or(if sim_seed { Some(cfg.simulate.seed) } else { None });
        Ok(RunConfig { seed, ..cfg })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                RunConfig::parse(&text).map_err(|e| match e {
                    CliError::Validation(m) => CliError::Validation(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    /// Simulation settings with the seed resolved; a seed is mandatory.
    pub fn sim_config(&self, seed_flag: Option<u64>) -> CliResult<SimConfig> {
        let seed = seed_flag.or(self.seed).ok_or_else(|| {
            CliError::Validation("simulate needs a seed: pass --seed or set `seed` in the config".into())
        })?;
        let cfg = SimConfig { seed, ..self.simulate.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self, flag: Option<TechKind>) -> TechKind {
        flag.or(self.estimate.kind).unwrap_or_else(|| self.simulate.tech.kind())
    }

    pub fn estimator(&self, mode: Mode, kind: TechKind) -> CliResult<EstimatorConfig> {
        let e = &self.estimate;
        if let Some(c) = e.cal_e {
            if !(c > 0.0 && c.is_finite()) {
                return Err(CliError::Validation(format!("estimate.cal_e must be positive, got {c}")));
            }
        }
        for s in &e.instruments {
            s.parse::<revpf_core::estimator::Instrument>()?;
        }
        Ok(EstimatorConfig {
            mode,
            kind,
            poly_degree: e.poly_degree,
            g_degree: e.g_degree,
            instruments: e.instruments.clone(),
            gmm: GmmOptions { weighting: e.weighting, restarts: e.restarts, seed: e.start_seed, max_iter: e.max_iter },
            cal_e: e.cal_e,
        })
    }

    pub fn diagnose(&self, mode: Mode, kind: TechKind, extra: Option<ScanSpec>) -> CliResult<DiagnoseConfig> {
        let d = &self.diagnose;
        let mut scans = d
            .scans
            .iter()
            .map(|s| Ok(ScanSpec { param: s.param.clone(), grid: s.grid.parse::<Grid>()? }))
            .collect::<CliResult<Vec<_>>>()?;
        scans.extend(extra);
        Ok(DiagnoseConfig {
            estimator: self.estimator(mode, kind)?,
            scans,
            fd_steps: d.fd_steps.clone(),
            equivalence_tol: d.equivalence_tol,
            rank_rtol: d.rank_rtol,
            flat_tol: d.flat_tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config() {
        let cfg = RunConfig::parse(
            r#"
            seed = 5
            [simulate]
            n_firms = 40
            tech = { kind = "cd", beta_k = 0.2, beta_l = 0.3, beta_m = 0.4 }
            [simulate.prices]
            sigma_pl = 0.4
            [estimate]
            mode = "revenue"
            restarts = 3
            "#,
        )
        .unwrap();
        let sim = cfg.sim_config(None).unwrap();
        assert_eq!((sim.seed, sim.n_firms, sim.t_periods), (5, 40, 10));
        assert_eq!(sim.prices.sigma_pl, 0.4);
        assert_eq!(sim.prices.sigma_pm, 0.5);
        assert_eq!(cfg.kind(None), TechKind::Cd);
        assert_eq!(cfg.estimator(Mode::Revenue, TechKind::Cd).unwrap().gmm.restarts, 3);
    }

    #[test]
    fn seed_is_mandatory() {
        let cfg = RunConfig::parse("[simulate]\nn_firms = 3\n").unwrap();
        assert!(matches!(cfg.sim_config(None), Err(CliError::Validation(_))));
        assert_eq!(cfg.sim_config(Some(9)).unwrap().seed, 9);
        let cfg = RunConfig::parse("[simulate]\nseed = 11\n").unwrap();
        assert_eq!(cfg.sim_config(None).unwrap().seed, 11);
        assert_eq!(cfg.sim_config(Some(2)).unwrap().seed, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("sead = 1\n").is_err());
        assert!(RunConfig::parse("[simulate]\nnfirms = 1\n").is_err());
        assert!(RunConfig::parse("[estimate]\ninstruments = [\"zz\"]\n")
            .unwrap()
            .estimator(Mode::Revenue, TechKind::Cd)
            .is_err());
    }
}
