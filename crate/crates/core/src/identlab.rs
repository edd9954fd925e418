//! Identification diagnostics: observational-equivalence certificates,
//! objective profiles and local rank analysis of the moment Jacobian.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    build_quantity_moments, build_revenue_moments, efficient_weight, first_stage_project, gmm_minimize,
    identified_functionals, EstimatorConfig, Instrument, Mode, MomentSystem,
};
use crate::model::{log_revenue_cd, log_revenue_ces, CdParams, CesParams, TechKind, Technology, VariableInput};
use crate::par::Execution;
use crate::simulator::Panel;

pub const EQUIVALENCE_TOL: f64 = 1e-10;
pub const RANK_RTOL: f64 = 1e-8;
pub const FLAT_TOL: f64 = 1e-10;
pub const FD_STEPS: [f64; 3] = [1e-4, 1e-5, 1e-6];
pub const OMEGA_RECOVERY_MIN: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Identified,
    NotIdentified,
    IdentifiedRatioOnly,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Identified => "identified",
            Verdict::NotIdentified => "not identified",
            Verdict::IdentifiedRatioOnly => "identified-ratio-only",
        })
    }
}

/// Log target revenue of every observation under `tech`, for both flexible inputs.
fn revenue_predictions(tech: &Technology, panel: &Panel, cal_e: f64) -> Result<Vec<[f64; 2]>> {
    panel
        .obs
        .iter()
        .map(|o| {
            let (l, m, pl, pm) = (o.l.ln(), o.m.ln(), o.p_l.ln(), o.p_m.ln());
            let mut out = [0.0; 2];
            for (slot, which) in out.iter_mut().zip(VariableInput::BOTH) {
                let s = o.share(which).ln();
                *slot = match tech {
                    Technology::Cd(p) => log_revenue_cd(p, l, m, pl, pm, s, cal_e, which)?,
                    Technology::Ces(p) => log_revenue_ces(p, l, m, pl, pm, s, cal_e, which)?,
                };
            }
            Ok(out)
        })
        .collect()
}

/// Largest absolute difference in log revenue predicted by `a` and `b` over
/// every observation and both flexible inputs.
pub fn observational_equivalence(a: &Technology, b: &Technology, panel: &Panel) -> Result<f64> {
    if a.kind() != b.kind() {
        return Err(Error::Argument(format!("cannot compare a {} and a {} technology", a.kind(), b.kind())));
    }
    let pa = revenue_predictions(a, panel, 1.0)?;
    let pb = revenue_predictions(b, panel, 1.0)?;
    Ok(pa.iter().zip(&pb).flat_map(|(x, y)| [(x[0] - y[0]).abs(), (x[1] - y[1]).abs()]).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub label: String,
    pub theta_a: Vec<f64>,
    pub theta_b: Vec<f64>,
    pub gap: f64,
    pub equivalent: bool,
}

/// Inclusive evenly spaced grid, written `lo:hi:n` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        match self.n {
            0 => vec![],
            1 => vec![self.lo],
            n => (0..n).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (n - 1) as f64).collect(),
        }
    }
}

impl FromStr for Grid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Argument(format!("grid '{s}' is not lo:hi:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo.is_finite() && hi.is_finite()) || hi < lo || n == 0 {
            return Err(bad());
        }
        Ok(Grid { lo, hi, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub param: String,
    pub grid: Vec<f64>,
    pub objective: Vec<f64>,
    /// `(max - min) / max(1, min)` of the objective along the grid.
    pub flatness: f64,
}

fn flatness(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        0.0
    } else {
        (hi - lo) / lo.max(1.0)
    }
}

/// GMM objective along `grid` for `param`, others held at `theta`. The weight
/// is the efficient weight at `theta`, held fixed along the grid.
pub fn profile_scan(ms: &MomentSystem, param: &str, grid: &[f64], theta: &[f64]) -> Result<ProfileCurve> {
    let idx = ms
        .param_index(param)
        .ok_or_else(|| Error::Argument(format!("unknown parameter '{param}'; expected one of {:?}", ms.names)))?;
    ms.check_theta(theta)?;
    if let Some(x) = grid.iter().find(|x| !(**x >= ms.lower[idx] && **x <= ms.upper[idx])) {
        return Err(Error::Argument(format!(
            "grid point {param} = {x} lies outside [{}, {}]",
            ms.lower[idx], ms.upper[idx]
        )));
    }
    let w = efficient_weight(ms, theta)?;
    let objective = ms.exec.try_map_range(grid.len(), |i| {
        let mut t = theta.to_vec();
        t[idx] = grid[i];
        ms.objective(&t, Some(&w))
    })?;
    Ok(ProfileCurve { param: param.to_string(), grid: grid.to_vec(), flatness: flatness(&objective), objective })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub fd_step: f64,
    /// Descending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    pub rank: usize,
    pub deficiency: usize,
    /// Unit vectors in parameter coordinates spanning the numerical null space.
    pub null_directions: Vec<Vec<f64>>,
    /// Scale direction of `(beta_l, beta_m)`, removed before the projected analysis.
    pub ratio_direction: Option<Vec<f64>>,
    pub projected_deficiency: usize,
    pub projected_null_directions: Vec<Vec<f64>>,
}

impl RankReport {
    /// Length of the projection of `axis` onto the raw null space.
    pub fn axis_alignment(&self, axis: usize) -> f64 {
        alignment(&self.null_directions, axis)
    }

    pub fn projected_axis_alignment(&self, axis: usize) -> f64 {
        alignment(&self.projected_null_directions, axis)
    }
}

fn alignment(basis: &[Vec<f64>], axis: usize) -> f64 {
    basis.iter().map(|d| d[axis] * d[axis]).sum::<f64>().sqrt()
}

/// Fourth-order central difference Jacobian of the sample moments.
fn moment_jacobian(ms: &MomentSystem, theta: &[f64], fd_step: f64) -> Result<DMatrix<f64>> {
    if !(fd_step.is_finite() && fd_step > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {fd_step}")));
    }
    ms.check_theta(theta)?;
    let p = theta.len();
    let q = ms.n_moments();
    let cols = ms.exec.try_map_range(p, |c| {
        let h = fd_step * theta[c].abs().max(1.0);
        if theta[c] + h == theta[c] || theta[c] - 2.0 * h == theta[c] {
            return Err(Error::Argument(format!("step {fd_step} underflows at {} = {}", ms.names[c], theta[c])));
        }
        let at = |k: f64| {
            let mut t = theta.to_vec();
            t[c] += k * h;
            ms.moments(&t)
        };
        let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        Ok((0..q).map(|r| (-p2[r] + 8.0 * p1[r] - 8.0 * m1[r] + m2[r]) / (12.0 * h)).collect::<Vec<f64>>())
    })?;
    Ok(DMatrix::from_fn(q, p, |r, c| cols[c][r]))
}

/// Singular values (descending) and the right singular vectors below `cutoff`.
fn svd_null(j: &DMatrix<f64>, rtol: f64) -> (Vec<f64>, f64, Vec<Vec<f64>>) {
    let p = j.ncols();
    // Pad with zero rows so the decomposition always yields p right vectors.
    let jj = if j.nrows() < p {
        DMatrix::from_fn(p, p, |r, c| if r < j.nrows() { j[(r, c)] } else { 0.0 })
    } else {
        j.clone()
    };
    let svd = jj.svd(false, true);
    let vt = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let threshold = rtol * sv.first().copied().unwrap_or(0.0);
    let null = order
        .iter()
        .filter(|&&i| svd.singular_values[i] <= threshold)
        .map(|&i| vt.row(i).iter().copied().collect())
        .collect();
    (sv, threshold, null)
}

fn ratio_direction(ms: &MomentSystem, theta: &[f64]) -> Option<Vec<f64>> {
    if ms.mode != Mode::Revenue {
        return None;
    }
    let (il, im) = (ms.param_index("beta_l")?, ms.param_index("beta_m")?);
    let norm = theta[il].hypot(theta[im]);
    let mut d = vec![0.0; theta.len()];
    d[il] = theta[il] / norm;
    d[im] = theta[im] / norm;
    Some(d)
}

/// Orthonormal basis (columns) of the complement of unit vector `d`.
fn complement_basis(d: &[f64]) -> DMatrix<f64> {
    let p = d.len();
    let dv = nalgebra::DVector::from_column_slice(d);
    let proj = DMatrix::identity(p, p) - &dv * dv.transpose();
    let eig = proj.symmetric_eigen();
    let keep: Vec<usize> = (0..p).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    DMatrix::from_fn(p, keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// Local rank analysis of the moment Jacobian at `theta`.
///
/// In revenue mode the analysis is repeated after removing the
/// `(beta_l, beta_m)` scale direction, which no revenue data can move.
pub fn jacobian_rank(ms: &MomentSystem, theta: &[f64], fd_step: f64) -> Result<RankReport> {
    jacobian_rank_with(ms, theta, fd_step, RANK_RTOL)
}

pub fn jacobian_rank_with(ms: &MomentSystem, theta: &[f64], fd_step: f64, rtol: f64) -> Result<RankReport> {
    let j = moment_jacobian(ms, theta, fd_step)?;
    let (singular_values, threshold, null_directions) = svd_null(&j, rtol);
    let p = theta.len();
    let ratio = ratio_direction(ms, theta);
    let (projected_deficiency, projected_null_directions) = match &ratio {
        None => (null_directions.len(), null_directions.clone()),
        Some(d) => {
            let q = complement_basis(d);
            let (_, _, null) = svd_null(&(&j * &q), rtol);
            let mapped: Vec<Vec<f64>> =
                null.iter().map(|u| (&q * nalgebra::DVector::from_column_slice(u)).iter().copied().collect()).collect();
            (mapped.len(), mapped)
        }
    };
    Ok(RankReport {
        fd_step,
        rank: p - null_directions.len(),
        deficiency: null_directions.len(),
        singular_values,
        threshold,
        null_directions,
        ratio_direction: ratio,
        projected_deficiency,
        projected_null_directions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaRecovery {
    pub mode: Mode,
    pub skipped: bool,
    pub notice: Option<String>,
    pub n_obs: usize,
    /// Correlation of the recovered series with the simulated omega.
    pub correlation: Option<f64>,
    /// `3 / sqrt(N T)` in revenue mode, the minimum correlation in quantity mode.
    pub bound: f64,
    pub certified: bool,
    pub residual_variance: f64,
    pub eps_variance: Option<f64>,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

fn variance(a: &[f64]) -> f64 {
    let n = a.len() as f64;
    let m = a.iter().sum::<f64>() / n;
    a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Tries to recover productivity at `theta`.
///
/// Quantity mode uses the implied `q* - q(X)` series. Revenue mode uses the
/// residual of observed log R against the revenue reduced form, which does
/// not contain omega at all.
pub fn omega_recovery_attempt(panel: &Panel, ms: &MomentSystem, theta: &[f64]) -> Result<OmegaRecovery> {
    ms.check_theta(theta)?;
    let n = panel.len();
    let series: Vec<f64> = match ms.mode {
        Mode::Quantity => ms.implied_omega(theta)?,
        Mode::Revenue => {
            let tech = match ms.kind {
                TechKind::Cd => Technology::Cd(CdParams { beta_k: theta[0], beta_l: theta[1], beta_m: theta[2] }),
                TechKind::Ces => {
                    Technology::Ces(CesParams { sigma: theta[0], beta_l: theta[1], beta_m: theta[2], v: theta[3] })
                }
            };
            let pred = revenue_predictions(&tech, panel, ms.cal_e())?;
            panel.obs.iter().zip(&pred).map(|(o, p)| o.r.ln() - 0.5 * (p[0] + p[1])).collect()
        }
    };
    let bound = match ms.mode {
        Mode::Quantity => OMEGA_RECOVERY_MIN,
        Mode::Revenue => 3.0 / (n.max(1) as f64).sqrt(),
    };
    let eps: Option<Vec<f64>> = panel.obs.iter().map(|o| o.eps).collect();
    let mut out = OmegaRecovery {
        mode: ms.mode,
        skipped: false,
        notice: None,
        n_obs: n,
        correlation: None,
        bound,
        certified: false,
        residual_variance: if n > 0 { variance(&series) } else { 0.0 },
        eps_variance: eps.filter(|e| !e.is_empty()).map(|e| variance(&e)),
    };
    if !panel.has_omega() {
        out.skipped = true;
        out.notice = Some("panel has no true omega column; recovery check skipped".into());
        return Ok(out);
    }
    let truth: Vec<f64> = panel.obs.iter().map(|o| o.omega.expect("checked")).collect();
    let c = correlation(&series, &truth);
    out.correlation = Some(c);
    out.certified = match ms.mode {
        Mode::Quantity => c >= bound,
        Mode::Revenue => c.abs() <= bound,
    };
    Ok(out)
}

/// A profile request: `param` over `grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    pub param: String,
    pub grid: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseConfig {
    pub estimator: EstimatorConfig,
    /// Extra profiles; every parameter also gets a default profile.
    pub scans: Vec<ScanSpec>,
    pub fd_steps: Vec<f64>,
    pub equivalence_tol: f64,
    pub rank_rtol: f64,
    pub flat_tol: f64,
}

impl DiagnoseConfig {
    pub fn new(kind: TechKind) -> Self {
        DiagnoseConfig {
            estimator: EstimatorConfig::new(Mode::Revenue, kind),
            scans: vec![],
            fd_steps: FD_STEPS.to_vec(),
            equivalence_tol: EQUIVALENCE_TOL,
            rank_rtol: RANK_RTOL,
            flat_tol: FLAT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub mode: Mode,
    pub kind: TechKind,
    pub param_names: Vec<String>,
    /// Point at which the local diagnostics were evaluated (the GMM estimate).
    pub theta: Vec<f64>,
    pub identified_functionals: BTreeMap<String, f64>,
    /// Largest gap over the checks that move only non-identified coordinates.
    pub equivalence_gap: f64,
    pub equivalence: Vec<EquivalenceCheck>,
    pub profile_curves: Vec<ProfileCurve>,
    /// At the middle finite-difference step.
    pub singular_values: Vec<f64>,
    pub null_directions: Vec<Vec<f64>>,
    pub rank_by_step: Vec<RankReport>,
    pub rank_stable: bool,
    pub omega: OmegaRecovery,
    pub verdicts: BTreeMap<String, Verdict>,
    pub notices: Vec<String>,
}

fn default_grid(ms: &MomentSystem, idx: usize, theta: &[f64]) -> Vec<f64> {
    let name = ms.names[idx].as_str();
    let (lo, hi) = match (ms.kind, name) {
        (TechKind::Ces, "v") => (0.7, 1.3),
        (TechKind::Cd, "beta_k") => (0.05, 0.6),
        _ => (theta[idx] - 0.1, theta[idx] + 0.1),
    };
    let (lo, hi) = (lo.max(ms.lower[idx]), hi.min(ms.upper[idx]));
    Grid { lo, hi, n: 25 }
        .points()
        .into_iter()
        .filter(|x| !(name == "sigma" && x.abs() < 1e-6))
        .filter(|x| {
            let mut t = theta.to_vec();
            t[idx] = *x;
            ms.check_theta(&t).is_ok()
        })
        .collect()
}

fn equivalence_checks(ms: &MomentSystem, theta: &[f64], panel: &Panel, tol: f64) -> Result<Vec<EquivalenceCheck>> {
    let tech = |t: &[f64]| -> Technology {
        match ms.kind {
            TechKind::Cd => Technology::Cd(CdParams { beta_k: t[0], beta_l: t[1], beta_m: t[2] }),
            TechKind::Ces => Technology::Ces(CesParams { sigma: t[0], beta_l: t[1], beta_m: t[2], v: t[3] }),
        }
    };
    let with = |i: usize, x: f64| {
        let mut t = theta.to_vec();
        t[i] = x;
        t
    };
    let pairs: Vec<(String, Vec<f64>, Vec<f64>)> = match ms.kind {
        TechKind::Cd => vec![
            ("beta_k".into(), with(0, 0.2), with(0, 0.5)),
            ("beta_l,beta_m scale".into(), theta.to_vec(), {
                let mut t = theta.to_vec();
                t[1] *= 1.25;
                t[2] *= 1.25;
                t
            }),
            ("beta_l".into(), theta.to_vec(), with(1, theta[1] + 0.1)),
        ],
        TechKind::Ces => vec![
            ("v".into(), with(3, 0.8), with(3, 1.2)),
            ("sigma".into(), theta.to_vec(), with(0, theta[0] + 0.1)),
            ("beta_l".into(), theta.to_vec(), with(1, theta[1] + 0.05)),
        ],
    };
    pairs
        .into_iter()
        .map(|(label, a, b)| {
            let gap = observational_equivalence(&tech(&a), &tech(&b), panel)?;
            Ok(EquivalenceCheck { label, theta_a: a, theta_b: b, gap, equivalent: gap <= tol })
        })
        .collect()
}

/// Estimates, then runs every diagnostic at the estimate.
pub fn diagnose(panel: &Panel, cfg: &DiagnoseConfig, exec: Execution) -> Result<IdentificationReport> {
    let ec = &cfg.estimator;
    if cfg.fd_steps.is_empty() {
        return Err(Error::Argument("at least one finite-difference step is needed".into()));
    }
    let fs = first_stage_project(panel, ec.mode, ec.poly_degree)?;
    let instruments = ec.instruments.iter().map(|s| s.parse()).collect::<Result<Vec<Instrument>>>()?;
    let ms = match ec.mode {
        Mode::Quantity => build_quantity_moments(ec.kind, &fs.fitted, panel, ec.g_degree, &instruments)?,
        Mode::Revenue => build_revenue_moments(
            ec.kind,
            &fs.fitted,
            panel,
            ec.g_degree,
            &instruments,
            ec.cal_e.unwrap_or(fs.cal_e_hat),
        )?,
    }
    .with_execution(exec);
    let est = gmm_minimize(&ms, &ec.gmm, None)?;
    let theta = est.estimate.clone();
    let mut notices = fs.warnings.clone();
    notices.extend(est.warnings.iter().cloned());

    let equivalence = equivalence_checks(&ms, &theta, panel, cfg.equivalence_tol)?;
    let free = ms.non_identified_axes();
    let equivalence_gap = equivalence
        .iter()
        .filter(|c| free.contains(&c.label) || c.label.ends_with("scale"))
        .map(|c| c.gap)
        .fold(0.0, f64::max);

    let mut profile_curves = Vec::new();
    for idx in 0..ms.n_params() {
        let grid = default_grid(&ms, idx, &theta);
        profile_curves.push(profile_scan(&ms, &ms.names[idx], &grid, &theta)?);
    }
    for s in &cfg.scans {
        profile_curves.push(profile_scan(&ms, &s.param, &s.grid.points(), &theta)?);
    }

    let rank_by_step =
        cfg.fd_steps.iter().map(|&h| jacobian_rank_with(&ms, &theta, h, cfg.rank_rtol)).collect::<Result<Vec<_>>>()?;
    let rank_stable = rank_by_step.windows(2).all(|w| w[0].rank == w[1].rank);
    if !rank_stable {
        notices.push(format!(
            "numerical rank changes with the step: {:?}",
            rank_by_step.iter().map(|r| (r.fd_step, r.rank)).collect::<Vec<_>>()
        ));
    }
    let reference = &rank_by_step[rank_by_step.len() / 2];

    let omega = omega_recovery_attempt(panel, &ms, &theta)?;
    if let Some(n) = &omega.notice {
        notices.push(n.clone());
    }

    let mut verdicts = BTreeMap::new();
    for (idx, name) in ms.names.iter().enumerate() {
        let a = reference.axis_alignment(idx);
        let flat = profile_curves.iter().any(|c| c.param == *name && c.flatness <= cfg.flat_tol);
        let v = if a >= 0.999 || flat {
            Verdict::NotIdentified
        } else if a > 1e-3 {
            Verdict::IdentifiedRatioOnly
        } else {
            Verdict::Identified
        };
        verdicts.insert(name.clone(), v);
    }
    if !omega.skipped {
        let v =
            if omega.mode == Mode::Quantity && omega.certified { Verdict::Identified } else { Verdict::NotIdentified };
        verdicts.insert("omega".into(), v);
    }

    Ok(IdentificationReport {
        mode: ms.mode,
        kind: ms.kind,
        param_names: ms.names.clone(),
        identified_functionals: identified_functionals(ms.kind, &theta),
        theta,
        equivalence_gap,
        equivalence,
        profile_curves,
        singular_values: reference.singular_values.clone(),
        null_directions: reference.null_directions.clone(),
        rank_by_step: rank_by_step.clone(),
        rank_stable,
        omega,
        verdicts,
        notices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g: Grid = "0.7:1.3:25".parse().unwrap();
        let p = g.points();
        assert_eq!(p.len(), 25);
        assert_eq!(p[0], 0.7);
        assert!((p[24] - 1.3).abs() < 1e-15);
        assert!("1:0:3".parse::<Grid>().is_err());
        assert!("0:1".parse::<Grid>().is_err());
        assert!("0:1:0".parse::<Grid>().is_err());
    }

    #[test]
    fn flatness_statistic() {
        assert_eq!(flatness(&[2.0, 2.0]), 0.0);
        assert!((flatness(&[0.1, 0.3]) - 0.2).abs() < 1e-15);
        assert_eq!(flatness(&[2.0, 4.0]), 1.0);
    }

    #[test]
    fn complement_is_orthonormal() {
        let d = [0.0, 0.6, 0.8, 0.0];
        let q = complement_basis(&d);
        assert_eq!(q.ncols(), 3);
        let g = q.transpose() * &q;
        assert!((g - DMatrix::identity(3, 3)).norm() < 1e-12);
        let dv = nalgebra::DVector::from_column_slice(&d);
        assert!((q.transpose() * dv).norm() < 1e-12);
    }

    #[test]
    fn null_space_of_known_matrix() {
        let j = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let (sv, _, null) = svd_null(&j, 1e-8);
        assert_eq!(sv, vec![2.0, 1.0, 0.0]);
        assert_eq!(null.len(), 1);
        assert!((null[0][2].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn verdict_labels() {
        assert_eq!(Verdict::IdentifiedRatioOnly.to_string(), "identified-ratio-only");
        assert_eq!(serde_json::to_string(&Verdict::NotIdentified).unwrap(), "\"not_identified\"");
    }
}
