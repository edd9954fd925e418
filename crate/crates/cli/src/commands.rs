use std::fs;
use std::path::{Path, PathBuf};

use revpf_core::estimator::{estimate, EstimateResult, Mode};
use revpf_core::identlab::{diagnose, IdentificationReport, ProfileCurve, ScanSpec};
use revpf_core::simulator::PanelReport;
use revpf_core::{simulate_panel, verify_panel, Execution, SimConfig, TechKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::panel_io::{read_panel_file, write_panel_file};

pub const PANEL_FILE: &str = "panel.csv";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const REPORT_FILE: &str = "report.json";
pub const VERIFY_FILE: &str = "verify.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// File name only, so records do not depend on where a run was made.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    /// Digest of the resolved configuration as canonical JSON.
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub sim_config: Option<SimConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub passed: bool,
    pub violations: usize,
    pub config_source: String,
    pub report: PanelReport,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest {
        name: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        sha256: sha256_bytes(&bytes),
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Solver(format!("cannot serialize output: {e}")))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    fs::write(path, to_json(value)?).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn config_digest<T: Serialize>(value: &T) -> CliResult<String> {
    let text = serde_json::to_string(value).map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(sha256_bytes(text.as_bytes()))
}

fn provenance<T: Serialize>(
    command: &str,
    seed: Option<u64>,
    resolved: &T,
    inputs: &[&Path],
    outputs: &[PathBuf],
    sim_config: Option<SimConfig>,
) -> CliResult<Provenance> {
    Ok(Provenance {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed,
        config_sha256: config_digest(resolved)?,
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        outputs: outputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        sim_config,
    })
}

fn provenance_path(out: &Path, command: &str) -> PathBuf {
    if command == "simulate" {
        out.join(PROVENANCE_FILE)
    } else {
        out.join(format!("{command}.{PROVENANCE_FILE}"))
    }
}

/// Writes `panel.csv` and `provenance.json` into `out`.
pub fn cmd_simulate(cfg: &RunConfig, seed: Option<u64>, out: &Path, exec: Execution) -> CliResult<Provenance> {
    let sim = cfg.sim_config(seed)?;
    let panel = simulate_panel(&sim, exec)?;
    ensure_dir(out)?;
    let panel_path = out.join(PANEL_FILE);
    write_panel_file(&panel, &panel_path)?;
    let prov = provenance("simulate", Some(sim.seed), &sim, &[], &[panel_path], Some(sim.clone()))?;
    write_json(&prov, &provenance_path(out, "simulate"))?;
    Ok(prov)
}

pub fn cmd_estimate(
    cfg: &RunConfig,
    panel_path: &Path,
    mode: Option<Mode>,
    kind: Option<TechKind>,
    out: &Path,
    exec: Execution,
) -> CliResult<EstimateResult> {
    let panel = read_panel_file(panel_path)?;
    let mode = mode.or(cfg.estimate.mode).unwrap_or(Mode::Revenue);
    let ec = cfg.estimator(mode, cfg.kind(kind))?;
    let (res, _) = estimate(&panel, &ec, exec)?;
    ensure_dir(out)?;
    let path = out.join(ESTIMATE_FILE);
    write_json(&res, &path)?;
    let prov = provenance("estimate", None, &ec, &[panel_path], &[path], None)?;
    write_json(&prov, &provenance_path(out, "estimate"))?;
    Ok(res)
}

fn write_profile_csv(curve: &ProfileCurve, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    let err = |e: csv::Error| CliError::io(path, e);
    w.write_record([curve.param.as_str(), "objective"]).map_err(err)?;
    for (x, y) in curve.grid.iter().zip(&curve.objective) {
        w.write_record([x.to_string(), y.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_diagnose(
    cfg: &RunConfig,
    panel_path: &Path,
    mode: Option<Mode>,
    kind: Option<TechKind>,
    scan: Option<ScanSpec>,
    out: &Path,
    exec: Execution,
) -> CliResult<IdentificationReport> {
    let panel = read_panel_file(panel_path)?;
    let mode = mode.unwrap_or(Mode::Revenue);
    let dc = cfg.diagnose(mode, cfg.kind(kind), scan)?;
    let report = diagnose(&panel, &dc, exec)?;
    ensure_dir(out)?;
    let path = out.join(REPORT_FILE);
    write_json(&report, &path)?;
    let mut outputs = vec![path];

    // Requested scans come after the default per-parameter profiles.
    let n_default = report.profile_curves.len() - dc.scans.len();
    let curves: Vec<(usize, &ProfileCurve)> = if cfg.diagnose.plot_data {
        report.profile_curves.iter().enumerate().collect()
    } else {
        report.profile_curves.iter().enumerate().skip(n_default).collect()
    };
    for (i, curve) in curves {
        let name = if i >= n_default {
            format!("profile_{}.csv", curve.param)
        } else {
            format!("profile_default_{}.csv", curve.param)
        };
        let p = out.join(name);
        write_profile_csv(curve, &p)?;
        outputs.push(p);
    }
    let prov = provenance("diagnose", None, &dc, &[panel_path], &outputs, None)?;
    write_json(&prov, &provenance_path(out, "diagnose"))?;
    Ok(report)
}

/// Simulation settings to verify against: the config file when given,
/// otherwise the provenance record next to the panel, otherwise defaults.
fn verify_config(cfg: Option<&RunConfig>, panel_path: &Path) -> CliResult<(SimConfig, String)> {
    if let Some(c) = cfg {
        return Ok((c.simulate.clone(), "config".into()));
    }
    let sibling = panel_path.parent().unwrap_or(Path::new(".")).join(PROVENANCE_FILE);
    if sibling.exists() {
        let text = fs::read_to_string(&sibling).map_err(|e| CliError::io(&sibling, e))?;
        let prov: Provenance =
            serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", sibling.display())))?;
        if let Some(sim) = prov.sim_config {
            return Ok((sim, PROVENANCE_FILE.into()));
        }
    }
    Ok((SimConfig::default(), "default".into()))
}

pub fn cmd_verify(cfg: Option<&RunConfig>, panel_path: &Path, out: &Path) -> CliResult<VerifyOutput> {
    let panel = read_panel_file(panel_path)?;
    let (sim, config_source) = verify_config(cfg, panel_path)?;
    let report = verify_panel(&panel, &sim)?;
    let result = VerifyOutput { passed: report.passed(), violations: report.violations(), config_source, report };
    ensure_dir(out)?;
    write_json(&result, &out.join(VERIFY_FILE))?;
    Ok(result)
}
