//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revpf_core::costmin::{
    cost_closed_form, cost_min_numeric, factorization_check, foc_input_price, marginal_cost_closed_form,
};
use revpf_core::estimator::{
    build_quantity_moments, build_revenue_moments, default_instruments, estimate, first_stage_project, theta_of,
    EstimatorConfig, Mode, MomentSystem,
};
use revpf_core::identlab::{jacobian_rank, omega_recovery_attempt, profile_scan, Grid, FD_STEPS};
use revpf_core::{
    revenue_pf_reduced_form, simulate_panel, Execution, Panel, SimConfig, TechKind, Technology, VariableInput,
};

const DUALITY_RTOL: f64 = 1e-6;
const FACTORIZATION_TOL: f64 = 1e-7;
const DUALITY_DRAWS: usize = 1000;
const REDUCED_FORM_RTOL: f64 = 1e-7;
const FOC_TOL: f64 = 1e-8;
const FLAT_TOL: f64 = 1e-10;
const FLAT_RATIO: f64 = 100.0;
const OMEGA_CORR_MIN: f64 = 0.95;
const REPS: u64 = 20;
const SIGMA_TOL: f64 = 0.05;
const RATIO_RTOL: f64 = 0.10;
const CES_QUANTITY_TOL: f64 = 0.05;
const CD_QUANTITY_TOL: f64 = 0.03;

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn panel(cfg: &SimConfig) -> Panel {
    simulate_panel(cfg, Execution::Parallel).expect("simulation")
}

fn system(panel: &Panel, mode: Mode, kind: TechKind) -> MomentSystem {
    let fs = first_stage_project(panel, mode, 3).expect("first stage");
    match mode {
        Mode::Quantity => build_quantity_moments(kind, &fs.fitted, panel, 1, &default_instruments()),
        Mode::Revenue => build_revenue_moments(kind, &fs.fitted, panel, 1, &default_instruments(), 1.0),
    }
    .expect("moments")
}

fn random_tech(rng: &mut ChaCha8Rng, kind: TechKind) -> Technology {
    let bl = rng.gen_range(0.1..0.45);
    let bm = rng.gen_range(0.1..0.45);
    match kind {
        TechKind::Cd => Technology::cd(rng.gen_range(0.05..0.5), bl, bm).unwrap(),
        TechKind::Ces => {
            let sigma = if rng.gen_bool(0.5) { rng.gen_range(0.1..0.8) } else { rng.gen_range(-2.0..-0.1) };
            Technology::ces(bl, bm, sigma, rng.gen_range(0.6..1.3)).unwrap()
        }
    }
}

fn duality() -> Outcome {
    let (mut cost_err, mut mc_err, mut fact) = (0.0f64, 0.0f64, 0.0f64);
    for (kind, seed) in [(TechKind::Cd, 101), (TechKind::Ces, 102)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..DUALITY_DRAWS {
            let tech = random_tech(&mut rng, kind);
            let k = rng.gen_range(0.3..3.0);
            let h = rng.gen_range(0.3..3.0);
            let omega = rng.gen_range(-0.5..0.5);
            let pl = rng.gen_range(0.3..3.0);
            let pm = rng.gen_range(0.3..3.0);
            let target = tech.outer(k, h) * f64::exp(omega);
            let sol = cost_min_numeric(&tech, k, pl, pm, target / omega.exp()).unwrap();
            let closed = cost_closed_form(&tech, k, pl, pm, target, omega).unwrap();
            cost_err = cost_err.max(rel(closed, sol.total_cost));
            let lam = marginal_cost_closed_form(&tech, k, sol.l_star, sol.m_star, pl, pm, omega, 1.0).unwrap();
            mc_err = mc_err.max(rel(lam * omega.exp(), sol.lambda));
            fact = fact.max(factorization_check(&tech, k, pl, pm, target, omega).unwrap());
        }
    }
    outcome(
        cost_err <= DUALITY_RTOL && mc_err <= DUALITY_RTOL && fact <= FACTORIZATION_TOL,
        format!(
            "{} draws per technology, max rel cost err {cost_err:.2e}, max rel MC err {mc_err:.2e}, max factorization residual {fact:.2e}",
            DUALITY_DRAWS
        ),
    )
}

fn reduced_form(panels: &[(SimConfig, Panel)]) -> Outcome {
    let (mut err, mut cross, mut rows) = (0.0f64, 0.0f64, 0usize);
    for (cfg, p) in panels {
        let cal_e = cfg.shocks.cal_e();
        for o in &p.obs {
            let r_star = o.r_star().expect("simulated panel has eps");
            let g = VariableInput::BOTH.map(|v| {
                revenue_pf_reduced_form(&cfg.tech, o.k, o.l, o.m, o.p_l, o.p_m, o.share(v), cal_e, v).unwrap()
            });
            err = err.max(rel(g[0], r_star)).max(rel(g[1], r_star));
            cross = cross.max(rel(g[0], g[1]));
            rows += 1;
        }
    }
    outcome(
        err <= REDUCED_FORM_RTOL && cross <= REDUCED_FORM_RTOL,
        format!("{rows} rows, max rel err vs R* {err:.2e}, max rel gap between L and M variants {cross:.2e}"),
    )
}

fn foc(panels: &[(SimConfig, Panel)]) -> Outcome {
    let (mut err, mut rows) = (0.0f64, 0usize);
    for (cfg, p) in panels {
        let cal_e = cfg.shocks.cal_e();
        for o in &p.obs {
            for v in VariableInput::BOTH {
                let implied = foc_input_price(&cfg.tech, o.k, o.l, o.m, o.p_l, o.p_m, cal_e, v).unwrap();
                err = err.max(rel(implied, o.price(v)));
            }
            rows += 1;
        }
    }
    outcome(err <= FOC_TOL, format!("{rows} rows, max rel err {err:.2e}"))
}

fn bit_identical(p: &Panel, a: &Technology, b: &Technology) -> bool {
    p.obs.iter().all(|o| {
        VariableInput::BOTH.iter().all(|&v| {
            let x = revenue_pf_reduced_form(a, o.k, o.l, o.m, o.p_l, o.p_m, o.share(v), 1.0, v).unwrap();
            let y = revenue_pf_reduced_form(b, o.k, o.l, o.m, o.p_l, o.p_m, o.share(v), 1.0, v).unwrap();
            x.to_bits() == y.to_bits()
        })
    })
}

fn certificates(ces: &Panel, ces_cfg: &SimConfig) -> Outcome {
    let cd_same = [0.05, 0.2, 0.45].windows(2).all(|w| {
        bit_identical(ces, &Technology::cd(w[0], 0.3, 0.4).unwrap(), &Technology::cd(w[1], 0.3, 0.4).unwrap())
    });
    let ces_same = [0.7, 1.0, 1.3].windows(2).all(|w| {
        bit_identical(
            ces,
            &Technology::ces(0.3, 0.4, 0.5, w[0]).unwrap(),
            &Technology::ces(0.3, 0.4, 0.5, w[1]).unwrap(),
        )
    });

    let ms = system(&ces.revenue_only(), Mode::Revenue, TechKind::Ces);
    let truth = theta_of(&ces_cfg.tech);
    let v = profile_scan(&ms, "v", &Grid { lo: 0.7, hi: 1.3, n: 25 }.points(), &truth).unwrap();
    let s = profile_scan(&ms, "sigma", &Grid { lo: 0.3, hi: 0.7, n: 21 }.points(), &truth).unwrap();
    let ratio_ok = s.flatness >= FLAT_RATIO * v.flatness.max(FLAT_TOL);
    outcome(
        cd_same && ces_same && v.flatness <= FLAT_TOL && ratio_ok,
        format!(
            "bit-identical across beta_K: {cd_same}, across v: {ces_same}, v flatness {:.2e}, sigma flatness {:.2e}",
            v.flatness, s.flatness
        ),
    )
}

fn rank(cd: &Panel, cd_cfg: &SimConfig, ces: &Panel, ces_cfg: &SimConfig) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (p, cfg) in [(ces, ces_cfg), (cd, cd_cfg)] {
        let kind = cfg.tech.kind();
        let truth = theta_of(&cfg.tech);
        let ms = system(&p.revenue_only(), Mode::Revenue, kind);
        let free = ms.param_index(&ms.non_identified_axes()[0]).unwrap();
        let mut raw = Vec::new();
        let mut projected = Vec::new();
        for h in FD_STEPS {
            let r = jacobian_rank(&ms, &truth, h).unwrap();
            raw.push(r.deficiency);
            projected.push(r.projected_deficiency);
            ok &= r.projected_axis_alignment(free) >= 0.999;
            ok &= match kind {
                TechKind::Ces => r.deficiency == 2,
                TechKind::Cd => r.projected_deficiency == 1,
            };
        }
        let qms = system(p, Mode::Quantity, kind);
        let full: Vec<usize> = FD_STEPS.iter().map(|&h| jacobian_rank(&qms, &truth, h).unwrap().deficiency).collect();
        ok &= full.iter().all(|d| *d == 0);
        parts.push(format!(
            "{kind} revenue deficiency {raw:?} raw / {projected:?} after ratio projection, quantity {full:?}"
        ));
    }
    outcome(ok, parts.join("; "))
}

fn productivity(panels: &[(SimConfig, Panel)]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (cfg, p) in panels {
        let truth = theta_of(&cfg.tech);
        let kind = cfg.tech.kind();
        let bound = 3.0 / (p.len() as f64).sqrt();
        let r = omega_recovery_attempt(p, &system(&p.revenue_only(), Mode::Revenue, kind), &truth).unwrap();
        let q = omega_recovery_attempt(p, &system(p, Mode::Quantity, kind), &truth).unwrap();
        let (rc, qc) = (r.correlation.unwrap_or(f64::NAN), q.correlation.unwrap_or(f64::NAN));
        ok &= rc.abs() <= bound && qc >= OMEGA_CORR_MIN;
        parts.push(format!("{kind} revenue corr {rc:.4} (bound {bound:.4}), quantity corr {qc:.4}"));
    }
    outcome(ok, parts.join("; "))
}

fn monte_carlo(base: &SimConfig, mode: Mode) -> Vec<Vec<f64>> {
    (0..REPS)
        .map(|rep| {
            let cfg = SimConfig { seed: 7000 + rep, ..base.clone() };
            let p = panel(&cfg);
            let p = if mode == Mode::Revenue { p.revenue_only() } else { p };
            let ec = EstimatorConfig::new(mode, cfg.tech.kind());
            estimate(&p, &ec, Execution::Parallel).expect("estimation").0.estimate
        })
        .collect()
}

// Both parameter vectors carry beta_L and beta_M in positions 1 and 2.
fn ratio(theta: &[f64]) -> f64 {
    theta[1] / theta[2]
}

fn revenue_recovery() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for base in [SimConfig::default_ces(), SimConfig::default_cd()] {
        let kind = base.tech.kind();
        let truth = theta_of(&base.tech);
        let est = monte_carlo(&base, Mode::Revenue);
        let r_true = ratio(&truth);
        let r_err = median(est.iter().map(|e| rel(ratio(e), r_true)).collect());
        ok &= r_err <= RATIO_RTOL;
        let mut line = format!("{kind} median rel err beta_L/beta_M {r_err:.4}");
        if kind == TechKind::Ces {
            let s_err = median(est.iter().map(|e| (e[0] - truth[0]).abs()).collect());
            ok &= s_err <= SIGMA_TOL;
            line = format!("{line}, median abs err sigma {s_err:.4}");
        }
        parts.push(line);
    }
    outcome(ok, format!("{REPS} reps; {}", parts.join("; ")))
}

fn quantity_recovery() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (base, tol) in [(SimConfig::default_ces(), CES_QUANTITY_TOL), (SimConfig::default_cd(), CD_QUANTITY_TOL)] {
        let truth = theta_of(&base.tech);
        let est = monte_carlo(&base, Mode::Quantity);
        let errs: Vec<f64> =
            (0..truth.len()).map(|j| median(est.iter().map(|e| (e[j] - truth[j]).abs()).collect())).collect();
        ok &= errs.iter().all(|e| *e <= tol);
        let shown: Vec<String> = errs.iter().map(|e| format!("{e:.4}")).collect();
        parts.push(format!("{} median abs errs [{}] (tol {tol})", base.tech.kind(), shown.join(", ")));
    }
    outcome(ok, format!("{REPS} reps; {}", parts.join("; ")))
}

fn revpf(args: &[&str], dir: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_revpf"))
        .args(args)
        .current_dir(dir)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 2024\n[simulate]\nn_firms = 200\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let mut ran = true;
    for run in ["a", "b"] {
        ran &= revpf(&["simulate", "--config", cfg, "--out", run], tmp.path());
        ran &= revpf(&["diagnose", &format!("{run}/panel.csv"), "--config", cfg, "--out", run], tmp.path());
    }
    let files = ["panel.csv", "provenance.json", "report.json", "diagnose.provenance.json"];
    let same: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let a = std::fs::read(tmp.path().join("a").join(f));
            let b = std::fs::read(tmp.path().join("b").join(f));
            matches!((a, b), (Ok(a), Ok(b)) if a == b)
        })
        .collect();
    outcome(ran && same.len() == files.len(), format!("commands succeeded: {ran}, identical files {same:?}"))
}

fn main() -> ExitCode {
    let start = Instant::now();
    let ces_cfg = SimConfig::default_ces();
    let cd_cfg = SimConfig::default_cd();
    let ces = panel(&ces_cfg);
    let cd = panel(&cd_cfg);
    let panels = vec![(ces_cfg.clone(), ces.clone()), (cd_cfg.clone(), cd.clone())];

    let criteria: Vec<Check> = vec![
        ("duality oracle", Box::new(duality)),
        ("reduced-form revenue", Box::new(|| reduced_form(&panels))),
        ("first-order conditions", Box::new(|| foc(&panels))),
        ("non-identification certificates", Box::new(|| certificates(&ces, &ces_cfg))),
        ("rank diagnostics", Box::new(|| rank(&cd, &cd_cfg, &ces, &ces_cfg))),
        ("productivity recovery", Box::new(|| productivity(&panels))),
        ("identified-functional recovery", Box::new(revenue_recovery)),
        ("quantity-mode benchmark", Box::new(quantity_recovery)),
        ("determinism", Box::new(determinism)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.passed);
        println!(
            "criterion {} {name}: {} ({}) [{:.1}s]",
            i + 1,
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} passed in {:.1}s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
