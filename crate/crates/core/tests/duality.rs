use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use revpf_core::costmin::{
    c2_min, cost_closed_form, cost_min_numeric, factorization_check, foc_input_price, marginal_cost_closed_form,
};
use revpf_core::{evaluate_quantity, Technology, VariableInput};

struct Draw {
    tech: Technology,
    k: f64,
    pl: f64,
    pm: f64,
    omega: f64,
    target: f64,
}

fn draws(kind: &str, n: usize, seed: u64) -> Vec<Draw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let bl = rng.gen_range(0.1..0.45);
            let bm = rng.gen_range(0.1..0.45);
            let tech = if kind == "cd" {
                Technology::cd(rng.gen_range(0.05..0.5), bl, bm).unwrap()
            } else {
                let sigma = if rng.gen_bool(0.5) { rng.gen_range(0.1..0.8) } else { rng.gen_range(-2.0..-0.1) };
                Technology::ces(bl, bm, sigma, rng.gen_range(0.6..1.3)).unwrap()
            };
            let k = rng.gen_range(0.3..3.0);
            let h = rng.gen_range(0.3..3.0);
            let omega = rng.gen_range(-0.5..0.5);
            Draw {
                tech,
                k,
                pl: rng.gen_range(0.3..3.0),
                pm: rng.gen_range(0.3..3.0),
                omega,
                target: tech.outer(k, h) * f64::exp(omega),
            }
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn closed_forms_match_numeric_oracle() {
    for (kind, seed) in [("cd", 11), ("ces", 12)] {
        for d in draws(kind, 1000, seed) {
            let y = d.target / d.omega.exp();
            let sol = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y).unwrap();
            let closed = cost_closed_form(&d.tech, d.k, d.pl, d.pm, d.target, d.omega).unwrap();
            assert!(rel(closed, sol.total_cost) < 1e-6, "{:?}", d.tech);

            let resid = factorization_check(&d.tech, d.k, d.pl, d.pm, d.target, d.omega).unwrap();
            assert!(resid <= 1e-7, "{resid}");

            let lam =
                marginal_cost_closed_form(&d.tech, d.k, sol.l_star, sol.m_star, d.pl, d.pm, d.omega, 1.0).unwrap();
            assert!(rel(lam * d.omega.exp(), sol.lambda) < 1e-7);

            let q = evaluate_quantity(&d.tech, d.k, sol.l_star, sol.m_star, d.omega, 0.0).unwrap();
            assert!(rel(q, d.target) < 1e-8);

            for (v, p) in [(VariableInput::L, d.pl), (VariableInput::M, d.pm)] {
                let implied = foc_input_price(&d.tech, d.k, sol.l_star, sol.m_star, d.pl, d.pm, 1.0, v).unwrap();
                assert!(rel(implied, p) < 1e-8);
            }
        }
    }
}

#[test]
fn envelope_matches_multiplier() {
    for (kind, seed) in [("cd", 21), ("ces", 22)] {
        for d in draws(kind, 100, seed) {
            let y = d.target / d.omega.exp();
            let lam = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y).unwrap().lambda;
            let step = 1e-4 * y;
            let up = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y + step).unwrap().total_cost;
            let dn = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y - step).unwrap().total_cost;
            assert!(rel((up - dn) / (2.0 * step), lam) < 1e-5);
        }
    }
}

#[test]
fn marginal_cost_increases_with_decreasing_short_run_returns() {
    for d in draws("cd", 200, 31) {
        let y = d.target / d.omega.exp();
        let a = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y).unwrap().lambda;
        let b = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, 1.5 * y).unwrap().lambda;
        assert!(a > 0.0 && b > a);
    }
}

#[test]
fn factorized_inverse_recovers_aggregate() {
    for d in draws("ces", 200, 41) {
        let y = d.target / d.omega.exp();
        let sol = cost_min_numeric(&d.tech, d.k, d.pl, d.pm, y).unwrap();
        let h = d.tech.aggregate().value(sol.l_star, sol.m_star);
        let back = d.tech.outer_inverse(d.k, d.tech.outer(d.k, h)).unwrap();
        assert!(rel(back, h) < 1e-9);
    }
}

// Cobb-Douglas cost written with the output exponent (1 - nu)/nu, an extra
// 1/nu factor and a repeated pM term, where nu = beta_l + beta_m.
fn cd_cost_variant(bk: f64, bl: f64, bm: f64, k: f64, pl: f64, pm: f64, y: f64) -> f64 {
    let nu = bl + bm;
    let b = pl.powf(bl / nu) * pm.powf(bm / nu) * ((bm / bl).powf(bl / nu) + (bl / bm).powf(bm / nu));
    y.powf((1.0 - nu) / nu) * k.powf(-bk / nu) * pm.powf(bm / nu) * b / nu
}

// The same algebra with exponent 1/nu, no leading 1/nu and no repeated pM.
fn cd_cost_corrected(bk: f64, bl: f64, bm: f64, k: f64, pl: f64, pm: f64, y: f64) -> f64 {
    let nu = bl + bm;
    let b = pl.powf(bl / nu) * pm.powf(bm / nu) * ((bm / bl).powf(bl / nu) + (bl / bm).powf(bm / nu));
    y.powf(1.0 / nu) * k.powf(-bk / nu) * b
}

// Marginal cost with K raised to +beta_k/nu.
fn cd_mc_variant(bk: f64, bl: f64, bm: f64, k: f64, pl: f64, pm: f64, f: f64) -> f64 {
    let nu = bl + bm;
    let b = pl.powf(bl / nu) * pm.powf(bm / nu) * ((bm / bl).powf(bl / nu) + (bl / bm).powf(bm / nu));
    f.powf(1.0 / nu - 1.0) * k.powf(bk / nu) * b / nu
}

fn cd_mc_corrected(bk: f64, bl: f64, bm: f64, k: f64, pl: f64, pm: f64, f: f64) -> f64 {
    let nu = bl + bm;
    let b = pl.powf(bl / nu) * pm.powf(bm / nu) * ((bm / bl).powf(bl / nu) + (bl / bm).powf(bm / nu));
    f.powf(1.0 / nu - 1.0) * k.powf(-bk / nu) * b / nu
}

#[test]
fn cd_cost_and_marginal_cost_expressions() {
    let (bk, bl, bm) = (0.3, 0.3, 0.4);
    let tech = Technology::cd(bk, bl, bm).unwrap();
    let (k, pl, pm, y) = (2.0, 1.3, 0.7, 1.7);
    let sol = cost_min_numeric(&tech, k, pl, pm, y).unwrap();

    assert!(rel(cd_cost_corrected(bk, bl, bm, k, pl, pm, y), sol.total_cost) < 1e-9);
    assert!(rel(cd_cost_variant(bk, bl, bm, k, pl, pm, y), sol.total_cost) > 0.1);

    assert!(rel(cd_mc_corrected(bk, bl, bm, k, pl, pm, y), sol.lambda) < 1e-9);
    assert!(rel(cd_mc_variant(bk, bl, bm, k, pl, pm, y), sol.lambda) > 0.1);
}

#[test]
fn ces_cost_and_marginal_cost_expressions() {
    let (bl, bm, sigma, v) = (0.3, 0.4, -0.6, 0.9);
    let tech = Technology::ces(bl, bm, sigma, v).unwrap();
    let bk = 1.0 - bl - bm;
    let (k, pl, pm, y) = (1.4, 0.8, 1.9, 1.2);
    let sol = cost_min_numeric(&tech, k, pl, pm, y).unwrap();
    let b = pl.powf(sigma / (sigma - 1.0)) * bl.powf(-1.0 / (sigma - 1.0))
        + pm.powf(sigma / (sigma - 1.0)) * bm.powf(-1.0 / (sigma - 1.0));
    let cost = (y.powf(sigma / v) - bk * k.powf(sigma)).powf(1.0 / sigma) * b.powf((sigma - 1.0) / sigma);
    assert!(rel(cost, sol.total_cost) < 1e-9);

    let (l, m) = (sol.l_star, sol.m_star);
    let d = bl * l.powf(sigma) + bm * m.powf(sigma);
    let mc = d.powf(1.0 / sigma - 1.0) * y.powf(sigma / v - 1.0) * b.powf((sigma - 1.0) / sigma) / v;
    assert!(rel(mc, sol.lambda) < 1e-9);
    assert!(rel(c2_min(&tech, k, pl, pm).unwrap().value, b.powf((sigma - 1.0) / sigma)) < 1e-13);
}
