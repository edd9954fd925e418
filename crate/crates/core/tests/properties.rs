use std::sync::OnceLock;

use proptest::prelude::*;
use revpf_core::costmin::c2_min;
use revpf_core::estimator::{
    build_quantity_moments, default_instruments, first_stage_project, Instrument, Mode, MomentSystem,
};
use revpf_core::identlab::{observational_equivalence, Grid};
use revpf_core::{
    revenue_pf_reduced_form, simulate_panel, Execution, Panel, SimConfig, TechKind, Technology, VariableInput,
};

fn ces() -> impl Strategy<Value = Technology> {
    (0.05..0.45f64, 0.05..0.45f64, prop_oneof![-2.0..-0.05f64, 0.05..0.9f64], 0.5..1.5f64)
        .prop_map(|(bl, bm, s, v)| Technology::ces(bl, bm, s, v).unwrap())
}

fn cd() -> impl Strategy<Value = Technology> {
    (0.0..0.6f64, 0.05..0.6f64, 0.05..0.6f64).prop_map(|(k, l, m)| Technology::cd(k, l, m).unwrap())
}

fn tech() -> impl Strategy<Value = Technology> {
    prop_oneof![cd(), ces()]
}

fn small_panel() -> &'static Panel {
    static P: OnceLock<Panel> = OnceLock::new();
    P.get_or_init(|| {
        simulate_panel(&SimConfig { n_firms: 60, t_periods: 5, ..SimConfig::default_cd() }, Execution::Sequential)
            .unwrap()
    })
}

fn small_system() -> &'static MomentSystem {
    static M: OnceLock<MomentSystem> = OnceLock::new();
    M.get_or_init(|| {
        let p = small_panel();
        let fs = first_stage_project(p, Mode::Quantity, 2).unwrap();
        build_quantity_moments(TechKind::Cd, &fs.fitted, p, 1, &default_instruments()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_cost_is_homogeneous_in_prices(t in tech(), k in 0.3..3.0f64, pl in 0.2..5.0f64, pm in 0.2..5.0f64, c in 0.1..10.0f64) {
        let a = c2_min(&t, k, pl, pm).unwrap().value;
        let b = c2_min(&t, k, c * pl, c * pm).unwrap().value;
        prop_assert!((b - c * a).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn reduced_form_scales_inversely_with_target_share(
        t in tech(), l in 0.2..5.0f64, m in 0.2..5.0f64, pl in 0.2..5.0f64, pm in 0.2..5.0f64,
        s in 0.05..0.9f64, c in 0.2..5.0f64,
    ) {
        for which in VariableInput::BOTH {
            let a = revenue_pf_reduced_form(&t, 1.0, l, m, pl, pm, s, 1.0, which).unwrap();
            let b = revenue_pf_reduced_form(&t, 1.0, l, m, pl, pm, s * c, 1.0, which).unwrap();
            prop_assert!((a / c - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn reduced_form_ignores_capital_and_returns_to_scale(
        bl in 0.05..0.45f64, bm in 0.05..0.45f64, s in 0.05..0.9f64, v1 in 0.5..1.5f64, v2 in 0.5..1.5f64,
        k1 in 0.0..0.6f64, k2 in 0.0..0.6f64, kk in 0.2..5.0f64, l in 0.2..5.0f64, m in 0.2..5.0f64,
    ) {
        let pairs = [
            (Technology::ces(bl, bm, s, v1).unwrap(), Technology::ces(bl, bm, s, v2).unwrap()),
            (Technology::cd(k1, bl, bm).unwrap(), Technology::cd(k2, bl, bm).unwrap()),
        ];
        for (a, b) in pairs {
            for which in VariableInput::BOTH {
                let ra = revenue_pf_reduced_form(&a, kk, l, m, 1.3, 0.7, 0.3, 1.0, which).unwrap();
                let rb = revenue_pf_reduced_form(&b, 2.0 * kk, l, m, 1.3, 0.7, 0.3, 1.0, which).unwrap();
                prop_assert_eq!(ra.to_bits(), rb.to_bits());
            }
        }
    }

    #[test]
    fn equivalence_gap_is_symmetric(a in ces(), b in ces()) {
        let p = small_panel();
        let x = observational_equivalence(&a, &b, p).unwrap();
        let y = observational_equivalence(&b, &a, p).unwrap();
        prop_assert!(x >= 0.0);
        prop_assert_eq!(x, y);
    }

    #[test]
    fn objective_nonnegative_and_covariance_psd(bk in 0.02..0.9f64, bl in 0.02..0.9f64, bm in 0.02..0.9f64) {
        let ms = small_system();
        let theta = [bk, bl, bm];
        prop_assert!(ms.objective(&theta, None).unwrap() >= 0.0);
        let s = ms.moment_covariance(&theta).unwrap();
        prop_assert!((&s - s.transpose()).amax() <= 1e-14 * s.amax().max(1e-300));
        let eig = s.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|e| *e >= -1e-12 * eig.amax().max(1e-300)));
    }

    #[test]
    fn instrument_text_round_trips(
        parts in proptest::collection::vec((0usize..5, any::<bool>()), 1..4)
    ) {
        let names = ["k", "l", "m", "pl", "pm"];
        let text: Vec<String> = parts
            .iter()
            .map(|(v, lag)| format!("{}{}", names[*v], if *lag { "_lag" } else { "" }))
            .collect();
        let text = text.join("*");
        let inst: Instrument = text.parse().unwrap();
        prop_assert_eq!(inst.to_string(), text);
    }

    #[test]
    fn grid_endpoints(lo in -5.0..5.0f64, w in 0.0..5.0f64, n in 2usize..200) {
        let g = Grid { lo, hi: lo + w, n };
        let p = g.points();
        prop_assert_eq!(p.len(), n);
        prop_assert_eq!(p[0], lo);
        prop_assert!((p[n - 1] - (lo + w)).abs() <= 1e-12 * (1.0 + lo.abs() + w));
        prop_assert!(p.windows(2).all(|x| x[1] >= x[0]));
    }
}
