use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;

use tde_plankton::equilibria::{
    classify_and_sweep, compute_nt1, compute_nt2, log_grid, m_ceiling, solve_e2, EquilibriumKind,
};
use tde_plankton::linearize::{build_linearization, char_fn, delay_kernel, KERNEL_SERIES_SWITCH};
use tde_plankton::simulate::{build_initial, dt_for_steps, HistorySpec};
use tde_plankton::{ModelParams, ResponseKind};

fn growth() -> impl Strategy<Value = ResponseKind> {
    prop_oneof![
        Just(ResponseKind::Constant),
        (0.01f64..1.0).prop_map(|l| ResponseKind::MichaelisMenten { l }),
    ]
}

/// Parameters with E2 present: `m` below the ceiling, `N_T` above nt2.
fn coexistence() -> impl Strategy<Value = ModelParams> {
    (growth(), prop_oneof![Just(0.0), 0.0f64..0.17], 0.0f64..0.9, 0.005f64..2.0).prop_map(
        |(g, d0, m_frac, log_above)| {
            let base = ModelParams::table1().with_growth(g).with_delta0(d0);
            let m = m_frac * m_ceiling(&base).min(19.0);
            let base = base.with_m(m);
            let nt2 = compute_nt2(&base).unwrap();
            base.with_n_total(nt2 * 10f64.powf(log_above))
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn e2_satisfies_its_equations(p in coexistence()) {
        let e = solve_e2(&p).unwrap();
        prop_assert!(e.exists);
        prop_assert!(e.residual <= 1e-10 * p.n_total.max(1.0));
    }

    #[test]
    fn equilibrium_budget_closes(p in coexistence()) {
        // N + P + Z plus the juvenile pool at a constant equilibrium history.
        let e = solve_e2(&p).unwrap();
        let spec = HistorySpec::ConstantAtEquilibrium { eps_p: 0.0, eps_z: 0.0 };
        let mut buf = build_initial(&spec, &p, dt_for_steps(&p, 100)).unwrap();
        let now = buf.current();
        prop_assert!((now.n - e.n_star).abs() <= 1e-9 * p.n_total.max(1.0));
        prop_assert!(buf.conservation_residual(&p).abs() <= 1e-12 * p.n_total.max(1.0));
    }

    #[test]
    fn char_fn_is_conjugate_symmetric(p in coexistence(), re in -2.0f64..2.0, im in 0.0f64..30.0) {
        let e = solve_e2(&p).unwrap();
        let lin = build_linearization(&e, &p).unwrap();
        let s = Complex64::new(re, im);
        let a = char_fn(s.conj(), &lin);
        let b = char_fn(s, &lin).conj();
        prop_assert!((a - b).norm() <= 1e-13 * b.norm().max(1e-300));
    }

    #[test]
    fn char_fn_is_periodic_in_maturity_without_juvenile_mortality(
        g in growth(),
        omega in 0.05f64..5.0,
        m in 0.0f64..15.0,
        k in 1u32..4,
    ) {
        let p = ModelParams::table1().with_growth(g).with_m(m);
        let p = p.clone().with_n_total(3.0 * compute_nt2(&p).unwrap());
        let lin = build_linearization(&solve_e2(&p).unwrap(), &p).unwrap();
        let shifted = lin.with_delay(lin.t_delay + 2.0 * PI * k as f64 / omega);
        let s = Complex64::new(0.0, omega);
        let (a, b) = (char_fn(s, &lin), char_fn(s, &shifted));
        prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
    }

    #[test]
    fn delay_kernel_is_continuous_across_series_switch(t in 0.01f64..50.0, theta in 0.0f64..(2.0 * PI)) {
        let r = KERNEL_SERIES_SWITCH / t;
        let inside = delay_kernel(Complex64::from_polar(r * (1.0 - 1e-9), theta), t);
        let s = Complex64::from_polar(r * (1.0 + 1e-9), theta);
        let outside = delay_kernel(s, t);
        prop_assert!((inside - outside).norm() <= 1e-10 * outside.norm());
    }

    #[test]
    fn sweep_regimes_follow_thresholds(g in growth(), d0 in prop_oneof![Just(0.0), Just(0.17)], m in 0.0f64..19.0) {
        let p = ModelParams::table1().with_growth(g).with_delta0(d0).with_m(m);
        let nt1 = compute_nt1(&p);
        let nt2 = compute_nt2(&p).ok();
        let rows = classify_and_sweep(&p, &log_grid(1e-4, 1e2, 60)).unwrap();
        for r in rows {
            let near = |v: f64| (r.n_total - v).abs() <= 1e-9 * v;
            if near(nt1) || nt2.is_some_and(near) {
                continue;
            }
            let want = if r.n_total < nt1 {
                EquilibriumKind::LimitE0
            } else if nt2.is_some_and(|v| r.n_total > v) {
                EquilibriumKind::E2
            } else {
                EquilibriumKind::E1
            };
            prop_assert_eq!(r.point.kind, want);
            prop_assert!(r.point.n_star + r.point.p_star + r.point.z_star <= r.n_total * (1.0 + 1e-12));
        }
    }
}
