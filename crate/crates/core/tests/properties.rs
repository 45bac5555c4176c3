use frontlab::analysis::{self, LagMode};
use frontlab::levelset::column_crossing;
use frontlab::pde::{self, Boundary, Domain, Field, Scheme, SolverConfig};
use frontlab::reaction::ReactionSpec;
use frontlab::support::{self, GammaSpec, SupportSpec};
use proptest::prelude::*;

fn cloud(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64).prop_map(|(x, y)| [x, y]), 1..max)
}

fn reaction() -> impl Strategy<Value = ReactionSpec> {
    prop_oneof![
        Just(ReactionSpec::logistic()),
        (0.05..0.45f64).prop_map(|a| ReactionSpec::bistable(a).unwrap()),
        (0.05..0.6f64).prop_map(|t| ReactionSpec::ignition(t).unwrap()),
        (1.5..3.0f64).prop_map(|p| ReactionSpec::power_kpp(p).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hausdorff_is_a_metric(a in cloud(40), b in cloud(40), c in cloud(40)) {
        let ab = support::hausdorff(&a, &b);
        prop_assert_eq!(ab, support::hausdorff(&b, &a));
        prop_assert_eq!(support::hausdorff(&a, &a), 0.0);
        prop_assert!((ab - support::hausdorff_brute(&a, &b)).abs() <= 1e-12);
        prop_assert!(support::hausdorff(&a, &c) <= ab + support::hausdorff(&b, &c) + 1e-12);
    }

    #[test]
    fn lag_fit_recovers_exact_data(c in 0.2..3.0f64, k in -3.0..3.0f64, b in -5.0..5.0f64, t1 in 200.0..3000.0f64) {
        let n = 300;
        let t: Vec<f64> = (0..n).map(|i| 10.0 * (t1 / 10.0f64).powf(i as f64 / (n - 1) as f64)).collect();
        let x: Vec<f64> = t.iter().map(|t| c * t - k * t.ln() - b).collect();
        for mode in [LagMode::FixSpeed, LagMode::FitAll] {
            let fit = analysis::fit_lag_xy(&t, &x, mode, c, (10.0, t1)).unwrap();
            prop_assert!((fit.k - k).abs() <= 1e-9 && (fit.b - b).abs() <= 1e-8 && (fit.c - c).abs() <= 1e-11, "{:?}", fit);
        }
    }

    #[test]
    fn reactions_vanish_at_rest_states(spec in reaction()) {
        prop_assert!(spec.eval(0.0).abs() <= 1e-15);
        prop_assert!(spec.eval(1.0).abs() <= 1e-15);
    }

    #[test]
    fn ordered_data_stay_ordered(spec in reaction(), seed in prop::collection::vec(0.0..1.0f64, 81), bump in prop::collection::vec(0.0..0.5f64, 81)) {
        let d = Domain::line(-10.0, 10.0, 0.25, [Boundary::ONE, Boundary::ZERO]).unwrap();
        let u = Field::from_fn(d.clone(), |_, x| seed[((x + 10.0) / 0.25).round() as usize]);
        let v = Field::from_fn(d, |_, x| {
            let j = ((x + 10.0) / 0.25).round() as usize;
            (seed[j] + bump[j]).min(1.0)
        });
        let cfg = SolverConfig::explicit(2.0, 1.0);
        let ru = pde::advance(u, &spec, &cfg, &mut []).unwrap();
        let rv = pde::advance(v, &spec, &cfg, &mut []).unwrap();
        for (a, b) in ru.final_field.values.iter().zip(&rv.final_field.values) {
            prop_assert!(*a <= b + 1e-10);
        }
        let (lo, hi) = ru.value_range;
        prop_assert!(lo >= -1e-12 && hi <= 1.0 + 1e-12);
    }

    #[test]
    fn subgraph_distance_is_one_lipschitz(
        beta in 0.5..4.0f64,
        p in (-40.0..40.0f64, -20.0..60.0f64),
        q in (-40.0..40.0f64, -20.0..60.0f64),
    ) {
        let s = SupportSpec::subgraph(GammaSpec::LogCoercive { beta: -beta }).unwrap();
        let (dp, dq) = (s.dist([p.0, p.1]).unwrap(), s.dist([q.0, q.1]).unwrap());
        prop_assert!((dp - dq).abs() <= (p.0 - q.0).hypot(p.1 - q.1) + 1e-5);
        prop_assert_eq!(dp == 0.0, s.indicator([p.0, p.1]));
    }

    #[test]
    fn subgraph_distance_matches_sampling(beta in 0.5..4.0f64, x in 0.0..30.0f64, y in 0.0..80.0f64) {
        let g = GammaSpec::LogCoercive { beta: -beta };
        let s = SupportSpec::subgraph(g.clone()).unwrap();
        let d = s.dist([x, y]).unwrap();
        let sampled = (-2000..=2000)
            .map(|i| {
                let z = x + i as f64 * 0.05;
                let gz = g.eval(z).min(y);
                (z - x).hypot(y - gz)
            })
            .fold(f64::INFINITY, f64::min);
        prop_assert!(d <= sampled + 1e-6, "{} vs {}", d, sampled);
        prop_assert!(d >= sampled - 0.05 * (1.0 + beta), "{} vs {}", d, sampled);
    }

    #[test]
    fn column_crossing_interpolates(vals in prop::collection::vec(0.0..1.0f64, 3..30), lambda in 0.05..0.95f64) {
        let mut col = vals.clone();
        col.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if let Some((pos, multi)) = column_crossing(&col, lambda) {
            prop_assert!(!multi);
            let j = pos.floor() as usize;
            let w = pos - j as f64;
            let u = col[j] * (1.0 - w) + col[j + 1] * w;
            prop_assert!((u - lambda).abs() <= 1e-12);
        } else {
            prop_assert!(col[0] < lambda || col[col.len() - 1] >= lambda);
        }
    }

    #[test]
    fn discrete_speed_increases_under_refinement(f0 in 0.2..2.0f64, h in 0.1..0.6f64) {
        let c_star = 2.0 * f0.sqrt();
        let dt = |h: f64| 0.2 * h * h;
        let coarse = analysis::discrete_kpp_speed(f0, h, dt(h), Scheme::ExplicitEuler);
        let fine = analysis::discrete_kpp_speed(f0, 0.5 * h, dt(0.5 * h), Scheme::ExplicitEuler);
        prop_assert!(coarse < fine && fine < c_star, "{} {} {}", coarse, fine, c_star);
    }
}
