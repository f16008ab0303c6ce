mod common;

use common::*;
use confocal_hmc::integrators::{svex_l_steps, imex_l_steps};
use confocal_hmc::model::{signal, ExperimentParams, Measurements};
use confocal_hmc::posterior::build_laplacian;
use confocal_hmc::sampler::{reflect_head, reflect_tail, reflection_ratio};
use confocal_hmc::{HmcParams, PosteriorProblem, Trajectory, TridiagonalOperator};
use proptest::prelude::*;

fn params_strategy() -> impl Strategy<Value = ExperimentParams> {
    (1usize..5, 1usize..8, 0.1f64..10.0, 0.1f64..10.0, 0.1f64..5.0).prop_map(|(n, k, td, ts, d)| ExperimentParams {
        diffusion: d,
        tau_dead: td,
        tau_exp: ts * k as f64,
        ..ExperimentParams::default().with_sizes(n, k)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_rows_sum_to_zero_and_is_negative_semidefinite(
        params in params_strategy(),
        v in prop::collection::vec(-3.0f64..3.0, 60),
    ) {
        let lap = build_laplacian(&params);
        let m = params.node_count();
        for i in 0..m {
            prop_assert!(lap.row_sum(i).abs() <= 1e-9 * (1.0 + lap.diag[i].abs()));
        }
        let x = &v[..m];
        let lx = lap.matvec(x).unwrap();
        let quad: f64 = x.iter().zip(&lx).map(|(a, b)| a * b).sum();
        prop_assert!(quad <= 1e-9 * (1.0 + lap.diag.iter().map(|d| d.abs()).sum::<f64>()));
    }

    #[test]
    fn thomas_inverts_dominant_systems(
        off in prop::collection::vec(-1.0f64..1.0, 1..40),
        extra in prop::collection::vec(0.1f64..3.0, 41),
        rhs in prop::collection::vec(-5.0f64..5.0, 41),
    ) {
        let m = off.len() + 1;
        let diag: Vec<f64> = (0..m)
            .map(|i| {
                let l = if i > 0 { off[i - 1].abs() } else { 0.0 };
                let r = if i + 1 < m { off[i].abs() } else { 0.0 };
                l + r + extra[i]
            })
            .collect();
        let op = TridiagonalOperator::symmetric(off, diag).unwrap();
        let x = op.thomas_solve(&rhs[..m]).unwrap();
        let back = op.matvec(&x).unwrap();
        prop_assert!(max_abs_diff(&back, &rhs[..m]) < 1e-10);
    }

    #[test]
    fn signal_is_even_in_the_trajectory(
        seed in 0u64..1000,
        n in 1usize..4,
        k in 1usize..6,
    ) {
        let params = ExperimentParams::default().with_sizes(n, k);
        let q = Trajectory { values: random_state(params.node_count(), seed, 0.4).q };
        let neg = Trajectory { values: q.values.iter().map(|x| -x).collect() };
        prop_assert_eq!(signal(&q, &params).unwrap(), signal(&neg, &params).unwrap());
    }

    #[test]
    fn reflections_preserve_likelihood_and_match_ratio(
        seed in 0u64..1000,
        n in 1usize..4,
        k in 1usize..6,
        pick in 0usize..1000,
    ) {
        let params = ExperimentParams::default().with_sizes(n, k);
        let problem = PosteriorProblem::new(params, Measurements { w: vec![2; n] }).unwrap();
        let q = Trajectory { values: random_state(params.node_count(), seed, 0.3).q };
        let nn = 1 + pick % n;
        let kk = 1 + (pick / n) % k;
        let local = reflection_ratio(&q, &params, nn, kk).unwrap();
        let v = problem.potential(&q.values).unwrap();
        for r in [reflect_head(&q, &params, nn, kk).unwrap(), reflect_tail(&q, &params, nn, kk).unwrap()] {
            prop_assert_eq!(problem.v_like(&r.values).unwrap(), problem.v_like(&q.values).unwrap());
            let full = v - problem.potential(&r.values).unwrap();
            prop_assert!((full - local).abs() < 1e-9 * (1.0 + v.abs()));
            prop_assert_eq!(r.values[0], 0.0);
        }
    }

    #[test]
    fn integrators_are_reversible_and_keep_the_pin(
        seed in 0u64..1000,
        steps in 1usize..12,
        h in 0.001f64..0.05,
    ) {
        let problem = unit_problem(2, 3, seed);
        let hmc = HmcParams::default().with_step(h, steps);
        let start = random_state(problem.node_count(), seed + 1, 0.5);
        let svex = |s: &_| svex_l_steps(s, &problem, &hmc);
        let imex = |s: &_| imex_l_steps(s, &problem, &hmc).unwrap();
        for map in [&svex as &dyn Fn(&_) -> _, &imex] {
            let mut st = map(&start);
            prop_assert_eq!(st.q[0], 0.0);
            prop_assert_eq!(st.p[0], 0.0);
            st.negate_momentum();
            let mut back = map(&st);
            back.negate_momentum();
            prop_assert!(max_abs_diff(&back.q, &start.q) < 1e-9);
            prop_assert!(max_abs_diff(&back.p, &start.p) < 1e-9);
        }
    }
}
