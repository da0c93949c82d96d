use mlonsim::stopping::{
    argmin_first, causal_stop, causal_stop_index, check_prop2, is_discrete_convex, noncausal_oracle,
    objective_sequence, Decision,
};
use mlonsim::ExactCost;
use proptest::prelude::*;

fn q(n: i64) -> ExactCost {
    ExactCost::from_integer(n)
}

/// Convex nonincreasing losses from nonincreasing drops, and nondecreasing costs.
fn convex_trace() -> impl Strategy<Value = (Vec<ExactCost>, Vec<ExactCost>, ExactCost)> {
    (1usize..40).prop_flat_map(|k| {
        (
            prop::collection::vec(0i64..50, k),
            prop::collection::vec(0i64..20, k),
            1i64..20,
            0i64..=10,
        )
            .prop_map(|(mut drops, mut extra, c1, beta)| {
                drops.sort_unstable_by(|a, b| b.cmp(a));
                extra.sort_unstable();
                let top: i64 = drops.iter().sum::<i64>() + 7;
                let mut f = vec![q(top)];
                for d in &drops {
                    let last = *f.last().unwrap();
                    f.push(last - q(*d));
                }
                let c = extra.iter().map(|e| q(c1 + e)).collect();
                (f, c, ExactCost::new(beta, 10))
            })
    })
}

fn arbitrary_trace() -> impl Strategy<Value = (Vec<i64>, Vec<i64>, i64)> {
    (1usize..30).prop_flat_map(|k| {
        (
            prop::collection::vec(0i64..100, k + 1),
            prop::collection::vec(0i64..30, k),
            0i64..=10,
        )
    })
}

proptest! {
    #[test]
    fn sandwich_holds_on_convex_traces((f, c, beta) in convex_trace()) {
        let g = objective_sequence(&f, &c, beta).unwrap();
        prop_assert!(is_discrete_convex(&g));
        let r = check_prop2(&f, &c, beta).unwrap();
        prop_assert!(r.k_star <= r.k_star_c && r.k_star_c <= r.k_star + 1);
        prop_assert!(r.f_at_kstarc >= r.f_at_kstar);
        prop_assert!(r.g_gap >= q(0));
        prop_assert!(r.bounds_hold && r.consistent());
    }

    #[test]
    fn oracle_is_the_first_global_minimum((f, c, beta) in arbitrary_trace()) {
        let f: Vec<ExactCost> = f.into_iter().map(q).collect();
        let c: Vec<ExactCost> = c.into_iter().map(q).collect();
        let beta = ExactCost::new(beta, 10);
        let g = objective_sequence(&f, &c, beta).unwrap();
        let k = noncausal_oracle(&f, &c, beta).unwrap();
        prop_assert!(g.iter().all(|v| *v >= g[k]));
        prop_assert!(g[..k].iter().all(|v| *v > g[k]));
    }

    #[test]
    fn causal_rule_stops_at_first_rise(g in prop::collection::vec(-50i64..50, 1..40)) {
        let g: Vec<ExactCost> = g.into_iter().map(q).collect();
        let k = causal_stop_index(&g);
        prop_assert!(g[..=k].windows(2).all(|w| w[1] < w[0]));
        if k + 1 < g.len() {
            prop_assert!(g[k + 1] >= g[k]);
            prop_assert_eq!(causal_stop(&g[..k + 2]), Decision::Stop { k });
        } else {
            prop_assert_eq!(k, g.len() - 1);
        }
        prop_assert!(argmin_first(&g).unwrap() < g.len());
    }

    #[test]
    fn float_and_exact_traces_agree((f, c, beta) in arbitrary_trace()) {
        let fx: Vec<ExactCost> = f.iter().map(|&v| q(v)).collect();
        let cx: Vec<ExactCost> = c.iter().map(|&v| q(v)).collect();
        let ff: Vec<f64> = f.iter().map(|&v| v as f64).collect();
        let cf: Vec<f64> = c.iter().map(|&v| v as f64).collect();
        // β in steps of 1/8 keeps every float product exact
        let (bx, bf) = (ExactCost::new(beta.min(8), 8), beta.min(8) as f64 / 8.0);
        let rx = check_prop2(&fx, &cx, bx).unwrap();
        let rf = check_prop2(&ff, &cf, bf).unwrap();
        prop_assert_eq!((rx.k_star, rx.k_star_c, rx.bounds_hold), (rf.k_star, rf.k_star_c, rf.bounds_hold));
    }

    #[test]
    fn partial_sums_of_nondecreasing_costs_are_convex(mut c in prop::collection::vec(0i64..100, 0..40)) {
        c.sort_unstable();
        let mut sums = vec![0i64];
        for v in &c {
            sums.push(sums.last().unwrap() + v);
        }
        let exact: Vec<ExactCost> = sums.into_iter().map(q).collect();
        prop_assert!(is_discrete_convex(&exact));
    }
}

#[test]
fn degenerate_weights_exactly() {
    let f: Vec<ExactCost> = [9, 5, 4, 4, 3, 3].into_iter().map(q).collect();
    let c = vec![q(2); 5];
    assert_eq!(noncausal_oracle(&f, &c, q(1)).unwrap(), 0);
    assert_eq!(noncausal_oracle(&f, &c, q(0)).unwrap(), 4);
}

#[test]
fn injected_cost_spike_is_flagged() {
    let f: Vec<f64> = (0..=8).map(|k| 8.0 * 0.5f64.powi(k)).collect();
    let mut c = vec![0.2; 8];
    c[1] = 5.0;
    let r = check_prop2(&f, &c, 0.5).unwrap();
    assert!(!r.convex_g);
    assert!(r.exempt() && r.consistent());
}
