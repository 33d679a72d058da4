use dynexec_core::early_exit::{default_taus, gen_dataset, sweep as exit_sweep, train_stages};
use dynexec_core::lookahead::{greedy_decode, lookahead_decode};
use dynexec_core::model::{SequenceModel, TableModel, TokenId};
use dynexec_core::router::{gen_workload, sweep as route_sweep};
use dynexec_core::specdec::{expected_tokens_per_cycle, residual, speculative_decode};
use dynexec_core::stepsaver::{fit_recommender, STEP_GRID};
use dynexec_core::{normalize, ProbDist, Rng};
use proptest::prelude::*;

fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 2..=max_len).prop_filter("some mass", |w| w.iter().any(|&x| x > 1e-6))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normalized_weights_are_distributions(w in weights(8)) {
        let d = normalize(&w).unwrap();
        prop_assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(d.probs().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn residual_is_a_distribution_off_the_draft(a in weights(5), b in weights(5)) {
        let n = a.len().min(b.len());
        prop_assume!(n >= 2);
        let p = normalize(&a[..n]).unwrap();
        let q = normalize(&b[..n]).unwrap();
        if let Ok(r) = residual(&p, &q) {
            prop_assert!((r.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for i in 0..n {
                if p.probs()[i] <= q.probs()[i] {
                    prop_assert_eq!(r.probs()[i], 0.0);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn expected_tokens_per_cycle_is_bounded_and_monotone(beta in 0.0f64..=1.0, k in 1usize..8) {
        let e = expected_tokens_per_cycle(beta, k);
        prop_assert!((1.0..=(k + 1) as f64 + 1e-12).contains(&e));
        prop_assert!(expected_tokens_per_cycle((beta + 0.01).min(1.0), k) >= e - 1e-12);
    }

    #[test]
    fn lookahead_matches_greedy(seed in any::<u64>(), n in 1usize..24, ngram in 2usize..5, window in 1usize..6) {
        let mut rng = Rng::new(seed);
        let v = 2 + rng.below(7);
        let model = TableModel::random(v, rng.below(3), 2.0, 0.0, 1.0, &mut rng).unwrap();
        let prompt: Vec<TokenId> = (0..1 + rng.below(3)).map(|_| TokenId(rng.below(v) as u32)).collect();
        let (tokens, stats) = lookahead_decode(&model, &prompt, n, ngram, window).unwrap();
        prop_assert_eq!(&tokens, &greedy_decode(&model, &prompt, n).unwrap());
        prop_assert!(stats.verified_hits <= stats.proposed);
        prop_assert!(stats.target_calls <= stats.tokens_generated);
        if stats.verified_hits > 0 {
            prop_assert!(stats.target_calls < stats.tokens_generated);
        }
    }

    #[test]
    fn speculative_decode_is_seed_deterministic(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = Rng::new(seed);
        let target = TableModel::random(5, 2, 1.5, 0.0, 1.0, &mut rng).unwrap();
        let draft = target.perturbed(0.4, 0.1, &mut rng).unwrap();
        let a = speculative_decode(&target, &draft, &[TokenId(0)], 20, k, &mut Rng::new(seed ^ 1)).unwrap();
        let b = speculative_decode(&target, &draft, &[TokenId(0)], 20, k, &mut Rng::new(seed ^ 1)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn recommender_is_monotone(
        labels in prop::collection::vec((0.0f64..10.0, prop::sample::select(STEP_GRID.to_vec())), 5..20),
        d1 in 0.0f64..12.0,
        d2 in 0.0f64..12.0,
    ) {
        let rec = fit_recommender(&labels, 100).unwrap();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(rec.recommend(lo) <= rec.recommend(hi));
        prop_assert!((1..=100).contains(&rec.recommend(lo)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn route_sweep_is_monotone(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let small = TableModel::random(4, 1, 0.5, 0.0, 1.0, &mut rng).unwrap();
        let large = TableModel::random(4, 2, 2.0, 0.0, 6.0, &mut rng).unwrap();
        let work = gen_workload(&large, 30, (1, 5), 6, &Rng::new(seed ^ 7)).unwrap();
        let thetas: Vec<f64> = (0..12).map(|i| -0.1 + 0.13 * i as f64).collect();
        let rows = route_sweep(&thetas, &work, &small, &large).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].fraction_large <= w[0].fraction_large);
            prop_assert!(w[1].total_cost <= w[0].total_cost);
        }
        prop_assert!(rows.iter().all(|r| r.mean_quality.is_finite()));
    }

    #[test]
    fn exit_sweep_is_monotone(seed in any::<u64>()) {
        let train = gen_dataset(400, 0.3, &mut Rng::new(seed)).unwrap();
        let test = gen_dataset(400, 0.3, &mut Rng::new(seed ^ 3)).unwrap();
        let net = train_stages(&train).unwrap();
        let rows = exit_sweep(&net, &test, &default_taus()).unwrap();
        for w in rows.windows(2) {
            prop_assert!(w[1].early_exit_fraction >= w[0].early_exit_fraction);
            prop_assert!(w[1].mean_cost <= w[0].mean_cost);
        }
        prop_assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy) && r.speedup >= 1.0));
    }
}

#[test]
fn table_predictions_are_distributions() {
    let mut rng = Rng::new(5);
    for order in 0..=3 {
        let m = TableModel::random(6, order, 3.0, 0.4, 1.0, &mut rng).unwrap();
        for _ in 0..200 {
            let ctx: Vec<TokenId> = (0..rng.below(6)).map(|_| TokenId(rng.below(6) as u32)).collect();
            let d: ProbDist = m.predict(&ctx).unwrap();
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
