mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rmlab::metrics::{
    accuracy_pairs, bo5, ece, evaluate_tables, kendall_tau, mrr_metric, ndcg, pearson, spearman,
    xi_corr, Metric, MetricConfig, ScoredSet, TestItem, TestSet,
};
use rmlab::synthworld::{generate_world, noise_proxy, NoiseSpec, WorldSpec};

fn set(p: &[f64], g: &[f64]) -> ScoredSet {
    ScoredSet::from_scores(p, g).unwrap()
}

#[test]
fn brute_force_agreement_with_a_second_golden_order() {
    // mirrors the acceptance sweep, with golden scores reversed and spread out
    for n in 2..=6 {
        let golden: Vec<f64> = (0..n).map(|i| -((i * i) as f64) + 0.5).collect();
        for perm in common::permutations(n) {
            let proxy: Vec<f64> = perm.iter().map(|&v| (v as f64 * 0.7).exp()).collect();
            let s = set(&proxy, &golden);
            assert_eq!(accuracy_pairs(&s), common::brute::accuracy(&proxy, &golden));
            assert_eq!(kendall_tau(&s).unwrap(), common::brute::kendall(&proxy, &golden));
            assert_eq!(xi_corr(&s, 3), common::brute::xi(&proxy, &golden));
            assert_eq!(mrr_metric(&s), common::brute::mrr(&proxy, &golden));
            assert!((spearman(&s).unwrap() - common::brute::spearman(&proxy, &golden)).abs() < 1e-12);
            assert!((ndcg(&s) - common::brute::ndcg(&proxy, &golden)).abs() < 1e-12);
            assert!((bo5(&s).unwrap() - common::brute::bo5(&proxy, &golden)).abs() < 1e-12);
        }
    }
}

#[test]
fn spot_values() {
    let g = [0.0, 1.0, 2.0];
    assert!((pearson(&set(&[0.0, 2.0, 1.0], &g)).unwrap() - 0.5).abs() < 1e-12);
    assert!((spearman(&set(&[0.0, 2.0, 1.0], &g)).unwrap() - 0.5).abs() < 1e-12);
    assert!((pearson(&set(&[1.0, 3.0, 5.0], &g)).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&set(&[0.0, -1.0, -2.0], &g)).unwrap() + 1.0).abs() < 1e-12);
    assert_eq!(accuracy_pairs(&set(&[0.0, -1.0, -2.0], &g)), 0.0);

    let g5 = [0.0, 1.0, 2.0, 3.0, 4.0];
    assert_eq!(bo5(&set(&[0.0, 1.0, 2.0, 9.0, 4.0], &g5)), Some(0.5));
    assert_eq!(bo5(&set(&[0.0, 1.0, 9.0, 3.0, 4.0], &g5)), Some(0.0));
    assert_eq!(mrr_metric(&set(&[9.0, 1.0, 2.0, 3.0, 4.0], &g5)), 0.2);
    assert_eq!(mrr_metric(&set(&[0.0, 1.0, 2.0, 9.0, 4.0], &g5)), 0.5);

    let rev = ndcg(&set(&[1.0, 0.0], &[0.0, 1.0]));
    assert!((rev - 1.0 / 3f64.log2()).abs() < 1e-12 && (rev - 0.6309).abs() < 1e-4);
}

#[test]
fn xi_tends_to_one_for_concordant_and_zero_for_independent() {
    let mut last = 0.0;
    for n in [5usize, 10, 50, 200] {
        let v: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let x = xi_corr(&set(&v, &v), 0);
        assert!((x - (1.0 - 3.0 / (n as f64 + 1.0))).abs() < 1e-12);
        assert!(x > last);
        last = x;
    }
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut total = 0.0;
    let reps = 200;
    for _ in 0..reps {
        let p: Vec<f64> = (0..1000).map(|_| r.random()).collect();
        let g: Vec<f64> = (0..1000).map(|_| r.random()).collect();
        total += xi_corr(&set(&p, &g), 0);
    }
    assert!((total / reps as f64).abs() < 0.02);
}

#[test]
fn random_proxy_ndcg_lies_between_reversed_and_perfect() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let g: Vec<f64> = (0..8).map(|i| i as f64).collect();
    let reversed: Vec<f64> = g.iter().map(|v| -v).collect();
    let floor = ndcg(&set(&reversed, &g));
    let mean = (0..2000)
        .map(|_| {
            let p: Vec<f64> = (0..8).map(|_| r.random()).collect();
            ndcg(&set(&p, &g))
        })
        .sum::<f64>()
        / 2000.0;
    assert!(floor < mean && mean < 1.0, "{floor} < {mean} < 1");
}

#[test]
fn ece_oracles() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    // perfect proxy: every pair correct, error is the mean underconfidence
    let g: Vec<f64> = (0..6).map(|i| i as f64 * 0.3).collect();
    let s = set(&g, &g);
    let mut gap = 0.0;
    for i in 0..6 {
        for j in i + 1..6 {
            gap += 1.0 - 1.0 / (1.0 + (-(g[j] - g[i])).exp());
        }
    }
    assert!((ece(&[s], 10).unwrap() - gap / 15.0).abs() < 1e-12);

    // constant proxy against random golden order
    let flat: Vec<ScoredSet> = (0..10_000)
        .map(|_| set(&[0.0, 0.0], &[r.random(), r.random()]))
        .collect();
    assert!(ece(&flat, 10).unwrap() < 0.02);

    // labels drawn from the proxy's own Bradley-Terry probabilities
    let calibrated: Vec<ScoredSet> = (0..100_000)
        .map(|_| {
            let m: f64 = StandardNormal.sample(&mut r);
            let m = 2.0 * m.abs();
            let agree = r.random::<f64>() < 1.0 / (1.0 + (-m).exp());
            set(&[0.0, m], if agree { &[0.0, 1.0] } else { &[1.0, 0.0] })
        })
        .collect();
    assert!(ece(&calibrated, 10).unwrap() < 0.03);
}

#[test]
fn unit_noise_pair_accuracy_matches_closed_form() {
    let w = generate_world(&WorldSpec {
        num_prompts: 20_000,
        pool_size: 8,
        num_categories: 1,
        seed: 5,
        ..WorldSpec::default()
    })
    .unwrap();
    let golden = w.golden_table();
    let proxy = noise_proxy(&w, NoiseSpec { sigma: 1.0, seed: 1 }).unwrap().score_table(&w).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let ts = TestSet {
        items: (0..w.num_prompts())
            .map(|prompt| {
                let a = r.random_range(0..8);
                TestItem { prompt, candidates: vec![a, (a + 1 + r.random_range(0..7)) % 8], labels: None }
            })
            .collect(),
    };
    assert!(ts.is_pair_form());
    let rep = evaluate_tables(
        &proxy,
        &golden,
        &ts,
        &[Metric::Accuracy, Metric::AccuracyPair],
        &MetricConfig::default(),
    )
    .unwrap();
    let acc = rep.get(Metric::AccuracyPair).unwrap();
    assert_eq!(Some(acc), rep.get(Metric::Accuracy));
    let se = (0.1875f64 / 20_000.0).sqrt();
    assert!((acc - common::arcsin_accuracy(1.0, 1.0)).abs() < 4.0 * se, "{acc}");
}

#[test]
fn identical_proxy_is_perfect_on_every_metric() {
    let w = generate_world(&WorldSpec { num_prompts: 20, pool_size: 6, seed: 1, ..WorldSpec::default() }).unwrap();
    let g = w.golden_table();
    let rep = evaluate_tables(&g, &g, &TestSet::full_pool(20, 6), &Metric::ALL[..9], &MetricConfig::default()).unwrap();
    for m in [Metric::Accuracy, Metric::Spearman, Metric::Kendall, Metric::Ndcg, Metric::Mrr, Metric::Bo5, Metric::Pearson] {
        assert!((rep.get(m).unwrap() - 1.0).abs() < 1e-12, "{m}");
    }
}

fn scores(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        proptest::collection::hash_set(-1000i32..1000, n),
        proptest::collection::hash_set(-1000i32..1000, n),
    )
        .prop_map(|(a, b)| {
            (
                a.into_iter().map(|v| f64::from(v) / 10.0).collect(),
                b.into_iter().map(|v| f64::from(v) / 10.0).collect(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rank_metrics_ignore_monotone_transforms((p, g) in (2usize..12).prop_flat_map(scores), shift in -5.0f64..5.0) {
        let base = set(&p, &g);
        let tp: Vec<f64> = p.iter().map(|v| (v / 50.0).exp() + shift).collect();
        let tg: Vec<f64> = g.iter().map(|v| v * v * v + shift).collect();
        for other in [set(&tp, &g), set(&p, &tg), set(&tp, &tg)] {
            prop_assert_eq!(spearman(&base), spearman(&other));
            prop_assert_eq!(kendall_tau(&base), kendall_tau(&other));
            prop_assert_eq!(xi_corr(&base, 1), xi_corr(&other, 1));
            prop_assert_eq!(accuracy_pairs(&base), accuracy_pairs(&other));
            prop_assert_eq!(mrr_metric(&base), mrr_metric(&other));
            prop_assert_eq!(ndcg(&base), ndcg(&other));
        }
    }

    #[test]
    fn pearson_ignores_positive_affine_maps((p, g) in (3usize..12).prop_flat_map(scores), a in 0.01f64..50.0, b in -20.0f64..20.0) {
        let x = pearson(&set(&p, &g)).unwrap();
        let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        let y = pearson(&set(&q, &g)).unwrap();
        prop_assert!((x - y).abs() < 1e-9);
    }

    #[test]
    fn ranges_and_symmetry((p, g) in (2usize..12).prop_flat_map(scores)) {
        let s = set(&p, &g);
        let acc = accuracy_pairs(&s);
        prop_assert_eq!(acc, accuracy_pairs(&set(&g, &p)));
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert!(mrr_metric(&s) > 0.0 && mrr_metric(&s) <= 1.0);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg(&s)));
        if let Some(b) = bo5(&s) { prop_assert!(b <= 1.0 + 1e-12); }
        for c in [pearson(&s), spearman(&s), kendall_tau(&s), Some(xi_corr(&s, 0))].into_iter().flatten() {
            prop_assert!((-1.0..=1.0).contains(&c));
        }
        prop_assert!(ece(&[s], 10).unwrap() >= 0.0);
    }
}
