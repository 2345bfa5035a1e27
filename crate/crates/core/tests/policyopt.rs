mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmlab::policyopt::{
    bon_exact, bon_kl_formula, bon_sampled, bon_trajectory, estimate_dpi, exact_regret,
    expected_reward, kl_divergence, kl_tilt, max_tilt_kl, ndr, unbiased_bon_estimate, LogBase,
    OptimizerSpec, Policy,
};
use rmlab::synthworld::{generate_world, noise_proxy, NoiseSpec, ScoreTable, World, WorldSpec};

fn world(num_prompts: usize, pool_size: usize, seed: u64) -> World {
    generate_world(&WorldSpec {
        num_prompts,
        pool_size,
        seed,
        ..WorldSpec::default()
    })
    .unwrap()
}

fn noisy(w: &World, sigma: f64, seed: u64) -> ScoreTable {
    noise_proxy(w, NoiseSpec { sigma, seed }).unwrap().score_table(w).unwrap()
}

fn table(rows: Vec<Vec<f64>>) -> ScoreTable {
    ScoreTable::from_rows(&rows).unwrap()
}

#[test]
fn two_candidate_best_of_two() {
    let t = table(vec![vec![0.0, 1.0]]);
    let pi = bon_exact(&t, 2).unwrap();
    assert_eq!(pi.row(0), &[0.25, 0.75]);
    let kl = kl_divergence(&pi, &Policy::uniform(1, 2), LogBase::Nat).unwrap();
    let want = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
    assert!((kl - want).abs() < 1e-15 && (kl - 0.1308).abs() < 1e-4);
}

#[test]
fn bon_kl_formula_spot_values() {
    assert_eq!(bon_kl_formula(1, LogBase::Nat), 0.0);
    assert!((bon_kl_formula(2, LogBase::Nat) - (2f64.ln() - 0.5)).abs() < 1e-15);
    assert!((bon_kl_formula(2, LogBase::Nat) - 0.1931).abs() < 1e-4);
    assert_eq!(bon_kl_formula(2, LogBase::Bits), 0.5);
}

#[test]
fn expected_reward_matches_sampling() {
    let w = world(50, 20, 1);
    let g = w.golden_table();
    let pi = bon_exact(&noisy(&w, 0.5, 2), 4).unwrap();
    let exact = expected_reward(&pi, &g).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let draws = 100_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let p = r.random_range(0..w.num_prompts());
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut c = 0;
        for (i, &q) in pi.row(p).iter().enumerate() {
            acc += q;
            c = i;
            if u < acc {
                break;
            }
        }
        let v = g.get(p, c);
        s += v;
        s2 += v * v;
    }
    let mean = s / draws as f64;
    let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn sampled_bon_approaches_exact() {
    let w = world(30, 10, 2);
    let p = noisy(&w, 0.3, 1);
    let exact = bon_exact(&p, 8).unwrap();
    let sampled = bon_sampled(&p, 8, 200_000, 3).unwrap();
    let gap = exact
        .rows()
        .zip(sampled.rows())
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    assert!(gap < 0.01, "{gap}");
}

#[test]
fn bon_limits() {
    let t = table(vec![vec![0.3, -1.0, 2.0, 0.1]]);
    assert_eq!(bon_exact(&t, 1).unwrap(), Policy::uniform(1, 4));
    let pi = bon_exact(&t, 4000).unwrap();
    assert!((pi.row(0)[2] - 1.0).abs() < 1e-12);
}

#[test]
fn tilt_reward_is_nondecreasing_in_kl() {
    let w = world(20, 12, 3);
    let p = noisy(&w, 0.7, 3);
    let max = max_tilt_kl(&p);
    let mut last = f64::NEG_INFINITY;
    for i in 0..=40 {
        let target = max * f64::from(i) / 40.0;
        let pi = kl_tilt(&p, target).unwrap();
        let kl = kl_divergence(&pi, &Policy::uniform(20, 12), LogBase::Nat).unwrap();
        assert!((kl - target).abs() < 1e-8, "kl {kl} vs {target}");
        let j = expected_reward(&pi, &p).unwrap();
        assert!(j >= last - 1e-12);
        last = j;
    }
    assert!(kl_tilt(&p, max * 1.01).is_err());
}

#[test]
fn ndr_reference_cases() {
    let w = world(3000, 16, 4);
    let g = w.golden_table();
    let spec = OptimizerSpec::BonExact { n: 16 };
    assert!((ndr(&g, &g, &spec).unwrap() - 1.0).abs() < 1e-12);
    let flat = g.map(|_| 0.0);
    assert!(ndr(&g, &flat, &spec).unwrap().abs() < 0.05);
    let anti = g.map(|v| -v);
    assert!(ndr(&g, &anti, &OptimizerSpec::BonExact { n: 64 }).unwrap() < 0.0);
}

#[test]
fn unbiased_estimator_small_values() {
    assert!((unbiased_bon_estimate(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0], 2).unwrap() - 5.0 / 3.0).abs() < 1e-15);
    let g = [3.0, -1.0, 0.5, 2.0];
    let p = [0.1, 0.9, 0.4, 0.2];
    assert!((unbiased_bon_estimate(&p, &g, 1).unwrap() - 1.125).abs() < 1e-15);
    assert_eq!(unbiased_bon_estimate(&p, &g, 4).unwrap(), -1.0);
}

#[test]
fn trajectory_shape() {
    let w = world(400, 32, 5);
    let g = w.golden_table();
    let ns = [1, 2, 4, 8, 16, 32, 64];
    let clean = bon_trajectory(&g, &g, &ns, LogBase::Nat).unwrap();
    let noisy_t = bon_trajectory(&g, &noisy(&w, 3.0, 1), &ns, LogBase::Nat).unwrap();
    let base = expected_reward(&Policy::uniform(400, 32), &g).unwrap();
    assert_eq!(clean[0].d, 0.0);
    assert!((clean[0].golden_reward - base).abs() < 1e-12);
    for i in 1..ns.len() {
        assert!(clean[i].golden_reward > clean[i - 1].golden_reward);
        assert!(noisy_t[i].golden_reward < clean[i].golden_reward);
    }
}

#[test]
fn dpi_for_noise_proxies() {
    let w = world(4000, 32, 6);
    let g = w.golden_table();
    let spec = OptimizerSpec::BonExact { n: 16 };
    assert!((estimate_dpi(&g, &g, &spec).unwrap() - 1.0).abs() < 1e-9);
    let d = estimate_dpi(&g, &noisy(&w, 3f64.sqrt(), 2), &spec).unwrap();
    assert!((d - 0.25).abs() < 0.02, "{d}");
    let d = estimate_dpi(&g, &noisy(&w, 1.0, 3), &OptimizerSpec::KlTilt { target_kl: 1.0 }).unwrap();
    assert!((d - common::dpi_oracle(1.0, 1.0)).abs() < 0.02, "{d}");
}

#[test]
fn zero_radius_regret_is_degenerate() {
    let w = world(5, 4, 7);
    let g = w.golden_table();
    assert!(exact_regret(&g, &g, 0.0).is_err());
}

fn small_table() -> impl Strategy<Value = ScoreTable> {
    (1usize..6, 2usize..9).prop_flat_map(|(p, m)| {
        proptest::collection::vec(-5.0f64..5.0, p * m)
            .prop_map(move |v| ScoreTable::new(p, m, v).unwrap())
    })
}

fn assert_simplex(pi: &Policy) -> Result<(), TestCaseError> {
    for row in pi.rows() {
        prop_assert!(row.iter().all(|&q| q >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn optimizers_return_distributions(t in small_table(), n in 1u32..200, frac in 0.0f64..1.0) {
        assert_simplex(&bon_exact(&t, n).unwrap())?;
        assert_simplex(&bon_sampled(&t, n, 50, 1).unwrap())?;
        assert_simplex(&kl_tilt(&t, frac * max_tilt_kl(&t)).unwrap())?;
    }

    #[test]
    fn bon_kl_is_monotone_and_bounded(t in small_table()) {
        let u = Policy::uniform(t.num_prompts(), t.pool_size());
        let log_m = (t.pool_size() as f64).ln();
        let mut last = 0.0;
        for n in 1u32..40 {
            let kl = kl_divergence(&bon_exact(&t, n).unwrap(), &u, LogBase::Nat).unwrap();
            prop_assert!(kl >= last - 1e-12);
            prop_assert!(kl <= log_m + 1e-12 && kl <= f64::from(n).ln() + 1e-12);
            last = kl;
        }
    }

    #[test]
    fn regret_and_ndr_ignore_positive_affine_proxy_maps(seed in 0u64..500, a in 0.05f64..20.0, b in -10.0f64..10.0, lambda in 0.05f64..1.0) {
        let w = world(8, 6, seed);
        let g = w.golden_table();
        let p = noisy(&w, 0.8, seed);
        let q = p.map(|v| a * v + b);
        let lambda = lambda * max_tilt_kl(&g).min(max_tilt_kl(&p));
        for spec in [OptimizerSpec::BonExact { n: 7 }, OptimizerSpec::KlTilt { target_kl: lambda }] {
            match (ndr(&g, &p, &spec), ndr(&g, &q, &spec)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-6),
                (x, y) => prop_assert_eq!(x.is_err(), y.is_err()),
            }
        }
        let (x, y) = (exact_regret(&g, &p, lambda).unwrap(), exact_regret(&g, &q, lambda).unwrap());
        prop_assert!((x - y).abs() < 1e-6);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn estimator_matches_subset_enumeration(
        v in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..9),
        pick in 0usize..8,
    ) {
        let (p, g): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let n = 1 + pick % p.len();
        let est = unbiased_bon_estimate(&p, &g, n).unwrap();
        prop_assert!((est - common::enumerate_bon(&p, &g, n)).abs() < 1e-12);
    }
}
