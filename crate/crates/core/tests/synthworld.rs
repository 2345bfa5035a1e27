mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rmlab::metrics::pearson_corr;
use rmlab::synthworld::{generate_world, noise_proxy, NoiseSpec, Nonlinearity, World, WorldSpec};

/// Single category, so every candidate's golden score is iid with spread `reward_std`.
fn world(num_prompts: usize, pool_size: usize, seed: u64) -> World {
    generate_world(&WorldSpec {
        num_prompts,
        pool_size,
        num_categories: 1,
        seed,
        ..WorldSpec::default()
    })
    .unwrap()
}

/// Agreement of proxy and golden order over `pairs` random within-prompt pairs.
fn sampled_agreement(w: &World, sigma: f64, noise_seed: u64, pairs: usize, seed: u64) -> f64 {
    let proxy = noise_proxy(w, NoiseSpec { sigma, seed: noise_seed })
        .unwrap()
        .score_table(w)
        .unwrap();
    let golden = w.golden_table();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut agree = 0usize;
    for _ in 0..pairs {
        let p = r.random_range(0..w.num_prompts());
        let a = r.random_range(0..w.pool_size());
        let mut b = r.random_range(0..w.pool_size() - 1);
        if b >= a {
            b += 1;
        }
        let dg = golden.get(p, a) - golden.get(p, b);
        let dp = proxy.get(p, a) - proxy.get(p, b);
        agree += usize::from(dg * dp > 0.0);
    }
    agree as f64 / pairs as f64
}

#[test]
fn same_spec_same_world() {
    let a = world(30, 8, 7);
    let b = world(30, 8, 7);
    assert_eq!(a.golden_table(), b.golden_table());
    assert_ne!(a.golden_table(), world(30, 8, 8).golden_table());
}

#[test]
fn candidate_count() {
    let w = world(4, 8, 0);
    assert_eq!(w.golden_table().values().len(), 32);
}

#[test]
fn zero_noise_proxy_is_golden() {
    let w = world(20, 6, 1);
    let p = noise_proxy(&w, NoiseSpec { sigma: 0.0, seed: 3 }).unwrap();
    assert_eq!(p.score_table(&w).unwrap(), w.golden_table());
}

#[test]
fn unit_noise_agreement_matches_closed_form() {
    let w = world(4000, 64, 11);
    let got = sampled_agreement(&w, 1.0, 5, 1_000_000, 0);
    let want = common::arcsin_accuracy(1.0, 1.0);
    // candidates are shared between pairs, so allow well beyond the binomial SE
    assert!((got - want).abs() < 0.004, "{got} vs {want}");
}

#[test]
fn noise_seeds_give_different_proxies_with_equal_agreement() {
    let w = world(4000, 64, 12);
    let t1 = noise_proxy(&w, NoiseSpec { sigma: 1.0, seed: 1 }).unwrap().score_table(&w).unwrap();
    let t2 = noise_proxy(&w, NoiseSpec { sigma: 1.0, seed: 2 }).unwrap().score_table(&w).unwrap();
    assert_ne!(t1, t2);
    let n = 400_000;
    let (a, b) = (
        sampled_agreement(&w, 1.0, 1, n, 10),
        sampled_agreement(&w, 1.0, 2, n, 10),
    );
    let pooled = (a + b) / 2.0;
    let se = (2.0 * pooled * (1.0 - pooled) / n as f64).sqrt();
    assert!(((a - b) / se).abs() < 4.0, "z = {}", (a - b) / se);
}

#[test]
fn noise_is_uncorrelated_with_golden() {
    let w = world(2000, 64, 13);
    let golden = w.golden_table();
    let proxy = noise_proxy(&w, NoiseSpec { sigma: 1.0, seed: 9 }).unwrap().score_table(&w).unwrap();
    let noise: Vec<f64> = proxy.values().iter().zip(golden.values()).map(|(p, g)| p - g).collect();
    assert!(noise.len() >= 100_000);
    let rho = pearson_corr(&noise, golden.values()).unwrap();
    assert!(rho.abs() < 0.01, "rho = {rho}");
}

#[test]
fn tanh_world_is_standardized() {
    let w = generate_world(&WorldSpec {
        num_prompts: 50,
        pool_size: 10,
        reward_std: 2.5,
        nonlinearity: Nonlinearity::TanhMlp,
        seed: 4,
        ..WorldSpec::default()
    })
    .unwrap();
    let (mean, std) = w.golden_table().moments();
    assert!(mean.abs() < 1e-9 && (std - 2.5).abs() < 1e-9, "{mean} {std}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn standardization_holds_for_any_spec(
        num_prompts in 1usize..40,
        pool_size in 2usize..16,
        feature_dim in 1usize..12,
        reward_std in 0.1f64..5.0,
        mlp in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let w = generate_world(&WorldSpec {
            num_prompts,
            pool_size,
            feature_dim,
            reward_std,
            num_categories: 1,
            nonlinearity: if mlp { Nonlinearity::TanhMlp } else { Nonlinearity::Linear },
            seed,
        }).unwrap();
        let (mean, std) = w.golden_table().moments();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - reward_std).abs() < 1e-9 * reward_std.max(1.0));
    }

    #[test]
    fn json_roundtrip_is_lossless(seed in any::<u64>(), mlp in any::<bool>()) {
        let w = generate_world(&WorldSpec {
            num_prompts: 6,
            pool_size: 4,
            nonlinearity: if mlp { Nonlinearity::TanhMlp } else { Nonlinearity::Linear },
            seed,
            ..WorldSpec::default()
        }).unwrap();
        let back = World::from_json(&w.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.golden_table(), w.golden_table());
    }
}
