//! Browser bindings for three interactive views: the closed-form Goodhart
//! curve, a best-of-n trajectory under a noisy proxy, and the metric suite
//! of a noisy proxy on a K-response test set. Every entry point returns JSON.

use rmlab::goodhart::{accuracy_from_noise, dpi_from_noise, goodhart_curve};
use rmlab::harness::{label_items, sample_items, TestsetSpec};
use rmlab::metrics::{evaluate_tables, Metric, MetricConfig};
use rmlab::policyopt::{bon_trajectory, LogBase};
use rmlab::synthworld::{generate_world, noise_proxy, NoiseSpec, World, WorldSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const DEMO_PROMPTS: usize = 200;
const DEMO_POOL: usize = 32;

fn demo_world(seed: u32) -> Result<World, String> {
    let spec = WorldSpec {
        num_prompts: DEMO_PROMPTS,
        pool_size: DEMO_POOL,
        seed: u64::from(seed),
        ..WorldSpec::default()
    };
    generate_world(&spec).map_err(|e| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

/// `steps + 1` evenly spaced noise levels in `[0, sigma_max]`, in units of the reward scale.
pub fn goodhart_curve_json(sigma_max: f64, steps: u32) -> Result<String, String> {
    if !(sigma_max.is_finite() && sigma_max > 0.0) || steps == 0 {
        return Err("sigma_max must be > 0 and steps >= 1".into());
    }
    let grid: Vec<f64> = (0..=steps)
        .map(|i| sigma_max * f64::from(i) / f64::from(steps))
        .collect();
    let points = goodhart_curve(1.0, &grid).map_err(|e| e.to_string())?;
    to_json(&points)
}

#[derive(Serialize)]
struct TrajectoryView {
    sigma: f64,
    accuracy_theory: f64,
    d_pi_theory: f64,
    points: Vec<rmlab::policyopt::TrajectoryPoint>,
}

/// Exact best-of-n rewards for `n = 1, 2, 4, ..., 1024` against a proxy with noise `sigma`.
pub fn bon_trajectory_json(sigma: f64, seed: u32) -> Result<String, String> {
    let world = demo_world(seed)?;
    let sigma_r = world.spec().reward_std;
    let golden = world.golden_table();
    let proxy = noise_proxy(
        &world,
        NoiseSpec {
            sigma: sigma * sigma_r,
            seed: u64::from(seed) ^ 0x5eed,
        },
    )
    .and_then(|m| m.score_table(&world))
    .map_err(|e| e.to_string())?;
    let ns: Vec<u32> = (0..=10).map(|i| 1 << i).collect();
    let points = bon_trajectory(&golden, &proxy, &ns, LogBase::Nat).map_err(|e| e.to_string())?;
    to_json(&TrajectoryView {
        sigma,
        accuracy_theory: accuracy_from_noise(1.0, sigma).map_err(|e| e.to_string())?,
        d_pi_theory: dpi_from_noise(1.0, sigma).map_err(|e| e.to_string())?,
        points,
    })
}

/// Every K-response metric of a proxy with noise `sigma` on a `k`-response test set.
pub fn metric_suite_json(sigma: f64, k: u32, seed: u32) -> Result<String, String> {
    let world = demo_world(seed)?;
    let golden = world.golden_table();
    let proxy = noise_proxy(
        &world,
        NoiseSpec {
            sigma: sigma * world.spec().reward_std,
            seed: u64::from(seed) ^ 0x5eed,
        },
    )
    .and_then(|m| m.score_table(&world))
    .map_err(|e| e.to_string())?;
    let spec = TestsetSpec {
        k: k as usize,
        num_prompts: DEMO_PROMPTS,
        ..TestsetSpec::default()
    };
    let items = sample_items(&spec, world.num_prompts(), world.pool_size(), u64::from(seed), 0)
        .map_err(|e| e.to_string())?;
    let (testset, _) = label_items(&items, &golden, &spec, 0).map_err(|e| e.to_string())?;
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|&m| m != Metric::AccuracyPair || testset.is_pair_form())
        .collect();
    let report = evaluate_tables(&proxy, &golden, &testset, &metrics, &MetricConfig::default())
        .map_err(|e| e.to_string())?;
    to_json(&report)
}

#[wasm_bindgen(js_name = goodhartCurve)]
pub fn goodhart_curve_js(sigma_max: f64, steps: u32) -> Result<String, JsValue> {
    goodhart_curve_json(sigma_max, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = bonTrajectory)]
pub fn bon_trajectory_js(sigma: f64, seed: u32) -> Result<String, JsValue> {
    bon_trajectory_json(sigma, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = metricSuite)]
pub fn metric_suite_js(sigma: f64, k: u32, seed: u32) -> Result<String, JsValue> {
    metric_suite_json(sigma, k, seed).map_err(|e| JsValue::from_str(&e))
}
