//! Accuracy versus degree of overoptimization under regressional Goodhart.
//!
//! With golden scores `r* ~ N(0, sigma_r^2)` and a proxy `r = r* + z`,
//! `z ~ N(0, sigma^2)`, pairwise accuracy is
//!
//! ```text
//! acc = 1 - ∫_0^∞ 1/(sigma_r sqrt(pi)) exp(-x^2 / (4 sigma_r^2)) Phi(-x / (sqrt(2) sigma)) dx
//! ```
//!
//! and the degree of overoptimization is `d_pi = sigma_r^2 / (sigma_r^2 + sigma^2)`.
//! The integral is evaluated by adaptive Gauss-Kronrod quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy_pairs, ScoredSet};
use crate::policyopt::{estimate_dpi, OptimizerSpec};
use crate::synthworld::ScoreTable;

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel: (estimate, error estimate).
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss-Kronrod on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_PANELS: usize = 4000;
    let (v, e) = gk15(&f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= tol {
            break;
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::Quadrature {
                achieved: total_err,
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (a, b, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (a + b);
        let (v1, e1) = gk15(&f, a, mid);
        let (v2, e2) = gk15(&f, mid, b);
        panels.push((a, mid, v1, e1));
        panels.push((mid, b, v2, e2));
    }
    Ok(panels.iter().map(|p| p.2).sum())
}

fn check_scales(sigma_r: f64, sigma: f64) -> Result<()> {
    if !(sigma_r.is_finite() && sigma_r > 0.0) {
        return Err(Error::spec("sigma_r", "must be finite and > 0"));
    }
    if !(sigma >= 0.0) {
        return Err(Error::spec("sigma", "must be >= 0"));
    }
    Ok(())
}

/// Expected pairwise accuracy of `r* + z` against `r*`.
pub fn accuracy_from_noise(sigma_r: f64, sigma: f64) -> Result<f64> {
    check_scales(sigma_r, sigma)?;
    if sigma == 0.0 {
        return Ok(1.0);
    }
    if sigma.is_infinite() {
        return Ok(0.5);
    }
    let norm = 1.0 / (sigma_r * std::f64::consts::PI.sqrt());
    let integrand = |x: f64| {
        norm * (-x * x / (4.0 * sigma_r * sigma_r)).exp()
            * normal_cdf(-x / (std::f64::consts::SQRT_2 * sigma))
    };
    // difference of two golden draws has std sqrt(2) sigma_r; 12 sigma_r is > 8 of those
    let upper = 12.0 * sigma_r;
    let body = integrate(integrand, 0.0, upper, 1e-11)?;
    // the Gaussian factor alone integrates to erfc(upper / (2 sigma_r)) beyond `upper`
    let tail_bound = libm::erfc(upper / (2.0 * sigma_r))
        * normal_cdf(-upper / (std::f64::consts::SQRT_2 * sigma));
    Ok(1.0 - body - 0.5 * tail_bound)
}

pub fn dpi_from_noise(sigma_r: f64, sigma: f64) -> Result<f64> {
    check_scales(sigma_r, sigma)?;
    Ok(sigma_r * sigma_r / (sigma_r * sigma_r + sigma * sigma))
}

/// Noise ratio `sigma / sigma_r` that yields `accuracy`, by bisection.
pub fn noise_ratio_for_accuracy(accuracy: f64) -> Result<f64> {
    if !(accuracy > 0.5 && accuracy <= 1.0) {
        return Err(Error::spec("accuracy", "must be in (0.5, 1]"));
    }
    if accuracy == 1.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while accuracy_from_noise(1.0, hi)? > accuracy {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Infeasible(format!(
                "accuracy {accuracy} is too close to 1/2"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if accuracy_from_noise(1.0, mid)? > accuracy {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `d_pi` that the regressional model predicts for a proxy of the given accuracy.
pub fn dpi_at_accuracy(accuracy: f64) -> Result<f64> {
    let ratio = noise_ratio_for_accuracy(accuracy)?;
    dpi_from_noise(1.0, ratio)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodhartPoint {
    pub sigma_r: f64,
    pub sigma: f64,
    pub accuracy: f64,
    pub d_pi: f64,
}

/// Parametric sweep of `(accuracy, d_pi)` over an ascending noise grid.
pub fn goodhart_curve(sigma_r: f64, sigma_grid: &[f64]) -> Result<Vec<GoodhartPoint>> {
    if sigma_grid.is_empty() {
        return Err(Error::spec("sigma_grid", "must be non-empty"));
    }
    for (i, w) in sigma_grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::spec(
                format!("sigma_grid[{}]", i + 1),
                "grid must be strictly ascending",
            ));
        }
    }
    sigma_grid
        .iter()
        .map(|&sigma| {
            Ok(GoodhartPoint {
                sigma_r,
                sigma,
                accuracy: accuracy_from_noise(sigma_r, sigma)?,
                d_pi: dpi_from_noise(sigma_r, sigma)?,
            })
        })
        .collect()
}

/// CSV with columns `sigma,accuracy,d_pi`.
pub fn curve_csv(points: &[GoodhartPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["sigma", "accuracy", "d_pi"])?;
    for p in points {
        w.write_record([
            p.sigma.to_string(),
            p.accuracy.to_string(),
            p.d_pi.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub proxy_id: String,
    /// Pairwise accuracy over every pool, averaged over prompts.
    pub accuracy: f64,
    pub d_pi: f64,
    /// `d_pi` of the theory curve at this accuracy (`None` below accuracy 1/2).
    pub theory_d_pi: Option<f64>,
}

impl ScatterPoint {
    pub fn deviation(&self) -> Option<f64> {
        self.theory_d_pi.map(|t| self.d_pi - t)
    }
}

/// Pool-level pairwise accuracy of `proxy` against `golden`.
pub fn pool_accuracy(golden: &ScoreTable, proxy: &ScoreTable) -> Result<f64> {
    golden.same_shape(proxy)?;
    let mut total = 0.0;
    for (p, (g, r)) in golden.rows().zip(proxy.rows()).enumerate() {
        let set = ScoredSet::new(p, (0..g.len()).collect(), r.to_vec(), g.to_vec())?;
        total += accuracy_pairs(&set);
    }
    Ok(total / golden.num_prompts() as f64)
}

/// Measured `(accuracy, d_pi)` for each proxy next to the theory curve.
pub fn empirical_goodhart_scatter(
    golden: &ScoreTable,
    proxies: &[(String, ScoreTable)],
    optimizer: &OptimizerSpec,
) -> Result<Vec<ScatterPoint>> {
    if proxies.is_empty() {
        return Err(Error::spec("proxies", "must be non-empty"));
    }
    proxies
        .iter()
        .map(|(id, table)| {
            let accuracy = pool_accuracy(golden, table)?;
            let d_pi = estimate_dpi(golden, table, optimizer)?;
            let theory_d_pi = if accuracy > 0.5 {
                Some(dpi_at_accuracy(accuracy)?)
            } else {
                None
            };
            Ok(ScatterPoint {
                proxy_id: id.clone(),
                accuracy,
                d_pi,
                theory_d_pi,
            })
        })
        .collect()
}

pub fn scatter_csv(points: &[ScatterPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["proxy_id", "accuracy", "d_pi", "theory_d_pi"])?;
    for p in points {
        w.write_record([
            p.proxy_id.clone(),
            p.accuracy.to_string(),
            p.d_pi.to_string(),
            p.theory_d_pi.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_limits() {
        assert_eq!(accuracy_from_noise(1.0, 0.0).unwrap(), 1.0);
        assert!((accuracy_from_noise(1.0, 1e6).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(accuracy_from_noise(1.0, f64::INFINITY).unwrap(), 0.5);
        assert!(accuracy_from_noise(0.0, 1.0).is_err());
        assert!(accuracy_from_noise(1.0, -1.0).is_err());
    }

    #[test]
    fn equal_noise_gives_three_quarters() {
        assert!((accuracy_from_noise(1.0, 1.0).unwrap() - 0.75).abs() < 1e-9);
        assert!((accuracy_from_noise(3.0, 3.0).unwrap() - 0.75).abs() < 1e-9);
    }

    #[test]
    fn dpi_values() {
        assert_eq!(dpi_from_noise(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(dpi_from_noise(2.0, 2.0).unwrap(), 0.5);
        assert!((dpi_from_noise(1.0, 3f64.sqrt()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn integrate_polynomial_and_gaussian() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        let g = integrate(|x| (-x * x).exp(), -10.0, 10.0, 1e-12).unwrap();
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn curve_single_point_and_grid_checks() {
        let c = goodhart_curve(1.0, &[0.0]).unwrap();
        assert_eq!((c[0].accuracy, c[0].d_pi), (1.0, 1.0));
        assert!(goodhart_curve(1.0, &[1.0, 0.5]).is_err());
        assert!(goodhart_curve(1.0, &[]).is_err());
    }

    #[test]
    fn inversion_roundtrip() {
        for ratio in [0.1, 0.7, 1.0, 3.0] {
            let acc = accuracy_from_noise(1.0, ratio).unwrap();
            let back = noise_ratio_for_accuracy(acc).unwrap();
            assert!(
                (back - ratio).abs() < 1e-6 * ratio.max(1.0),
                "{ratio} -> {back}"
            );
        }
        assert_eq!(dpi_at_accuracy(1.0).unwrap(), 1.0);
        assert!(noise_ratio_for_accuracy(0.5).is_err());
    }
}
