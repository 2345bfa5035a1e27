//! Policies over finite candidate pools and the optimizers that act on them.
//!
//! The reference policy is uniform over each prompt's pool. Two exact
//! optimizers are provided: best-of-n with replacement from the reference
//! (closed-form induced distribution), and exponential tilting
//! `pi ∝ exp(r / tau)` with one temperature per world chosen so that the mean
//! per-prompt KL to the reference hits a target. Tilting is the closed-form
//! KL-constrained maximizer and stands in for RL fine-tuning.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synthworld::{ascending_order, ScoreTable, World};

/// Per-prompt probability vectors, row-major by prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pool_size: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn uniform(num_prompts: usize, pool_size: usize) -> Policy {
        Policy {
            pool_size,
            probs: vec![1.0 / pool_size as f64; num_prompts * pool_size],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Policy> {
        let m = rows.first().map_or(0, Vec::len);
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch(
                "policy rows must be non-empty and equal length".into(),
            ));
        }
        let p = Policy {
            pool_size: m,
            probs: rows.concat(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_prompts(&self) -> usize {
        self.probs.len() / self.pool_size
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.probs[prompt * self.pool_size..(prompt + 1) * self.pool_size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.pool_size)
    }

    /// Nonnegative rows summing to 1 within 1e-12.
    pub fn validate(&self) -> Result<()> {
        for (p, row) in self.rows().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::spec(
                    format!("policy[{p}]"),
                    "probabilities must be finite and >= 0",
                ));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::spec(
                    format!("policy[{p}]"),
                    format!("sums to {s}, not 1"),
                ));
            }
        }
        Ok(())
    }

    fn check_table(&self, table: &ScoreTable) -> Result<()> {
        if table.pool_size() != self.pool_size || table.num_prompts() != self.num_prompts() {
            return Err(Error::DimensionMismatch(format!(
                "policy {}x{} vs scores {}x{}",
                self.num_prompts(),
                self.pool_size,
                table.num_prompts(),
                table.pool_size()
            )));
        }
        Ok(())
    }
}

/// The reference policy: uniform over every pool.
pub fn uniform_policy(world: &World) -> Policy {
    Policy::uniform(world.num_prompts(), world.pool_size())
}

/// Mean over prompts of the policy's expected score.
pub fn expected_reward(policy: &Policy, scores: &ScoreTable) -> Result<f64> {
    policy.check_table(scores)?;
    let total: f64 = policy
        .rows()
        .zip(scores.rows())
        .map(|(pi, r)| pi.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(total / policy.num_prompts() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Nat,
    Bits,
}

impl LogBase {
    fn scale(self) -> f64 {
        match self {
            LogBase::Nat => 1.0,
            LogBase::Bits => std::f64::consts::LOG2_E,
        }
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nat" | "nats" => Ok(LogBase::Nat),
            "bits" | "bit" => Ok(LogBase::Bits),
            _ => Err(Error::spec("base", format!("unknown log base `{s}`"))),
        }
    }
}

/// Mean over prompts of `KL(policy || reference)`.
pub fn kl_divergence(policy: &Policy, reference: &Policy, base: LogBase) -> Result<f64> {
    if policy.pool_size != reference.pool_size || policy.probs.len() != reference.probs.len() {
        return Err(Error::DimensionMismatch(
            "policy and reference shapes differ".into(),
        ));
    }
    let m = policy.pool_size;
    let mut total = 0.0;
    for (i, (&p, &q)) in policy.probs.iter().zip(&reference.probs).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::DivergenceUndefined {
                    prompt: i / m,
                    candidate: i % m,
                });
            }
            total += p * (p / q).ln();
        }
    }
    Ok(total / policy.num_prompts() as f64 * base.scale())
}

/// Analytic best-of-n KL: `log n - (n - 1) / n`, with the log taken in `base`.
///
/// The `(n - 1) / n` term is not rescaled in bits mode, which follows the
/// convention used for published best-of-n plots.
pub fn bon_kl_formula(n: u32, base: LogBase) -> f64 {
    let n = f64::from(n.max(1));
    let log_n = match base {
        LogBase::Nat => n.ln(),
        LogBase::Bits => n.log2(),
    };
    log_n - (n - 1.0) / n
}

/// Exact distribution of the proxy-best of `n` uniform draws with replacement.
///
/// The candidate at ascending strict rank `k` of `M` receives `(k^n - (k-1)^n) / M^n`.
pub fn bon_exact(scores: &ScoreTable, n: u32) -> Result<Policy> {
    if n == 0 {
        return Err(Error::spec("n", "must be >= 1"));
    }
    let m = scores.pool_size();
    let mf = m as f64;
    let n_i = i32::try_from(n).map_err(|_| Error::spec("n", "too large"))?;
    let by_rank: Vec<f64> = (1..=m)
        .map(|k| (k as f64 / mf).powi(n_i) - ((k - 1) as f64 / mf).powi(n_i))
        .collect();
    let mut probs = vec![0.0; scores.values().len()];
    for (p, row) in scores.rows().enumerate() {
        for (k, &c) in ascending_order(row).iter().enumerate() {
            probs[p * m + c] = by_rank[k];
        }
    }
    Ok(Policy {
        pool_size: m,
        probs,
    })
}

/// Empirical best-of-n policy from `samples` simulated draws per prompt.
pub fn bon_sampled(scores: &ScoreTable, n: u32, samples: u32, seed: u64) -> Result<Policy> {
    if n == 0 || samples == 0 {
        return Err(Error::spec("n/samples", "must be >= 1"));
    }
    let m = scores.pool_size();
    let mut probs = vec![0.0; scores.values().len()];
    for (p, row) in scores.rows().enumerate() {
        let mut r = rng::rng(rng::derive_seed(seed, "bon-sampled", p as u64));
        let counts = &mut probs[p * m..(p + 1) * m];
        for _ in 0..samples {
            let best = (0..n)
                .map(|_| r.random_range(0..m))
                .max_by(|&a, &b| crate::synthworld::strict_cmp(row[a], a, row[b], b))
                .expect("n >= 1");
            counts[best] += 1.0;
        }
        counts.iter_mut().for_each(|c| *c /= f64::from(samples));
    }
    Ok(Policy {
        pool_size: m,
        probs,
    })
}

/// Softmax of each row at inverse temperature `beta`, plus the mean KL to uniform.
fn tilt_at(scores: &ScoreTable, beta: f64) -> (Vec<f64>, f64) {
    let m = scores.pool_size();
    let log_m = (m as f64).ln();
    let mut probs = vec![0.0; scores.values().len()];
    let mut kl_total = 0.0;
    for (p, row) in scores.rows().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let out = &mut probs[p * m..(p + 1) * m];
        let mut z = 0.0;
        let mut mean_logit = 0.0;
        for (o, &r) in out.iter_mut().zip(row) {
            let l = beta * (r - max);
            *o = l.exp();
            z += *o;
            mean_logit += *o * l;
        }
        out.iter_mut().for_each(|o| *o /= z);
        // KL = E[logit] - log Z + log M
        kl_total += mean_logit / z - z.ln() + log_m;
    }
    (probs, (kl_total / scores.num_prompts() as f64).max(0.0))
}

/// Largest mean KL reachable by tilting: each prompt collapses onto its tied maxima.
pub fn max_tilt_kl(scores: &ScoreTable) -> f64 {
    let m = scores.pool_size() as f64;
    scores
        .rows()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ties = row.iter().filter(|&&r| r == max).count() as f64;
            (m / ties).ln()
        })
        .sum::<f64>()
        / scores.num_prompts() as f64
}

fn tilt_limit(scores: &ScoreTable) -> Policy {
    let m = scores.pool_size();
    let mut probs = vec![0.0; scores.values().len()];
    for (p, row) in scores.rows().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = row.iter().filter(|&&r| r == max).count() as f64;
        for (c, &r) in row.iter().enumerate() {
            if r == max {
                probs[p * m + c] = 1.0 / ties;
            }
        }
    }
    Policy {
        pool_size: m,
        probs,
    }
}

const TILT_KL_TOL: f64 = 1e-11;

/// Exponential tilting of the uniform policy whose mean KL (nats) equals `target_kl`.
pub fn kl_tilt(scores: &ScoreTable, target_kl: f64) -> Result<Policy> {
    if !(target_kl.is_finite() && target_kl >= 0.0) {
        return Err(Error::spec("target_kl", "must be finite and >= 0"));
    }
    let m = scores.pool_size();
    if target_kl == 0.0 {
        return Ok(Policy::uniform(scores.num_prompts(), m));
    }
    let max_kl = max_tilt_kl(scores);
    if target_kl > max_kl + 1e-12 {
        return Err(Error::Infeasible(format!(
            "target KL {target_kl} exceeds the maximum achievable {max_kl} nats"
        )));
    }
    if target_kl >= max_kl - 1e-12 {
        return Ok(tilt_limit(scores));
    }

    let spread = scores
        .rows()
        .map(|row| {
            let (lo, hi) = row
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    (lo.min(r), hi.max(r))
                });
            hi - lo
        })
        .fold(0.0, f64::max);
    let mut lo = 0.0;
    let mut hi = 1.0 / spread;
    loop {
        let (_, kl) = tilt_at(scores, hi);
        if kl >= target_kl {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e300 {
            return Ok(tilt_limit(scores));
        }
    }
    let mut best = tilt_at(scores, hi);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let (probs, kl) = tilt_at(scores, mid);
        if kl < target_kl {
            lo = mid;
        } else {
            hi = mid;
        }
        if (kl - target_kl).abs() <= (best.1 - target_kl).abs() {
            best = (probs, kl);
        }
        if (kl - target_kl).abs() <= TILT_KL_TOL || hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(Policy {
        pool_size: m,
        probs: best.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    BonExact { n: u32 },
    BonSampled { n: u32, samples: u32, seed: u64 },
    KlTilt { target_kl: f64 },
}

impl OptimizerSpec {
    pub fn findings(&self) -> Vec<(String, String)> {
        match *self {
            OptimizerSpec::BonExact { n: 0 } => vec![("n".into(), "must be >= 1".into())],
            OptimizerSpec::BonSampled { n, samples, .. } if n == 0 || samples == 0 => {
                vec![("n/samples".into(), "must be >= 1".into())]
            }
            OptimizerSpec::KlTilt { target_kl } if !(target_kl.is_finite() && target_kl >= 0.0) => {
                vec![("target_kl".into(), "must be finite and >= 0".into())]
            }
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for OptimizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerSpec::BonExact { n } => write!(f, "bon{n}"),
            OptimizerSpec::BonSampled { n, samples, .. } => write!(f, "bon{n}x{samples}"),
            OptimizerSpec::KlTilt { target_kl } => write!(f, "tilt{target_kl}"),
        }
    }
}

/// Optimizes the uniform policy against `scores`.
pub fn optimize(scores: &ScoreTable, spec: &OptimizerSpec) -> Result<Policy> {
    match *spec {
        OptimizerSpec::BonExact { n } => bon_exact(scores, n),
        OptimizerSpec::BonSampled { n, samples, seed } => bon_sampled(scores, n, samples, seed),
        OptimizerSpec::KlTilt { target_kl } => kl_tilt(scores, target_kl),
    }
}

/// Normalised drop ratio of a policy whose golden gain is `gain`, given the golden-optimal gain.
pub fn ndr_from_gains(gain_proxy: f64, gain_golden: f64) -> Result<f64> {
    if gain_golden.abs() <= 1e-12 {
        return Err(Error::Degenerate(
            "optimizing the golden reward gains nothing over the reference policy".into(),
        ));
    }
    Ok(gain_proxy / gain_golden)
}

/// `(J*(pi) - J*(pi0)) / (J*(pi*) - J*(pi0))` with `pi`, `pi*` optimized against
/// proxy and golden using the same optimizer.
pub fn ndr(golden: &ScoreTable, proxy: &ScoreTable, spec: &OptimizerSpec) -> Result<f64> {
    golden.same_shape(proxy)?;
    let base = Policy::uniform(golden.num_prompts(), golden.pool_size());
    let j0 = expected_reward(&base, golden)?;
    let j_proxy = expected_reward(&optimize(proxy, spec)?, golden)?;
    let j_star = expected_reward(&optimize(golden, spec)?, golden)?;
    ndr_from_gains(j_proxy - j0, j_star - j0)
}

/// Golden rewards `(best, worst)` reachable by tilting within KL `lambda` of uniform.
pub fn regret_range(golden: &ScoreTable, lambda: f64) -> Result<(f64, f64)> {
    let best = expected_reward(&kl_tilt(golden, lambda)?, golden)?;
    let worst = expected_reward(&kl_tilt(&golden.map(|v| -v), lambda)?, golden)?;
    let scale = golden
        .values()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(1.0);
    if best - worst <= 1e-12 * scale {
        return Err(Error::Degenerate(format!(
            "golden reward is flat inside the KL ball of radius {lambda}"
        )));
    }
    Ok((best, worst))
}

/// Golden regret of the tilted proxy policy inside the KL ball of radius `lambda`,
/// normalized by the golden range reachable in that ball.
pub fn exact_regret(golden: &ScoreTable, proxy: &ScoreTable, lambda: f64) -> Result<f64> {
    golden.same_shape(proxy)?;
    let range = regret_range(golden, lambda)?;
    regret_in_range(golden, proxy, lambda, range)
}

/// [`exact_regret`] with a precomputed [`regret_range`].
pub fn regret_in_range(
    golden: &ScoreTable,
    proxy: &ScoreTable,
    lambda: f64,
    (best, worst): (f64, f64),
) -> Result<f64> {
    let achieved = expected_reward(&kl_tilt(proxy, lambda)?, golden)?;
    // the tilted proxy policy lies in the ball up to the bisection tolerance
    Ok(((best - achieved) / (best - worst)).clamp(0.0, 1.0))
}

/// Unbiased best-of-n estimate of the golden reward from `N` scored samples.
///
/// With the samples sorted ascending by proxy score, sample `i` (1-based) is the
/// proxy-best of a uniformly random `n`-subset with probability `C(i-1, n-1) / C(N, n)`.
pub fn unbiased_bon_estimate(proxy: &[f64], golden: &[f64], n: usize) -> Result<f64> {
    let big_n = proxy.len();
    if golden.len() != big_n {
        return Err(Error::DimensionMismatch(format!(
            "{big_n} proxy scores vs {} golden scores",
            golden.len()
        )));
    }
    if n == 0 || n > big_n {
        return Err(Error::spec("n", format!("must be in 1..={big_n}")));
    }
    let order = ascending_order(proxy);
    let mut coeff = n as f64 / big_n as f64;
    let mut total = 0.0;
    for i in (n..=big_n).rev() {
        total += coeff * golden[order[i - 1]];
        if i > n {
            coeff *= (i - n) as f64 / (i - 1) as f64;
        }
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub n: u32,
    /// `sqrt(KL)` in the requested log base.
    pub d: f64,
    pub golden_reward: f64,
    pub proxy_reward: f64,
}

/// Exact golden and proxy rewards of best-of-n against `proxy` for each `n`.
pub fn bon_trajectory(
    golden: &ScoreTable,
    proxy: &ScoreTable,
    n_values: &[u32],
    base: LogBase,
) -> Result<Vec<TrajectoryPoint>> {
    golden.same_shape(proxy)?;
    n_values
        .iter()
        .map(|&n| {
            let pi = bon_exact(proxy, n)?;
            Ok(TrajectoryPoint {
                n,
                d: bon_kl_formula(n, base).max(0.0).sqrt(),
                golden_reward: expected_reward(&pi, golden)?,
                proxy_reward: expected_reward(&pi, proxy)?,
            })
        })
        .collect()
}

/// CSV with columns `n,d,golden_reward,proxy_reward,proxy_id,golden_id`.
pub fn trajectory_csv<'a>(
    rows: impl IntoIterator<Item = (&'a str, &'a str, &'a [TrajectoryPoint])>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n",
        "d",
        "golden_reward",
        "proxy_reward",
        "proxy_id",
        "golden_id",
    ])?;
    for (proxy_id, golden_id, points) in rows {
        for p in points {
            w.write_record([
                p.n.to_string(),
                p.d.to_string(),
                p.golden_reward.to_string(),
                p.proxy_reward.to_string(),
                proxy_id.to_string(),
                golden_id.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Degree of overoptimization `J_golden(pi) / J_proxy(pi)` after normalization.
///
/// Both tables are centered over the world. The golden table is scaled to unit
/// variance and the proxy is scaled so that its covariance with the normalized
/// golden equals the golden variance, which puts any proxy in the additive-noise
/// form `r = r* + z` that the ratio is defined for.
pub fn estimate_dpi(golden: &ScoreTable, proxy: &ScoreTable, spec: &OptimizerSpec) -> Result<f64> {
    golden.same_shape(proxy)?;
    let (mg, sg) = golden.moments();
    if sg <= 0.0 {
        return Err(Error::Degenerate("golden scores have zero variance".into()));
    }
    let g = golden.map(|v| (v - mg) / sg);
    let (mp, _) = proxy.moments();
    let centered = proxy.map(|v| v - mp);
    let cov = centered
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / g.values().len() as f64;
    if cov.abs() < 1e-12 {
        return Err(Error::UndefinedRatio(
            "proxy is uncorrelated with the golden reward".into(),
        ));
    }
    let p = centered.map(|v| v / cov.abs());
    let pi = optimize(&p, spec)?;
    let j_proxy = expected_reward(&pi, &p)?;
    if j_proxy.abs() < 1e-9 {
        return Err(Error::UndefinedRatio(format!(
            "normalized proxy reward {j_proxy:e} of the optimized policy is ~0"
        )));
    }
    Ok(expected_reward(&pi, &g)? / j_proxy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[&[f64]]) -> ScoreTable {
        ScoreTable::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn uniform_basics() {
        let u = Policy::uniform(3, 8);
        assert!(u.rows().all(|r| r.iter().all(|&p| p == 0.125)));
        u.validate().unwrap();
        assert_eq!(kl_divergence(&u, &u, LogBase::Nat).unwrap(), 0.0);
    }

    #[test]
    fn expected_reward_of_uniform_and_point_mass() {
        let t = table(&[&[1.0, 2.0, 6.0], &[0.0, -3.0, 3.0]]);
        let u = Policy::uniform(2, 3);
        assert!((expected_reward(&u, &t).unwrap() - 9.0 / 6.0).abs() < 1e-12);
        let best = Policy::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(expected_reward(&best, &t).unwrap(), 4.5);
        let wrong = table(&[&[1.0, 2.0]]);
        assert!(expected_reward(&u, &wrong).is_err());
    }

    #[test]
    fn bon_small_cases() {
        let t = table(&[&[5.0, -1.0]]);
        assert_eq!(bon_exact(&t, 1).unwrap().row(0), &[0.5, 0.5]);
        // ascending: candidate 1 then 0
        assert_eq!(bon_exact(&t, 2).unwrap().row(0), &[0.75, 0.25]);
        let pi = bon_exact(&t, 2).unwrap();
        let kl = kl_divergence(&pi, &Policy::uniform(1, 2), LogBase::Nat).unwrap();
        assert!((kl - (0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln())).abs() < 1e-12);
        assert!((kl - 0.1308).abs() < 1e-4);
        let far = bon_exact(&t, 4000).unwrap();
        assert!(far.row(0)[0] > 1.0 - 1e-12);
    }

    #[test]
    fn bon_kl_formula_values() {
        assert_eq!(bon_kl_formula(1, LogBase::Nat), 0.0);
        assert!((bon_kl_formula(2, LogBase::Nat) - (2f64.ln() - 0.5)).abs() < 1e-15);
        assert!((bon_kl_formula(2, LogBase::Nat) - 0.1931).abs() < 1e-4);
        assert!((bon_kl_formula(2, LogBase::Bits) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_undefined_on_missing_support() {
        let p = Policy::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let q = Policy::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(matches!(
            kl_divergence(&p, &q, LogBase::Nat),
            Err(Error::DivergenceUndefined {
                prompt: 0,
                candidate: 1
            })
        ));
    }

    #[test]
    fn tilt_hits_target_and_limits() {
        let t = table(&[&[0.0, 1.0, 2.0, 3.0], &[1.0, -1.0, 0.5, 0.0]]);
        let u = Policy::uniform(2, 4);
        assert_eq!(kl_tilt(&t, 0.0).unwrap(), u);
        for target in [0.01, 0.3, 1.0, 1.3] {
            let pi = kl_tilt(&t, target).unwrap();
            pi.validate().unwrap();
            let kl = kl_divergence(&pi, &u, LogBase::Nat).unwrap();
            assert!((kl - target).abs() < 1e-9, "{kl} vs {target}");
        }
        let max = 4f64.ln();
        let pi = kl_tilt(&t, max).unwrap();
        assert_eq!(pi.row(0), &[0.0, 0.0, 0.0, 1.0]);
        match kl_tilt(&t, max + 0.1) {
            Err(Error::Infeasible(msg)) => assert!(msg.contains("1.386")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unbiased_estimator_small_cases() {
        let g = [0.0, 1.0, 2.0];
        assert!((unbiased_bon_estimate(&g, &g, 2).unwrap() - 5.0 / 3.0).abs() < 1e-12);
        assert!((unbiased_bon_estimate(&g, &g, 1).unwrap() - 1.0).abs() < 1e-12);
        let p = [3.0, 1.0, 2.0];
        assert_eq!(unbiased_bon_estimate(&p, &g, 3).unwrap(), 0.0);
        assert!(unbiased_bon_estimate(&p, &g, 4).is_err());
        assert!(unbiased_bon_estimate(&p, &g, 0).is_err());
    }

    #[test]
    fn regret_extremes() {
        let g = table(&[&[0.0, 1.0, 2.0, 3.0], &[2.0, -1.0, 0.5, 0.0]]);
        let neg = g.map(|v| -v);
        assert!(exact_regret(&g, &g, 0.5).unwrap() < 1e-9);
        assert!((exact_regret(&g, &neg, 0.5).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(
            exact_regret(&g, &g, 0.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ndr_extremes() {
        let g = table(&[&[0.0, 1.0, 2.0, 3.0], &[2.0, -1.0, 0.5, 0.0]]);
        let spec = OptimizerSpec::BonExact { n: 8 };
        assert!((ndr(&g, &g, &spec).unwrap() - 1.0).abs() < 1e-12);
        assert!(ndr(&g, &g.map(|v| -v), &spec).unwrap() < 0.0);
        let flat = table(&[&[1.0, 1.0]]);
        assert!(matches!(
            ndr(&flat, &flat, &spec),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn optimizer_spec_json() {
        let s: OptimizerSpec = serde_json::from_str(r#"{"kind":"bon_exact","n":128}"#).unwrap();
        assert_eq!(s, OptimizerSpec::BonExact { n: 128 });
        assert_eq!(s.to_string(), "bon128");
        assert!(serde_json::from_str::<OptimizerSpec>(r#"{"kind":"ppo"}"#).is_err());
    }
}
