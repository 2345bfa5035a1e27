//! Reward-model error metrics over per-prompt response sets.
//!
//! Each metric compares the proxy's scores of a prompt's responses with the
//! golden scores (or annotated labels) and is averaged over prompts. Ranks
//! follow the convention `N = best`; ties in scores are broken by candidate
//! id, so every set carries a strict total order.
//!
//! | metric | range | notes |
//! |--------|-------|-------|
//! | pearson, spearman, kendall | [-1, 1] | kendall is tau-b on raw scores |
//! | xi | [-1/2, 1 - 3/(N+1)] | proxy ties broken by a seeded shuffle |
//! | accuracy | [0, 1] | all C(N,2) pairs |
//! | bo5 | (-inf, 1] | normalized golden gain of the proxy's pick |
//! | ece | [0, 1] | pooled over prompts, bins over [0.5, 1] |
//! | mrr | [1/N, 1] | 1 when the proxy's pick is golden-best |
//! | ndcg | [0, 1] | gain = golden rank - 1 |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmtrain::RewardModel;
use crate::rng;
use crate::synthworld::{strict_cmp, ScoreTable, World};

// ---------------------------------------------------------------------------
// Correlations over plain vectors (shared with the harness)
// ---------------------------------------------------------------------------

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mid-ranks (ties share the mean of their positions), 1-based.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with mid-ranks for ties.
pub fn spearman_corr(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson_corr(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b; `None` when either side is entirely tied.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let (mut conc, mut disc, mut tie_x, mut tie_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {
                    tie_x += 1;
                    tie_y += 1;
                }
                (true, false) => tie_x += 1,
                (false, true) => tie_y += 1,
                (false, false) => {
                    if (dx > 0.0) == (dy > 0.0) {
                        conc += 1
                    } else {
                        disc += 1
                    }
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = (((n0 - tie_x) as f64) * ((n0 - tie_y) as f64)).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some(((conc - disc) as f64 / denom).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// Scored response sets
// ---------------------------------------------------------------------------

/// One prompt's responses with proxy and golden scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub prompt: usize,
    pub candidates: Vec<usize>,
    pub proxy_scores: Vec<f64>,
    pub golden_scores: Vec<f64>,
    pub proxy_ranks: Vec<usize>,
    pub golden_ranks: Vec<usize>,
}

fn ranks_by_id(scores: &[f64], ids: &[usize]) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..scores.len()).collect();
    pos.sort_by(|&a, &b| strict_cmp(scores[a], ids[a], scores[b], ids[b]));
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in pos.iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

impl ScoredSet {
    pub fn new(
        prompt: usize,
        candidates: Vec<usize>,
        proxy_scores: Vec<f64>,
        golden_scores: Vec<f64>,
    ) -> Result<Self> {
        let n = candidates.len();
        if n < 2 {
            return Err(Error::spec(
                format!("prompt {prompt}"),
                "a scored set needs at least 2 responses",
            ));
        }
        if proxy_scores.len() != n || golden_scores.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "prompt {prompt}: {n} candidates, {} proxy scores, {} golden scores",
                proxy_scores.len(),
                golden_scores.len()
            )));
        }
        if proxy_scores
            .iter()
            .chain(&golden_scores)
            .any(|v| !v.is_finite())
        {
            return Err(Error::spec(
                format!("prompt {prompt}"),
                "scores must be finite",
            ));
        }
        let mut seen = candidates.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != n {
            return Err(Error::spec(
                format!("prompt {prompt}"),
                "candidate ids must be distinct",
            ));
        }
        let proxy_ranks = ranks_by_id(&proxy_scores, &candidates);
        let golden_ranks = ranks_by_id(&golden_scores, &candidates);
        Ok(ScoredSet {
            prompt,
            candidates,
            proxy_scores,
            golden_scores,
            proxy_ranks,
            golden_ranks,
        })
    }

    /// Builds a set from plain score vectors; candidate ids are positions.
    pub fn from_scores(proxy: &[f64], golden: &[f64]) -> Result<Self> {
        ScoredSet::new(
            0,
            (0..proxy.len()).collect(),
            proxy.to_vec(),
            golden.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    fn proxy_best(&self) -> usize {
        let n = self.len();
        self.proxy_ranks
            .iter()
            .position(|&r| r == n)
            .expect("rank N present")
    }
}

fn as_f64(r: &[usize]) -> Vec<f64> {
    r.iter().map(|&v| v as f64).collect()
}

pub fn pearson(set: &ScoredSet) -> Option<f64> {
    pearson_corr(&set.proxy_scores, &set.golden_scores)
}

pub fn spearman(set: &ScoredSet) -> Option<f64> {
    pearson_corr(&as_f64(&set.proxy_ranks), &as_f64(&set.golden_ranks))
}

pub fn kendall_tau(set: &ScoredSet) -> Option<f64> {
    kendall_tau_b(&set.proxy_scores, &set.golden_scores)
}

/// Chatterjee's xi with responses ordered by golden score.
///
/// Tied proxy scores are ordered by a uniform shuffle drawn from `seed` and the prompt.
pub fn xi_corr(set: &ScoredSet, seed: u64) -> f64 {
    let n = set.len();
    let has_ties = {
        let mut s = set.proxy_scores.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).any(|w| w[0] == w[1])
    };
    let proxy_ranks = if has_ties {
        let mut r = rng::rng(rng::derive_seed(seed, "xi-ties", set.prompt as u64));
        let keys: Vec<u64> = (0..n).map(|_| r.random()).collect();
        let mut pos: Vec<usize> = (0..n).collect();
        pos.sort_by(|&a, &b| {
            let s = &set.proxy_scores;
            let primary = if s[a] == s[b] {
                std::cmp::Ordering::Equal
            } else {
                s[a].total_cmp(&s[b])
            };
            primary.then(keys[a].cmp(&keys[b])).then(a.cmp(&b))
        });
        let mut ranks = vec![0; n];
        for (k, &i) in pos.iter().enumerate() {
            ranks[i] = k + 1;
        }
        ranks
    } else {
        set.proxy_ranks.clone()
    };
    let mut by_golden: Vec<usize> = (0..n).collect();
    by_golden.sort_by_key(|&i| set.golden_ranks[i]);
    let sum: usize = by_golden
        .windows(2)
        .map(|w| proxy_ranks[w[1]].abs_diff(proxy_ranks[w[0]]))
        .sum();
    let n = n as f64;
    1.0 - 3.0 * sum as f64 / (n * n - 1.0)
}

/// Fraction of the C(N,2) pairs ordered the same way by proxy and golden.
pub fn accuracy_pairs(set: &ScoredSet) -> f64 {
    let n = set.len();
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let p = set.proxy_ranks[i] > set.proxy_ranks[j];
            let g = set.golden_ranks[i] > set.golden_ranks[j];
            agree += usize::from(p == g);
        }
    }
    agree as f64 / (n * (n - 1) / 2) as f64
}

/// Golden gain of the proxy's top pick, normalized by the best attainable gain over the mean.
pub fn bo5(set: &ScoredSet) -> Option<f64> {
    let g = &set.golden_scores;
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    let max = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - mean <= 0.0 {
        return None;
    }
    Some((g[set.proxy_best()] - mean) / (max - mean))
}

/// Reciprocal golden position (1 = golden-best) of the proxy's top pick.
pub fn mrr_metric(set: &ScoredSet) -> f64 {
    let n = set.len();
    let golden_rank = set.golden_ranks[set.proxy_best()];
    1.0 / (n + 1 - golden_rank) as f64
}

/// NDCG with gains `golden_rank - 1`, positions taken from the proxy ranking.
pub fn ndcg(set: &ScoredSet) -> f64 {
    let n = set.len();
    let dcg_for = |ranks: &[usize]| -> f64 {
        set.golden_ranks
            .iter()
            .zip(ranks)
            .map(|(&g, &r)| {
                let position = n - r + 1;
                (g - 1) as f64 / ((position + 1) as f64).log2()
            })
            .sum()
    };
    dcg_for(&set.proxy_ranks) / dcg_for(&set.golden_ranks)
}

/// Expected calibration error of Bradley-Terry confidences, pooled over all sets.
///
/// Each pair is oriented so the proxy margin is nonnegative; its confidence is
/// `sigmoid(margin)` and it counts as correct when the golden order agrees.
pub fn ece(sets: &[ScoredSet], num_bins: usize) -> Option<f64> {
    let bins = num_bins.max(1);
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    for set in sets {
        let n = set.len();
        for i in 0..n {
            for j in i + 1..n {
                let (hi, lo) = if set.proxy_ranks[i] > set.proxy_ranks[j] {
                    (i, j)
                } else {
                    (j, i)
                };
                let margin = set.proxy_scores[hi] - set.proxy_scores[lo];
                let conf = 1.0 / (1.0 + (-margin).exp());
                let b = (((conf - 0.5) / 0.5 * bins as f64) as usize).min(bins - 1);
                count[b] += 1;
                conf_sum[b] += conf;
                correct[b] += usize::from(set.golden_ranks[hi] > set.golden_ranks[lo]);
            }
        }
    }
    let total: usize = count.iter().sum();
    if total == 0 {
        return None;
    }
    let e = (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / total as f64 * (correct[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum();
    Some(e)
}

// ---------------------------------------------------------------------------
// Metric registry and reports
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Pearson,
    Spearman,
    Kendall,
    Xi,
    Accuracy,
    Bo5,
    Ece,
    Mrr,
    Ndcg,
    /// Accuracy on two-response (chosen/rejected) sets only.
    AccuracyPair,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Pearson,
        Metric::Spearman,
        Metric::Kendall,
        Metric::Xi,
        Metric::Accuracy,
        Metric::Bo5,
        Metric::Ece,
        Metric::Mrr,
        Metric::Ndcg,
        Metric::AccuracyPair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
            Metric::Kendall => "kendall",
            Metric::Xi => "xi",
            Metric::Accuracy => "accuracy",
            Metric::Bo5 => "bo5",
            Metric::Ece => "ece",
            Metric::Mrr => "mrr",
            Metric::Ndcg => "ndcg",
            Metric::AccuracyPair => "accuracy_pair",
        }
    }

    /// ECE is an error; every other metric grows with proxy quality.
    pub fn higher_is_better(self) -> bool {
        self != Metric::Ece
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::spec("metric", format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub ece_bins: usize,
    pub xi_seed: u64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ece_bins: 10,
            xi_seed: 0,
        }
    }
}

/// A metric averaged over prompts; undefined prompts are excluded and counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub value: Option<f64>,
    pub used: usize,
    pub excluded: usize,
}

impl Averaged {
    fn from_values(values: impl Iterator<Item = Option<f64>>) -> Self {
        let (mut sum, mut used, mut excluded) = (0.0, 0, 0);
        for v in values {
            match v {
                Some(v) => {
                    sum += v;
                    used += 1;
                }
                None => excluded += 1,
            }
        }
        Averaged {
            value: (used > 0).then(|| sum / used as f64),
            used,
            excluded,
        }
    }
}

pub fn evaluate_metric(metric: Metric, sets: &[ScoredSet], cfg: &MetricConfig) -> Averaged {
    let per = |f: &dyn Fn(&ScoredSet) -> Option<f64>| Averaged::from_values(sets.iter().map(f));
    match metric {
        Metric::Pearson => per(&pearson),
        Metric::Spearman => per(&spearman),
        Metric::Kendall => per(&kendall_tau),
        Metric::Xi => per(&|s| Some(xi_corr(s, cfg.xi_seed))),
        Metric::Accuracy => per(&|s| Some(accuracy_pairs(s))),
        Metric::Bo5 => per(&bo5),
        Metric::Mrr => per(&|s| Some(mrr_metric(s))),
        Metric::Ndcg => per(&|s| Some(ndcg(s))),
        Metric::AccuracyPair => per(&|s| (s.len() == 2).then(|| accuracy_pairs(s))),
        Metric::Ece => {
            let value = ece(sets, cfg.ece_bins);
            Averaged {
                value,
                used: if value.is_some() { sets.len() } else { 0 },
                excluded: if value.is_some() { 0 } else { sets.len() },
            }
        }
    }
}

/// Test dataset: per-prompt response subsets, optionally with annotated labels
/// that replace the golden scores as the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestItem {
    pub prompt: usize,
    pub candidates: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub items: Vec<TestItem>,
}

impl TestSet {
    /// Every candidate of every prompt.
    pub fn full_pool(num_prompts: usize, pool_size: usize) -> Self {
        TestSet {
            items: (0..num_prompts)
                .map(|prompt| TestItem {
                    prompt,
                    candidates: (0..pool_size).collect(),
                    labels: None,
                })
                .collect(),
        }
    }

    pub fn is_pair_form(&self) -> bool {
        !self.items.is_empty() && self.items.iter().all(|i| i.candidates.len() == 2)
    }

    pub fn sample_size(&self) -> usize {
        self.items.iter().map(|i| i.candidates.len()).sum()
    }

    /// Scores every item against the two tables.
    pub fn scored_sets(&self, proxy: &ScoreTable, golden: &ScoreTable) -> Result<Vec<ScoredSet>> {
        proxy.same_shape(golden)?;
        self.items
            .iter()
            .map(|item| {
                if item.prompt >= proxy.num_prompts() {
                    return Err(Error::IndexOutOfRange {
                        what: "prompt",
                        index: item.prompt,
                        limit: proxy.num_prompts(),
                    });
                }
                if let Some(&c) = item.candidates.iter().find(|&&c| c >= proxy.pool_size()) {
                    return Err(Error::IndexOutOfRange {
                        what: "candidate",
                        index: c,
                        limit: proxy.pool_size(),
                    });
                }
                let p: Vec<f64> = item
                    .candidates
                    .iter()
                    .map(|&c| proxy.get(item.prompt, c))
                    .collect();
                let g = match &item.labels {
                    Some(l) => l.clone(),
                    None => item
                        .candidates
                        .iter()
                        .map(|&c| golden.get(item.prompt, c))
                        .collect(),
                };
                ScoredSet::new(item.prompt, item.candidates.clone(), p, g)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Metric name to prompt-averaged value (`None` when undefined everywhere).
    pub values: BTreeMap<String, Option<f64>>,
    /// Metric name to number of prompts excluded as undefined.
    pub excluded: BTreeMap<String, usize>,
    /// Largest response-set size.
    pub responses_per_prompt: usize,
    pub num_prompts: usize,
    pub config: MetricConfig,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.get(metric.name()).copied().flatten()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Header row of metric names plus one row of values.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.values.keys())?;
        w.write_record(
            self.values
                .values()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        )?;
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Computes `metrics` for the proxy table against the golden table on `testset`.
pub fn evaluate_tables(
    proxy: &ScoreTable,
    golden: &ScoreTable,
    testset: &TestSet,
    metrics: &[Metric],
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let sets = testset.scored_sets(proxy, golden)?;
    Ok(report_from_sets(&sets, metrics, cfg))
}

pub fn report_from_sets(
    sets: &[ScoredSet],
    metrics: &[Metric],
    cfg: &MetricConfig,
) -> MetricReport {
    let mut values = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    for &m in metrics {
        let a = evaluate_metric(m, sets, cfg);
        values.insert(m.name().to_string(), a.value);
        excluded.insert(m.name().to_string(), a.excluded);
    }
    MetricReport {
        values,
        excluded,
        responses_per_prompt: sets.iter().map(ScoredSet::len).max().unwrap_or(0),
        num_prompts: sets.len(),
        config: cfg.clone(),
    }
}

/// Every metric of the proxy model against the golden model on `testset`;
/// `accuracy_pair` is included when the test set is in pair form.
pub fn evaluate_all(
    world: &World,
    proxy: &RewardModel,
    golden: &RewardModel,
    testset: &TestSet,
    cfg: &MetricConfig,
) -> Result<MetricReport> {
    let p = proxy.score_table(world)?;
    let g = golden.score_table(world)?;
    let metrics: Vec<Metric> = Metric::ALL
        .into_iter()
        .filter(|&m| m != Metric::AccuracyPair || testset.is_pair_form())
        .collect();
    evaluate_tables(&p, &g, testset, &metrics, cfg)
}
