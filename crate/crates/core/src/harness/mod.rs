//! The golden-proxy protocol.
//!
//! Every model of a family takes a turn as the golden reward while the others
//! are scored as proxies against it. Each ordered pair yields RM-error metrics
//! on a resampled test set and policy regrets under each configured optimizer;
//! [`correlate`] then asks how well a metric predicts the regret.

mod config;
mod output;

use std::collections::BTreeMap;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

pub use config::{
    validate_config, BudgetSweep, ExperimentConfig, FamilyMode, FamilySpec, Finding, ResampleMode,
    Statistic, SweepMode, TestsetSpec, CONFIG_VERSION,
};
pub use output::{
    correlations_csv, matrix_csv, records_csv, run_stage, sweep_csv, Manifest, Stage, StageSummary,
};

use crate::annotator::{annotate_items, Annotator, AnnotatorSpec};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_metric, kendall_tau_b, pearson_corr, spearman_corr, Metric, MetricConfig, TestItem,
    TestSet,
};
use crate::policyopt::{
    expected_reward, ndr_from_gains, optimize, regret_in_range, regret_range, OptimizerSpec, Policy,
};
use crate::rmtrain::{
    build_preference_dataset, fit_bt, PreferenceDataset, RewardModel, TrainConfig,
};
use crate::rng;
use crate::synthworld::{noise_proxy, strict_cmp, NoiseSpec, ScoreTable, World};

/// Reward models plus their score tables over the world.
#[derive(Clone, Debug)]
pub struct Family {
    pub models: Vec<RewardModel>,
    pub tables: Vec<ScoreTable>,
    /// Training sets, in flip mode.
    pub datasets: Vec<PreferenceDataset>,
}

impl Family {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.models.iter().map(|m| m.id.as_str()).collect()
    }

    pub fn from_models(world: &World, models: Vec<RewardModel>) -> Result<Family> {
        let tables = models
            .iter()
            .map(|m| m.score_table(world))
            .collect::<Result<Vec<_>>>()?;
        Ok(Family {
            models,
            tables,
            datasets: Vec::new(),
        })
    }
}

pub fn build_proxy_family(world: &World, cfg: &ExperimentConfig) -> Result<Vec<RewardModel>> {
    Ok(build_family(world, cfg)?.models)
}

/// One model per grid entry: Bradley-Terry fits on one shared base dataset with
/// nested flip masks, or noise proxies.
pub fn build_family(world: &World, cfg: &ExperimentConfig) -> Result<Family> {
    let fam = &cfg.family;
    match fam.mode {
        config::FamilyMode::Flip => {
            let datasets = build_preference_dataset(
                world,
                fam.pairs_per_prompt,
                &fam.flip_rates,
                rng::derive_seed(cfg.seed, "family-data", 0),
            )?;
            let jobs: Vec<(usize, &PreferenceDataset)> = datasets.iter().enumerate().collect();
            let models = par_map(cfg.jobs(), &jobs, |&(i, ds)| {
                let train = TrainConfig {
                    seed: rng::derive_seed(cfg.seed, "family-train", fam.train.seed ^ i as u64),
                    ..fam.train.clone()
                };
                fit_bt(world, ds, &train)
            })?;
            let mut family = Family::from_models(world, models)?;
            family.datasets = datasets;
            Ok(family)
        }
        config::FamilyMode::Noise => {
            let std = world.spec().reward_std;
            let models = fam
                .sigmas
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    noise_proxy(
                        world,
                        NoiseSpec {
                            sigma: s * std,
                            seed: rng::derive_seed(cfg.seed, "family-noise", i as u64),
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Family::from_models(world, models)
        }
    }
}

/// The `(prompt, candidates)` items of one resample; shared by every golden assignment.
pub fn sample_items(
    spec: &TestsetSpec,
    num_prompts: usize,
    pool_size: usize,
    seed: u64,
    resample: usize,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if spec.k < 2 || spec.k > pool_size {
        return Err(Error::spec(
            "testset.k",
            format!("must be in 2..={pool_size}"),
        ));
    }
    if spec.num_prompts == 0 || spec.num_prompts > num_prompts {
        return Err(Error::spec(
            "testset.num_prompts",
            format!("must be in 1..={num_prompts}"),
        ));
    }
    let prompt_draw = match spec.resample_mode {
        ResampleMode::Responses => 0,
        ResampleMode::PromptsAndResponses => resample as u64,
    };
    let mut pr = rng::rng(rng::derive_seed(seed, "testset-prompts", prompt_draw));
    let mut prompts = sample(&mut pr, num_prompts, spec.num_prompts).into_vec();
    prompts.sort_unstable();
    let mut cr = rng::rng(rng::derive_seed(seed, "testset-responses", resample as u64));
    Ok(prompts
        .into_iter()
        .map(|p| {
            let mut c = sample(&mut cr, pool_size, spec.k).into_vec();
            c.sort_unstable();
            (p, c)
        })
        .collect())
}

/// Labels shared items for one golden model: exact golden scores, or annotated ranks.
pub fn label_items(
    items: &[(usize, Vec<usize>)],
    golden: &ScoreTable,
    spec: &TestsetSpec,
    annotator_seed: u64,
) -> Result<(TestSet, u64)> {
    match spec.annotator_beta {
        None => Ok((
            TestSet {
                items: items
                    .iter()
                    .map(|(p, c)| TestItem {
                        prompt: *p,
                        candidates: c.clone(),
                        labels: None,
                    })
                    .collect(),
            },
            0,
        )),
        Some(beta) => {
            let mut annotator = Annotator::new(AnnotatorSpec {
                beta,
                seed: annotator_seed,
            })?;
            let annotated = annotate_items(golden, items, spec.budget, &mut annotator);
            if annotated.items.is_empty() {
                return Err(Error::Infeasible(format!(
                    "annotation budget {:?} cannot cover one prompt with k = {}",
                    spec.budget, spec.k
                )));
            }
            Ok((annotated.to_testset(), annotated.comparisons_used()))
        }
    }
}

/// One golden-proxy evaluation on one resample (and optionally one category).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub golden_id: String,
    pub proxy_id: String,
    pub category: Option<usize>,
    pub resample: usize,
    pub metrics: BTreeMap<String, Option<f64>>,
    /// Optimizer name to NDR.
    pub ndr: BTreeMap<String, f64>,
    pub exact_regret: f64,
}

/// Regrets of every ordered pair; `[golden][proxy]`, diagonal empty.
#[derive(Clone, Debug)]
pub struct RegretTable {
    pub ndr: Vec<Vec<BTreeMap<String, f64>>>,
    pub exact: Vec<Vec<f64>>,
}

/// NDR per optimizer and exact regret for every ordered pair, over `prompts`
/// (`None` for all prompts).
pub fn pair_regrets(
    family: &Family,
    cfg: &ExperimentConfig,
    prompts: Option<&[usize]>,
) -> Result<RegretTable> {
    let n = family.len();
    let tables: Vec<ScoreTable> = match prompts {
        Some(ps) => family.tables.iter().map(|t| t.select_prompts(ps)).collect(),
        None => family.tables.clone(),
    };
    let (num_prompts, pool) = (tables[0].num_prompts(), tables[0].pool_size());
    let base = Policy::uniform(num_prompts, pool);
    let optimizers: Vec<(&String, &OptimizerSpec)> = cfg.optimizers.iter().collect();

    // Each model's own optimized policy, then golden-side constants.
    let policies = par_map(cfg.jobs(), &tables, |t| {
        optimizers
            .iter()
            .map(|(_, spec)| optimize(t, spec))
            .collect::<Result<Vec<_>>>()
    })?;
    let golden_side = par_map(cfg.jobs(), &(0..n).collect::<Vec<_>>(), |&g| {
        let j0 = expected_reward(&base, &tables[g])?;
        let gains = policies[g]
            .iter()
            .map(|pi| Ok(expected_reward(pi, &tables[g])? - j0))
            .collect::<Result<Vec<_>>>()?;
        Ok((j0, gains, regret_range(&tables[g], cfg.regret_lambda)?))
    })?;

    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|g| (0..n).filter(move |&p| p != g).map(move |p| (g, p)))
        .collect();
    let values = par_map(cfg.jobs(), &cells, |&(g, p)| {
        let (j0, gains, range) = &golden_side[g];
        let wrap = |e: Error| Error::Pair {
            golden: family.models[g].id.clone(),
            proxy: family.models[p].id.clone(),
            source: Box::new(e),
        };
        let mut ndr = BTreeMap::new();
        for (o, (name, _)) in optimizers.iter().enumerate() {
            let gain = expected_reward(&policies[p][o], &tables[g]).map_err(wrap)? - j0;
            ndr.insert(
                (*name).clone(),
                ndr_from_gains(gain, gains[o]).map_err(wrap)?,
            );
        }
        let exact =
            regret_in_range(&tables[g], &tables[p], cfg.regret_lambda, *range).map_err(wrap)?;
        Ok((ndr, exact))
    })?;

    let mut out = RegretTable {
        ndr: vec![vec![BTreeMap::new(); n]; n],
        exact: vec![vec![f64::NAN; n]; n],
    };
    for (&(g, p), (ndr, exact)) in cells.iter().zip(values) {
        out.ndr[g][p] = ndr;
        out.exact[g][p] = exact;
    }
    Ok(out)
}

/// All `N x (N - 1)` ordered pairs on every resample, plus per-category copies
/// when `group_by_category` is set.
pub fn collect_pairs(
    world: &World,
    family: &Family,
    cfg: &ExperimentConfig,
) -> Result<Vec<PairRecord>> {
    if family.len() < 2 {
        return Err(Error::spec("family", "needs at least 2 models"));
    }
    let regrets = pair_regrets(family, cfg, None)?;
    let mut records = pair_metrics(
        world,
        family,
        &regrets,
        cfg,
        &cfg.testset,
        &cfg.metrics,
        None,
    )?;
    if cfg.group_by_category {
        for c in 0..world.spec().num_categories {
            let prompts: Vec<usize> = (0..world.num_prompts())
                .filter(|&p| world.category(p) == c)
                .collect();
            let regrets = pair_regrets(family, cfg, Some(&prompts))?;
            records.extend(pair_metrics(
                world,
                family,
                &regrets,
                cfg,
                &cfg.testset,
                &cfg.metrics,
                Some(c),
            )?);
        }
    }
    Ok(records)
}

/// Metric records for every ordered pair and resample of `spec`, restricted to
/// test items in `category` when given.
pub fn pair_metrics(
    world: &World,
    family: &Family,
    regrets: &RegretTable,
    cfg: &ExperimentConfig,
    spec: &TestsetSpec,
    metrics: &[Metric],
    category: Option<usize>,
) -> Result<Vec<PairRecord>> {
    let n = family.len();
    let pool = world.pool_size();
    let item_sets = (0..spec.resamples)
        .map(|r| sample_items(spec, world.num_prompts(), pool, cfg.seed, r))
        .collect::<Result<Vec<_>>>()?;

    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|g| (0..spec.resamples).map(move |r| (g, r)))
        .collect();
    let per_cell = par_map(cfg.jobs(), &cells, |&(g, r)| {
        let golden = &family.tables[g];
        let seed = rng::derive_seed(cfg.seed, "annotator", (g * spec.resamples + r) as u64);
        let (mut testset, _) = label_items(&item_sets[r], golden, spec, seed)?;
        if let Some(c) = category {
            testset.items.retain(|it| world.category(it.prompt) == c);
        }
        (0..n)
            .filter(|&p| p != g)
            .map(|p| {
                let sets = testset.scored_sets(&family.tables[p], golden)?;
                Ok(metric_values(&sets, metrics, &cfg.metric_config))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut by_cell: BTreeMap<(usize, usize), Vec<BTreeMap<String, Option<f64>>>> = BTreeMap::new();
    for (&cell, values) in cells.iter().zip(per_cell) {
        by_cell.insert(cell, values);
    }
    let mut records = Vec::with_capacity(n * (n - 1) * spec.resamples);
    for g in 0..n {
        for (slot, p) in (0..n).filter(|&p| p != g).enumerate() {
            for r in 0..spec.resamples {
                records.push(PairRecord {
                    golden_id: family.models[g].id.clone(),
                    proxy_id: family.models[p].id.clone(),
                    category,
                    resample: r,
                    metrics: by_cell[&(g, r)][slot].clone(),
                    ndr: regrets.ndr[g][p].clone(),
                    exact_regret: regrets.exact[g][p],
                });
            }
        }
    }
    Ok(records)
}

fn metric_values(
    sets: &[crate::metrics::ScoredSet],
    metrics: &[Metric],
    cfg: &MetricConfig,
) -> BTreeMap<String, Option<f64>> {
    metrics
        .iter()
        .map(|&m| {
            let v = if m == Metric::AccuracyPair && sets.iter().any(|s| s.len() != 2) {
                None
            } else {
                evaluate_metric(m, sets, cfg).value
            };
            (m.name().to_string(), v)
        })
        .collect()
}

/// What a metric is correlated against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    /// NDR under the named optimizer; higher is better.
    Ndr(String),
    /// Exact KL-ball regret; lower is better.
    ExactRegret,
}

impl Target {
    pub fn parse(s: &str) -> Target {
        match s {
            "exact_regret" => Target::ExactRegret,
            name => Target::Ndr(name.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Target::Ndr(n) => n,
            Target::ExactRegret => "exact_regret",
        }
    }

    fn value(&self, r: &PairRecord) -> Result<f64> {
        match self {
            Target::Ndr(n) => {
                r.ndr.get(n).copied().ok_or_else(|| {
                    Error::spec("optimizer", format!("no regret recorded for `{n}`"))
                })
            }
            Target::ExactRegret => Ok(r.exact_regret),
        }
    }

    fn higher_is_better(&self) -> bool {
        matches!(self, Target::Ndr(_))
    }
}

/// Mean and 95% percentile interval of one statistic over resamples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub half_width: Option<f64>,
    /// Resamples where the statistic was defined for at least one golden assignment.
    pub resamples_used: usize,
    /// Golden assignments (summed over resamples) where it was undefined.
    pub undefined: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenStats {
    pub golden_id: String,
    /// Statistic name to its mean over resamples.
    pub values: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub target: String,
    pub category: Option<usize>,
    pub per_golden: Vec<GoldenStats>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

impl CorrelationReport {
    pub fn mean(&self, stat: Statistic) -> Option<f64> {
        self.aggregates.get(stat.name()).and_then(|a| a.mean)
    }
}

/// Correlates `metric` with `target` over the uncategorized records.
pub fn correlate(
    records: &[PairRecord],
    metric: Metric,
    target: &str,
) -> Result<CorrelationReport> {
    correlate_with(
        records,
        metric,
        &Target::parse(target),
        None,
        &Statistic::ALL,
    )
}

/// Per golden assignment and resample, correlates metric values with target
/// values over the proxies; averages over golden assignments, then aggregates
/// over resamples.
pub fn correlate_with(
    records: &[PairRecord],
    metric: Metric,
    target: &Target,
    category: Option<usize>,
    statistics: &[Statistic],
) -> Result<CorrelationReport> {
    // golden -> resample -> (proxy, metric, target)
    let mut goldens: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<(&str, Option<f64>, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.category == category) {
        let gi = match goldens.iter().position(|g| *g == r.golden_id) {
            Some(i) => i,
            None => {
                goldens.push(&r.golden_id);
                goldens.len() - 1
            }
        };
        let m = *r
            .metrics
            .get(metric.name())
            .ok_or_else(|| Error::spec("metric", format!("no values recorded for `{metric}`")))?;
        groups
            .entry((gi, r.resample))
            .or_default()
            .push((&r.proxy_id, m, target.value(r)?));
    }
    if groups.is_empty() {
        return Err(Error::spec("records", "no records to correlate"));
    }
    if let Some(((g, _), v)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::spec(
            "records",
            format!(
                "golden `{}` has {} proxies; correlation needs at least 2",
                goldens[*g],
                v.len()
            ),
        ));
    }
    let resamples: Vec<usize> = {
        let mut r: Vec<usize> = groups.keys().map(|&(_, r)| r).collect();
        r.sort_unstable();
        r.dedup();
        r
    };

    let mut per_golden_sum = vec![BTreeMap::<Statistic, (f64, usize)>::new(); goldens.len()];
    let mut aggregates = BTreeMap::new();
    for &stat in statistics {
        let mut resample_means = Vec::new();
        let mut undefined = 0;
        for &r in &resamples {
            let mut sum = 0.0;
            let mut used = 0;
            for (g, slot) in per_golden_sum.iter_mut().enumerate() {
                let Some(rows) = groups.get(&(g, r)) else {
                    continue;
                };
                let rows: Vec<_> = rows
                    .iter()
                    .filter_map(|&(id, m, t)| m.map(|m| (id, m, t)))
                    .collect();
                let x: Vec<f64> = rows.iter().map(|r| r.1).collect();
                let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
                let v = statistic(
                    stat,
                    &x,
                    &y,
                    metric.higher_is_better(),
                    target.higher_is_better(),
                );
                match v {
                    Some(v) => {
                        sum += v;
                        used += 1;
                        let e = slot.entry(stat).or_insert((0.0, 0));
                        e.0 += v;
                        e.1 += 1;
                    }
                    None => undefined += 1,
                }
            }
            if used > 0 {
                resample_means.push(sum / used as f64);
            }
        }
        let (lo, hi) = percentile_interval(&resample_means, 0.95).unzip();
        let mean = (!resample_means.is_empty())
            .then(|| resample_means.iter().sum::<f64>() / resample_means.len() as f64);
        aggregates.insert(
            stat.name().to_string(),
            Aggregate {
                mean,
                lo,
                hi,
                half_width: lo.zip(hi).map(|(l, h)| (h - l) / 2.0),
                resamples_used: resample_means.len(),
                undefined,
            },
        );
    }

    let per_golden = goldens
        .iter()
        .zip(per_golden_sum)
        .map(|(id, sums)| GoldenStats {
            golden_id: id.to_string(),
            values: statistics
                .iter()
                .map(|s| {
                    let v = sums.get(s).map(|&(t, n)| t / n as f64);
                    (s.name().to_string(), v)
                })
                .collect(),
        })
        .collect();
    Ok(CorrelationReport {
        metric: metric.name().to_string(),
        target: target.name().to_string(),
        category,
        per_golden,
        aggregates,
    })
}

fn statistic(stat: Statistic, x: &[f64], y: &[f64], x_up: bool, y_up: bool) -> Option<f64> {
    match stat {
        Statistic::Pearson => pearson_corr(x, y),
        Statistic::Spearman => spearman_corr(x, y),
        Statistic::Kendall => kendall_tau_b(x, y),
        Statistic::Mrr => reciprocal_rank(x, y, x_up, y_up),
    }
}

/// Reciprocal rank, by target (best = 1), of the proxy with the best metric.
fn reciprocal_rank(x: &[f64], y: &[f64], x_up: bool, y_up: bool) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let orient = |v: f64, up: bool| if up { v } else { -v };
    let best = (0..x.len())
        .max_by(|&a, &b| strict_cmp(orient(x[a], x_up), a, orient(x[b], x_up), b))
        .expect("non-empty");
    let yb = orient(y[best], y_up);
    let rank = 1
        + (0..y.len())
            .filter(|&i| strict_cmp(orient(y[i], y_up), i, yb, best).is_gt())
            .count();
    Some(1.0 / rank as f64)
}

/// Central `level` percentile interval of `values` (linear interpolation).
pub fn percentile_interval(values: &[f64], level: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        if i + 1 < v.len() {
            v[i] + frac * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    let tail = (1.0 - level) / 2.0;
    Some((q(tail), q(1.0 - tail)))
}

/// Percentile bootstrap interval of the mean of `values`.
pub fn bootstrap_mean_interval(
    values: &[f64],
    reps: usize,
    level: f64,
    seed: u64,
) -> Option<(f64, f64)> {
    use rand::Rng as _;
    if values.is_empty() || reps == 0 {
        return None;
    }
    let mut r = rng::rng(rng::derive_seed(seed, "bootstrap", 0));
    let means: Vec<f64> = (0..reps)
        .map(|_| {
            (0..values.len())
                .map(|_| values[r.random_range(0..values.len())])
                .sum::<f64>()
                / values.len() as f64
        })
        .collect();
    percentile_interval(&means, level)
}

/// Resample-averaged metric values per (golden, proxy) together with the target.
pub fn pair_means(
    records: &[PairRecord],
    metric: Metric,
    target: &Target,
    category: Option<usize>,
) -> Result<Vec<(String, String, Option<f64>, f64)>> {
    let mut acc: BTreeMap<(String, String), (f64, usize, f64, usize)> = BTreeMap::new();
    let mut order = Vec::new();
    for r in records.iter().filter(|r| r.category == category) {
        let key = (r.golden_id.clone(), r.proxy_id.clone());
        let e = acc.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (0.0, 0, 0.0, 0)
        });
        if let Some(Some(m)) = r.metrics.get(metric.name()) {
            e.0 += m;
            e.1 += 1;
        }
        e.2 = target.value(r)?;
    }
    Ok(order
        .into_iter()
        .map(|k| {
            let (s, n, t, _) = acc[&k];
            (k.0, k.1, (n > 0).then(|| s / n as f64), t)
        })
        .collect())
}

/// Within one golden assignment, two proxies whose mean metric values differ by
/// less than `metric_tol` while their targets differ by more than `target_gap`.
pub fn similar_metric_divergent_target(
    records: &[PairRecord],
    metric: Metric,
    target: &Target,
    metric_tol: f64,
    target_gap: f64,
) -> Result<Option<(String, String, String)>> {
    let means = pair_means(records, metric, target, None)?;
    let mut by_golden: BTreeMap<&str, Vec<(&str, f64, f64)>> = BTreeMap::new();
    for (g, p, m, t) in &means {
        if let Some(m) = m {
            by_golden.entry(g).or_default().push((p, *m, *t));
        }
    }
    for (g, rows) in by_golden {
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                if (a.1 - b.1).abs() < metric_tol && (a.2 - b.2).abs() > target_gap {
                    return Ok(Some((g.to_string(), a.0.to_string(), b.0.to_string())));
                }
            }
        }
    }
    Ok(None)
}

/// Pairwise accuracy of every model against every other as golden; diagonal 1.
pub fn accuracy_matrix(family: &Family, testset: &TestSet) -> Result<Vec<Vec<f64>>> {
    let n = family.len();
    if n < 2 {
        return Err(Error::spec("family", "needs at least 2 models"));
    }
    let cfg = MetricConfig::default();
    let mut m = vec![vec![1.0; n]; n];
    for g in 0..n {
        for p in (g + 1)..n {
            let sets = testset.scored_sets(&family.tables[p], &family.tables[g])?;
            let a = evaluate_metric(Metric::Accuracy, &sets, &cfg)
                .value
                .ok_or_else(|| Error::spec("testset", "is empty"))?;
            m[g][p] = a;
            m[p][g] = a;
        }
    }
    Ok(m)
}

/// One cell of a budget sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub size: u64,
    /// Prompts labeled, averaged over resamples and golden assignments.
    pub prompts_used: f64,
    pub statistic: String,
    pub aggregate: Option<Aggregate>,
    /// Empty when the cell ran; the reason otherwise.
    pub status: String,
}

/// Rebuilds the test set for every `(k, size)` cell and correlates the sweep
/// metric with the sweep optimizer's NDR. Infeasible cells are reported, not fatal.
pub fn budget_sweep(
    world: &World,
    family: &Family,
    regrets: &RegretTable,
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepRow>> {
    let sweep = cfg
        .budget_sweep
        .as_ref()
        .ok_or_else(|| Error::spec("budget_sweep", "is not configured"))?;
    let target = Target::Ndr(sweep.optimizer.clone());
    let mut rows = Vec::new();
    for &k in &sweep.ks {
        for &size in &sweep.sizes {
            let mut spec = cfg.testset.clone();
            spec.k = k;
            let feasible = match sweep.mode {
                SweepMode::Samples => {
                    spec.budget = None;
                    spec.num_prompts = (size / k as u64) as usize;
                    if spec.num_prompts == 0 || spec.num_prompts > world.num_prompts() {
                        Err(format!(
                            "infeasible: {size} samples at k = {k} need {} prompts (world has {})",
                            spec.num_prompts,
                            world.num_prompts()
                        ))
                    } else {
                        Ok(())
                    }
                }
                SweepMode::Comparisons => {
                    spec.num_prompts = world.num_prompts();
                    spec.budget = Some(size);
                    let need = crate::annotator::merge_sort_worst_case(k);
                    if size < need {
                        Err(format!(
                            "infeasible: budget {size} < {need} comparisons for k = {k}"
                        ))
                    } else {
                        Ok(())
                    }
                }
            };
            let outcome = feasible.and_then(|()| {
                let records =
                    pair_metrics(world, family, regrets, cfg, &spec, &[sweep.metric], None)
                        .map_err(|e| e.to_string())?;
                let report = correlate_with(&records, sweep.metric, &target, None, &cfg.statistics)
                    .map_err(|e| e.to_string())?;
                Ok((report, prompts_used(world, family, cfg, &spec)))
            });
            for &stat in &cfg.statistics {
                rows.push(match &outcome {
                    Ok((report, used)) => SweepRow {
                        k,
                        size,
                        prompts_used: *used,
                        statistic: stat.name().into(),
                        aggregate: report.aggregates.get(stat.name()).copied(),
                        status: String::new(),
                    },
                    Err(msg) => SweepRow {
                        k,
                        size,
                        prompts_used: 0.0,
                        statistic: stat.name().into(),
                        aggregate: None,
                        status: msg.clone(),
                    },
                });
            }
        }
    }
    Ok(rows)
}

fn prompts_used(world: &World, family: &Family, cfg: &ExperimentConfig, spec: &TestsetSpec) -> f64 {
    if spec.budget.is_none() {
        return spec.num_prompts as f64;
    }
    let mut total = 0usize;
    let mut count = 0usize;
    for r in 0..spec.resamples {
        let Ok(items) = sample_items(spec, world.num_prompts(), world.pool_size(), cfg.seed, r)
        else {
            continue;
        };
        for g in 0..family.len() {
            let seed = rng::derive_seed(cfg.seed, "annotator", (g * spec.resamples + r) as u64);
            if let Ok((ts, _)) = label_items(&items, &family.tables[g], spec, seed) {
                total += ts.items.len();
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

/// Ordered parallel map; the first error in input order wins.
pub(crate) fn par_map<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 && items.len() > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Infeasible(format!("cannot start {jobs} worker threads: {e}")))?;
        let results: Vec<Result<R>> = pool.install(|| items.par_iter().map(&f).collect());
        return results.into_iter().collect();
    }
    let _ = jobs;
    items.iter().map(f).collect()
}
