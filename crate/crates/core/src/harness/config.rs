use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricConfig};
use crate::policyopt::{LogBase, OptimizerSpec};
use crate::rmtrain::TrainConfig;
use crate::synthworld::WorldSpec;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyMode {
    /// Bradley-Terry fits on label-flipped copies of one base dataset.
    #[default]
    Flip,
    /// Golden reward plus independent Gaussian noise.
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilySpec {
    pub mode: FamilyMode,
    pub flip_rates: Vec<f64>,
    /// Noise standard deviations in units of the world's reward std.
    pub sigmas: Vec<f64>,
    pub pairs_per_prompt: usize,
    pub train: TrainConfig,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            mode: FamilyMode::Flip,
            flip_rates: (0..10).map(|i| f64::from(i) * 0.05).map(round12).collect(),
            sigmas: vec![0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0],
            pairs_per_prompt: 4,
            // Small-batch SGD: each proxy lands at a different point of its
            // loss basin, so accuracy and downstream regret stop being a
            // one-parameter family of the flip rate.
            train: TrainConfig {
                batch_size: 8,
                epochs: 10,
                learning_rate: 1.0,
                ..TrainConfig::default()
            },
        }
    }
}

impl FamilySpec {
    pub fn len(&self) -> usize {
        match self.mode {
            FamilyMode::Flip => self.flip_rates.len(),
            FamilyMode::Noise => self.sigmas.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Prompts stay fixed, each resample redraws their responses.
    #[default]
    Responses,
    PromptsAndResponses,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestsetSpec {
    /// Responses per prompt.
    pub k: usize,
    pub num_prompts: usize,
    /// Comparison budget; requires `annotator_beta`.
    pub budget: Option<u64>,
    /// Label with a simulated Bradley-Terry annotator instead of exact golden scores.
    pub annotator_beta: Option<f64>,
    pub resamples: usize,
    pub resample_mode: ResampleMode,
}

impl Default for TestsetSpec {
    fn default() -> Self {
        TestsetSpec {
            k: 5,
            num_prompts: 200,
            budget: None,
            annotator_beta: None,
            resamples: 64,
            resample_mode: ResampleMode::Responses,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Pearson,
    Spearman,
    Kendall,
    Mrr,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [
        Statistic::Pearson,
        Statistic::Spearman,
        Statistic::Kendall,
        Statistic::Mrr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Pearson => "pearson",
            Statistic::Spearman => "spearman",
            Statistic::Kendall => "kendall",
            Statistic::Mrr => "mrr",
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Statistic::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::spec("statistic", format!("unknown statistic `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Cell sizes are labeled responses; prompts = size / k.
    #[default]
    Samples,
    /// Cell sizes are comparison budgets.
    Comparisons,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSweep {
    pub mode: SweepMode,
    pub ks: Vec<usize>,
    pub sizes: Vec<u64>,
    pub metric: Metric,
    pub optimizer: String,
}

impl Default for BudgetSweep {
    fn default() -> Self {
        BudgetSweep {
            mode: SweepMode::Samples,
            ks: vec![2, 5],
            sizes: vec![500, 1000],
            metric: Metric::Accuracy,
            optimizer: "bon128".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed for everything except world generation.
    pub seed: u64,
    pub world: WorldSpec,
    pub family: FamilySpec,
    pub optimizers: BTreeMap<String, OptimizerSpec>,
    pub testset: TestsetSpec,
    pub metrics: Vec<Metric>,
    pub metric_config: MetricConfig,
    pub statistics: Vec<Statistic>,
    /// KL radius for the exact regret.
    pub regret_lambda: f64,
    pub group_by_category: bool,
    pub budget_sweep: Option<BudgetSweep>,
    pub trajectory_n: Vec<u32>,
    /// Goodhart curve grid in units of the world's reward std.
    pub goodhart_grid: Vec<f64>,
    pub log_base: LogBase,
    pub output_dir: String,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut optimizers = BTreeMap::new();
        optimizers.insert("bon128".to_string(), OptimizerSpec::BonExact { n: 128 });
        optimizers.insert(
            "tilt2".to_string(),
            OptimizerSpec::KlTilt { target_kl: 2.0 },
        );
        ExperimentConfig {
            version: CONFIG_VERSION,
            seed: 0,
            world: WorldSpec::default(),
            family: FamilySpec::default(),
            optimizers,
            testset: TestsetSpec::default(),
            metrics: Metric::ALL
                .into_iter()
                .filter(|&m| m != Metric::AccuracyPair)
                .collect(),
            metric_config: MetricConfig::default(),
            statistics: Statistic::ALL.to_vec(),
            regret_lambda: 1.0,
            group_by_category: false,
            budget_sweep: None,
            trajectory_n: vec![1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024],
            goodhart_grid: vec![
                0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0,
            ],
            log_base: LogBase::Nat,
            output_dir: "runs/default".into(),
            jobs: None,
        }
    }
}

/// One problem with a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::spec("config", format!("cannot read `{}`: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key=value` overrides; keys are dotted paths that must already exist.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::spec("--set", format!("`{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            *lookup(&mut doc, key)? = value;
        }
        serde_json::from_value(doc).map_err(|e| Error::spec("--set", e.to_string()))
    }

    /// The master seed and the world seed together.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.world.seed = seed;
        self
    }

    /// Number of worker threads.
    pub fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    /// Every problem found, one per field; never runs the pipeline.
    pub fn findings(&self) -> Vec<Finding> {
        let mut out = Vec::new();
        let mut push = |field: String, message: String| out.push(Finding { field, message });

        if self.version != CONFIG_VERSION {
            push("version".into(), format!("must be {CONFIG_VERSION}"));
        }
        for (f, m) in self.world.findings() {
            push(format!("world.{f}"), m);
        }

        let fam = &self.family;
        let n = fam.len();
        let grid_name = match fam.mode {
            FamilyMode::Flip => "flip_rates",
            FamilyMode::Noise => "sigmas",
        };
        if n < 3 {
            push(
                format!("family.{grid_name}"),
                format!("needs at least 3 models; got {n}"),
            );
        }
        match fam.mode {
            FamilyMode::Flip => {
                for (i, &a) in fam.flip_rates.iter().enumerate() {
                    if !(0.0..1.0).contains(&a) {
                        push(
                            format!("family.flip_rates[{i}]"),
                            format!("= {a} is outside the allowed range [0, 1)"),
                        );
                    } else if fam.flip_rates[..i].contains(&a) {
                        push(
                            format!("family.flip_rates[{i}]"),
                            format!("= {a} is duplicated"),
                        );
                    }
                }
                if fam.pairs_per_prompt == 0 {
                    push("family.pairs_per_prompt".into(), "must be >= 1".into());
                }
                for (f, m) in fam.train.findings() {
                    push(format!("family.train.{f}"), m);
                }
            }
            FamilyMode::Noise => {
                for (i, &s) in fam.sigmas.iter().enumerate() {
                    if !(s.is_finite() && s >= 0.0) {
                        push(
                            format!("family.sigmas[{i}]"),
                            format!("= {s} must be finite and >= 0"),
                        );
                    } else if fam.sigmas[..i].contains(&s) {
                        push(
                            format!("family.sigmas[{i}]"),
                            format!("= {s} is duplicated"),
                        );
                    }
                }
            }
        }

        if self.optimizers.is_empty() {
            push(
                "optimizers".into(),
                "must name at least one optimizer".into(),
            );
        }
        for (name, spec) in &self.optimizers {
            for (f, m) in spec.findings() {
                push(format!("optimizers.{name}.{f}"), m);
            }
        }

        let ts = &self.testset;
        if ts.k < 2 {
            push("testset.k".into(), "must be >= 2".into());
        } else if self.world.pool_size >= 2 && ts.k > self.world.pool_size {
            push(
                "testset.k".into(),
                format!("must not exceed world.pool_size = {}", self.world.pool_size),
            );
        }
        if ts.num_prompts == 0 || ts.num_prompts > self.world.num_prompts {
            push(
                "testset.num_prompts".into(),
                format!("must be in 1..={}", self.world.num_prompts),
            );
        }
        if ts.resamples == 0 {
            push("testset.resamples".into(), "must be >= 1".into());
        }
        if let Some(beta) = ts.annotator_beta {
            if !(beta.is_finite() && beta > 0.0) {
                push(
                    "testset.annotator_beta".into(),
                    "must be finite and > 0".into(),
                );
            }
        }
        if ts.budget.is_some() && ts.annotator_beta.is_none() {
            push(
                "testset.budget".into(),
                "requires testset.annotator_beta (budgets count annotator comparisons)".into(),
            );
        }

        if self.metrics.is_empty() {
            push("metrics".into(), "must list at least one metric".into());
        }
        if self.metrics.contains(&Metric::AccuracyPair) && ts.k != 2 {
            push(
                "metrics".into(),
                "accuracy_pair needs a pair-form test set (testset.k = 2)".into(),
            );
        }
        if self.metric_config.ece_bins == 0 {
            push("metric_config.ece_bins".into(), "must be >= 1".into());
        }
        if self.statistics.is_empty() {
            push(
                "statistics".into(),
                "must list at least one statistic".into(),
            );
        }
        if !(self.regret_lambda.is_finite() && self.regret_lambda >= 0.0) {
            push("regret_lambda".into(), "must be finite and >= 0".into());
        }

        if let Some(sw) = &self.budget_sweep {
            if sw.ks.is_empty() || sw.sizes.is_empty() {
                push(
                    "budget_sweep".into(),
                    "ks and sizes must be nonempty".into(),
                );
            }
            for (i, &k) in sw.ks.iter().enumerate() {
                if k < 2 || k > self.world.pool_size.max(2) {
                    push(
                        format!("budget_sweep.ks[{i}]"),
                        format!("= {k} must be in 2..={}", self.world.pool_size),
                    );
                }
            }
            if sw.mode == SweepMode::Comparisons && ts.annotator_beta.is_none() {
                push(
                    "budget_sweep.mode".into(),
                    "comparison budgets require testset.annotator_beta".into(),
                );
            }
            if !self.optimizers.contains_key(&sw.optimizer) {
                push(
                    "budget_sweep.optimizer".into(),
                    format!("`{}` is not a configured optimizer", sw.optimizer),
                );
            }
        }

        if self.trajectory_n.contains(&0) {
            push("trajectory_n".into(), "entries must be >= 1".into());
        }
        if self.goodhart_grid.is_empty()
            || self
                .goodhart_grid
                .iter()
                .any(|s| !(s.is_finite() && *s >= 0.0))
            || self.goodhart_grid.windows(2).any(|w| w[0] >= w[1])
        {
            push(
                "goodhart_grid".into(),
                "must be nonempty, finite, >= 0 and strictly ascending".into(),
            );
        }
        if self.jobs == Some(0) {
            push("jobs".into(), "must be >= 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.findings().into_iter().next() {
            Some(f) => Err(Error::Spec {
                field: f.field,
                reason: f.message,
            }),
            None => Ok(()),
        }
    }
}

fn lookup<'a>(doc: &'a mut Value, key: &str) -> Result<&'a mut Value> {
    let mut cur = doc;
    for part in key.split('.') {
        let missing = || Error::spec("--set", format!("`{key}` does not name a config key"));
        cur = match cur {
            Value::Object(map) => map.get_mut(part).ok_or_else(missing)?,
            Value::Array(items) => {
                let i: usize = part.parse().map_err(|_| missing())?;
                items.get_mut(i).ok_or_else(missing)?
            }
            _ => return Err(missing()),
        };
    }
    Ok(cur)
}

/// Reads and checks a config file, reporting every problem at once.
pub fn validate_config(path: &Path) -> Result<Vec<Finding>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::spec("config", format!("cannot read `{}`: {e}", path.display())))?;
    match ExperimentConfig::from_json(&text) {
        Ok(cfg) => Ok(cfg.findings()),
        Err(e) => Ok(vec![Finding {
            field: "<schema>".into(),
            message: e.to_string(),
        }]),
    }
}
