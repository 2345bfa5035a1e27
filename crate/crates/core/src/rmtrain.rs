//! Preference datasets and Bradley-Terry reward-model fitting.
//!
//! Label flipping is coupled across flip rates: one clean base dataset is
//! drawn, one global permutation of its pair indices is drawn, and the dataset
//! at rate `a` flips the first `round(a * len)` pairs of that permutation. The
//! flip masks are therefore nested, and two datasets disagree on exactly the
//! difference of their flip counts.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::synthworld::{dot, strict_cmp, NoiseSpec, ScoreTable, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: usize,
    pub chosen: usize,
    pub rejected: usize,
    pub flipped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreferenceDataset {
    pub pairs: Vec<PreferencePair>,
    pub flip_rate: f64,
    pub base_seed: u64,
}

impl PreferenceDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn flip_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.flipped).count()
    }

    /// One JSON object per line: `prompt`, `chosen`, `rejected`, `flipped`.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&serde_json::to_string(p)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str, flip_rate: f64, base_seed: u64) -> Result<Self> {
        let pairs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<PreferencePair>, _>>()?;
        Ok(PreferenceDataset {
            pairs,
            flip_rate,
            base_seed,
        })
    }

    pub fn validate(&self, world: &World) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            world.check_index(p.prompt, p.chosen)?;
            world.check_index(p.prompt, p.rejected)?;
            if p.chosen == p.rejected {
                return Err(Error::spec(
                    format!("pairs[{i}]"),
                    "chosen and rejected must differ",
                ));
            }
        }
        Ok(())
    }
}

/// Draws one clean base dataset and returns one coupled copy per flip rate.
pub fn build_preference_dataset(
    world: &World,
    pairs_per_prompt: usize,
    flip_rates: &[f64],
    seed: u64,
) -> Result<Vec<PreferenceDataset>> {
    if pairs_per_prompt == 0 {
        return Err(Error::spec("pairs_per_prompt", "must be >= 1"));
    }
    for (i, &a) in flip_rates.iter().enumerate() {
        if !(0.0..1.0).contains(&a) {
            return Err(Error::spec(
                format!("flip_rates[{i}]"),
                format!("= {a} is outside the allowed range [0, 1)"),
            ));
        }
        if flip_rates[..i].contains(&a) {
            return Err(Error::spec(
                format!("flip_rates[{i}]"),
                format!("= {a} is duplicated"),
            ));
        }
    }

    let m = world.pool_size();
    let mut pair_rng = rng::rng(rng::derive_seed(seed, "preference-pairs", 0));
    let mut base = Vec::with_capacity(world.num_prompts() * pairs_per_prompt);
    for prompt in 0..world.num_prompts() {
        for _ in 0..pairs_per_prompt {
            let a = pair_rng.random_range(0..m);
            let mut b = pair_rng.random_range(0..m - 1);
            if b >= a {
                b += 1;
            }
            let (ga, gb) = (world.golden_score(prompt, a), world.golden_score(prompt, b));
            let (chosen, rejected) = if strict_cmp(ga, a, gb, b).is_gt() {
                (a, b)
            } else {
                (b, a)
            };
            base.push(PreferencePair {
                prompt,
                chosen,
                rejected,
                flipped: false,
            });
        }
    }

    let mut order: Vec<usize> = (0..base.len()).collect();
    order.shuffle(&mut rng::rng(rng::derive_seed(seed, "flip-mask", 0)));

    Ok(flip_rates
        .iter()
        .map(|&alpha| {
            let k = flip_count(alpha, base.len());
            let mut pairs = base.clone();
            for &i in &order[..k] {
                let p = &mut pairs[i];
                std::mem::swap(&mut p.chosen, &mut p.rejected);
                p.flipped = true;
            }
            PreferenceDataset {
                pairs,
                flip_rate: alpha,
                base_seed: seed,
            }
        })
        .collect())
}

/// `round(alpha * len)`.
pub fn flip_count(alpha: f64, len: usize) -> usize {
    ((alpha * len as f64).round() as usize).min(len)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the mean squared reward penalty.
    pub reg_coeff: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reg_coeff: 1e-2,
            learning_rate: 0.5,
            epochs: 60,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn findings(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        if !(self.reg_coeff.is_finite() && self.reg_coeff >= 0.0) {
            out.push(("reg_coeff".into(), "must be finite and >= 0".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            out.push(("learning_rate".into(), "must be finite and > 0".into()));
        }
        if self.epochs == 0 {
            out.push(("epochs".into(), "must be >= 1".into()));
        }
        if self.batch_size == 0 {
            out.push(("batch_size".into(), "must be >= 1".into()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.findings().into_iter().next() {
            Some((f, r)) => Err(Error::spec(f, r)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Golden,
    NoiseProxy { sigma: f64, seed: u64 },
    BtLinear { theta: Vec<f64> },
}

/// A scorer over the candidates of a world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub id: String,
    #[serde(flatten)]
    pub kind: ModelKind,
}

impl RewardModel {
    pub fn golden() -> Self {
        RewardModel {
            id: "golden".into(),
            kind: ModelKind::Golden,
        }
    }

    pub fn noise_proxy(id: impl Into<String>, noise: NoiseSpec) -> Self {
        RewardModel {
            id: id.into(),
            kind: ModelKind::NoiseProxy {
                sigma: noise.sigma,
                seed: noise.seed,
            },
        }
    }

    pub fn bt_linear(id: impl Into<String>, theta: Vec<f64>) -> Self {
        RewardModel {
            id: id.into(),
            kind: ModelKind::BtLinear { theta },
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    fn check_compatible(&self, world: &World) -> Result<()> {
        if let ModelKind::BtLinear { theta } = &self.kind {
            if theta.len() != world.feature_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "model `{}` has {} weights, world has {} features",
                    self.id,
                    theta.len(),
                    world.feature_dim()
                )));
            }
        }
        Ok(())
    }

    fn score_unchecked(&self, world: &World, prompt: usize, candidate: usize) -> f64 {
        match &self.kind {
            ModelKind::Golden => world.golden_score(prompt, candidate),
            ModelKind::NoiseProxy { sigma, seed } => {
                let noise = NoiseSpec {
                    sigma: *sigma,
                    seed: *seed,
                };
                world.golden_score(prompt, candidate)
                    + noise.noise_at(world.pool_size(), prompt, candidate)
            }
            ModelKind::BtLinear { theta } => dot(theta, world.features(prompt, candidate)),
        }
    }

    /// Scores every candidate of `world`.
    pub fn score_table(&self, world: &World) -> Result<ScoreTable> {
        self.check_compatible(world)?;
        let m = world.pool_size();
        let values = (0..world.num_prompts())
            .flat_map(|p| (0..m).map(move |c| (p, c)))
            .map(|(p, c)| self.score_unchecked(world, p, c))
            .collect();
        ScoreTable::new(world.num_prompts(), m, values)
    }
}

/// Reward assigned by `model` to one candidate.
pub fn score(model: &RewardModel, world: &World, prompt: usize, candidate: usize) -> Result<f64> {
    world.check_index(prompt, candidate)?;
    model.check_compatible(world)?;
    Ok(model.score_unchecked(world, prompt, candidate))
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pair features prepared once per fit.
struct PairFeatures<'a> {
    chosen: Vec<&'a [f64]>,
    rejected: Vec<&'a [f64]>,
}

impl<'a> PairFeatures<'a> {
    fn new(world: &'a World, dataset: &PreferenceDataset) -> Self {
        PairFeatures {
            chosen: dataset
                .pairs
                .iter()
                .map(|p| world.features(p.prompt, p.chosen))
                .collect(),
            rejected: dataset
                .pairs
                .iter()
                .map(|p| world.features(p.prompt, p.rejected))
                .collect(),
        }
    }

    /// Objective and gradient over the pairs in `batch`.
    fn loss_grad(&self, theta: &[f64], reg: f64, batch: &[usize], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = batch.len() as f64;
        let mut nll = 0.0;
        let mut sq = 0.0;
        for &i in batch {
            let (w, l) = (self.chosen[i], self.rejected[i]);
            let (sw, sl) = (dot(theta, w), dot(theta, l));
            let margin = sw - sl;
            nll += softplus(-margin);
            sq += sw * sw + sl * sl;
            // d/dm softplus(-m) = -sigmoid(-m); the penalty mean runs over 2n responses
            let g_lik = -sigmoid(-margin) / n;
            let (g_w, g_l) = (reg * sw / n, reg * sl / n);
            for j in 0..theta.len() {
                grad[j] += g_lik * (w[j] - l[j]) + g_w * w[j] + g_l * l[j];
            }
        }
        nll / n + reg * sq / (2.0 * n)
    }
}

/// The regularized Bradley-Terry objective
/// `mean[-log sigmoid(r(y_w) - r(y_l))] + reg * mean[r(y)^2]` and its gradient at `theta`.
pub fn bt_objective(
    world: &World,
    dataset: &PreferenceDataset,
    theta: &[f64],
    reg_coeff: f64,
) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::spec("dataset", "must contain at least one pair"));
    }
    if theta.len() != world.feature_dim() {
        return Err(Error::DimensionMismatch(format!(
            "theta has {} entries, world has {} features",
            theta.len(),
            world.feature_dim()
        )));
    }
    dataset.validate(world)?;
    let feats = PairFeatures::new(world, dataset);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = vec![0.0; theta.len()];
    let loss = feats.loss_grad(theta, reg_coeff, &all, &mut grad);
    Ok((loss, grad))
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: RewardModel,
    /// Full-dataset objective after each epoch.
    pub loss_history: Vec<f64>,
}

/// Fits a linear Bradley-Terry reward model by (mini-batch) gradient descent from `theta = 0`.
pub fn fit_bt(
    world: &World,
    dataset: &PreferenceDataset,
    config: &TrainConfig,
) -> Result<RewardModel> {
    fit_bt_traced(world, dataset, config).map(|o| o.model)
}

pub fn fit_bt_traced(
    world: &World,
    dataset: &PreferenceDataset,
    config: &TrainConfig,
) -> Result<FitOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::spec("dataset", "must contain at least one pair"));
    }
    dataset.validate(world)?;

    let d = world.feature_dim();
    let feats = PairFeatures::new(world, dataset);
    let mut theta = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let all = order.clone();
    let mut shuffle_rng = rng::rng(rng::derive_seed(config.seed, "bt-minibatch", 0));
    let full_batch = config.batch_size >= dataset.len();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if !full_batch {
            order.shuffle(&mut shuffle_rng);
        }
        for batch in order.chunks(config.batch_size) {
            feats.loss_grad(&theta, config.reg_coeff, batch, &mut grad);
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= config.learning_rate * g;
            }
        }
        let loss = feats.loss_grad(&theta, config.reg_coeff, &all, &mut scratch);
        if !loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::NumericalDivergence { epoch });
        }
        loss_history.push(loss);
    }

    let id = format!("bt-alpha-{}", dataset.flip_rate);
    Ok(FitOutcome {
        model: RewardModel::bt_linear(id, theta),
        loss_history,
    })
}
