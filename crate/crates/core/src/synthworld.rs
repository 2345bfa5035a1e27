//! Synthetic worlds: prompts, candidate feature pools and the golden reward.
//!
//! A [`World`] is fully determined by its [`WorldSpec`]. Prompt `p` belongs to
//! category `p % num_categories`; each category owns a disjoint block of
//! feature coordinates, and a candidate's features are zero outside its
//! prompt's block. The golden reward is a linear form (or a small tanh
//! network) over the features, standardized over the whole world to mean 0
//! and standard deviation `reward_std`.

use std::cmp::Ordering;
use std::ops::Range;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rmtrain::RewardModel;
use crate::rng;

pub const WORLD_FORMAT: &str = "rmlab-world";
pub const WORLD_VERSION: u32 = 1;

const MLP_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Nonlinearity {
    #[default]
    Linear,
    TanhMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub num_prompts: usize,
    /// Candidates per prompt.
    pub pool_size: usize,
    pub feature_dim: usize,
    /// Pooled standard deviation of the golden scores.
    pub reward_std: f64,
    pub num_categories: usize,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            num_prompts: 600,
            pool_size: 32,
            feature_dim: 16,
            reward_std: 1.0,
            num_categories: 4,
            nonlinearity: Nonlinearity::Linear,
            seed: 0,
        }
    }
}

impl WorldSpec {
    /// Every violated range, one message per field.
    pub fn findings(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |f: &str, r: &str| out.push((f.to_string(), r.to_string()));
        if self.num_prompts < 1 {
            push("num_prompts", "must be >= 1");
        }
        if self.pool_size < 2 {
            push("pool_size", "must be >= 2");
        }
        if self.feature_dim < 1 {
            push("feature_dim", "must be >= 1");
        }
        if !(self.reward_std.is_finite() && self.reward_std > 0.0) {
            push("reward_std", "must be finite and > 0");
        }
        if self.num_categories < 1 {
            push("num_categories", "must be >= 1");
        } else if self.feature_dim >= 1 && self.num_categories > self.feature_dim {
            push(
                "num_categories",
                "must not exceed feature_dim (each category owns a feature block)",
            );
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.findings().into_iter().next() {
            Some((field, reason)) => Err(Error::spec(field, reason)),
            None => Ok(()),
        }
    }

    pub fn num_candidates(&self) -> usize {
        self.num_prompts * self.pool_size
    }

    /// Feature coordinates owned by `category`.
    pub fn block(&self, category: usize) -> Range<usize> {
        let c = self.num_categories;
        (category * self.feature_dim / c)..((category + 1) * self.feature_dim / c)
    }
}

/// Strict total order on `(score, candidate index)`; ties go to the larger index.
#[inline]
pub fn strict_cmp(score_a: f64, idx_a: usize, score_b: f64, idx_b: usize) -> Ordering {
    let s = if score_a == score_b {
        Ordering::Equal
    } else {
        score_a.total_cmp(&score_b)
    };
    s.then(idx_a.cmp(&idx_b))
}

/// Candidate indices sorted ascending under [`strict_cmp`].
pub fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| strict_cmp(scores[a], a, scores[b], b));
    idx
}

/// Ranks 1..=N with N for the highest score.
pub fn strict_ranks(scores: &[f64]) -> Vec<usize> {
    let mut ranks = vec![0; scores.len()];
    for (r, &i) in ascending_order(scores).iter().enumerate() {
        ranks[i] = r + 1;
    }
    ranks
}

pub fn strict_argmax(scores: &[f64]) -> usize {
    (0..scores.len())
        .max_by(|&a, &b| strict_cmp(scores[a], a, scores[b], b))
        .expect("non-empty score row")
}

/// A `num_prompts x pool_size` table of scores, row-major by prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    num_prompts: usize,
    pool_size: usize,
    values: Vec<f64>,
}

impl ScoreTable {
    pub fn new(num_prompts: usize, pool_size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_prompts * pool_size {
            return Err(Error::DimensionMismatch(format!(
                "score table expects {num_prompts} x {pool_size} = {} values, got {}",
                num_prompts * pool_size,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::spec(
                format!("scores[{}][{}]", i / pool_size.max(1), i % pool_size.max(1)),
                "must be finite",
            ));
        }
        Ok(ScoreTable {
            num_prompts,
            pool_size,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch("ragged score rows".into()));
        }
        Self::new(rows.len(), m, rows.concat())
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, prompt: usize) -> &[f64] {
        &self.values[prompt * self.pool_size..(prompt + 1) * self.pool_size]
    }

    pub fn get(&self, prompt: usize, candidate: usize) -> f64 {
        self.values[prompt * self.pool_size + candidate]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.pool_size)
    }

    pub fn same_shape(&self, other: &ScoreTable) -> Result<()> {
        if self.num_prompts != other.num_prompts || self.pool_size != other.pool_size {
            return Err(Error::DimensionMismatch(format!(
                "score tables {}x{} and {}x{}",
                self.num_prompts, self.pool_size, other.num_prompts, other.pool_size
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScoreTable {
        ScoreTable {
            num_prompts: self.num_prompts,
            pool_size: self.pool_size,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Restriction to a subset of prompts, in the given order.
    pub fn select_prompts(&self, prompts: &[usize]) -> ScoreTable {
        let mut values = Vec::with_capacity(prompts.len() * self.pool_size);
        for &p in prompts {
            values.extend_from_slice(self.row(p));
        }
        ScoreTable {
            num_prompts: prompts.len(),
            pool_size: self.pool_size,
            values,
        }
    }

    /// Pooled (mean, population standard deviation).
    pub fn moments(&self) -> (f64, f64) {
        pooled_moments(&self.values)
    }
}

pub(crate) fn pooled_moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Independent Gaussian noise added to the golden table (frozen at construction).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::spec("sigma", "must be finite and >= 0"));
        }
        Ok(())
    }

    /// The noise added at `(prompt, candidate)` of a pool of size `pool_size`.
    pub fn noise_at(&self, pool_size: usize, prompt: usize, candidate: usize) -> f64 {
        self.sigma * rng::gaussian_at(self.seed, (prompt * pool_size + candidate) as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WorldDoc", into = "WorldDoc")]
pub struct World {
    spec: WorldSpec,
    features: Vec<f64>,
    categories: Vec<usize>,
    golden: Vec<f64>,
}

impl World {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn num_prompts(&self) -> usize {
        self.spec.num_prompts
    }

    pub fn pool_size(&self) -> usize {
        self.spec.pool_size
    }

    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    pub fn check_index(&self, prompt: usize, candidate: usize) -> Result<()> {
        if prompt >= self.spec.num_prompts {
            return Err(Error::IndexOutOfRange {
                what: "prompt",
                index: prompt,
                limit: self.spec.num_prompts,
            });
        }
        if candidate >= self.spec.pool_size {
            return Err(Error::IndexOutOfRange {
                what: "candidate",
                index: candidate,
                limit: self.spec.pool_size,
            });
        }
        Ok(())
    }

    pub fn features(&self, prompt: usize, candidate: usize) -> &[f64] {
        let d = self.spec.feature_dim;
        let start = (prompt * self.spec.pool_size + candidate) * d;
        &self.features[start..start + d]
    }

    pub fn category(&self, prompt: usize) -> usize {
        self.categories[prompt]
    }

    pub fn categories(&self) -> &[usize] {
        &self.categories
    }

    pub fn golden_score(&self, prompt: usize, candidate: usize) -> f64 {
        self.golden[prompt * self.spec.pool_size + candidate]
    }

    pub fn golden_table(&self) -> ScoreTable {
        ScoreTable {
            num_prompts: self.spec.num_prompts,
            pool_size: self.spec.pool_size,
            values: self.golden.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<World> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Builds the world described by `spec`.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let (p_n, m, d) = (spec.num_prompts, spec.pool_size, spec.feature_dim);
    let categories: Vec<usize> = (0..p_n).map(|p| p % spec.num_categories).collect();

    let mut feat_rng = rng::rng(rng::derive_seed(spec.seed, "features", 0));
    let mut features = vec![0.0; p_n * m * d];
    for p in 0..p_n {
        let block = spec.block(categories[p]);
        for c in 0..m {
            let row = &mut features[(p * m + c) * d..(p * m + c + 1) * d];
            for x in &mut row[block.clone()] {
                *x = StandardNormal.sample(&mut feat_rng);
            }
        }
    }

    let mut param_rng = rng::rng(rng::derive_seed(spec.seed, "golden", 0));
    let raw: Vec<f64> = match spec.nonlinearity {
        Nonlinearity::Linear => {
            let theta: Vec<f64> = (0..d)
                .map(|_| StandardNormal.sample(&mut param_rng))
                .collect();
            features.chunks(d).map(|phi| dot(&theta, phi)).collect()
        }
        Nonlinearity::TanhMlp => {
            let mlp = TanhMlp::sample(spec, &mut param_rng);
            features.chunks(d).map(|phi| mlp.forward(phi)).collect()
        }
    };

    let (mean, std) = pooled_moments(&raw);
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Degenerate(
            "golden scores have zero spread before standardization".into(),
        ));
    }
    let golden = raw
        .iter()
        .map(|r| (r - mean) / std * spec.reward_std)
        .collect();

    Ok(World {
        spec: spec.clone(),
        features,
        categories,
        golden,
    })
}

/// Additive-noise proxy `r = r* + z` with `z ~ N(0, sigma^2)` frozen per candidate.
pub fn noise_proxy(_world: &World, noise: NoiseSpec) -> Result<RewardModel> {
    noise.validate()?;
    Ok(RewardModel::noise_proxy(
        format!("noise-{}-{}", noise.sigma, noise.seed),
        noise,
    ))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One hidden layer of `MLP_WIDTH` tanh units.
struct TanhMlp {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    d: usize,
}

impl TanhMlp {
    fn sample(spec: &WorldSpec, rng: &mut rng::Rng) -> Self {
        let d = spec.feature_dim;
        // pre-activations of order 2 so that units saturate
        let block_len = (d / spec.num_categories).max(1) as f64;
        let gain = 2.0 / block_len.sqrt();
        let mut normal = |scale: f64| -> f64 {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        };
        let w1 = (0..MLP_WIDTH * d).map(|_| normal(gain)).collect();
        let b1 = (0..MLP_WIDTH).map(|_| normal(0.5)).collect();
        let w2 = (0..MLP_WIDTH).map(|_| normal(1.0)).collect();
        TanhMlp { w1, b1, w2, d }
    }

    fn forward(&self, phi: &[f64]) -> f64 {
        (0..MLP_WIDTH)
            .map(|h| {
                let pre = dot(&self.w1[h * self.d..(h + 1) * self.d], phi) + self.b1[h];
                self.w2[h] * pre.tanh()
            })
            .sum()
    }
}

#[derive(Serialize, Deserialize)]
struct WorldDoc {
    format: String,
    version: u32,
    spec: WorldSpec,
    categories: Vec<usize>,
    /// One row per (prompt, candidate), prompt-major.
    features: Vec<Vec<f64>>,
    /// One row per prompt.
    golden_scores: Vec<Vec<f64>>,
}

impl From<World> for WorldDoc {
    fn from(w: World) -> Self {
        let d = w.spec.feature_dim;
        let m = w.spec.pool_size;
        WorldDoc {
            format: WORLD_FORMAT.into(),
            version: WORLD_VERSION,
            features: w.features.chunks(d).map(<[f64]>::to_vec).collect(),
            golden_scores: w.golden.chunks(m).map(<[f64]>::to_vec).collect(),
            categories: w.categories,
            spec: w.spec,
        }
    }
}

impl TryFrom<WorldDoc> for World {
    type Error = Error;

    fn try_from(doc: WorldDoc) -> Result<World> {
        if doc.format != WORLD_FORMAT || doc.version != WORLD_VERSION {
            return Err(Error::spec(
                "format/version",
                format!(
                    "expected {WORLD_FORMAT} v{WORLD_VERSION}, found {} v{}",
                    doc.format, doc.version
                ),
            ));
        }
        let spec = doc.spec;
        spec.validate()?;
        let (p_n, m, d) = (spec.num_prompts, spec.pool_size, spec.feature_dim);
        let expected: Vec<usize> = (0..p_n).map(|p| p % spec.num_categories).collect();
        if doc.categories != expected {
            return Err(Error::spec("categories", "must be assigned round-robin"));
        }
        if doc.features.len() != p_n * m || doc.features.iter().any(|r| r.len() != d) {
            return Err(Error::spec(
                "features",
                format!("must be {} rows of {d}", p_n * m),
            ));
        }
        if doc.golden_scores.len() != p_n || doc.golden_scores.iter().any(|r| r.len() != m) {
            return Err(Error::spec(
                "golden_scores",
                format!("must be {p_n} rows of {m}"),
            ));
        }
        let features = doc.features.concat();
        let golden = doc.golden_scores.concat();
        if features.iter().chain(&golden).any(|v| !v.is_finite()) {
            return Err(Error::spec("features/golden_scores", "must be finite"));
        }
        let (mean, std) = pooled_moments(&golden);
        let tol = 1e-9 * spec.reward_std.max(1.0);
        if mean.abs() > tol || (std - spec.reward_std).abs() > tol {
            return Err(Error::spec(
                "golden_scores",
                format!("pooled mean {mean} / std {std} do not match the standardization"),
            ));
        }
        Ok(World {
            spec,
            features,
            categories: doc.categories,
            golden,
        })
    }
}
