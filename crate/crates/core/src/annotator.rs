//! Simulated human annotation under Bradley-Terry noise.
//!
//! An annotator prefers `y_i` over `y_j` with probability
//! `1 / (1 + exp((r_j - r_i) / beta))`. Rankings are produced by a merge sort
//! that calls the annotator as its comparator, and every call is charged to an
//! [`AnnotationLedger`].

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{TestItem, TestSet};
use crate::rmtrain::{PreferenceDataset, PreferencePair};
use crate::rng;
use crate::synthworld::{strict_cmp, ScoreTable};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatorSpec {
    /// Annotation temperature; smaller is more reliable.
    pub beta: f64,
    pub seed: u64,
}

impl Default for AnnotatorSpec {
    fn default() -> Self {
        AnnotatorSpec { beta: 0.5, seed: 0 }
    }
}

impl AnnotatorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::spec("beta", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationLedger {
    pub comparisons_used: u64,
    pub per_prompt: BTreeMap<usize, u64>,
}

impl AnnotationLedger {
    fn charge(&mut self, prompt: usize) {
        self.comparisons_used += 1;
        *self.per_prompt.entry(prompt).or_default() += 1;
    }

    /// Adds another ledger's counts into this one.
    pub fn merge(&mut self, other: &AnnotationLedger) {
        self.comparisons_used += other.comparisons_used;
        for (&p, &c) in &other.per_prompt {
            *self.per_prompt.entry(p).or_default() += c;
        }
    }
}

/// Probability that a response scored `r_i` is preferred to one scored `r_j`.
pub fn preference_probability(r_i: f64, r_j: f64, beta: f64) -> f64 {
    if r_i == r_j {
        return 0.5;
    }
    1.0 / (1.0 + ((r_j - r_i) / beta).exp())
}

pub struct Annotator {
    spec: AnnotatorSpec,
    rng: rng::Rng,
    ledger: AnnotationLedger,
}

impl Annotator {
    pub fn new(spec: AnnotatorSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Annotator {
            spec,
            rng: rng::rng(rng::derive_seed(spec.seed, "annotator", 0)),
            ledger: AnnotationLedger::default(),
        })
    }

    pub fn spec(&self) -> &AnnotatorSpec {
        &self.spec
    }

    pub fn ledger(&self) -> &AnnotationLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> AnnotationLedger {
        self.ledger
    }

    /// One noisy comparison; charges the ledger.
    pub fn bt_prefer(&mut self, prompt: usize, r_i: f64, r_j: f64) -> bool {
        self.ledger.charge(prompt);
        let p = preference_probability(r_i, r_j, self.spec.beta);
        self.rng.random::<f64>() < p
    }
}

/// Outcome of one annotated sort.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NoisyRanking {
    /// Item indices, best first.
    pub order: Vec<usize>,
    pub comparisons: u64,
}

impl NoisyRanking {
    /// Ranks `1..=N` per item with `N` for the best.
    pub fn ranks(&self) -> Vec<usize> {
        let n = self.order.len();
        let mut ranks = vec![0; n];
        for (pos, &i) in self.order.iter().enumerate() {
            ranks[i] = n - pos;
        }
        ranks
    }
}

/// Merge sort of `scores` that uses the annotator as its comparator.
pub fn noisy_sort(scores: &[f64], annotator: &mut Annotator, prompt: usize) -> NoisyRanking {
    let before = annotator.ledger.comparisons_used;
    let mut items: Vec<usize> = (0..scores.len()).collect();
    merge_sort(&mut items, &mut |a, b| {
        annotator.bt_prefer(prompt, scores[a], scores[b])
    });
    NoisyRanking {
        order: items,
        comparisons: annotator.ledger.comparisons_used - before,
    }
}

fn merge_sort(items: &mut Vec<usize>, prefer: &mut impl FnMut(usize, usize) -> bool) {
    if items.len() <= 1 {
        return;
    }
    let mut right = items.split_off(items.len() / 2);
    let mut left = std::mem::take(items);
    merge_sort(&mut left, prefer);
    merge_sort(&mut right, prefer);
    let (mut i, mut j) = (0, 0);
    items.reserve(left.len() + right.len());
    while i < left.len() && j < right.len() {
        if prefer(left[i], right[j]) {
            items.push(left[i]);
            i += 1;
        } else {
            items.push(right[j]);
            j += 1;
        }
    }
    items.extend_from_slice(&left[i..]);
    items.extend_from_slice(&right[j..]);
}

/// Worst-case comparisons of the merge sort above on `n` items.
pub fn merge_sort_worst_case(n: usize) -> u64 {
    if n <= 1 {
        return 0;
    }
    let (l, r) = (n - n / 2, n / 2);
    merge_sort_worst_case(l) + merge_sort_worst_case(r) + (n - 1) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedItem {
    pub prompt: usize,
    pub candidates: Vec<usize>,
    /// Annotated ranks, `k` for the best.
    pub annotated_ranks: Vec<usize>,
    pub comparisons_used: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedTestSet {
    pub items: Vec<AnnotatedItem>,
    pub ledger: AnnotationLedger,
    pub k: usize,
}

impl AnnotatedTestSet {
    pub fn comparisons_used(&self) -> u64 {
        self.ledger.comparisons_used
    }

    pub fn prompts_used(&self) -> usize {
        self.items.len()
    }

    /// Number of labeled responses.
    pub fn sample_size(&self) -> usize {
        self.items.len() * self.k
    }

    /// Metric test set whose reference labels are the annotated ranks.
    pub fn to_testset(&self) -> TestSet {
        TestSet {
            items: self
                .items
                .iter()
                .map(|it| TestItem {
                    prompt: it.prompt,
                    candidates: it.candidates.clone(),
                    labels: Some(it.annotated_ranks.iter().map(|&r| r as f64).collect()),
                })
                .collect(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for it in &self.items {
            out.push_str(&serde_json::to_string(it)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Samples prompts and `k` candidates each, then ranks every prompt by a noisy sort.
///
/// With a budget, prompts are added while the next prompt's worst-case sorting
/// cost still fits in the remaining budget; the ledger charges actual calls.
pub fn build_k_response_testset(
    golden: &ScoreTable,
    num_prompts: usize,
    k: usize,
    budget: Option<u64>,
    spec: AnnotatorSpec,
) -> Result<AnnotatedTestSet> {
    if k < 2 {
        return Err(Error::spec("k", "must be >= 2"));
    }
    if k > golden.pool_size() {
        return Err(Error::spec(
            "k",
            format!("must not exceed the pool size {}", golden.pool_size()),
        ));
    }
    if num_prompts == 0 || num_prompts > golden.num_prompts() {
        return Err(Error::spec(
            "num_prompts",
            format!("must be in 1..={}", golden.num_prompts()),
        ));
    }
    let cost = merge_sort_worst_case(k);
    if let Some(b) = budget {
        if b < cost {
            return Err(Error::Infeasible(format!(
                "annotation budget {b} cannot cover one prompt with k = {k} (needs {cost})"
            )));
        }
    }

    let mut pick = rng::rng(rng::derive_seed(spec.seed, "testset-sampling", 0));
    let prompts = sample(&mut pick, golden.num_prompts(), num_prompts).into_vec();
    let items: Vec<(usize, Vec<usize>)> = prompts
        .into_iter()
        .map(|prompt| {
            let mut candidates = sample(&mut pick, golden.pool_size(), k).into_vec();
            candidates.sort_unstable();
            (prompt, candidates)
        })
        .collect();
    let mut annotator = Annotator::new(spec)?;
    Ok(annotate_items(golden, &items, budget, &mut annotator))
}

/// Ranks each `(prompt, candidates)` item in order by a noisy sort.
///
/// With a budget, stops before the first item whose worst-case sorting cost
/// exceeds what is left. All items must share one size.
pub fn annotate_items(
    golden: &ScoreTable,
    items: &[(usize, Vec<usize>)],
    budget: Option<u64>,
    annotator: &mut Annotator,
) -> AnnotatedTestSet {
    let k = items.first().map_or(0, |(_, c)| c.len());
    let cost = merge_sort_worst_case(k);
    let start = annotator.ledger.clone();
    let mut out = Vec::with_capacity(items.len());
    for (prompt, candidates) in items {
        if let Some(b) = budget {
            if annotator.ledger.comparisons_used - start.comparisons_used + cost > b {
                break;
            }
        }
        let scores: Vec<f64> = candidates.iter().map(|&c| golden.get(*prompt, c)).collect();
        let ranking = noisy_sort(&scores, annotator, *prompt);
        out.push(AnnotatedItem {
            prompt: *prompt,
            candidates: candidates.clone(),
            annotated_ranks: ranking.ranks(),
            comparisons_used: ranking.comparisons,
        });
    }
    let mut ledger = AnnotationLedger::default();
    for it in &out {
        *ledger.per_prompt.entry(it.prompt).or_default() += it.comparisons_used;
        ledger.comparisons_used += it.comparisons_used;
    }
    AnnotatedTestSet {
        items: out,
        ledger,
        k,
    }
}

/// Pairs whose chosen response comes from golden-rank bin `chosen_bin` and rejected
/// response from bin `rejected_bin` (bin 0 holds the best `bin_size` responses).
pub fn rank_bin_pairs(
    golden: &ScoreTable,
    num_responses: usize,
    bin_size: usize,
    chosen_bin: usize,
    rejected_bin: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    if num_responses < 2 || num_responses > golden.pool_size() {
        return Err(Error::spec(
            "num_responses",
            format!("must be in 2..={}", golden.pool_size()),
        ));
    }
    if bin_size == 0 {
        return Err(Error::spec("bin_size", "must be >= 1"));
    }
    if chosen_bin >= rejected_bin {
        return Err(Error::spec(
            "chosen_bin",
            "must be strictly better (smaller) than rejected_bin; bins may not overlap",
        ));
    }
    if (rejected_bin + 1) * bin_size > num_responses {
        return Err(Error::spec(
            "rejected_bin",
            format!("bin {rejected_bin} of size {bin_size} exceeds {num_responses} responses"),
        ));
    }
    let mut r = rng::rng(rng::derive_seed(seed, "rank-bins", 0));
    let mut pairs = Vec::with_capacity(golden.num_prompts());
    for prompt in 0..golden.num_prompts() {
        let row = golden.row(prompt);
        let mut drawn = sample(&mut r, golden.pool_size(), num_responses).into_vec();
        drawn.sort_by(|&a, &b| strict_cmp(row[b], b, row[a], a));
        let chosen = drawn[chosen_bin * bin_size + r.random_range(0..bin_size)];
        let rejected = drawn[rejected_bin * bin_size + r.random_range(0..bin_size)];
        pairs.push(PreferencePair {
            prompt,
            chosen,
            rejected,
            flipped: false,
        });
    }
    Ok(PreferenceDataset {
        pairs,
        flip_rate: 0.0,
        base_seed: seed,
    })
}
