//! Independent reference implementations used as test oracles.
//! None of these call into the library's own metric or optimizer code.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Pairwise accuracy of `r = r* + z` from the bivariate-normal orthant probability.
pub fn arcsin_accuracy(sigma_r: f64, sigma: f64) -> f64 {
    0.5 + (sigma_r / (sigma_r * sigma_r + sigma * sigma).sqrt()).asin() / PI
}

pub fn dpi_oracle(sigma_r: f64, sigma: f64) -> f64 {
    sigma_r * sigma_r / (sigma_r * sigma_r + sigma * sigma)
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
        heap(k - 1, a, out);
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Brute-force rank metrics on distinct scores, by explicit pair and position enumeration.
pub mod brute {
    /// Index of the largest entry.
    fn top(x: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..x.len() {
            if x[i] > x[best] {
                best = i;
            }
        }
        best
    }

    /// 1-based position of each item when sorted descending (1 = best).
    fn positions(x: &[f64]) -> Vec<usize> {
        (0..x.len())
            .map(|i| 1 + (0..x.len()).filter(|&j| x[j] > x[i]).count())
            .collect()
    }

    fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    /// (concordant, discordant) pair counts.
    pub fn concordance(p: &[f64], g: &[f64]) -> (i64, i64) {
        let (mut c, mut d) = (0, 0);
        for (i, j) in pairs(p.len()) {
            if (p[i] - p[j]) * (g[i] - g[j]) > 0.0 {
                c += 1;
            } else {
                d += 1;
            }
        }
        (c, d)
    }

    pub fn accuracy(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len();
        let (c, _) = concordance(p, g);
        c as f64 / (n * (n - 1) / 2) as f64
    }

    pub fn kendall(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len();
        let (c, d) = concordance(p, g);
        (c - d) as f64 / (n * (n - 1) / 2) as f64
    }

    /// `1 - 6 sum d^2 / (n (n^2 - 1))` on positions.
    pub fn spearman(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len() as f64;
        let (rp, rg) = (positions(p), positions(g));
        let d2: f64 = rp
            .iter()
            .zip(&rg)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    pub fn pearson(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len() as f64;
        let (mp, mg) = (p.iter().sum::<f64>() / n, g.iter().sum::<f64>() / n);
        let cov: f64 = p.iter().zip(g).map(|(a, b)| (a - mp) * (b - mg)).sum();
        let vp: f64 = p.iter().map(|a| (a - mp).powi(2)).sum();
        let vg: f64 = g.iter().map(|b| (b - mg).powi(2)).sum();
        cov / (vp * vg).sqrt()
    }

    /// Chatterjee's xi: walk responses in golden order, sum jumps of proxy rank.
    pub fn xi(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len();
        let proxy_rank: Vec<usize> = positions(p).iter().map(|&pos| n + 1 - pos).collect();
        let mut by_golden: Vec<usize> = (0..n).collect();
        by_golden.sort_by(|&a, &b| g[a].partial_cmp(&g[b]).unwrap());
        let mut jumps = 0usize;
        for w in by_golden.windows(2) {
            jumps += proxy_rank[w[0]].abs_diff(proxy_rank[w[1]]);
        }
        1.0 - 3.0 * jumps as f64 / (n * n - 1) as f64
    }

    /// Reciprocal golden position of the proxy's pick.
    pub fn mrr(p: &[f64], g: &[f64]) -> f64 {
        1.0 / positions(g)[top(p)] as f64
    }

    pub fn bo5(p: &[f64], g: &[f64]) -> f64 {
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let max = g[top(g)];
        (g[top(p)] - mean) / (max - mean)
    }

    /// NDCG with gain `(golden rank - 1)`, listing order from the proxy.
    pub fn ndcg(p: &[f64], g: &[f64]) -> f64 {
        let n = g.len();
        let gain: Vec<f64> = positions(g).iter().map(|&pos| (n - pos) as f64).collect();
        let dcg = |order: &[usize]| -> f64 {
            order
                .iter()
                .enumerate()
                .map(|(i, &item)| gain[item] / ((i + 2) as f64).log2())
                .sum()
        };
        let by = |x: &[f64]| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap());
            o
        };
        dcg(&by(p)) / dcg(&by(g))
    }
}

/// Average golden score of the proxy-best of every `n`-subset of the samples;
/// proxy ties go to the larger index.
pub fn enumerate_bon(proxy: &[f64], golden: &[f64], n: usize) -> f64 {
    let big_n = proxy.len();
    let (mut total, mut count) = (0.0, 0u64);
    for mask in 0u32..(1 << big_n) {
        if mask.count_ones() as usize != n {
            continue;
        }
        let mut best: Option<usize> = None;
        for i in 0..big_n {
            if mask & (1 << i) != 0 {
                best = match best {
                    Some(b) if proxy[b] > proxy[i] => Some(b),
                    _ => Some(i),
                };
            }
        }
        total += golden[best.unwrap()];
        count += 1;
    }
    total / count as f64
}

/// Softmax tilt of the uniform policy with inverse temperature `t`; returns
/// the per-prompt policies and their mean KL in nats.
fn tilt(rows: &[Vec<f64>], t: f64) -> (Vec<Vec<f64>>, f64) {
    let mut kl = 0.0;
    let policies = rows
        .iter()
        .map(|row| {
            let m = row.len() as f64;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = row.iter().map(|r| (t * (r - max)).exp()).collect();
            let z: f64 = w.iter().sum();
            let pi: Vec<f64> = w.iter().map(|x| x / z).collect();
            kl += pi
                .iter()
                .filter(|&&q| q > 0.0)
                .map(|&q| q * (q * m).ln())
                .sum::<f64>();
            pi
        })
        .collect();
    (policies, kl / rows.len() as f64)
}

/// Maximizer of `E_pi[reward]` subject to mean `KL(pi || uniform) = lambda`,
/// found by bisection on the log inverse temperature.
pub fn kl_ball_policy(reward: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tilt(reward, mid.exp()).1 < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    tilt(reward, (0.5 * (lo + hi)).exp()).0
}

pub fn expected(policies: &[Vec<f64>], reward: &[Vec<f64>]) -> f64 {
    policies
        .iter()
        .zip(reward)
        .map(|(pi, r)| pi.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
        .sum::<f64>()
        / reward.len() as f64
}

/// Top-down merge sort (left half `n / 2`) counting comparator calls.
pub fn merge_sort_count(scores: &[f64]) -> (Vec<usize>, u64) {
    fn go(items: Vec<usize>, s: &[f64], calls: &mut u64) -> Vec<usize> {
        if items.len() <= 1 {
            return items;
        }
        let mid = items.len() / 2;
        let left = go(items[..mid].to_vec(), s, calls);
        let right = go(items[mid..].to_vec(), s, calls);
        let (mut i, mut j, mut out) = (0, 0, Vec::new());
        while i < left.len() && j < right.len() {
            *calls += 1;
            if s[left[i]] > s[right[j]] {
                out.push(left[i]);
                i += 1;
            } else {
                out.push(right[j]);
                j += 1;
            }
        }
        out.extend_from_slice(&left[i..]);
        out.extend_from_slice(&right[j..]);
        out
    }
    let mut calls = 0;
    let order = go((0..scores.len()).collect(), scores, &mut calls);
    (order, calls)
}
