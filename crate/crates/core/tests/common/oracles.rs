//! Reference implementations written independently of the engine: plain
//! loops, no shared helpers, no shortcuts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Midrank of `v` within `pooled` by direct counting.
fn midrank(pooled: &[f64], v: f64) -> f64 {
    let below = pooled.iter().filter(|&&p| p < v).count() as f64;
    let equal = pooled.iter().filter(|&&p| p == v).count() as f64;
    below + (equal + 1.0) / 2.0
}

/// Two-sided exact p by enumerating every size-n1 subset of the pooled sample.
pub fn brute_force_mwu(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let n1 = x.len();
    let ranks: Vec<f64> = pooled.iter().map(|&v| midrank(&pooled, v)).collect();
    let mean = n1 as f64 * (n as f64 + 1.0) / 2.0;
    let observed: f64 = ranks[..n1].iter().sum();
    let dist = (observed - mean).abs();
    let (mut hits, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        total += 1;
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
        if (s - mean).abs() >= dist - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / total as f64
}

/// Monte-Carlo permutation p-value of the U statistic's distance from its mean.
pub fn permutation_mwu(x: &[f64], y: &[f64], draws: usize, seed: u64) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n1 = x.len();
    let ranks_of = |p: &[f64]| -> Vec<f64> { p.iter().map(|&v| midrank(p, v)).collect() };
    let base = ranks_of(&pooled);
    let mean = n1 as f64 * (pooled.len() as f64 + 1.0) / 2.0;
    let dist = (base[..n1].iter().sum::<f64>() - mean).abs();
    // ranks are a fixed multiset, so permute them instead of the values
    let mut ranks = base;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..draws {
        ranks.shuffle(&mut rng);
        if (ranks[..n1].iter().sum::<f64>() - mean).abs() >= dist - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

/// Direct Σ a ln(a / b).
pub fn kl_direct(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * (p / q).ln()).sum()
}

/// Pairwise count: P(positive > negative) + 0.5 P(tie).
pub fn brute_force_auc(negatives: &[f64], positives: &[f64]) -> f64 {
    let mut score = 0.0;
    for &n in negatives {
        for &p in positives {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (negatives.len() * positives.len()) as f64
}
