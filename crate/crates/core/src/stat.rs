//! Numerical primitives: smoothing, KL divergences, the L2 norm, the
//! Mann-Whitney U test and p-value histograms. Everything here is pure.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_BINS: usize = 20;
/// Largest pooled sample size handled by exact enumeration.
pub const EXACT_MWU_LIMIT: usize = 16;
pub const P_FLOOR: f64 = 1e-300;

const SUM_TOLERANCE: f64 = 1e-9;

/// Strictly positive vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps values that already satisfy the invariants.
    pub fn from_probabilities(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty probability vector"));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("non-positive probability {v}")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(ProbVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        ProbVector::from_probabilities(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

/// Non-empty series of p-values in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PValueSeries(Vec<f64>);

impl PValueSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty p-value series"));
        }
        if let Some(p) = values.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::invalid(format!("p-value {p} outside (0, 1]")));
        }
        Ok(PValueSeries(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for PValueSeries {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PValueSeries::new(v)
    }
}

impl From<PValueSeries> for Vec<f64> {
    fn from(p: PValueSeries) -> Self {
        p.0
    }
}

/// Smoothed histogram over [0, 1] with at least two equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDistribution {
    mass: ProbVector,
}

impl BinnedDistribution {
    pub fn mass(&self) -> &ProbVector {
        &self.mass
    }

    pub fn bin_count(&self) -> usize {
        self.mass.dim()
    }
}

/// Clamps negatives to zero, adds `epsilon` to every entry and rescales to sum one.
pub fn normalize(raw: &[f64], epsilon: f64) -> Result<ProbVector> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty vector"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in vector to normalize"));
    }
    let smoothed: Vec<f64> = raw.iter().map(|v| v.max(0.0) + epsilon).collect();
    let total: f64 = smoothed.iter().sum();
    let out: Vec<f64> = smoothed.iter().map(|v| v / total).collect();
    if out.iter().any(|v| v.is_nan() || *v <= 0.0) || !total.is_finite() {
        return Err(Error::invalid(
            "vector range too wide to smooth at this epsilon",
        ));
    }
    Ok(ProbVector(out))
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected: a,
            found: b,
        })
    }
}

/// Kullback-Leibler divergence KL(a || b) in nats.
///
/// Summed termwise as `a ln(a/b) - a + b`, which equals the plain sum for
/// normalized operands but keeps each term non-negative under rounding.
pub fn kl(a: &ProbVector, b: &ProbVector) -> Result<f64> {
    same_dim(a.dim(), b.dim())?;
    let total = a
        .0
        .iter()
        .zip(&b.0)
        .map(|(&p, &q)| {
            let diff = p - q;
            (p * (diff / q).ln_1p() - diff).max(0.0)
        })
        .sum();
    Ok(total)
}

/// Mean of the two KL directions; symmetric bit for bit.
pub fn sym_kl(a: &ProbVector, b: &ProbVector) -> Result<f64> {
    let ab = kl(a, b)?;
    let ba = kl(b, a)?;
    Ok((ab + ba) / 2.0)
}

pub fn l2_norm(a: &[f64], b: &[f64]) -> Result<f64> {
    same_dim(a.len(), b.len())?;
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sq.sqrt())
}

/// Twice the midrank of every pooled value (always an integer), and the tie
/// group sizes. Values are pooled as `x` then `y`.
fn doubled_midranks(x: &[f64], y: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let n = x.len() + y.len();
    let mut order: Vec<(f64, usize)> = x.iter().chain(y).copied().zip(0..n).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && order[end].0 == order[start].0 {
            end += 1;
        }
        // positions start+1 ..= end share the midrank (start + 1 + end) / 2
        let doubled = (start + 1 + end) as u64;
        for item in &order[start..end] {
            ranks[item.1] = doubled;
        }
        ties.push((end - start) as u64);
        start = end;
    }
    (ranks, ties)
}

/// Two-sided Mann-Whitney U test p-value.
///
/// Exact permutation distribution of the midrank sum when the pooled size is
/// at most [`EXACT_MWU_LIMIT`], otherwise the tie-corrected normal
/// approximation with continuity correction. Floored at [`P_FLOOR`].
pub fn mann_whitney_p(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("Mann-Whitney test needs two non-empty samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("NaN in Mann-Whitney sample"));
    }
    let (ranks, ties) = doubled_midranks(x, y);
    let p = if x.len() + y.len() <= EXACT_MWU_LIMIT {
        exact_p(&ranks, x.len())
    } else {
        normal_p(&ranks, &ties, x.len(), y.len())
    };
    Ok(p.clamp(P_FLOOR, 1.0))
}

fn exact_p(ranks: &[u64], n1: usize) -> f64 {
    let n = ranks.len();
    let max_sum: u64 = ranks.iter().sum();
    let width = max_sum as usize + 1;
    // ways[c * width + s]: subsets of size c with doubled rank sum s
    let mut ways = vec![0u64; (n1 + 1) * width];
    ways[0] = 1;
    for &r in ranks {
        let r = r as usize;
        for c in (1..=n1).rev() {
            for s in (r..width).rev() {
                let add = ways[(c - 1) * width + s - r];
                ways[c * width + s] += add;
            }
        }
    }
    let observed: u64 = ranks[..n1].iter().sum();
    // doubled mean of the rank sum: n1 * (n + 1)
    let centre = (n1 * (n + 1)) as i64;
    let dist = (observed as i64 - centre).abs();
    let row = &ways[n1 * width..(n1 + 1) * width];
    let total: u64 = row.iter().sum();
    let extreme: u64 = row
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as i64 - centre).abs() >= dist)
        .map(|(_, w)| *w)
        .sum();
    extreme as f64 / total as f64
}

fn normal_p(ranks: &[u64], ties: &[u64], n1: usize, n2: usize) -> f64 {
    let n = (n1 + n2) as f64;
    let rank_sum2: u64 = ranks[..n1].iter().sum();
    // 2U - n1*n2 in integers keeps p(x, y) == p(y, x) exactly
    let u2 = rank_sum2 as i64 - (n1 * (n1 + 1)) as i64;
    let dev = (u2 - (n1 * n2) as i64).abs() as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var.is_nan() || var <= 0.0 {
        return 1.0;
    }
    let z = (dev - 0.5).max(0.0) / var.sqrt();
    statrs::function::erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Histogram of p-values over B equal-width bins of [0, 1], last bin closed.
pub fn bin_pvalues(p: &[f64], bins: usize, epsilon: f64) -> Result<BinnedDistribution> {
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 bins, got {bins}")));
    }
    if p.is_empty() {
        return Err(Error::invalid("no p-values to bin"));
    }
    let mut counts = vec![0.0; bins];
    for &v in p {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("p-value {v} outside [0, 1]")));
        }
        let idx = ((v * bins as f64) as usize).min(bins - 1);
        counts[idx] += 1.0;
    }
    let len = p.len() as f64;
    let freq: Vec<f64> = counts.iter().map(|c| c / len).collect();
    Ok(BinnedDistribution {
        mass: normalize(&freq, epsilon)?,
    })
}
