//! Dual-channel feature sources, benign-noise augmentation and the synthetic
//! world used for desk-scale verification.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::dump::FeatureRecord;
use crate::seed::{self, rng_for};

/// The two views of every input: the regular extractor and the one fed
/// denoised (compressed) inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Raw,
    Denoised,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Raw, Channel::Denoised];

    pub fn code(self) -> u8 {
        match self {
            Channel::Raw => 0,
            Channel::Denoised => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Channel::Raw),
            1 => Ok(Channel::Denoised),
            other => Err(Error::Channel(format!("unknown channel code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Raw => "raw",
            Channel::Denoised => "denoised",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(Channel::Raw),
            "denoised" => Ok(Channel::Denoised),
            other => Err(Error::Channel(format!("unknown channel name {other:?}"))),
        }
    }
}

/// One model input with an opaque identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSample {
    pub id: u32,
    values: Vec<f64>,
}

impl InputSample {
    pub fn new(id: u32, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("input sample has no values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("input sample {id} has non-finite values")));
        }
        Ok(InputSample { id, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Feature vectors of one channel, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub channel: Channel,
    pub class_label: Option<u16>,
    vectors: Vec<Vec<f64>>,
}

impl FeatureBatch {
    pub fn new(channel: Channel, vectors: Vec<Vec<f64>>, class_label: Option<u16>) -> Result<Self> {
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.len() != first.len()) {
                return Err(Error::Dimension {
                    expected: first.len(),
                    found: bad.len(),
                });
            }
        }
        Ok(FeatureBatch {
            channel,
            class_label,
            vectors,
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<Vec<f64>> {
        self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// A deterministic extractor exposing both channels.
pub trait FeatureSource: Sync {
    /// Dimension of every vector this source produces.
    fn feature_dim(&self) -> usize;

    fn features(&self, input: &InputSample, channel: Channel) -> Result<Vec<f64>>;
}

/// Extracts one feature vector per input on `channel`.
pub fn extract<S: FeatureSource + ?Sized>(
    source: &S,
    inputs: &[InputSample],
    channel: Channel,
) -> Result<FeatureBatch> {
    if inputs.is_empty() {
        return Err(Error::invalid("no inputs to extract"));
    }
    let dim = source.feature_dim();
    let vectors = inputs
        .iter()
        .map(|input| {
            let v = source.features(input, channel)?;
            if v.len() != dim {
                return Err(Error::Source(format!(
                    "dimension drift: source declares {dim}, produced {} for sample {}",
                    v.len(),
                    input.id
                )));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureBatch::new(channel, vectors, None)
}

/// `q` followed by `n - 1` copies of `q` with independent Gaussian noise.
pub fn instance(q: &InputSample, n: usize, noise_sigma: f64, seed: u64) -> Result<Vec<InputSample>> {
    if n == 0 {
        return Err(Error::invalid("instance count must be at least 1"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut out = Vec::with_capacity(n);
    out.push(q.clone());
    if noise_sigma == 0.0 {
        out.extend(std::iter::repeat_n(q.clone(), n - 1));
        return Ok(out);
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = rng_for(seed, &[]);
    for _ in 1..n {
        let values = q.values.iter().map(|v| v + noise.sample(&mut rng)).collect();
        out.push(InputSample { id: q.id, values });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    pub class_count: u16,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub clean_noise_sigma: f64,
    /// Fraction of the source-to-target centroid offset added by the attack.
    pub perturbation_strength: f64,
    /// Factor applied to the deviation from the nearest centroid on the denoised channel.
    pub denoise_shrink: f64,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            class_count: 10,
            feature_dim: 64,
            class_separation: 10.0,
            clean_noise_sigma: 1.0,
            perturbation_strength: 0.5,
            denoise_shrink: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::invalid("synthetic world needs at least 2 classes"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class separation must be positive"));
        }
        if !(self.clean_noise_sigma >= 0.0 && self.clean_noise_sigma.is_finite()) {
            return Err(Error::invalid("clean noise sigma must be >= 0"));
        }
        if !(self.perturbation_strength >= 0.0 && self.perturbation_strength.is_finite()) {
            return Err(Error::invalid("perturbation strength must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.denoise_shrink) {
            return Err(Error::invalid("denoise shrink must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Gaussian classes around seeded centroids; the denoised channel shrinks
/// each input toward its nearest centroid.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: SyntheticWorldConfig,
    centroids: Vec<Vec<f64>>,
}

impl SyntheticWorld {
    pub fn new(config: SyntheticWorldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(config.seed, &[seed::TAG_CENTROIDS]);
        let centroids = (0..config.class_count)
            .map(|_| loop {
                let dir: Vec<f64> = (0..config.feature_dim)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    break dir.iter().map(|v| v / norm * config.class_separation).collect();
                }
            })
            .collect();
        Ok(SyntheticWorld { config, centroids })
    }

    pub fn config(&self) -> &SyntheticWorldConfig {
        &self.config
    }

    pub fn centroid(&self, class: u16) -> Result<&[f64]> {
        self.check_class(class)?;
        Ok(&self.centroids[class as usize])
    }

    fn check_class(&self, class: u16) -> Result<()> {
        if class < self.config.class_count {
            Ok(())
        } else {
            Err(Error::InvalidClass {
                class,
                count: self.config.class_count,
            })
        }
    }

    fn check_dim(&self, values: &[f64]) -> Result<()> {
        if values.len() == self.config.feature_dim {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: self.config.feature_dim,
                found: values.len(),
            })
        }
    }

    /// `count` clean samples of `class`. Distinct `stream`s give independent
    /// draws; ids run from `first_id`.
    pub fn clean_samples(
        &self,
        class: u16,
        count: usize,
        stream: u64,
        first_id: u32,
    ) -> Result<Vec<InputSample>> {
        self.check_class(class)?;
        if count == 0 {
            return Err(Error::invalid("sample count must be positive"));
        }
        let sigma = self.config.clean_noise_sigma;
        let mu = &self.centroids[class as usize];
        let mut rng = rng_for(
            self.config.seed,
            &[seed::TAG_CLEAN, stream, u64::from(class)],
        );
        (0..count)
            .map(|i| {
                let values = if sigma == 0.0 {
                    mu.clone()
                } else {
                    mu.iter()
                        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                };
                let id = first_id
                    .checked_add(i as u32)
                    .ok_or_else(|| Error::invalid("sample id overflow"))?;
                Ok(InputSample { id, values })
            })
            .collect()
    }

    /// Shifts `clean` by the configured strength toward the target centroid.
    pub fn adversarial(&self, clean: &InputSample, source: u16, target: u16) -> Result<InputSample> {
        self.shift(clean, source, target, self.config.perturbation_strength)
    }

    /// `clean + delta * (mu_target - mu_source)`.
    pub fn shift(
        &self,
        clean: &InputSample,
        source: u16,
        target: u16,
        delta: f64,
    ) -> Result<InputSample> {
        self.check_class(source)?;
        self.check_class(target)?;
        if source == target {
            return Err(Error::invalid("attack source and target classes coincide"));
        }
        self.check_dim(clean.values())?;
        if delta == 0.0 {
            return Ok(clean.clone());
        }
        let (ms, mt) = (&self.centroids[source as usize], &self.centroids[target as usize]);
        let values = clean
            .values
            .iter()
            .zip(ms.iter().zip(mt))
            .map(|(x, (s, t))| x + delta * (t - s))
            .collect();
        Ok(InputSample {
            id: clean.id,
            values,
        })
    }

    /// Index of the closest centroid by L2 distance; ties go to the lower index.
    pub fn nearest_centroid(&self, values: &[f64]) -> Result<u16> {
        self.check_dim(values)?;
        let mut best = (0u16, f64::INFINITY);
        for (c, mu) in self.centroids.iter().enumerate() {
            let d: f64 = values.iter().zip(mu).map(|(x, m)| (x - m) * (x - m)).sum();
            if d < best.1 {
                best = (c as u16, d);
            }
        }
        Ok(best.0)
    }

    pub fn denoise(&self, values: &[f64]) -> Result<Vec<f64>> {
        let alpha = self.config.denoise_shrink;
        if alpha == 1.0 {
            self.check_dim(values)?;
            return Ok(values.to_vec());
        }
        let mu = &self.centroids[self.nearest_centroid(values)? as usize];
        Ok(values
            .iter()
            .zip(mu)
            .map(|(x, m)| m + alpha * (x - m))
            .collect())
    }

    /// (raw, denoised) features of one input.
    pub fn channels(&self, input: &InputSample) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_dim(input.values())?;
        Ok((input.values.clone(), self.denoise(input.values())?))
    }
}

impl FeatureSource for SyntheticWorld {
    fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn features(&self, input: &InputSample, channel: Channel) -> Result<Vec<f64>> {
        self.check_dim(input.values())?;
        match channel {
            Channel::Raw => Ok(input.values.clone()),
            Channel::Denoised => self.denoise(input.values()),
        }
    }
}

/// Replays recorded feature vectors by sample id. The inputs it hands out
/// carry the raw-channel vector as their values; noise added to them by
/// augmentation is not representable and is ignored on replay.
#[derive(Debug, Clone)]
pub struct DumpSource {
    dim: usize,
    vectors: HashMap<(u32, Channel), Vec<f64>>,
    order: Vec<(u16, u32)>,
}

impl DumpSource {
    pub fn new(dim: usize, records: &[FeatureRecord]) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut order = Vec::new();
        for r in records {
            if r.features.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: r.features.len(),
                });
            }
            let v: Vec<f64> = r.features.iter().map(|&f| f64::from(f)).collect();
            if vectors.insert((r.sample_id, r.channel), v).is_some() {
                return Err(Error::format(format!(
                    "duplicate record for sample {} on channel {}",
                    r.sample_id, r.channel
                )));
            }
            if r.channel == Channel::Raw {
                order.push((r.class_label, r.sample_id));
            }
        }
        Ok(DumpSource { dim, vectors, order })
    }

    /// Inputs in record order with their class labels.
    pub fn samples(&self) -> Vec<(u16, InputSample)> {
        self.order
            .iter()
            .map(|&(class, id)| {
                let values = self.vectors[&(id, Channel::Raw)].clone();
                (class, InputSample { id, values })
            })
            .collect()
    }
}

impl FeatureSource for DumpSource {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, input: &InputSample, channel: Channel) -> Result<Vec<f64>> {
        if let Some(v) = self.vectors.get(&(input.id, channel)) {
            return Ok(v.clone());
        }
        let other = Channel::ALL.into_iter().find(|c| *c != channel).unwrap();
        if self.vectors.contains_key(&(input.id, other)) {
            Err(Error::Channel(format!(
                "sample {} has no {channel} record",
                input.id
            )))
        } else {
            Err(Error::Source(format!("sample {} not in dump", input.id)))
        }
    }
}
