//! Adversarial-possibility scoring, threshold calibration and verdicts.
//!
//! A query `q` is expanded into `N` noisy instances and split into `N/k`
//! subsets. Against each class `c`, every subset yields one p-value: the
//! divergences of the class reference pieces from the subset average are
//! tested against the divergences of the query subsets from the reference
//! average. The histogram of those p-values is compared with the class
//! identity, giving one distance per class; the score is the L2 distance
//! between the raw and the denoised channel's distance vectors.

use std::collections::BTreeMap;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract, instance, Channel, FeatureSource, InputSample};
use crate::identity::{check_partition, mean_vector, piece_averages, IdentityStore};
use crate::seed::{self, derive_seed, rng_for};
use crate::stat::{self, PValueSeries, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    pub instances: usize,
    pub subset_size: usize,
    pub reference_count: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DetectionParams {
    fn default() -> Self {
        DetectionParams {
            instances: 100,
            subset_size: 10,
            reference_count: 100,
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl DetectionParams {
    pub fn validate(&self) -> Result<()> {
        check_partition(self.instances, self.subset_size)?;
        if self.reference_count == 0 {
            return Err(Error::invalid("reference count must be positive"));
        }
        // reference pieces use the same subset size
        check_partition(self.reference_count, self.subset_size)?;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSignature {
    pub class_label: u16,
    pub channel: Channel,
    pub p_values: PValueSeries,
}

/// Per-class distances on one channel, in canonical class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceVector {
    pub channel: Channel,
    pub distances: Vec<f64>,
}

/// Score of one query before a threshold is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub p_a: f64,
    pub v_raw: DistanceVector,
    pub v_denoised: DistanceVector,
}

impl Assessment {
    pub fn verdict(self, threshold: f64) -> DetectionVerdict {
        DetectionVerdict {
            is_adversarial: self.p_a > threshold,
            p_a: self.p_a,
            threshold,
            v_raw: self.v_raw,
            v_denoised: self.v_denoised,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub p_a: f64,
    pub threshold: f64,
    pub is_adversarial: bool,
    pub v_raw: DistanceVector,
    pub v_denoised: DistanceVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub margin: f64,
    pub clean_scores: Vec<f64>,
    pub max_clean: f64,
}

/// Threshold `max * (1 + margin)`, written as `max + |max| * margin` so that
/// it never falls below the maximum.
pub fn calibrate(clean_scores: &[f64], margin: f64) -> Result<CalibrationResult> {
    if clean_scores.is_empty() {
        return Err(Error::invalid("no clean scores to calibrate on"));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be >= 0, got {margin}")));
    }
    if clean_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("non-finite calibration score"));
    }
    let max_clean = clean_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CalibrationResult {
        threshold: max_clean + max_clean.abs() * margin,
        margin,
        clean_scores: clean_scores.to_vec(),
        max_clean,
    })
}

/// Reference pieces and their overall average for one (class, channel).
#[derive(Debug, Clone)]
struct ReferenceProfile {
    pieces: Vec<ProbVector>,
    mean: ProbVector,
}

/// Scores queries against an identity store through a feature source.
pub struct Detector<'a, S: ?Sized> {
    source: &'a S,
    store: &'a IdentityStore,
    params: DetectionParams,
    classes: Vec<u16>,
    profiles: BTreeMap<(u16, Channel), ReferenceProfile>,
}

impl<'a, S: FeatureSource + ?Sized> Detector<'a, S> {
    /// Selects and extracts the class references once; they are shared by
    /// every query.
    pub fn new(source: &'a S, store: &'a IdentityStore, params: DetectionParams) -> Result<Self> {
        params.validate()?;
        let classes = store.classes();
        let mut profiles = BTreeMap::new();
        for &class in &classes {
            let selection = reference_selection(store, class, &params)?;
            for ch in Channel::ALL {
                let feats = extract(source, &selection, ch)
                    .map_err(|e| e.in_class(class))?
                    .into_vectors();
                let eps = store.binning.epsilon;
                let profile = ReferenceProfile {
                    pieces: piece_averages(&feats, params.subset_size, eps)?,
                    mean: stat::normalize(&mean_vector(&feats)?, eps)?,
                };
                profiles.insert((class, ch), profile);
            }
        }
        Ok(Detector {
            source,
            store,
            params,
            classes,
            profiles,
        })
    }

    pub fn params(&self) -> &DetectionParams {
        &self.params
    }

    pub fn store(&self) -> &IdentityStore {
        self.store
    }

    /// The augmented batch S_q shared by both channels.
    pub fn augment(&self, q: &InputSample) -> Result<Vec<InputSample>> {
        let seed = derive_seed(self.params.seed, &[seed::TAG_INSTANCE, u64::from(q.id)]);
        instance(q, self.params.instances, self.params.noise_sigma, seed)
    }

    fn query_pieces(&self, batch: &[InputSample], channel: Channel) -> Result<Vec<ProbVector>> {
        let feats = extract(self.source, batch, channel)?.into_vectors();
        piece_averages(&feats, self.params.subset_size, self.store.binning.epsilon)
    }

    fn signature_from_pieces(
        &self,
        query: &[ProbVector],
        class: u16,
        channel: Channel,
    ) -> Result<ClassSignature> {
        let profile = self
            .profiles
            .get(&(class, channel))
            .ok_or(Error::UnknownClass(class))?;
        let to_reference = query
            .iter()
            .map(|piece| stat::sym_kl(piece, &profile.mean))
            .collect::<Result<Vec<_>>>()?;
        let p_values = query
            .iter()
            .map(|subset| {
                let from_reference = profile
                    .pieces
                    .iter()
                    .map(|r| stat::sym_kl(r, subset))
                    .collect::<Result<Vec<_>>>()?;
                stat::mann_whitney_p(&from_reference, &to_reference)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassSignature {
            class_label: class,
            channel,
            p_values: PValueSeries::new(p_values)?,
        })
    }

    /// Signature of an augmented batch against one class.
    pub fn class_signature(
        &self,
        batch: &[InputSample],
        class: u16,
        channel: Channel,
    ) -> Result<ClassSignature> {
        let pieces = self.query_pieces(batch, channel)?;
        self.signature_from_pieces(&pieces, class, channel)
    }

    fn distances_for_batch(&self, batch: &[InputSample], channel: Channel) -> Result<DistanceVector> {
        let pieces = self.query_pieces(batch, channel)?;
        let binning = self.store.binning;
        let distances = self
            .classes
            .iter()
            .map(|&class| {
                let sig = self.signature_from_pieces(&pieces, class, channel)?;
                let hist = stat::bin_pvalues(sig.p_values.as_slice(), binning.bins, binning.epsilon)?;
                let identity = self.store.identity(class, channel)?;
                stat::sym_kl(hist.mass(), identity.binned().mass())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistanceVector { channel, distances })
    }

    pub fn distance_vector(&self, q: &InputSample, channel: Channel) -> Result<DistanceVector> {
        self.distances_for_batch(&self.augment(q)?, channel)
    }

    pub fn assess(&self, q: &InputSample) -> Result<Assessment> {
        let batch = self.augment(q)?;
        let v_raw = self.distances_for_batch(&batch, Channel::Raw)?;
        let v_denoised = self.distances_for_batch(&batch, Channel::Denoised)?;
        let p_a = stat::l2_norm(&v_raw.distances, &v_denoised.distances)?;
        Ok(Assessment {
            p_a,
            v_raw,
            v_denoised,
        })
    }

    /// Adversarial when the score strictly exceeds `threshold`.
    pub fn classify(&self, q: &InputSample, threshold: f64) -> Result<DetectionVerdict> {
        Ok(self.assess(q)?.verdict(threshold))
    }
}

/// The `m` references of `class`, drawn from the id-ordered store entry with
/// a seed that depends on the class only.
fn reference_selection(
    store: &IdentityStore,
    class: u16,
    params: &DetectionParams,
) -> Result<Vec<InputSample>> {
    let entry = store.references().class_samples(class)?;
    let m = params.reference_count;
    if entry.len() < m {
        return Err(Error::InsufficientData {
            what: format!("references of class {class}"),
            needed: m,
            available: entry.len(),
        });
    }
    let mut rng = rng_for(params.seed, &[seed::TAG_REFERENCES, u64::from(class)]);
    let mut picked = index::sample(&mut rng, entry.len(), m).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| entry[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_examples() {
        let r = calibrate(&[0.5, 1.2, 0.9], 0.1).unwrap();
        assert!((r.threshold - 1.32).abs() < 1e-12);
        assert_eq!(r.max_clean, 1.2);
        assert_eq!(calibrate(&[0.5, 1.2, 0.9], 0.0).unwrap().threshold, 1.2);
        assert!(calibrate(&[], 0.1).is_err());
        assert!(calibrate(&[1.0], -0.1).is_err());
        let neg = calibrate(&[-2.0, -3.0], 0.5).unwrap();
        assert!(neg.threshold >= -2.0);
    }

    #[test]
    fn strict_threshold() {
        let v = |ch| DistanceVector {
            channel: ch,
            distances: vec![0.0],
        };
        let at = |p_a, t| {
            Assessment {
                p_a,
                v_raw: v(Channel::Raw),
                v_denoised: v(Channel::Denoised),
            }
            .verdict(t)
            .is_adversarial
        };
        assert!(!at(0.0, 1.0));
        assert!(!at(1.0, 1.0));
        assert!(at(1.0 + 1e-12, 1.0));
    }

    #[test]
    fn params_validation() {
        assert!(DetectionParams::default().validate().is_ok());
        let with = |f: fn(&mut DetectionParams)| {
            let mut p = DetectionParams::default();
            f(&mut p);
            p.validate()
        };
        assert!(matches!(with(|p| p.instances = 95), Err(Error::Partition { .. })));
        assert!(with(|p| p.reference_count = 0).is_err());
        assert!(with(|p| p.reference_count = 15).is_err());
        assert!(with(|p| p.noise_sigma = f64::NAN).is_err());
    }
}
