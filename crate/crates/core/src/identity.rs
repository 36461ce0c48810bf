//! Per-class distribution identities.
//!
//! Every iteration draws a test batch and a train batch of one class, forms
//! two divergence populations (test pieces against the train average, and
//! train pieces against the test average) and stores the Mann-Whitney p-value
//! between them. The series of p-values, and its histogram, is the identity.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract, Channel, FeatureSource, InputSample};
use crate::seed::{self, rng_for};
use crate::stat::{self, BinnedDistribution, PValueSeries, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentityBuildParams {
    pub iterations: usize,
    pub sample_size: usize,
    pub subset_size: usize,
    pub seed: u64,
}

impl Default for IdentityBuildParams {
    fn default() -> Self {
        IdentityBuildParams {
            iterations: 50,
            sample_size: 100,
            subset_size: 10,
            seed: 0,
        }
    }
}

impl IdentityBuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::invalid("identity needs at least 2 iterations"));
        }
        check_partition(self.sample_size, self.subset_size)
    }
}

pub(crate) fn check_partition(len: usize, subset: usize) -> Result<()> {
    if subset == 0 || len == 0 || subset > len || !len.is_multiple_of(subset) {
        return Err(Error::Partition { len, subset });
    }
    Ok(())
}

/// Histogram resolution and the smoothing constant shared by feature
/// normalization and p-value histograms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningParams {
    pub bins: usize,
    pub epsilon: f64,
}

impl Default for BinningParams {
    fn default() -> Self {
        BinningParams {
            bins: stat::DEFAULT_BINS,
            epsilon: stat::DEFAULT_EPSILON,
        }
    }
}

impl BinningParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::invalid("need at least 2 histogram bins"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Pieces of the held (test) batch against the reference average.
    TestToReference,
    /// The role-swapped population.
    ReferenceToTest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergencePopulation {
    pub direction: Direction,
    pub points: Vec<f64>,
}

/// Element-wise mean of equal-length vectors.
pub fn mean_vector(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty batch"))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::Dimension {
                expected: acc.len(),
                found: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Normalized averages of consecutive `k`-sized pieces.
pub fn piece_averages(vectors: &[Vec<f64>], k: usize, epsilon: f64) -> Result<Vec<ProbVector>> {
    check_partition(vectors.len(), k)?;
    vectors
        .chunks_exact(k)
        .map(|piece| stat::normalize(&mean_vector(piece)?, epsilon))
        .collect()
}

/// Symmetrized KL of every `k`-piece of `held` against the average of `reference`.
pub fn divergence_population(
    held: &[Vec<f64>],
    reference: &[Vec<f64>],
    k: usize,
    epsilon: f64,
    direction: Direction,
) -> Result<DivergencePopulation> {
    let whole = stat::normalize(&mean_vector(reference)?, epsilon)?;
    let points = piece_averages(held, k, epsilon)?
        .iter()
        .map(|piece| stat::sym_kl(piece, &whole))
        .collect::<Result<Vec<_>>>()?;
    Ok(DivergencePopulation { direction, points })
}

/// Draw of one iteration: (test batch, train batch). The channel is not part
/// of the seed, so both channels see the same samples.
fn iteration_draw<'a>(
    test_pool: &'a [InputSample],
    train_pool: &'a [InputSample],
    params: &IdentityBuildParams,
    class: u16,
    iteration: usize,
) -> Result<(Vec<&'a InputSample>, Vec<&'a InputSample>)> {
    let n = params.sample_size;
    for (what, pool) in [("test pool", test_pool), ("train pool", train_pool)] {
        if pool.len() < n {
            return Err(Error::InsufficientData {
                what: what.into(),
                needed: n,
                available: pool.len(),
            });
        }
    }
    let parts = |tag| [tag, u64::from(class), iteration as u64];
    let mut rng_t = rng_for(params.seed, &parts(seed::TAG_IDENTITY_TEST));
    let mut rng_r = rng_for(params.seed, &parts(seed::TAG_IDENTITY_TRAIN));
    let held = index::sample(&mut rng_t, test_pool.len(), n)
        .into_iter()
        .map(|i| &test_pool[i])
        .collect();
    let reference = index::sample(&mut rng_r, train_pool.len(), n)
        .into_iter()
        .map(|i| &train_pool[i])
        .collect();
    Ok((held, reference))
}

fn features_of<S: FeatureSource + ?Sized>(
    source: &S,
    samples: &[&InputSample],
    channel: Channel,
) -> Result<Vec<Vec<f64>>> {
    let owned: Vec<InputSample> = samples.iter().map(|s| (*s).clone()).collect();
    Ok(extract(source, &owned, channel)?.into_vectors())
}

fn iteration_p(held: &[Vec<f64>], reference: &[Vec<f64>], k: usize, epsilon: f64) -> Result<f64> {
    let d_tr = divergence_population(held, reference, k, epsilon, Direction::TestToReference)?;
    let d_rt = divergence_population(reference, held, k, epsilon, Direction::ReferenceToTest)?;
    stat::mann_whitney_p(&d_tr.points, &d_rt.points)
}

/// p-value of iteration `iteration` for `class` on `channel`.
#[allow(clippy::too_many_arguments)]
pub fn identity_iteration<S: FeatureSource + ?Sized>(
    source: &S,
    test_pool: &[InputSample],
    train_pool: &[InputSample],
    params: &IdentityBuildParams,
    epsilon: f64,
    class: u16,
    channel: Channel,
    iteration: usize,
) -> Result<f64> {
    params.validate()?;
    let (held, reference) = iteration_draw(test_pool, train_pool, params, class, iteration)?;
    iteration_p(
        &features_of(source, &held, channel)?,
        &features_of(source, &reference, channel)?,
        params.subset_size,
        epsilon,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassIdentity {
    pub class_label: u16,
    pub channel: Channel,
    pub build_params: IdentityBuildParams,
    p_values: PValueSeries,
    binned: BinnedDistribution,
}

impl ClassIdentity {
    pub fn new(
        class_label: u16,
        channel: Channel,
        p_values: PValueSeries,
        build_params: IdentityBuildParams,
        binning: BinningParams,
    ) -> Result<Self> {
        if p_values.len() != build_params.iterations {
            return Err(Error::format(format!(
                "identity for class {class_label} ({channel}) has {} p-values, expected {}",
                p_values.len(),
                build_params.iterations
            )));
        }
        let binned = stat::bin_pvalues(p_values.as_slice(), binning.bins, binning.epsilon)?;
        Ok(ClassIdentity {
            class_label,
            channel,
            build_params,
            p_values,
            binned,
        })
    }

    pub fn p_values(&self) -> &PValueSeries {
        &self.p_values
    }

    pub fn binned(&self) -> &BinnedDistribution {
        &self.binned
    }
}

/// Clean inputs retained per class for re-extraction at detection time.
/// Both channels share one entry per class because their draws coincide.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceStore {
    samples: BTreeMap<u32, InputSample>,
    classes: BTreeMap<u16, Vec<u32>>,
}

impl ReferenceStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `samples` to the entry of `class`. A sample id may only ever map
    /// to one input.
    pub fn insert(&mut self, class: u16, samples: impl IntoIterator<Item = InputSample>) -> Result<()> {
        let mut ids: BTreeSet<u32> = self
            .classes
            .get(&class)
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default();
        for s in samples {
            match self.samples.get(&s.id) {
                Some(existing) if *existing != s => {
                    return Err(Error::invalid(format!(
                        "sample id {} reused for different inputs",
                        s.id
                    )))
                }
                Some(_) => {}
                None => {
                    self.samples.insert(s.id, s.clone());
                }
            }
            ids.insert(s.id);
        }
        self.classes.insert(class, ids.into_iter().collect());
        Ok(())
    }

    /// Entry of `class`, ordered by sample id.
    pub fn class_samples(&self, class: u16) -> Result<Vec<&InputSample>> {
        let ids = self.classes.get(&class).ok_or(Error::UnknownClass(class))?;
        Ok(ids.iter().map(|id| &self.samples[id]).collect())
    }

    pub fn classes(&self) -> impl Iterator<Item = u16> + '_ {
        self.classes.keys().copied()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub margin: f64,
}

/// Test and train pools of one class; clean samples only.
#[derive(Debug, Clone, Default)]
pub struct ClassPools {
    pub test: Vec<InputSample>,
    pub train: Vec<InputSample>,
}

/// Identities of every class on both channels plus their references.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityStore {
    pub dataset_name: String,
    pub params: IdentityBuildParams,
    pub binning: BinningParams,
    identities: BTreeMap<(u16, Channel), ClassIdentity>,
    references: ReferenceStore,
    pub calibration: Option<Calibration>,
}

impl IdentityStore {
    pub fn new(
        dataset_name: String,
        params: IdentityBuildParams,
        binning: BinningParams,
        identities: Vec<ClassIdentity>,
        references: ReferenceStore,
        calibration: Option<Calibration>,
    ) -> Result<Self> {
        params.validate()?;
        binning.validate()?;
        let mut map = BTreeMap::new();
        for id in identities {
            let key = (id.class_label, id.channel);
            if id.build_params != params {
                return Err(Error::format(format!(
                    "identity for class {} built with different parameters",
                    key.0
                )));
            }
            if map.insert(key, id).is_some() {
                return Err(Error::format(format!(
                    "duplicate identity for class {} ({})",
                    key.0, key.1
                )));
            }
        }
        let classes: BTreeSet<u16> = map.keys().map(|k| k.0).collect();
        if classes.is_empty() {
            return Err(Error::format("identity store has no classes"));
        }
        for &c in &classes {
            for ch in Channel::ALL {
                if !map.contains_key(&(c, ch)) {
                    return Err(Error::format(format!("class {c} lacks a {ch} identity")));
                }
            }
            match references.classes.get(&c) {
                Some(ids) if !ids.is_empty() => {}
                _ => return Err(Error::format(format!("class {c} has no reference samples"))),
            }
        }
        if let Some(extra) = references.classes().find(|c| !classes.contains(c)) {
            return Err(Error::format(format!(
                "references for class {extra} without an identity"
            )));
        }
        Ok(IdentityStore {
            dataset_name,
            params,
            binning,
            identities: map,
            references,
            calibration,
        })
    }

    /// Class labels in canonical (ascending) order.
    pub fn classes(&self) -> Vec<u16> {
        let set: BTreeSet<u16> = self.identities.keys().map(|k| k.0).collect();
        set.into_iter().collect()
    }

    pub fn identity(&self, class: u16, channel: Channel) -> Result<&ClassIdentity> {
        self.identities
            .get(&(class, channel))
            .ok_or(Error::UnknownClass(class))
    }

    pub fn identities(&self) -> impl Iterator<Item = &ClassIdentity> {
        self.identities.values()
    }

    pub fn references(&self) -> &ReferenceStore {
        &self.references
    }
}

/// Output of [`build_identity`] for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassBuild {
    pub raw: ClassIdentity,
    pub denoised: ClassIdentity,
    /// Every train sample drawn during the build, ordered by id.
    pub references: Vec<InputSample>,
}

/// Runs all iterations for one class on both channels.
pub fn build_identity<S: FeatureSource + ?Sized>(
    source: &S,
    class: u16,
    pools: &ClassPools,
    params: &IdentityBuildParams,
    binning: &BinningParams,
) -> Result<ClassBuild> {
    params.validate()?;
    binning.validate()?;
    let per_iteration = (0..params.iterations)
        .into_par_iter()
        .map(|i| {
            let (held, reference) = iteration_draw(&pools.test, &pools.train, params, class, i)?;
            let mut ps = [0.0; 2];
            for (slot, ch) in ps.iter_mut().zip(Channel::ALL) {
                *slot = iteration_p(
                    &features_of(source, &held, ch)?,
                    &features_of(source, &reference, ch)?,
                    params.subset_size,
                    binning.epsilon,
                )?;
            }
            let ids: Vec<u32> = reference.iter().map(|s| s.id).collect();
            Ok((ps, ids, reference))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut used: BTreeMap<u32, InputSample> = BTreeMap::new();
    for (_, _, drawn) in &per_iteration {
        for s in drawn {
            if let Some(prev) = used.insert(s.id, (*s).clone()) {
                if prev != **s {
                    return Err(Error::invalid(format!(
                        "train pool reuses sample id {} for different inputs",
                        s.id
                    )));
                }
            }
        }
    }
    let series = |ch: usize| {
        PValueSeries::new(per_iteration.iter().map(|(ps, _, _)| ps[ch]).collect())
    };
    Ok(ClassBuild {
        raw: ClassIdentity::new(class, Channel::Raw, series(0)?, *params, *binning)?,
        denoised: ClassIdentity::new(class, Channel::Denoised, series(1)?, *params, *binning)?,
        references: used.into_values().collect(),
    })
}

/// Builds every class independently; failures name the class.
pub fn build_all<S: FeatureSource + ?Sized>(
    source: &S,
    dataset_name: &str,
    pools: &BTreeMap<u16, ClassPools>,
    params: &IdentityBuildParams,
    binning: &BinningParams,
) -> Result<IdentityStore> {
    if pools.is_empty() {
        return Err(Error::invalid("no classes to build"));
    }
    let builds = pools
        .par_iter()
        .map(|(&class, p)| build_identity(source, class, p, params, binning).map_err(|e| e.in_class(class)))
        .collect::<Result<Vec<_>>>()?;
    let mut identities = Vec::with_capacity(2 * builds.len());
    let mut references = ReferenceStore::new();
    for b in builds {
        references
            .insert(b.raw.class_label, b.references)
            .map_err(|e| e.in_class(b.raw.class_label))?;
        identities.push(b.raw);
        identities.push(b.denoised);
    }
    IdentityStore::new(
        dataset_name.to_string(),
        *params,
        *binning,
        identities,
        references,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{SyntheticWorld, SyntheticWorldConfig};

    fn world() -> SyntheticWorld {
        SyntheticWorld::new(SyntheticWorldConfig {
            class_count: 3,
            feature_dim: 16,
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    fn pools(w: &SyntheticWorld, class: u16, size: usize) -> ClassPools {
        let base = u32::from(class) * 10_000;
        ClassPools {
            test: w.clean_samples(class, size, 0, base).unwrap(),
            train: w.clean_samples(class, size, 1, base + 5_000).unwrap(),
        }
    }

    fn small() -> IdentityBuildParams {
        IdentityBuildParams {
            iterations: 4,
            sample_size: 20,
            subset_size: 5,
            seed: 3,
        }
    }

    #[test]
    fn params_validation() {
        assert!(IdentityBuildParams::default().validate().is_ok());
        let bad = |i, n, k| IdentityBuildParams {
            iterations: i,
            sample_size: n,
            subset_size: k,
            seed: 0,
        };
        assert!(bad(1, 10, 5).validate().is_err());
        assert!(matches!(bad(2, 10, 3).validate(), Err(Error::Partition { .. })));
        assert!(bad(2, 10, 20).validate().is_err());
        assert!(bad(2, 10, 0).validate().is_err());
    }

    #[test]
    fn population_shapes() {
        let v = vec![vec![1.0, 2.0, 3.0]; 6];
        let same = divergence_population(&v, &v, 2, 1e-8, Direction::TestToReference).unwrap();
        assert_eq!(same.points, vec![0.0; 3]);
        let one = divergence_population(&v, &v[..1], 6, 1e-8, Direction::ReferenceToTest).unwrap();
        assert_eq!(one.points.len(), 1);
        assert!(matches!(
            divergence_population(&v, &v, 4, 1e-8, Direction::TestToReference),
            Err(Error::Partition { .. })
        ));
        let short = vec![vec![1.0, 2.0]];
        assert!(matches!(
            divergence_population(&v, &short, 2, 1e-8, Direction::TestToReference),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn iteration_is_deterministic_and_valid() {
        let w = world();
        let p = pools(&w, 1, 40);
        let a = identity_iteration(&w, &p.test, &p.train, &small(), 1e-8, 1, Channel::Raw, 2).unwrap();
        let b = identity_iteration(&w, &p.test, &p.train, &small(), 1e-8, 1, Channel::Raw, 2).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a <= 1.0);
        // identical pools and identical draws: both populations coincide
        let mut same = small();
        same.sample_size = 40;
        let p_same =
            identity_iteration(&w, &p.test, &p.test, &same, 1e-8, 1, Channel::Raw, 0).unwrap();
        assert!(p_same > 0.0 && p_same <= 1.0);
        let err = identity_iteration(&w, &p.test[..10], &p.train, &small(), 1e-8, 1, Channel::Raw, 0);
        assert!(matches!(err, Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn build_shapes_and_determinism() {
        let w = world();
        let mut map = BTreeMap::new();
        for c in 0..2 {
            map.insert(c, pools(&w, c, 30));
        }
        let params = IdentityBuildParams {
            iterations: 2,
            ..small()
        };
        let a = build_all(&w, "toy", &map, &params, &BinningParams::default()).unwrap();
        let b = build_all(&w, "toy", &map, &params, &BinningParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.identities().count(), 4);
        assert!(a.identities().all(|i| i.p_values().len() == 2));
        assert_eq!(a.classes(), vec![0, 1]);
        assert!(!a.references().class_samples(0).unwrap().is_empty());
    }

    #[test]
    fn failures_name_the_class() {
        let w = world();
        let mut map = BTreeMap::new();
        map.insert(0, pools(&w, 0, 30));
        map.insert(2, pools(&w, 2, 10));
        let err = build_all(&w, "toy", &map, &small(), &BinningParams::default()).unwrap_err();
        assert!(matches!(err, Error::Class { label: 2, .. }), "{err}");
    }

    #[test]
    fn store_rejects_missing_channel() {
        let w = world();
        let b = build_identity(&w, 0, &pools(&w, 0, 30), &small(), &BinningParams::default()).unwrap();
        let mut refs = ReferenceStore::new();
        refs.insert(0, b.references.clone()).unwrap();
        let err = IdentityStore::new(
            "x".into(),
            small(),
            BinningParams::default(),
            vec![b.raw.clone()],
            refs.clone(),
            None,
        );
        assert!(matches!(err, Err(Error::Format(_))));
        let ok = IdentityStore::new(
            "x".into(),
            small(),
            BinningParams::default(),
            vec![b.raw, b.denoised],
            refs,
            None,
        );
        assert!(ok.is_ok());
    }
}
