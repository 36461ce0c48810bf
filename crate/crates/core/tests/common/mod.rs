//! Helpers shared by the integration tests: independent oracles and seeded
//! synthetic scenarios.
#![allow(dead_code)]

pub mod oracles;

use std::collections::BTreeMap;

use dualsig::{ClassPools, InputSample, SyntheticWorld};
use rand::Rng;

/// Id base for draw stream `stream`; keeps every scenario set disjoint.
pub fn id_base(stream: u64) -> u32 {
    stream as u32 * 100_000
}

pub fn clean_set(world: &SyntheticWorld, per_class: usize, stream: u64) -> Vec<InputSample> {
    let classes = world.config().class_count;
    (0..classes)
        .flat_map(|c| {
            let first = id_base(stream) + u32::from(c) * per_class as u32;
            world.clean_samples(c, per_class, stream, first).unwrap()
        })
        .collect()
}

pub fn labelled_clean(world: &SyntheticWorld, per_class: usize, stream: u64) -> Vec<(u16, InputSample)> {
    let classes = world.config().class_count;
    (0..classes)
        .flat_map(|c| {
            let first = id_base(stream) + u32::from(c) * per_class as u32;
            world
                .clean_samples(c, per_class, stream, first)
                .unwrap()
                .into_iter()
                .map(move |s| (c, s))
        })
        .collect()
}

pub fn pools(world: &SyntheticWorld, per_class: usize, test_stream: u64, train_stream: u64) -> BTreeMap<u16, ClassPools> {
    let classes = world.config().class_count;
    (0..classes)
        .map(|c| {
            let at = |stream| id_base(stream) + u32::from(c) * per_class as u32;
            let pools = ClassPools {
                test: world.clean_samples(c, per_class, test_stream, at(test_stream)).unwrap(),
                train: world.clean_samples(c, per_class, train_stream, at(train_stream)).unwrap(),
            };
            (c, pools)
        })
        .collect()
}

/// Clean bases of the attack set with a seeded target class different from the source.
pub fn attack_bases(world: &SyntheticWorld, per_class: usize, stream: u64, seed: u64) -> Vec<(InputSample, u16, u16)> {
    let classes = world.config().class_count;
    let mut rng = dualsig::seed::rng_for(seed, &[stream]);
    labelled_clean(world, per_class, stream)
        .into_iter()
        .map(|(c, s)| {
            let t = (c + rng.gen_range(1..classes)) % classes;
            (s, c, t)
        })
        .collect()
}

pub fn shifted(world: &SyntheticWorld, bases: &[(InputSample, u16, u16)], delta: f64) -> Vec<InputSample> {
    bases
        .iter()
        .map(|(s, c, t)| world.shift(s, *c, *t, delta).unwrap())
        .collect()
}

/// Random but valid identity stores for round-trip properties.
pub fn store_strategy() -> impl proptest::strategy::Strategy<Value = dualsig::IdentityStore> {
    use dualsig::{BinningParams, Calibration, Channel, ClassIdentity, IdentityBuildParams, IdentityStore, PValueSeries, ReferenceStore};
    use proptest::prelude::*;

    let finite = prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        -1e3f64..1e3,
    ];
    let p_value = prop_oneof![Just(1.0), Just(1e-300), 1e-300f64..=1.0];
    (2usize..6, 1usize..4, 1usize..4, any::<u64>(), 1e-300f64..1.0, 2usize..30, 1usize..5)
        .prop_flat_map(move |(iterations, k, pieces, seed, epsilon, bins, dim)| {
            let params = IdentityBuildParams { iterations, sample_size: k * pieces, subset_size: k, seed };
            let binning = BinningParams { bins, epsilon };
            let class = (
                prop::collection::vec(p_value.clone(), iterations),
                prop::collection::vec(p_value.clone(), iterations),
                prop::collection::vec(prop::collection::vec(finite.clone(), dim), 1..4),
            );
            (
                Just((params, binning)),
                prop::collection::btree_map(any::<u16>(), class, 1..4),
                prop::option::of((0.0f64..1e6, 0.0f64..2.0)),
                "[a-z0-9_ -]{0,12}",
            )
        })
        .prop_map(|((params, binning), classes, calibration, name)| {
            let mut identities = Vec::new();
            let mut refs = ReferenceStore::new();
            for (n, (class, (raw, den, samples))) in classes.into_iter().enumerate() {
                for (ch, p) in [(Channel::Raw, raw), (Channel::Denoised, den)] {
                    let series = PValueSeries::new(p).unwrap();
                    identities.push(ClassIdentity::new(class, ch, series, params, binning).unwrap());
                }
                let inputs = samples
                    .into_iter()
                    .enumerate()
                    .map(|(j, v)| InputSample::new((n * 10 + j) as u32, v).unwrap());
                refs.insert(class, inputs).unwrap();
            }
            let calibration = calibration.map(|(threshold, margin)| Calibration { threshold, margin });
            IdentityStore::new(name, params, binning, identities, refs, calibration).unwrap()
        })
}
