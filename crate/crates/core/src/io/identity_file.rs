//! Identity store as a TOML document. Every float is a hex literal string so
//! a write/read cycle reproduces the store bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hexfloat;
use crate::error::{Error, Result};
use crate::features::{Channel, InputSample};
use crate::identity::{
    BinningParams, Calibration, ClassIdentity, IdentityBuildParams, IdentityStore, ReferenceStore,
};
use crate::stat::PValueSeries;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u64,
    dataset: String,
    build: BuildSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    calibration: Option<CalibrationSection>,
    identity: Vec<IdentitySection>,
    references: Vec<ReferenceSection>,
    sample: Vec<SampleSection>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildSection {
    iterations: u64,
    sample_size: u64,
    subset_size: u64,
    /// Decimal string: TOML integers stop at i64.
    seed: String,
    epsilon: String,
    bins: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationSection {
    threshold: String,
    margin: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentitySection {
    class: u16,
    channel: Channel,
    p_values: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceSection {
    class: u16,
    ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleSection {
    id: u32,
    values: Vec<String>,
}

fn hex_all(values: &[f64]) -> Vec<String> {
    values.iter().map(|&v| hexfloat::format(v)).collect()
}

fn parse_all(values: &[String]) -> Result<Vec<f64>> {
    values.iter().map(|v| hexfloat::parse(v)).collect()
}

fn to_usize(v: u64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::format(format!("{what} out of range")))
}

pub fn to_string(store: &IdentityStore) -> Result<String> {
    let mut sample = Vec::new();
    let mut references = Vec::new();
    let refs = store.references();
    for class in refs.classes() {
        let entry = refs.class_samples(class)?;
        references.push(ReferenceSection {
            class,
            ids: entry.iter().map(|s| s.id).collect(),
        });
        sample.extend(entry.iter().map(|s| (s.id, hex_all(s.values()))));
    }
    sample.sort_by_key(|s| s.0);
    sample.dedup_by_key(|s| s.0);
    let doc = Document {
        format_version: FORMAT_VERSION,
        dataset: store.dataset_name.clone(),
        build: BuildSection {
            iterations: store.params.iterations as u64,
            sample_size: store.params.sample_size as u64,
            subset_size: store.params.subset_size as u64,
            seed: store.params.seed.to_string(),
            epsilon: hexfloat::format(store.binning.epsilon),
            bins: store.binning.bins as u64,
        },
        calibration: store.calibration.map(|c| CalibrationSection {
            threshold: hexfloat::format(c.threshold),
            margin: hexfloat::format(c.margin),
        }),
        identity: store
            .identities()
            .map(|i| IdentitySection {
                class: i.class_label,
                channel: i.channel,
                p_values: hex_all(i.p_values().as_slice()),
            })
            .collect(),
        references,
        sample: sample
            .into_iter()
            .map(|(id, values)| SampleSection { id, values })
            .collect(),
    };
    toml::to_string(&doc).map_err(|e| Error::format(e.to_string()))
}

pub fn from_str(text: &str) -> Result<IdentityStore> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format(e.to_string()))?;
    let version = table
        .get("format_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::format("missing format_version"))?;
    if version != FORMAT_VERSION as i64 {
        return Err(Error::Version {
            found: version as u64,
            supported: FORMAT_VERSION,
        });
    }
    let doc: Document = table.try_into().map_err(|e: toml::de::Error| Error::format(e.to_string()))?;
    let b = &doc.build;
    let params = IdentityBuildParams {
        iterations: to_usize(b.iterations, "iterations")?,
        sample_size: to_usize(b.sample_size, "sample_size")?,
        subset_size: to_usize(b.subset_size, "subset_size")?,
        seed: b
            .seed
            .parse()
            .map_err(|_| Error::format(format!("invalid seed {:?}", b.seed)))?,
    };
    let binning = BinningParams {
        bins: to_usize(b.bins, "bins")?,
        epsilon: hexfloat::parse(&b.epsilon)?,
    };
    params.validate().map_err(|e| Error::format(e.to_string()))?;
    binning.validate().map_err(|e| Error::format(e.to_string()))?;
    let identities = doc
        .identity
        .iter()
        .map(|s| {
            let p = PValueSeries::new(parse_all(&s.p_values)?)
                .map_err(|e| Error::format(format!("class {}: {e}", s.class)))?;
            ClassIdentity::new(s.class, s.channel, p, params, binning)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut samples = std::collections::BTreeMap::new();
    for s in &doc.sample {
        let input = InputSample::new(s.id, parse_all(&s.values)?)
            .map_err(|e| Error::format(e.to_string()))?;
        if samples.insert(s.id, input).is_some() {
            return Err(Error::format(format!("duplicate sample {}", s.id)));
        }
    }
    let mut references = ReferenceStore::new();
    for r in &doc.references {
        let entry = r
            .ids
            .iter()
            .map(|id| {
                samples
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::format(format!("reference to unknown sample {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        references.insert(r.class, entry)?;
    }
    let calibration = match &doc.calibration {
        Some(c) => Some(Calibration {
            threshold: hexfloat::parse(&c.threshold)?,
            margin: hexfloat::parse(&c.margin)?,
        }),
        None => None,
    };
    IdentityStore::new(
        doc.dataset,
        params,
        binning,
        identities,
        references,
        calibration,
    )
}

pub fn write_identity(path: impl AsRef<Path>, store: &IdentityStore) -> Result<()> {
    fs::write(path, to_string(store)?)?;
    Ok(())
}

pub fn read_identity(path: impl AsRef<Path>) -> Result<IdentityStore> {
    read_identity_with_limit(path, super::DEFAULT_MAX_BYTES)
}

pub fn read_identity_with_limit(path: impl AsRef<Path>, max_bytes: u64) -> Result<IdentityStore> {
    let len = fs::metadata(path.as_ref())?.len();
    if len > max_bytes {
        return Err(Error::format(format!(
            "identity file of {len} bytes exceeds the {max_bytes}-byte limit"
        )));
    }
    from_str(&fs::read_to_string(path)?)
}
