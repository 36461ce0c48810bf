//! Loading dumps and assembling the feature source the engine replays from.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use dualsig::io::dump::{self, FeatureDump, FeatureRecord};
use dualsig::{Channel, DumpSource, InputSample};

use crate::failure::Failure;

/// Reads a dump and checks that every sample carries both channels.
pub fn load_dump(path: &Path) -> Result<FeatureDump, Failure> {
    let d = dump::read_dump(path).map_err(|e| Failure::from(e).context(path.display()))?;
    let mut seen: HashMap<u32, [bool; 2]> = HashMap::new();
    for r in &d.records {
        seen.entry(r.sample_id).or_default()[r.channel.code() as usize] = true;
    }
    let mut ids: Vec<_> = seen.into_iter().collect();
    ids.sort_by_key(|(id, _)| *id);
    for (id, present) in ids {
        for ch in Channel::ALL {
            if !present[ch.code() as usize] {
                return Err(Failure::usage(format!(
                    "{}: sample {id} has no {ch} channel data",
                    path.display()
                )));
            }
        }
    }
    Ok(d)
}

/// Labelled inputs in record order, taken from the raw channel.
pub fn labelled(d: &FeatureDump) -> Result<Vec<(u16, InputSample)>, Failure> {
    d.records
        .iter()
        .filter(|r| r.channel == Channel::Raw)
        .map(|r| {
            let values = r.features.iter().map(|&f| f64::from(f)).collect();
            Ok((r.class_label, InputSample::new(r.sample_id, values)?))
        })
        .collect::<dualsig::Result<_>>()
        .map_err(Failure::from)
}

/// One query set after id remapping.
pub struct QuerySet {
    pub samples: Vec<InputSample>,
    /// Original sample id for each internal id.
    pub original: HashMap<u32, u32>,
}

/// Combines reference dumps (ids kept, they must match the identity file)
/// with query dumps whose ids are renumbered so that sets sharing ids, such
/// as a clean dump and its attacked copy, can be replayed side by side.
pub struct Workspace {
    dim: Option<u32>,
    records: Vec<FeatureRecord>,
    taken: HashSet<u32>,
    next: u32,
}

impl Workspace {
    pub fn new() -> Self {
        Workspace {
            dim: None,
            records: Vec::new(),
            taken: HashSet::new(),
            next: 0,
        }
    }

    fn check_dim(&mut self, d: &FeatureDump, path: &Path) -> Result<(), Failure> {
        match self.dim {
            Some(dim) if dim != d.feature_dim => Err(Failure::usage(format!(
                "{}: feature dimension {} differs from {dim}",
                path.display(),
                d.feature_dim
            ))),
            _ => {
                self.dim = Some(d.feature_dim);
                Ok(())
            }
        }
    }

    pub fn add_references(&mut self, d: FeatureDump, path: &Path) -> Result<(), Failure> {
        self.check_dim(&d, path)?;
        for r in d.records {
            self.taken.insert(r.sample_id);
            self.records.push(r);
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> Result<u32, Failure> {
        while self.taken.contains(&self.next) {
            self.next = self.next.checked_add(1).ok_or_else(|| Failure::usage("too many samples"))?;
        }
        let id = self.next;
        self.taken.insert(id);
        Ok(id)
    }

    pub fn add_query(&mut self, d: FeatureDump, path: &Path) -> Result<QuerySet, Failure> {
        self.check_dim(&d, path)?;
        let mut internal: BTreeMap<u32, u32> = BTreeMap::new();
        let mut samples = Vec::new();
        for (_, s) in labelled(&d)? {
            if internal.contains_key(&s.id) {
                return Err(Failure::usage(format!("{}: duplicate sample {}", path.display(), s.id)));
            }
            let id = self.fresh_id()?;
            internal.insert(s.id, id);
            samples.push(InputSample::new(id, s.values().to_vec())?);
        }
        for mut r in d.records {
            r.sample_id = internal[&r.sample_id];
            self.records.push(r);
        }
        Ok(QuerySet {
            samples,
            original: internal.into_iter().map(|(orig, id)| (id, orig)).collect(),
        })
    }

    pub fn source(&self) -> Result<DumpSource, Failure> {
        let dim = self.dim.ok_or_else(|| Failure::usage("no feature data given"))?;
        Ok(DumpSource::new(dim as usize, &self.records)?)
    }
}
