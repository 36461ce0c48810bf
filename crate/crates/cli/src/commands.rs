//! Subcommand bodies.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use dualsig::eval::{ScoreSummary, CLEAN_CONDITION};
use dualsig::io::{dump, identity_file, verdicts};
use dualsig::seed::derive_seed;
use dualsig::{
    build_all, calibrate, evaluate, report_table, Calibration, Channel, ClassPools, Detector,
    IdentityStore, InputSample, SampleVerdict, SyntheticWorld, SyntheticWorldConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ParamFlags, Params};
use crate::data::{labelled, load_dump, Workspace};
use crate::failure::Failure;

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    /// Directory receiving clean.fsig, adversarial.fsig and manifest.json
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: u16,
    /// Samples per class
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Distance of every class centroid from the origin
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    /// Standard deviation of clean samples around their centroid
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Shrink factor of the denoised channel
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// Fraction of the way each attacked sample moves toward its target class
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// World seed: fixes centroids and attack targets
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw stream; distinct streams give disjoint samples and ids
    #[arg(long, default_value_t = 1)]
    pub stream: u64,
}

#[derive(Serialize)]
struct ManifestEntry {
    id: u32,
    class: u16,
    target: u16,
}

#[derive(Serialize)]
struct Manifest<'a> {
    world: &'a SyntheticWorldConfig,
    delta: f64,
    stream: u64,
    samples: Vec<ManifestEntry>,
}

fn channel_records(world: &SyntheticWorld, class: u16, s: &InputSample) -> Result<[dump::FeatureRecord; 2], Failure> {
    let (raw, den) = world.channels(s)?;
    let f32s = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect();
    Ok([
        dump::FeatureRecord::new(class, Channel::Raw, s.id, f32s(raw)),
        dump::FeatureRecord::new(class, Channel::Denoised, s.id, f32s(den)),
    ])
}

pub fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    if args.count == 0 {
        return Err(Failure::usage("--count must be positive"));
    }
    let config = SyntheticWorldConfig {
        class_count: args.classes,
        feature_dim: args.dim,
        class_separation: args.separation,
        clean_noise_sigma: args.sigma,
        perturbation_strength: args.delta,
        denoise_shrink: args.alpha,
        seed: args.seed,
    };
    let world = SyntheticWorld::new(config)?;
    let dim = u32::try_from(args.dim).map_err(|_| Failure::usage("--dim too large"))?;
    let per_stream = u64::from(args.classes) * args.count as u64;
    let id_range_end = (args.stream + 1)
        .checked_mul(per_stream)
        .filter(|end| *end <= u64::from(u32::MAX) + 1)
        .ok_or_else(|| Failure::usage("--stream and --count exceed the 32-bit id space"))?;
    let first_id = (id_range_end - per_stream) as u32;

    let (mut clean, mut adversarial, mut entries) = (Vec::new(), Vec::new(), Vec::new());
    for class in 0..args.classes {
        let first = first_id + (u32::from(class) * args.count as u32);
        for s in world.clean_samples(class, args.count, args.stream, first)? {
            let hop = derive_seed(args.seed, &[args.stream, u64::from(s.id)]) % u64::from(args.classes - 1);
            let target = ((u64::from(class) + 1 + hop) % u64::from(args.classes)) as u16;
            let attacked = world.shift(&s, class, target, args.delta)?;
            clean.extend(channel_records(&world, class, &s)?);
            adversarial.extend(channel_records(&world, class, &attacked)?);
            entries.push(ManifestEntry { id: s.id, class, target });
        }
    }
    fs::create_dir_all(&args.out_dir)?;
    dump::write_dump(args.out_dir.join("clean.fsig"), dim, &clean)?;
    dump::write_dump(args.out_dir.join("adversarial.fsig"), dim, &adversarial)?;
    let manifest = Manifest {
        world: world.config(),
        delta: args.delta,
        stream: args.stream,
        samples: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::internal(e.to_string()))?;
    fs::write(args.out_dir.join("manifest.json"), text + "\n")?;
    println!(
        "wrote {} samples ({} records per dump) to {}",
        manifest.samples.len(),
        clean.len(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct BuildArgs {
    /// Dump of the pool the reference sets are drawn from
    #[arg(long)]
    pub train: PathBuf,
    /// Dump of the pool the held-out sets are drawn from
    #[arg(long)]
    pub test: PathBuf,
    /// Identity file to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "dataset")]
    pub dataset: String,
    #[command(flatten)]
    #[serde(skip)]
    pub params: ParamFlags,
}

pub fn build_identity(args: &BuildArgs, params: &Params) -> Result<(), Failure> {
    let start = Instant::now();
    let (train, test) = (load_dump(&args.train)?, load_dump(&args.test)?);
    if train.feature_dim != test.feature_dim {
        return Err(Failure::usage(format!(
            "train dimension {} differs from test dimension {}",
            train.feature_dim, test.feature_dim
        )));
    }
    let mut pools: BTreeMap<u16, ClassPools> = BTreeMap::new();
    for (class, s) in labelled(&train)? {
        pools.entry(class).or_default().train.push(s);
    }
    for (class, s) in labelled(&test)? {
        pools.entry(class).or_default().test.push(s);
    }
    for (class, p) in &pools {
        let missing = [("train", p.train.is_empty()), ("test", p.test.is_empty())];
        if let Some((which, _)) = missing.iter().find(|m| m.1) {
            return Err(Failure::usage(format!("class {class} has no samples in the {which} dump")));
        }
    }
    let mut records = train.records;
    records.extend(test.records);
    let source = dualsig::DumpSource::new(train.feature_dim as usize, &records)?;
    let store = build_all(&source, &args.dataset, &pools, &params.build(), &params.binning())?;
    identity_file::write_identity(&args.out, &store)?;
    println!(
        "built identities for {} classes, {} iterations each, in {:.2}s",
        store.classes().len(),
        params.iterations,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn read_store(path: &Path) -> Result<IdentityStore, Failure> {
    identity_file::read_identity(path).map_err(|e| Failure::from(e).context(path.display()))
}

fn threshold_of(store: &IdentityStore, path: &Path) -> Result<f64, Failure> {
    store
        .calibration
        .map(|c| c.threshold)
        .ok_or_else(|| Failure::usage(format!("{}: no threshold present, run calibrate first", path.display())))
}

fn fingerprints(samples: &[InputSample]) -> HashSet<Vec<u64>> {
    samples
        .iter()
        .map(|s| s.values().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    /// Identity file; rewritten in place with the threshold
    #[arg(long)]
    pub identity: PathBuf,
    /// Dump the identity was built from (reference features)
    #[arg(long)]
    pub train: PathBuf,
    /// Clean calibration samples
    #[arg(long)]
    pub clean: PathBuf,
    /// Per-sample score log (JSON Lines)
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Evaluation dump to check for overlap with the calibration samples
    #[arg(long)]
    pub eval_dump: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub params: ParamFlags,
}

pub fn calibrate_cmd(args: &CalibrateArgs, params: &Params) -> Result<(), Failure> {
    let mut store = read_store(&args.identity)?;
    let mut ws = Workspace::new();
    ws.add_references(load_dump(&args.train)?, &args.train)?;
    let clean = ws.add_query(load_dump(&args.clean)?, &args.clean)?;
    let source = ws.source()?;
    let detector = Detector::new(&source, &store, params.detection())?;
    let assessments = clean
        .samples
        .par_iter()
        .map(|s| detector.assess(s))
        .collect::<dualsig::Result<Vec<_>>>()?;
    let scores: Vec<f64> = assessments.iter().map(|a| a.p_a).collect();
    let result = calibrate(&scores, params.margin)?;
    let summary = ScoreSummary::of(&scores)?;

    if let Some(log) = &args.log {
        let entries: Vec<SampleVerdict> = clean
            .samples
            .iter()
            .zip(assessments)
            .map(|(s, a)| SampleVerdict {
                condition: CLEAN_CONDITION.to_string(),
                sample_id: clean.original[&s.id],
                verdict: a.verdict(result.threshold),
            })
            .collect();
        verdicts::write_verdicts(log, &entries)?;
    }
    if let Some(eval) = &args.eval_dump {
        let eval_samples: Vec<InputSample> = labelled(&load_dump(eval)?)?.into_iter().map(|(_, s)| s).collect();
        let calib = fingerprints(&clean.samples);
        let shared = fingerprints(&eval_samples).intersection(&calib).count();
        println!("overlap with evaluation set: {}", if shared > 0 { "yes" } else { "no" });
        if shared > 0 {
            eprintln!("warning: {shared} calibration samples also appear in {}", eval.display());
        }
    }

    store.calibration = Some(Calibration {
        threshold: result.threshold,
        margin: result.margin,
    });
    let tmp = args.identity.with_extension("tmp");
    identity_file::write_identity(&tmp, &store)?;
    fs::rename(&tmp, &args.identity)?;
    println!(
        "calibrated on {} clean samples: min {} median {} mean {} max {}",
        scores.len(),
        summary.min,
        summary.median,
        summary.mean,
        summary.max
    );
    println!("threshold {} (margin {})", result.threshold, result.margin);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct DetectArgs {
    #[arg(long)]
    pub identity: PathBuf,
    /// Dump the identity was built from (reference features)
    #[arg(long)]
    pub train: PathBuf,
    /// Dump holding the query sample
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub sample_id: u32,
    /// Condition label written into the verdict record
    #[arg(long, default_value = "query")]
    pub label: String,
    #[command(flatten)]
    #[serde(skip)]
    pub params: ParamFlags,
}

pub fn detect(args: &DetectArgs, params: &Params) -> Result<(), Failure> {
    let store = read_store(&args.identity)?;
    let threshold = threshold_of(&store, &args.identity)?;
    let mut ws = Workspace::new();
    ws.add_references(load_dump(&args.train)?, &args.train)?;
    let query = ws.add_query(load_dump(&args.dump)?, &args.dump)?;
    let sample = query
        .samples
        .iter()
        .find(|s| query.original[&s.id] == args.sample_id)
        .ok_or_else(|| Failure::usage(format!("sample {} not in {}", args.sample_id, args.dump.display())))?;
    let source = ws.source()?;
    let detector = Detector::new(&source, &store, params.detection())?;
    let verdict = SampleVerdict {
        condition: args.label.clone(),
        sample_id: args.sample_id,
        verdict: detector.classify(sample, threshold)?,
    };
    let line = serde_json::to_string(&verdict).map_err(|e| Failure::internal(e.to_string()))?;
    println!("{line}");
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub identity: PathBuf,
    /// Dump the identity was built from (reference features)
    #[arg(long)]
    pub train: PathBuf,
    /// Held-out clean samples
    #[arg(long)]
    pub clean: PathBuf,
    /// Adversarial condition as label=path; repeatable
    #[arg(long = "condition", value_name = "LABEL=PATH")]
    pub conditions: Vec<String>,
    /// Calibration dump, used only to flag overlap with the clean set
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Report output (JSON)
    #[arg(long)]
    pub report: PathBuf,
    /// Per-sample verdict log output (JSON Lines)
    #[arg(long)]
    pub log: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub params: ParamFlags,
}

pub fn evaluate_cmd(args: &EvaluateArgs, params: &Params) -> Result<(), Failure> {
    if args.conditions.is_empty() {
        return Err(Failure::usage("at least one --condition LABEL=PATH is required"));
    }
    let mut labelled_paths: BTreeMap<String, PathBuf> = BTreeMap::new();
    for c in &args.conditions {
        let (label, path) = c
            .split_once('=')
            .filter(|(l, p)| !l.is_empty() && !p.is_empty())
            .ok_or_else(|| Failure::usage(format!("condition {c:?} is not LABEL=PATH")))?;
        if labelled_paths.insert(label.to_string(), PathBuf::from(path)).is_some() {
            return Err(Failure::usage(format!("condition {label:?} given twice")));
        }
    }
    let store = read_store(&args.identity)?;
    let threshold = threshold_of(&store, &args.identity)?;

    let mut ws = Workspace::new();
    ws.add_references(load_dump(&args.train)?, &args.train)?;
    let clean = ws.add_query(load_dump(&args.clean)?, &args.clean)?;
    let mut original = clean.original;
    let mut conditions = BTreeMap::new();
    for (label, path) in &labelled_paths {
        let set = ws.add_query(load_dump(path)?, path)?;
        original.extend(set.original);
        conditions.insert(label.clone(), set.samples);
    }
    let calibration: Vec<InputSample> = match &args.calibration {
        Some(path) => labelled(&load_dump(path)?)?.into_iter().map(|(_, s)| s).collect(),
        None => Vec::new(),
    };
    let source = ws.source()?;
    let detector = Detector::new(&source, &store, params.detection())?;
    let mut evaluation = evaluate(&detector, threshold, &clean.samples, &conditions, &calibration)?;
    for v in &mut evaluation.verdicts {
        v.sample_id = original[&v.sample_id];
    }
    verdicts::write_verdicts(&args.log, &evaluation.verdicts)?;
    verdicts::write_report(&args.report, &evaluation.report)?;
    print!("{}", report_table(&evaluation.report));
    Ok(())
}
