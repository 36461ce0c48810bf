//! Pipeline parameters: built-in defaults, then an optional TOML file, then
//! command-line flags.

use std::path::Path;

use clap::Args;
use dualsig::{BinningParams, DetectionParams, IdentityBuildParams};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DUALSIG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub iterations: usize,
    pub sample_size: usize,
    pub subset_size: usize,
    pub bins: usize,
    pub epsilon: f64,
    pub instances: usize,
    pub reference_count: usize,
    pub noise_sigma: f64,
    pub margin: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl Default for Params {
    fn default() -> Self {
        let build = IdentityBuildParams::default();
        let binning = BinningParams::default();
        let detect = DetectionParams::default();
        Params {
            iterations: build.iterations,
            sample_size: build.sample_size,
            subset_size: build.subset_size,
            bins: binning.bins,
            epsilon: binning.epsilon,
            instances: detect.instances,
            reference_count: detect.reference_count,
            noise_sigma: detect.noise_sigma,
            margin: 0.1,
            seed: 0,
            threads: None,
        }
    }
}

/// Parameter overrides accepted by every pipeline subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct ParamFlags {
    /// Identity iterations per class
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Inputs drawn per identity iteration
    #[arg(long, short = 'N')]
    pub sample_size: Option<usize>,
    /// Subset size used to average pieces
    #[arg(long, short = 'k')]
    pub subset_size: Option<usize>,
    /// Histogram bins for p-value distributions
    #[arg(long)]
    pub bins: Option<usize>,
    /// Smoothing added before renormalizing distributions
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Noisy instances generated per query
    #[arg(long)]
    pub instances: Option<usize>,
    /// Class references used per query
    #[arg(long, short = 'm')]
    pub reference_count: Option<usize>,
    /// Standard deviation of the augmentation noise
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Relative margin added to the largest clean score
    #[arg(long)]
    pub margin: Option<f64>,
    /// Seed for identity draws and query augmentation
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Params {
    pub fn resolve(file: Option<&Path>, flags: &ParamFlags, threads: Option<usize>) -> Result<Self, Failure> {
        let mut p = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?
            }
            None => Params::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = flags.$field { p.$field = v; })*
            };
        }
        apply!(iterations, sample_size, subset_size, bins, epsilon, instances, reference_count, noise_sigma, margin, seed);
        if threads.is_some() {
            p.threads = threads;
        }
        if p.threads == Some(0) {
            return Err(Failure::usage("--threads must be positive"));
        }
        Ok(p)
    }

    pub fn build(&self) -> IdentityBuildParams {
        IdentityBuildParams {
            iterations: self.iterations,
            sample_size: self.sample_size,
            subset_size: self.subset_size,
            seed: self.seed,
        }
    }

    pub fn binning(&self) -> BinningParams {
        BinningParams {
            bins: self.bins,
            epsilon: self.epsilon,
        }
    }

    pub fn detection(&self) -> DetectionParams {
        DetectionParams {
            instances: self.instances,
            subset_size: self.subset_size,
            reference_count: self.reference_count,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}
