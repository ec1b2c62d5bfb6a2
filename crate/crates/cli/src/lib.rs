//! The `curvprobe` command line: each subcommand loads a checkpoint and a
//! dataset, runs one analysis, and writes CSV tables, SVG figures and a
//! `manifest.json` from which the run can be repeated.

pub mod args;
mod commands;
pub mod output;
pub mod plot;

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use curvprobe::checkpoint::load_checkpoint;
use curvprobe::data::{load_dataset, subset_indices, Dataset};
use curvprobe::rng::derive_seed;
use curvprobe::zoo::ZooModel;
use curvprobe::Classifier;

pub use args::{Cli, Command};
pub use output::{RunManifest, MANIFEST};

/// Bad flag values discovered after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for usage errors (including invalid configuration values), 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let is_usage = e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<curvprobe::Error>(), Some(curvprobe::Error::Config(_)))
    });
    if is_usage {
        2
    } else {
        1
    }
}

/// What a subcommand produced.
pub(crate) struct Report {
    pub inputs: Vec<PathBuf>,
    pub artifacts: Vec<String>,
}

/// Runs the parsed command line and returns the manifest of the run.
pub fn run(cli: Cli) -> Result<RunManifest> {
    match cli.command {
        Command::Rerun(r) => {
            let m = RunManifest::read(&r.manifest)?;
            let mut command = m.command;
            if let Some(out) = r.out {
                if let Some(o) = command.out_mut() {
                    *o = out;
                }
            }
            execute(command, m.seed, cli.jobs)
        }
        command => execute(command, cli.seed, cli.jobs),
    }
}

/// Runs one subcommand on a pool of `jobs` threads and writes its manifest.
pub fn execute(mut command: Command, seed: u64, jobs: usize) -> Result<RunManifest> {
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    command.absolutize()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let started = Instant::now();
    let report = pool.install(|| commands::dispatch(&mut command, seed))?;
    let out = command.out_mut().cloned().unwrap_or_default();
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        command,
        seed,
        jobs,
        inputs: report.inputs,
        out,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        artifacts: report.artifacts,
    };
    manifest.write()?;
    Ok(manifest)
}

pub(crate) fn load_model(path: &Path) -> Result<ZooModel> {
    let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok(ck.model)
}

/// Loads the dataset and picks the analyzed sample ids (a seeded subset when requested).
pub(crate) fn load_data(data: &mut args::DataArgs, default_split: &str, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    let split = data.split.get_or_insert_with(|| default_split.to_string()).clone();
    let ds = load_dataset(&data.data, data.format, &split).with_context(|| format!("loading dataset {}", data.data.display()))?;
    let ids = if data.samples == 0 {
        (0..ds.len()).collect()
    } else {
        let mut ids = subset_indices(ds.len(), data.samples, derive_seed(seed, &[0x5eb5e7]))?;
        ids.sort_unstable();
        ids
    };
    Ok((ds, ids))
}

pub(crate) fn check_shape(model: &ZooModel, ds: &Dataset) -> Result<()> {
    if model.input_shape() != ds.shape() {
        return Err(usage(format!(
            "model expects {:?} inputs but the dataset holds {:?} images",
            model.input_shape(),
            ds.shape()
        )));
    }
    if ds.labels().iter().any(|&l| l >= model.num_classes()) {
        return Err(usage(format!("dataset labels exceed the model's {} classes", model.num_classes())));
    }
    Ok(())
}

/// `(sample_id, image, label)` triples for the analysis entry points.
pub(crate) fn samples<'a>(ds: &'a Dataset, ids: &[usize]) -> Vec<(usize, &'a [f32], usize)> {
    ids.iter().map(|&i| (i, ds.image(i), ds.label(i))).collect()
}
