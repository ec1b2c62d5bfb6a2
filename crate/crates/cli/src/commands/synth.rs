//! Procedural stand-in data written in the standard on-disk layouts.

use anyhow::Result;
use curvprobe::data::{synthetic, write_cifar, write_idx, DataFormat};

use crate::args::SynthArgs;
use crate::output::Artifacts;
use crate::{usage, Report};

const CIFAR_BATCHES: usize = 5;

pub(crate) fn run(a: &mut SynthArgs, seed: u64) -> Result<Report> {
    if a.train == 0 || a.test == 0 || a.classes < 2 {
        return Err(usage("synth needs --train and --test >= 1 and at least two --classes"));
    }
    let shape = match a.format {
        DataFormat::Cifar => [3, 32, 32],
        DataFormat::Idx => [1, 28, 28],
    };
    // One draw shares the class patterns between the splits.
    let all = synthetic(shape, a.classes, a.train + a.test, seed)?;
    let train = all.select(&(0..a.train).collect::<Vec<_>>());
    let test = all.select(&(a.train..a.train + a.test).collect::<Vec<_>>());
    let mut out = Artifacts::new(&a.out)?;
    match a.format {
        DataFormat::Cifar => {
            let per = a.train.div_ceil(CIFAR_BATCHES);
            for b in 0..CIFAR_BATCHES {
                let ids: Vec<usize> = (b * per..((b + 1) * per).min(a.train)).collect();
                write_cifar(&train.select(&ids), &out.path(&format!("data_batch_{}.bin", b + 1)))?;
            }
            write_cifar(&test, &out.path("test_batch.bin"))?;
        }
        DataFormat::Idx => {
            for (prefix, ds) in [("train", &train), ("t10k", &test)] {
                let images = out.path(&format!("{prefix}-images-idx3-ubyte"));
                let labels = out.path(&format!("{prefix}-labels-idx1-ubyte"));
                write_idx(ds, &images, &labels)?;
            }
        }
    }
    eprintln!("wrote {} train and {} test samples to {}", a.train, a.test, a.out.display());
    Ok(Report {
        inputs: Vec::new(),
        artifacts: out.written,
    })
}
