//! One module per subcommand.

mod attack;
mod boundary;
mod calibrate;
mod gridviz;
mod synth;
mod train;
mod trajectory;

use anyhow::Result;

use crate::args::Command;
use crate::{usage, Report};

pub(crate) fn dispatch(command: &mut Command, seed: u64) -> Result<Report> {
    match command {
        Command::Synth(a) => synth::run(a, seed),
        Command::Train(a) => train::run(a, seed),
        Command::Calibrate(a) => calibrate::run(a, seed),
        Command::Boundary(a) => boundary::run(a, seed),
        Command::Trajectory(a) => trajectory::run(a, seed),
        Command::Attack(a) => attack::run(a, seed),
        Command::Gridviz(a) => gridviz::run(a, seed),
        Command::Rerun(_) => Err(usage("a manifest cannot record another rerun")),
    }
}
