//! Representation-space geometry toolkit for small image classifiers.
//!
//! The crate trains desk-scale CNN and transformer classifiers and measures
//! how their penultimate features `z` move when the input travels along a
//! straight line: calibration, linear travel to the decision boundary,
//! per-step direction changes of the feature trajectory, sign-gradient
//! attacks with a random-jump variant, and 2D grid projections.
//!
//! Everything analysis-facing goes through [`Classifier`], so the
//! [`reference`] affine models can stand in for trained networks wherever a
//! closed-form answer is needed.

pub mod attacks;
pub mod boundary;
pub mod calibration;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod model;
pub mod projection;
pub mod reference;
pub mod rng;
pub mod stats;
pub mod train;
pub mod trajectory;
pub mod zoo;

pub use curvprobe_tensor as tensor;
pub use error::{Error, Result};
pub use model::{Classifier, Forward, Prediction};
