//! Continual graph learning engine for node classification on
//! class-incremental graph streams.
//!
//! The engine condenses each incoming task graph into a tiny edge-free
//! synthetic replay graph by matching class-conditional embedding means
//! under randomly parameterized wide encoders, optionally enlarging the
//! condensation targets with confidence-filtered pseudo labels, and trains
//! the classifier only on the balanced memory bank, retraining from scratch
//! per task. Sampling-based replay baselines, finetuning and joint upper
//! bounds, and the usual continual-learning metrics (AP, mAP, BWT over a
//! lower-triangular performance matrix) are included.
//!
//! Heavy row loops run on rayon by default; build with
//! `--no-default-features` for the sequential fallback. Results are
//! identical either way.

pub mod condense;
pub mod error;
pub mod graph;
pub mod instrument;
pub mod io;
pub mod linalg;
pub mod memory;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod rng;
pub mod stream;
pub mod trainer;

pub use error::{Error, Result};
