//! Genre classification over separated stems.
//!
//! The pipeline decodes 30-second clips, slices them into 3-second segments,
//! splits each segment into accompaniment and vocal stems, extracts one
//! 40x132 MFCC matrix per stem, classifies the two stems with a CNN and a
//! BiLSTM trained from scratch, and fuses the two 10-way probability vectors
//! by weighted soft voting or a stacked meta-model.
//!
//! Modules follow the data flow: [`audio_io`] -> [`separation`] ->
//! [`features`] -> [`nn`] -> [`ensemble`] -> [`eval`], with [`dataset`]
//! handling corpus scanning and leakage-safe splits and [`pipeline`] wiring
//! the file-based stages the CLI drives.

pub mod audio_io;
pub mod dataset;
pub mod dsp;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod separation;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use nn::{ProbVector, NUM_GENRES};
pub use tensor::Tensor;
