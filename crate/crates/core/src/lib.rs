//! Judge image-synthesis outputs with a multimodal language model and measure
//! how well its ratings track human ones.

pub mod backend;
pub mod dataset;
pub mod media;
pub mod parser;
pub mod prompt;
pub mod run;
pub mod scoring;
pub mod stats;
pub mod synth;
pub mod task;

pub use task::{AspectKind, TaskKind};
