//! Detect and quantify memorization of person names in fine-tuned NER
//! models.
//!
//! The workflow: build a pairwise dataset of In-train and Out-train names
//! ([`names`]), complete every prompt template with every name
//! ([`prompts`]), score the completions against a model backend
//! ([`gateway`]), then compare In-train and Out-train confidences pair by
//! pair ([`memorization`]). On top of that sit greedy prompt engineering
//! ([`forge`]), significance tests and correlations ([`stats`]), attention
//! summaries ([`attention`]) and the staged pipeline driving it all
//! ([`pipeline`]).

pub mod attention;
pub mod error;
pub mod forge;
pub mod gateway;
pub mod memorization;
pub mod names;
pub mod pipeline;
pub mod prompts;
pub mod stats;
pub mod util;

pub use error::{BackendError, Error, Result};
