//! Extractive summarization trained with question-answering rewards.
//!
//! Reference abstracts are turned into Cloze questions ([`cloze`]). A
//! word-extraction policy ([`policy`]) samples binary masks over the source;
//! each sampled summary is scored by how well an attention reader can answer
//! the questions from it ([`qa_reward`]), plus bigram coverage, fluency and
//! length terms ([`shaping`]). Training ([`trainer`]) pretrains the policy on
//! bigram labels and then follows the score-function gradient of the
//! expected reward. [`metrics`] scores summaries with ROUGE and QA accuracy.

pub mod cloze;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod policy;
pub mod qa_reward;
pub mod shaping;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use mask::SummaryMask;
