//! Multi-agent evidence filtering and synthesis for retrieval-augmented
//! generation.
//!
//! Three role-specialized filter agents (summarizer, extractor, reasoner)
//! distill complementary evidence views from pre-retrieved documents, an
//! optional answer agent produces one candidate answer per view, and a
//! synthesis agent emits the final answer. The crate also ships the
//! evaluation harness: accuracy, str-em, ROUGE-L, evidence coverage rate,
//! uniquely-attributable-subset analysis, and ablation runs, all
//! reproducible offline against a scripted mock backend with an on-disk
//! response cache.

pub mod agents;
pub mod backend;
pub mod cli;
pub mod core;
pub mod data;
pub mod eval;
pub mod pipeline;
