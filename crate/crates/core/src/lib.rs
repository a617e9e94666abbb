//! Zero-shot document-level biomedical relation extraction driven by an
//! external LLM.
//!
//! Stage I recognises entities and groups them into synonym clusters with
//! hypernym links; Stage II asks one single-choice question per candidate
//! entity pair and relation.

pub mod ablate;
pub mod assets;
pub mod docmodel;
pub mod eval;
pub mod llmgateway;
pub mod pipeline;
pub mod prompt;
pub mod stage1;
pub mod stage2;
