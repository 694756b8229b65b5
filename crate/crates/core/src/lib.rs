//! Thought-template reasoning library: template stores, BM25 retrieval,
//! long-context packing, evaluation, template refinement and usage analytics.

pub mod analytics;
pub mod cli;
pub mod construction;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod metrics;
pub mod optimizer;
pub mod pool;
pub mod prompts;
pub mod retrieval;
pub mod template;
pub mod trace;

pub use corpus::{Corpus, Document, Manifest, MetricKind, QueryItem};
pub use gateway::{Gateway, Role};
pub use template::{Decision, TemplateId, TemplateStore, ThoughtTemplate};
