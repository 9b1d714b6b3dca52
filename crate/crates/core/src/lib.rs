//! Research-orchestration engine: quality-weighted branch exploration over an
//! experiment tree, layered reflective memory, divergent diagnostic feedback,
//! a four-stage discovery pipeline, a deterministic synthetic workbench, and
//! the statistics / trace-analytics toolkit used to evaluate runs.
//!
//! Module map:
//!
//! - [`qwbe`]: search tree, quality normalization, PUCT-style branch scoring
//!   with a risk-averse prior, leaf selection, two-phase switching.
//! - [`lrm`]: trial-level modification records, cycle-level history, bounded
//!   global digest, and the artifact-plus-narrative relay between cycles.
//! - [`ddf`]: diagnostic report schema, portfolio validation, dual-mode
//!   feedback, and the dual-agent suggestion-partition policy.
//! - [`pipeline`]: end-to-end orchestration: baseline establishment, the
//!   discovery loop with dual-agent competition, ablations, evidence export.
//! - [`simulator`]: deterministic synthetic workbench over configurable
//!   hidden quality landscapes; the oracle environment for acceptance tests.
//! - [`stats`]: binomial tests, Wilson intervals, Wilcoxon signed-rank,
//!   Bonferroni thresholds, win curves, Pearson r, cross-run concordance.
//! - [`trace_io`]: JSONL agent-event parsing, corpus scanning, and versioned
//!   persistence of experiment records and tree snapshots.

pub mod ddf;
pub mod lrm;
pub mod pipeline;
pub mod qwbe;
pub mod simulator;
pub mod stats;
pub mod trace_io;

pub use qwbe::{AgentLabel, EvalMetrics, OutcomeStatus, QwbeParams, SearchTree, TrialNode};
