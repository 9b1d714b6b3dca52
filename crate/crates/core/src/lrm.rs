//! Layered reflective memory.
//!
//! Three tiers of experimental knowledge with bounded compression:
//! trial-level modification records distilled from each result, a cycle-level
//! structured history per proposal, and a capped global narrative merged from
//! cycle digests. A finished cycle relays its best artifact together with the
//! merged narrative as the seed of the next cycle.
//!
//! Raw execution logs never enter any tier: records are composed from
//! structured fields only and the log is dropped after summarization.

use crate::qwbe::{EvalMetrics, OutcomeStatus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LrmError {
    #[error("trial {0} already present in cycle history")]
    DuplicateTrial(u64),
}

// ---------------------------------------------------------------------------
// Caps and summarizer
// ---------------------------------------------------------------------------

/// Character budgets for each memory tier. These are configuration defaults,
/// not calibrated values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemoryCaps {
    pub summary_cap: usize,
    pub excerpt_cap: usize,
    pub digest_cap: usize,
    pub global_cap: usize,
    /// Total budget of a rendered cycle context.
    pub context_cap: usize,
    pub key_findings_cap: usize,
    pub cross_cutting_cap: usize,
}

impl Default for MemoryCaps {
    fn default() -> Self {
        Self {
            summary_cap: 400,
            excerpt_cap: 500,
            digest_cap: 2048,
            global_cap: 4096,
            context_cap: 16_384,
            key_findings_cap: 8,
            cross_cutting_cap: 4,
        }
    }
}

/// Truncate to at most `max` characters, respecting char boundaries.
pub fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    s.chars().take(max).collect()
}

/// A bounded, deterministic text transformer. The reference implementation
/// composes structured fields and truncates; an external model could be
/// plugged in behind the same bound.
pub trait Summarizer {
    fn output_bound(&self) -> usize;
    /// Compose `(label, value)` fields into one bounded string.
    fn compose(&self, fields: &[(&str, String)]) -> String;
}

/// Reference summarizer: extractive composition over structured fields,
/// truncated to the declared bound.
#[derive(Clone, Debug)]
pub struct ExtractiveSummarizer {
    pub bound: usize,
}

impl ExtractiveSummarizer {
    pub fn new(bound: usize) -> Self {
        Self { bound }
    }
}

impl Summarizer for ExtractiveSummarizer {
    fn output_bound(&self) -> usize {
        self.bound
    }

    fn compose(&self, fields: &[(&str, String)]) -> String {
        let joined = fields
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| {
                if k.is_empty() {
                    v.clone()
                } else {
                    format!("{k}: {v}")
                }
            })
            .collect::<Vec<_>>()
            .join(" | ");
        truncate_chars(&joined, self.bound)
    }
}

// ---------------------------------------------------------------------------
// Trial-level memory
// ---------------------------------------------------------------------------

/// Compact distillation of one trial; the raw log is discarded after this
/// record is produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModificationRecord {
    pub summary: String,
    pub what_changed: String,
    pub why_outcome_differed: String,
    pub source_trial: u64,
}

/// Structured view of a finished trial handed to the summarization step.
#[derive(Clone, Debug)]
pub struct TrialView {
    pub node_id: u64,
    pub status: OutcomeStatus,
    pub dice: Option<f64>,
    pub parent_dice: Option<f64>,
    pub error_class: Option<String>,
    pub what_changed: String,
}

/// Status rule relative to the baseline metric: see
/// [`OutcomeStatus::classify`].
pub fn classify_status(metric: Option<f64>, m0: f64, error: bool) -> OutcomeStatus {
    OutcomeStatus::classify(metric, m0, error)
}

/// Distill one trial into a modification record. Only structured fields of
/// `view` are used; `raw_log` is consumed and dropped.
pub fn summarize_trial(
    raw_log: &str,
    view: &TrialView,
    summarizer: &dyn Summarizer,
) -> ModificationRecord {
    let _ = raw_log; // discarded: logs never enter memory
    let outcome = match (view.dice, &view.error_class) {
        (Some(d), _) => format!("{} dice={d:.4}", view.status),
        (None, Some(class)) => format!("error[{class}]"),
        (None, None) => format!("{}", view.status),
    };
    let why = match (view.dice, view.parent_dice) {
        (Some(d), Some(p)) => format!("dice {d:.4} vs parent {p:.4} ({:+.4})", d - p),
        (Some(d), None) => format!("dice {d:.4} with no parent reference"),
        (None, _) => match &view.error_class {
            Some(class) => format!("execution failed with {class} error"),
            None => "no metric produced".to_string(),
        },
    };
    let summary = summarizer.compose(&[
        ("", view.what_changed.clone()),
        ("outcome", outcome),
        ("delta", why.clone()),
    ]);
    ModificationRecord {
        summary,
        what_changed: view.what_changed.clone(),
        why_outcome_differed: why,
        source_trial: view.node_id,
    }
}

// ---------------------------------------------------------------------------
// Cycle-level memory
// ---------------------------------------------------------------------------

/// One row of a cycle's structured history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleEntry {
    pub trial_ref: u64,
    pub status: OutcomeStatus,
    pub metrics: Option<EvalMetrics>,
    pub modification: ModificationRecord,
    pub diagnostic_excerpt: String,
    pub losing_agent_metric: Option<f64>,
    pub losing_agent_errored: bool,
}

/// Structured experimental history of one research cycle (one proposal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleHistory {
    pub cycle_id: u32,
    pub proposal_id: String,
    pub entries: Vec<CycleEntry>,
    pub best_metric: f64,
    /// Metric of the relay seed this cycle started from.
    pub seed_metric: f64,
}

impl CycleHistory {
    pub fn new(cycle_id: u32, proposal_id: &str, seed_metric: f64) -> Self {
        Self {
            cycle_id,
            proposal_id: proposal_id.to_string(),
            entries: Vec::new(),
            best_metric: 0.0,
            seed_metric,
        }
    }

    /// Insert an entry keeping creation order; duplicates are rejected.
    pub fn append_entry(&mut self, entry: CycleEntry) -> Result<(), LrmError> {
        if self.entries.iter().any(|e| e.trial_ref == entry.trial_ref) {
            return Err(LrmError::DuplicateTrial(entry.trial_ref));
        }
        if let Some(m) = entry.metrics.as_ref() {
            if m.dice > self.best_metric {
                self.best_metric = m.dice;
            }
        }
        let pos = self
            .entries
            .partition_point(|e| e.trial_ref < entry.trial_ref);
        self.entries.insert(pos, entry);
        Ok(())
    }

    /// Entry holding the best metric, if any metric exists.
    pub fn best_entry(&self) -> Option<&CycleEntry> {
        self.entries
            .iter()
            .filter_map(|e| e.metrics.as_ref().map(|m| (e, m.dice)))
            .max_by(|a, b| {
                a.1.partial_cmp(&b.1)
                    .unwrap()
                    .then(b.0.trial_ref.cmp(&a.0.trial_ref))
            })
            .map(|(e, _)| e)
    }
}

/// Render the context handed to a coding agent: one line per entry plus the
/// global narrative, each diagnostic excerpt bounded, the whole output
/// bounded by the context cap (oldest entries dropped first).
pub fn render_context(history: &CycleHistory, global: &GlobalMemory, caps: &MemoryCaps) -> String {
    let header = format!(
        "cycle {} proposal {} seed={:.4} best={:.4}",
        history.cycle_id, history.proposal_id, history.seed_metric, history.best_metric
    );
    let global_section = format!("== accumulated findings ==\n{}", global.narrative);
    let mut lines: Vec<String> = history
        .entries
        .iter()
        .map(|e| {
            let metric = match &e.metrics {
                Some(m) => format!("dice={:.4}", m.dice),
                None => "dice=-".to_string(),
            };
            let loser = if e.losing_agent_errored {
                " loser=err".to_string()
            } else {
                match e.losing_agent_metric {
                    Some(l) => format!(" loser={l:.4}"),
                    None => String::new(),
                }
            };
            let excerpt = truncate_chars(&e.diagnostic_excerpt, caps.excerpt_cap);
            format!(
                "[{}] {} {}{} | {} | diag: {}",
                e.trial_ref, e.status, metric, loser, e.modification.summary, excerpt
            )
        })
        .collect();
    let fixed = header.chars().count() + global_section.chars().count() + 2;
    let mut body: usize = lines.iter().map(|l| l.chars().count() + 1).sum();
    let mut dropped = 0usize;
    while !lines.is_empty() && fixed + body > caps.context_cap {
        let removed = lines.remove(0);
        body -= removed.chars().count() + 1;
        dropped += 1;
    }
    let mut out = String::new();
    out.push_str(&header);
    out.push('\n');
    if dropped > 0 {
        out.push_str(&format!("({dropped} older entries elided)\n"));
    }
    for l in &lines {
        out.push_str(l);
        out.push('\n');
    }
    out.push_str(&global_section);
    out
}

// ---------------------------------------------------------------------------
// Global memory
// ---------------------------------------------------------------------------

/// Scientific digest of one finished cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleDigest {
    pub key_findings: Vec<String>,
    pub cross_cutting: Vec<String>,
    pub best_metric: f64,
    pub best_artifact_ref: Option<u64>,
}

impl CycleDigest {
    /// The digest rendered as narrative text; the first key finding leads
    /// verbatim so merges can preserve it.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = Vec::new();
        parts.extend(self.key_findings.iter().cloned());
        parts.extend(self.cross_cutting.iter().cloned());
        parts.push(format!("best={:.4}", self.best_metric));
        parts.join(" // ")
    }
}

/// Compress a finished cycle: key findings first (led by the best trial's
/// modification summary), then cross-cutting observations, with list and
/// character caps enforced.
pub fn digest_cycle(history: &CycleHistory, caps: &MemoryCaps, s: &dyn Summarizer) -> CycleDigest {
    let mut key_findings: Vec<String> = Vec::new();
    if let Some(best) = history.best_entry() {
        if best.status != OutcomeStatus::Baseline {
            key_findings.push(best.modification.summary.clone());
        }
    }
    for e in history
        .entries
        .iter()
        .filter(|e| e.status == OutcomeStatus::Success)
    {
        if key_findings.len() >= caps.key_findings_cap {
            break;
        }
        if !key_findings.contains(&e.modification.summary) {
            key_findings.push(e.modification.summary.clone());
        }
    }
    for e in history
        .entries
        .iter()
        .filter(|e| e.status == OutcomeStatus::Underperforming)
    {
        if key_findings.len() >= caps.key_findings_cap {
            break;
        }
        let lesson = s.compose(&[("regression", e.modification.summary.clone())]);
        if !key_findings.contains(&lesson) {
            key_findings.push(lesson);
        }
    }

    let counts = |st: OutcomeStatus| history.entries.iter().filter(|e| e.status == st).count();
    let mut cross_cutting = vec![format!(
        "{} trials: {} success, {} underperforming, {} error",
        history
            .entries
            .iter()
            .filter(|e| e.status != OutcomeStatus::Baseline)
            .count(),
        counts(OutcomeStatus::Success),
        counts(OutcomeStatus::Underperforming),
        counts(OutcomeStatus::Error),
    )];
    if history.best_metric > history.seed_metric {
        cross_cutting.push(format!(
            "cycle improved on its seed ({:+.4})",
            history.best_metric - history.seed_metric
        ));
    } else {
        cross_cutting.push("cycle never improved on its seed".to_string());
    }
    cross_cutting.truncate(caps.cross_cutting_cap);

    // Enforce the total character cap by trimming findings from the tail.
    let budget = caps.digest_cap;
    let mut total: usize = cross_cutting.iter().map(|x| x.chars().count()).sum();
    let mut kept: Vec<String> = Vec::new();
    for f in key_findings {
        let f = truncate_chars(&f, s.output_bound());
        let len = f.chars().count();
        if total + len > budget && !kept.is_empty() {
            break;
        }
        total += len;
        kept.push(f);
    }
    CycleDigest {
        key_findings: kept,
        cross_cutting,
        best_metric: history.best_metric,
        best_artifact_ref: history.best_entry().map(|e| e.trial_ref),
    }
}

/// Bounded global narrative merged from cycle digests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalMemory {
    pub narrative: String,
    pub size_cap: usize,
    pub cycles_merged: u32,
}

impl GlobalMemory {
    pub fn new(size_cap: usize) -> Self {
        Self {
            narrative: String::new(),
            size_cap,
            cycles_merged: 0,
        }
    }

    /// Merge a digest into the narrative. The newest digest survives intact
    /// (its first key finding verbatim); older material shrinks from the
    /// front when the cap is exceeded.
    pub fn merge_digest(&mut self, digest: &CycleDigest) {
        let rendered = digest.render();
        self.cycles_merged += 1;
        if self.narrative.is_empty() {
            self.narrative = truncate_chars(&rendered, self.size_cap);
            return;
        }
        let new_len = rendered.chars().count();
        if new_len >= self.size_cap {
            self.narrative = truncate_chars(&rendered, self.size_cap);
            return;
        }
        let old_budget = self.size_cap - new_len - 1;
        let old_chars: Vec<char> = self.narrative.chars().collect();
        let old_kept: String = if old_chars.len() > old_budget {
            old_chars[old_chars.len() - old_budget..].iter().collect()
        } else {
            self.narrative.clone()
        };
        self.narrative = format!("{old_kept}\n{rendered}");
        debug_assert!(self.narrative.chars().count() <= self.size_cap);
    }
}

// ---------------------------------------------------------------------------
// Relay
// ---------------------------------------------------------------------------

/// Artifact plus compressed narrative handed to the next cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    /// Best implementation node, or `None` for the dataset baseline.
    pub artifact_ref: Option<u64>,
    pub artifact_metric: f64,
    pub memory: GlobalMemory,
}

/// Build the next seed: the cycle's best node when it improved on the seed
/// it started from, otherwise the prior artifact; always the merged memory.
pub fn make_seed(history: &CycleHistory, global: &GlobalMemory, prior: &Seed) -> Seed {
    if history.best_metric > history.seed_metric {
        Seed {
            artifact_ref: history.best_entry().map(|e| e.trial_ref),
            artifact_metric: history.best_metric,
            memory: global.clone(),
        }
    } else {
        Seed {
            artifact_ref: prior.artifact_ref,
            artifact_metric: prior.artifact_metric,
            memory: global.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn caps() -> MemoryCaps {
        MemoryCaps::default()
    }

    fn summarizer() -> ExtractiveSummarizer {
        ExtractiveSummarizer::new(caps().summary_cap)
    }

    fn record(trial: u64, text: &str) -> ModificationRecord {
        ModificationRecord {
            summary: text.to_string(),
            what_changed: text.to_string(),
            why_outcome_differed: String::new(),
            source_trial: trial,
        }
    }

    fn entry(trial: u64, status: OutcomeStatus, dice: Option<f64>) -> CycleEntry {
        CycleEntry {
            trial_ref: trial,
            status,
            metrics: dice.map(|d| EvalMetrics::new(d, 5.0)),
            modification: record(trial, &format!("modification {trial}")),
            diagnostic_excerpt: format!("diagnosis for trial {trial}"),
            losing_agent_metric: if status == OutcomeStatus::Baseline {
                None
            } else {
                Some(0.5)
            },
            losing_agent_errored: false,
        }
    }

    // ---- classify_status ----

    #[test]
    fn classify_against_baseline() {
        let m0 = 0.7142;
        assert_eq!(
            classify_status(Some(0.7682), m0, false),
            OutcomeStatus::Success
        );
        assert_eq!(
            classify_status(Some(0.6835), m0, false),
            OutcomeStatus::Underperforming
        );
        assert_eq!(classify_status(None, m0, true), OutcomeStatus::Error);
    }

    // ---- summarize_trial ----

    #[test]
    fn summary_bounded_under_huge_log() {
        let raw: String = "x".repeat(27_750);
        let view = TrialView {
            node_id: 3,
            status: OutcomeStatus::Success,
            dice: Some(0.7682),
            parent_dice: Some(0.7142),
            error_class: None,
            what_changed: "higher-resolution attention with learned query bias".into(),
        };
        let rec = summarize_trial(&raw, &view, &summarizer());
        assert!(rec.summary.chars().count() <= 400);
        assert!(rec.summary.contains("query bias"));
        assert!(rec.summary.contains("+0.0540"));
        assert!(!rec.summary.contains('x'));
    }

    #[test]
    fn summary_from_metrics_alone() {
        let view = TrialView {
            node_id: 1,
            status: OutcomeStatus::Underperforming,
            dice: Some(0.61),
            parent_dice: None,
            error_class: None,
            what_changed: String::new(),
        };
        let rec = summarize_trial("", &view, &summarizer());
        assert!(rec.summary.contains("0.6100"));
    }

    #[test]
    fn summarization_is_deterministic() {
        let view = TrialView {
            node_id: 9,
            status: OutcomeStatus::Error,
            dice: None,
            parent_dice: Some(0.7),
            error_class: Some("shape".into()),
            what_changed: "swapped fusion order".into(),
        };
        let a = summarize_trial("log", &view, &summarizer());
        let b = summarize_trial("log", &view, &summarizer());
        assert_eq!(a, b);
    }

    // ---- append_entry ----

    #[test]
    fn append_updates_best() {
        let mut h = CycleHistory::new(2, "p2", 0.7682);
        h.append_entry(entry(1, OutcomeStatus::Baseline, Some(0.7142)))
            .unwrap();
        h.append_entry(entry(5, OutcomeStatus::Success, Some(0.7682)))
            .unwrap();
        assert!((h.best_metric - 0.7682).abs() < 1e-12);
        h.append_entry(entry(8, OutcomeStatus::Success, Some(0.7829)))
            .unwrap();
        assert!((h.best_metric - 0.7829).abs() < 1e-12);
    }

    #[test]
    fn append_error_keeps_best() {
        let mut h = CycleHistory::new(1, "p1", 0.5);
        h.append_entry(entry(2, OutcomeStatus::Success, Some(0.7)))
            .unwrap();
        h.append_entry(entry(3, OutcomeStatus::Error, None))
            .unwrap();
        assert!((h.best_metric - 0.7).abs() < 1e-12);
    }

    #[test]
    fn append_rejects_duplicates() {
        let mut h = CycleHistory::new(1, "p1", 0.5);
        h.append_entry(entry(2, OutcomeStatus::Success, Some(0.7)))
            .unwrap();
        assert!(matches!(
            h.append_entry(entry(2, OutcomeStatus::Success, Some(0.8))),
            Err(LrmError::DuplicateTrial(2))
        ));
    }

    #[test]
    fn entries_sorted_under_interleaving() {
        let mut h = CycleHistory::new(1, "p1", 0.5);
        for id in [7u64, 2, 9, 4, 3] {
            h.append_entry(entry(id, OutcomeStatus::Underperforming, Some(0.4)))
                .unwrap();
        }
        let ids: Vec<u64> = h.entries.iter().map(|e| e.trial_ref).collect();
        assert_eq!(ids, vec![2, 3, 4, 7, 9]);
    }

    // ---- render_context ----

    #[test]
    fn context_line_per_entry_with_bounded_excerpts() {
        let caps = caps();
        let mut h = CycleHistory::new(1, "p1", 0.5);
        for id in 0..11u64 {
            let mut e = entry(id, OutcomeStatus::Underperforming, Some(0.4));
            e.diagnostic_excerpt = "d".repeat(2000);
            h.append_entry(e).unwrap();
        }
        let global = GlobalMemory::new(caps.global_cap);
        let out = render_context(&h, &global, &caps);
        let entry_lines: Vec<&str> = out.lines().filter(|l| l.starts_with('[')).collect();
        assert_eq!(entry_lines.len(), 11);
        for line in entry_lines {
            let diag = line.split("diag: ").nth(1).unwrap();
            assert!(diag.chars().count() <= caps.excerpt_cap);
        }
    }

    #[test]
    fn empty_history_renders_header_and_global() {
        let caps = caps();
        let h = CycleHistory::new(3, "p3", 0.78);
        let mut global = GlobalMemory::new(caps.global_cap);
        global.merge_digest(&CycleDigest {
            key_findings: vec!["query-bias attention works".into()],
            cross_cutting: vec![],
            best_metric: 0.7682,
            best_artifact_ref: Some(3),
        });
        let out = render_context(&h, &global, &caps);
        assert!(out.starts_with("cycle 3 proposal p3"));
        assert!(out.contains("query-bias attention works"));
    }

    #[test]
    fn raw_log_sentinel_never_reaches_context() {
        let caps = caps();
        let sentinel = "STACKTRACE###";
        let raw = format!("epoch 1 loss nan\n{sentinel}\npanic at trainer.py");
        let view = TrialView {
            node_id: 4,
            status: OutcomeStatus::Error,
            dice: None,
            parent_dice: Some(0.6),
            error_class: Some("numeric".into()),
            what_changed: "raised learning rate".into(),
        };
        let rec = summarize_trial(&raw, &view, &summarizer());
        let mut h = CycleHistory::new(1, "p1", 0.5);
        h.append_entry(CycleEntry {
            trial_ref: 4,
            status: OutcomeStatus::Error,
            metrics: None,
            modification: rec,
            diagnostic_excerpt: "numeric failure diagnosed".into(),
            losing_agent_metric: None,
            losing_agent_errored: true,
        })
        .unwrap();
        let out = render_context(&h, &GlobalMemory::new(caps.global_cap), &caps);
        assert!(!out.contains(sentinel));
    }

    #[test]
    fn context_total_cap_drops_oldest() {
        let mut caps = caps();
        caps.context_cap = 600;
        let mut h = CycleHistory::new(1, "p1", 0.5);
        for id in 0..30u64 {
            h.append_entry(entry(id, OutcomeStatus::Underperforming, Some(0.4)))
                .unwrap();
        }
        let out = render_context(&h, &GlobalMemory::new(64), &caps);
        assert!(out.chars().count() <= 600 + 64);
        // Newest entries survive.
        assert!(out.contains("[29]"));
        assert!(!out.contains("[0]"));
    }

    // ---- digest_cycle ----

    #[test]
    fn digest_leads_with_best_trial_summary() {
        let caps = caps();
        let mut h = CycleHistory::new(1, "p1", 0.7142);
        h.append_entry(entry(1, OutcomeStatus::Baseline, Some(0.7142)))
            .unwrap();
        let mut best = entry(3, OutcomeStatus::Success, Some(0.7682));
        best.modification.summary = "token diffusion with query-bias works".into();
        h.append_entry(best).unwrap();
        let d = digest_cycle(&h, &caps, &summarizer());
        assert_eq!(d.key_findings[0], "token diffusion with query-bias works");
        assert_eq!(d.best_artifact_ref, Some(3));
        assert!((d.best_metric - 0.7682).abs() < 1e-12);
    }

    #[test]
    fn digest_of_baseline_only_cycle() {
        let caps = caps();
        let mut h = CycleHistory::new(1, "p1", 0.7142);
        h.append_entry(entry(1, OutcomeStatus::Baseline, Some(0.7142)))
            .unwrap();
        let d = digest_cycle(&h, &caps, &summarizer());
        assert!(d.key_findings.is_empty());
        assert!((d.best_metric - 0.7142).abs() < 1e-12);
    }

    #[test]
    fn digest_caps_hold_on_large_cycle() {
        let caps = caps();
        let mut h = CycleHistory::new(1, "p1", 0.5);
        for id in 0..33u64 {
            let mut e = entry(
                id,
                if id % 3 == 0 {
                    OutcomeStatus::Success
                } else {
                    OutcomeStatus::Underperforming
                },
                Some(0.4 + 0.01 * id as f64),
            );
            e.modification.summary = format!("finding {id} ") + &"y".repeat(300);
            h.append_entry(e).unwrap();
        }
        let d = digest_cycle(&h, &caps, &summarizer());
        assert!(d.key_findings.len() <= caps.key_findings_cap);
        assert!(d.cross_cutting.len() <= caps.cross_cutting_cap);
        let total: usize = d
            .key_findings
            .iter()
            .chain(d.cross_cutting.iter())
            .map(|x| x.chars().count())
            .sum();
        assert!(total <= caps.digest_cap);
    }

    // ---- merge_global ----

    #[test]
    fn first_merge_equals_rendered_digest() {
        let d = CycleDigest {
            key_findings: vec!["boundary modules hurt".into()],
            cross_cutting: vec!["10 trials: 2 success".into()],
            best_metric: 0.7682,
            best_artifact_ref: Some(3),
        };
        let mut g = GlobalMemory::new(4096);
        g.merge_digest(&d);
        assert_eq!(g.narrative, d.render());
        assert_eq!(g.cycles_merged, 1);
    }

    #[test]
    fn hundred_merges_stay_bounded() {
        let mut g = GlobalMemory::new(4096);
        for i in 0..100 {
            let d = CycleDigest {
                key_findings: vec![format!("cycle {i}: ") + &"k".repeat(1000)],
                cross_cutting: vec![],
                best_metric: 0.5,
                best_artifact_ref: Some(i),
            };
            g.merge_digest(&d);
            assert!(g.narrative.chars().count() <= 4096);
        }
        assert_eq!(g.cycles_merged, 100);
    }

    #[test]
    fn merge_preserves_latest_key_finding() {
        let mut g = GlobalMemory::new(512);
        for i in 0..20 {
            let finding = format!("finding-{i} holds under stress");
            let d = CycleDigest {
                key_findings: vec![finding.clone(), "z".repeat(300)],
                cross_cutting: vec![],
                best_metric: 0.5,
                best_artifact_ref: None,
            };
            g.merge_digest(&d);
            assert!(g.narrative.contains(&finding));
        }
    }

    // ---- make_seed ----

    #[test]
    fn seed_advances_on_improvement() {
        let mut h = CycleHistory::new(2, "p2", 0.7682);
        h.append_entry(entry(8, OutcomeStatus::Success, Some(0.7829)))
            .unwrap();
        let g = GlobalMemory::new(4096);
        let prior = Seed {
            artifact_ref: Some(3),
            artifact_metric: 0.7682,
            memory: g.clone(),
        };
        let next = make_seed(&h, &g, &prior);
        assert_eq!(next.artifact_ref, Some(8));
        assert!((next.artifact_metric - 0.7829).abs() < 1e-12);
    }

    #[test]
    fn seed_falls_back_to_prior() {
        let mut h = CycleHistory::new(2, "p2", 0.7682);
        h.append_entry(entry(9, OutcomeStatus::Underperforming, Some(0.70)))
            .unwrap();
        let g = GlobalMemory::new(4096);
        let prior = Seed {
            artifact_ref: Some(3),
            artifact_metric: 0.7682,
            memory: g.clone(),
        };
        let next = make_seed(&h, &g, &prior);
        assert_eq!(next.artifact_ref, Some(3));
        assert!((next.artifact_metric - 0.7682).abs() < 1e-12);
    }

    #[test]
    fn seed_carries_post_merge_memory() {
        let h = CycleHistory::new(1, "p1", 0.5);
        let mut g = GlobalMemory::new(4096);
        g.merge_digest(&CycleDigest {
            key_findings: vec!["fresh finding".into()],
            cross_cutting: vec![],
            best_metric: 0.5,
            best_artifact_ref: None,
        });
        let prior = Seed {
            artifact_ref: None,
            artifact_metric: 0.5,
            memory: GlobalMemory::new(4096),
        };
        let next = make_seed(&h, &g, &prior);
        assert!(next.memory.narrative.contains("fresh finding"));
    }

    proptest! {
        #[test]
        fn narrative_bounded_for_any_merge_sequence(
            sizes in proptest::collection::vec(1usize..600, 1..40),
            cap in 256usize..2048,
        ) {
            let mut g = GlobalMemory::new(cap);
            for (i, sz) in sizes.iter().enumerate() {
                let d = CycleDigest {
                    key_findings: vec![format!("{i}:") + &"f".repeat(*sz)],
                    cross_cutting: vec![],
                    best_metric: 0.5,
                    best_artifact_ref: None,
                };
                g.merge_digest(&d);
                prop_assert!(g.narrative.chars().count() <= cap);
            }
        }

        #[test]
        fn sentinel_never_in_context(
            noise in "[a-z ]{0,64}",
            n_entries in 1usize..8,
        ) {
            let caps = MemoryCaps::default();
            let sentinel = "RAWLOG@@SENTINEL";
            let mut h = CycleHistory::new(1, "p1", 0.5);
            for id in 0..n_entries as u64 {
                let raw = format!("{noise}{sentinel}{noise}");
                let view = TrialView {
                    node_id: id,
                    status: OutcomeStatus::Underperforming,
                    dice: Some(0.4),
                    parent_dice: Some(0.5),
                    error_class: None,
                    what_changed: noise.clone(),
                };
                let rec = summarize_trial(&raw, &view, &ExtractiveSummarizer::new(400));
                h.append_entry(CycleEntry {
                    trial_ref: id,
                    status: OutcomeStatus::Underperforming,
                    metrics: Some(EvalMetrics::new(0.4, 5.0)),
                    modification: rec,
                    diagnostic_excerpt: noise.clone(),
                    losing_agent_metric: Some(0.3),
                    losing_agent_errored: false,
                }).unwrap();
            }
            let out = render_context(&h, &GlobalMemory::new(caps.global_cap), &caps);
            prop_assert!(!out.contains(sentinel));
        }
    }
}
