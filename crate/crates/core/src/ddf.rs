//! Divergent diagnostic feedback.
//!
//! After an underperforming trial a diagnostic generator produces a portfolio
//! of five categorically distinct suggestions (at least one auditing the
//! proposal-implementation gap); after a best-exceeding trial it switches to
//! a completeness audit of the proposal's modules. Two competing agents each
//! take 1-2 suggestions under a deterministic complementary-partition policy
//! so the portfolio fans out into divergent implementation attempts.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use thiserror::Error;

use crate::qwbe::AgentLabel;

#[derive(Debug, Error)]
pub enum DdfError {
    #[error("diagnostic generation failed after {attempts} attempts")]
    GenerationFailed { attempts: u32 },
    #[error("audit generation failed after {attempts} attempts: {reason}")]
    AuditFailed { attempts: u32, reason: String },
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// Closed four-way taxonomy of improvement suggestions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuggestionCategory {
    Architecture,
    Hyperparameter,
    CodeFix,
    ProposalGap,
}

impl std::fmt::Display for SuggestionCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SuggestionCategory::Architecture => "architecture",
            SuggestionCategory::Hyperparameter => "hyperparameter",
            SuggestionCategory::CodeFix => "code-fix",
            SuggestionCategory::ProposalGap => "proposal-gap",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl Priority {
    fn rank(self) -> u8 {
        match self {
            Priority::High => 0,
            Priority::Medium => 1,
            Priority::Low => 2,
        }
    }
}

/// One actionable suggestion. `target` names the proposal module a
/// gap-audit suggestion restores, when applicable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub category: SuggestionCategory,
    pub description: String,
    pub priority: Priority,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target: Option<String>,
}

/// Failure-mode output: a reasoning trace plus a five-suggestion portfolio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub reasoning_trace: String,
    pub suggestions: Vec<Suggestion>,
}

/// Implementation-status label of one proposed module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModuleStatusLabel {
    FullyImplemented,
    Simplified,
    Missing,
}

impl std::fmt::Display for ModuleStatusLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModuleStatusLabel::FullyImplemented => "fully-implemented",
            ModuleStatusLabel::Simplified => "simplified",
            ModuleStatusLabel::Missing => "missing",
        };
        write!(f, "{s}")
    }
}

/// Optimization-mode output: every proposal module labeled, plus prioritized
/// suggestions for recovering whatever was simplified or dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletenessAudit {
    pub module_statuses: BTreeMap<String, ModuleStatusLabel>,
    pub prioritized_suggestions: Vec<Suggestion>,
}

/// Which feedback mode a trial outcome triggers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackMode {
    Failure,
    Optimization,
}

/// Optimization only on a strict improvement over the current best;
/// equality stays in failure analysis.
pub fn choose_mode(trial_metric: f64, best_metric: f64) -> FeedbackMode {
    if trial_metric > best_metric {
        FeedbackMode::Optimization
    } else {
        FeedbackMode::Failure
    }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

pub const PORTFOLIO_SIZE: usize = 5;
pub const MIN_DISTINCT_CATEGORIES: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportViolation {
    /// Exactly five suggestions are required.
    SuggestionCount { found: usize },
    /// At least one suggestion must audit the proposal-implementation gap.
    MissingGapAudit,
    /// Suggestions must span at least two distinct categories.
    InsufficientDiversity { distinct: usize },
    /// Every suggestion needs a non-empty description.
    EmptyDescription { index: usize },
}

/// Validity verdict carrying every violated rule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ReportVerdict {
    pub violations: Vec<ReportViolation>,
}

impl ReportVerdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check the three structural portfolio rules; the verdict lists every
/// violation rather than stopping at the first.
pub fn validate_report(report: &DiagnosticReport) -> ReportVerdict {
    let mut violations = Vec::new();
    if report.suggestions.len() != PORTFOLIO_SIZE {
        violations.push(ReportViolation::SuggestionCount {
            found: report.suggestions.len(),
        });
    }
    if !report
        .suggestions
        .iter()
        .any(|s| s.category == SuggestionCategory::ProposalGap)
    {
        violations.push(ReportViolation::MissingGapAudit);
    }
    let distinct: BTreeSet<SuggestionCategory> =
        report.suggestions.iter().map(|s| s.category).collect();
    if distinct.len() < MIN_DISTINCT_CATEGORIES {
        violations.push(ReportViolation::InsufficientDiversity {
            distinct: distinct.len(),
        });
    }
    for (index, s) in report.suggestions.iter().enumerate() {
        if s.description.is_empty() {
            violations.push(ReportViolation::EmptyDescription { index });
        }
    }
    ReportVerdict { violations }
}

// ---------------------------------------------------------------------------
// Generation with validate-and-retry
// ---------------------------------------------------------------------------

/// Everything a generator sees about the trial under diagnosis.
#[derive(Clone, Debug)]
pub struct DiagnosticContext {
    pub proposal_id: String,
    /// Current implementation state of every proposal module.
    pub module_states: BTreeMap<String, ModuleStatusLabel>,
    pub error_class: Option<String>,
    pub trial_metric: Option<f64>,
    pub best_metric: f64,
    /// Rendered cycle-history excerpt.
    pub history_excerpt: String,
}

impl DiagnosticContext {
    pub fn gap(&self) -> f64 {
        self.best_metric - self.trial_metric.unwrap_or(0.0)
    }
}

/// Pluggable content generator. Implementations may be stateful across
/// retries (mocks) or pure rules (the reference generator).
pub trait DiagnosticGenerator {
    fn diagnose(&self, ctx: &DiagnosticContext) -> DiagnosticReport;
    fn audit(&self, ctx: &DiagnosticContext) -> CompletenessAudit;
}

/// Run the generator until it emits a structurally valid report, retrying up
/// to `max_retries` times beyond the first attempt.
pub fn generate_diagnosis(
    ctx: &DiagnosticContext,
    generator: &dyn DiagnosticGenerator,
    max_retries: u32,
) -> Result<DiagnosticReport, DdfError> {
    let attempts = max_retries + 1;
    for _ in 0..attempts {
        let report = generator.diagnose(ctx);
        if validate_report(&report).is_valid() {
            return Ok(report);
        }
    }
    Err(DdfError::GenerationFailed { attempts })
}

/// Run the generator until the audit labels every proposal module, retrying
/// as for diagnosis. Suggestions come back sorted by priority.
pub fn generate_audit(
    proposal_modules: &[String],
    ctx: &DiagnosticContext,
    generator: &dyn DiagnosticGenerator,
    max_retries: u32,
) -> Result<CompletenessAudit, DdfError> {
    let attempts = max_retries + 1;
    let mut missing = String::new();
    for _ in 0..attempts {
        let mut audit = generator.audit(ctx);
        let omitted: Vec<&String> = proposal_modules
            .iter()
            .filter(|m| !audit.module_statuses.contains_key(*m))
            .collect();
        if omitted.is_empty() {
            sort_by_priority(&mut audit.prioritized_suggestions);
            return Ok(audit);
        }
        missing = omitted
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(", ");
    }
    Err(DdfError::AuditFailed {
        attempts,
        reason: format!("modules never labeled: {missing}"),
    })
}

fn sort_by_priority(suggestions: &mut [Suggestion]) {
    // Stable sort keeps report order within a priority class.
    suggestions.sort_by_key(|s| s.priority.rank());
}

// ---------------------------------------------------------------------------
// Dual-agent suggestion partition
// ---------------------------------------------------------------------------

/// Deterministic complementary selection over a suggestion list, indices
/// returned in rank order.
///
/// Agent A takes the top two by (priority, list order). Agent B takes the
/// top two not chosen by A, borrowing from A's picks only when fewer than
/// two remain, so the union covers at least three distinct suggestions
/// whenever four or more exist.
pub fn partition_selection(suggestions: &[Suggestion], agent: AgentLabel) -> Vec<usize> {
    if suggestions.is_empty() {
        return Vec::new();
    }
    let mut ranked: Vec<usize> = (0..suggestions.len()).collect();
    ranked.sort_by_key(|&i| (suggestions[i].priority.rank(), i));
    let a: Vec<usize> = ranked.iter().copied().take(2).collect();
    match agent {
        AgentLabel::A => a,
        AgentLabel::B => {
            let rest: Vec<usize> = ranked.iter().copied().filter(|i| !a.contains(i)).collect();
            match rest.len() {
                0 => vec![a[0]],
                1 => vec![rest[0], a[0]],
                _ => rest.into_iter().take(2).collect(),
            }
        }
    }
}

/// Partition policy applied to a validated failure report.
pub fn select_suggestions(report: &DiagnosticReport, agent: AgentLabel) -> Vec<usize> {
    partition_selection(&report.suggestions, agent)
}

// ---------------------------------------------------------------------------
// Reference generator
// ---------------------------------------------------------------------------

/// Deterministic rule-based generator over labeled module states: one
/// gap-restoration suggestion per simplified or missing module (capped so
/// the portfolio keeps category diversity), a code-fix suggestion when the
/// trial errored, and generic architecture/hyperparameter refinements as
/// padding to exactly five.
#[derive(Clone, Copy, Debug, Default)]
pub struct RuleBasedGenerator;

const MAX_GAP_SUGGESTIONS: usize = 3;

impl DiagnosticGenerator for RuleBasedGenerator {
    fn diagnose(&self, ctx: &DiagnosticContext) -> DiagnosticReport {
        let mut suggestions: Vec<Suggestion> = Vec::new();
        for (module, state) in ctx
            .module_states
            .iter()
            .filter(|(_, s)| **s != ModuleStatusLabel::FullyImplemented)
            .take(MAX_GAP_SUGGESTIONS)
        {
            suggestions.push(Suggestion {
                category: SuggestionCategory::ProposalGap,
                description: format!(
                    "restore {module} to the proposed formulation (currently {state})"
                ),
                priority: Priority::High,
                target: Some(module.clone()),
            });
        }
        if let Some(class) = &ctx.error_class {
            suggestions.push(Suggestion {
                category: SuggestionCategory::CodeFix,
                description: format!("fix the {class} failure surfaced by the last run"),
                priority: Priority::High,
                target: None,
            });
        }
        if suggestions.is_empty()
            || !suggestions
                .iter()
                .any(|s| s.category == SuggestionCategory::ProposalGap)
        {
            suggestions.insert(
                0,
                Suggestion {
                    category: SuggestionCategory::ProposalGap,
                    description: "audit proposal-implementation parity module by module".into(),
                    priority: Priority::Medium,
                    target: None,
                },
            );
        }
        let padding = [
            (
                SuggestionCategory::Architecture,
                Priority::Medium,
                "widen the main block and add a residual path around it",
            ),
            (
                SuggestionCategory::Hyperparameter,
                Priority::Medium,
                "retune step size and regularization strength",
            ),
            (
                SuggestionCategory::Architecture,
                Priority::Low,
                "raise working resolution of the attention stage",
            ),
            (
                SuggestionCategory::Hyperparameter,
                Priority::Low,
                "adjust batch geometry and schedule length",
            ),
            (
                SuggestionCategory::CodeFix,
                Priority::Low,
                "audit numeric stability constants and clamps",
            ),
        ];
        for (category, priority, text) in padding {
            if suggestions.len() >= PORTFOLIO_SIZE {
                break;
            }
            suggestions.push(Suggestion {
                category,
                description: text.to_string(),
                priority,
                target: None,
            });
        }
        suggestions.truncate(PORTFOLIO_SIZE);
        let trace = format!(
            "trial scored {} against best {:.4} (gap {:.4}); {} of {} modules deviate from the proposal{}",
            match ctx.trial_metric {
                Some(m) => format!("{m:.4}"),
                None => "no metric".to_string(),
            },
            ctx.best_metric,
            ctx.gap(),
            ctx.module_states
                .values()
                .filter(|s| **s != ModuleStatusLabel::FullyImplemented)
                .count(),
            ctx.module_states.len(),
            match &ctx.error_class {
                Some(c) => format!("; execution ended in a {c} error"),
                None => String::new(),
            },
        );
        DiagnosticReport {
            reasoning_trace: trace,
            suggestions,
        }
    }

    fn audit(&self, ctx: &DiagnosticContext) -> CompletenessAudit {
        let mut prioritized = Vec::new();
        for (module, state) in &ctx.module_states {
            match state {
                ModuleStatusLabel::FullyImplemented => {}
                ModuleStatusLabel::Simplified => prioritized.push(Suggestion {
                    category: SuggestionCategory::ProposalGap,
                    description: format!(
                        "replace the simplified {module} with the proposed mechanism"
                    ),
                    priority: Priority::High,
                    target: Some(module.clone()),
                }),
                ModuleStatusLabel::Missing => prioritized.push(Suggestion {
                    category: SuggestionCategory::ProposalGap,
                    description: format!("implement the missing {module}"),
                    priority: Priority::High,
                    target: Some(module.clone()),
                }),
            }
        }
        CompletenessAudit {
            module_statuses: ctx.module_states.clone(),
            prioritized_suggestions: prioritized,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn sugg(category: SuggestionCategory, priority: Priority) -> Suggestion {
        Suggestion {
            category,
            description: format!("{category} suggestion"),
            priority,
            target: None,
        }
    }

    fn report(cats: &[SuggestionCategory]) -> DiagnosticReport {
        DiagnosticReport {
            reasoning_trace: "trace".into(),
            suggestions: cats.iter().map(|&c| sugg(c, Priority::Medium)).collect(),
        }
    }

    // ---- choose_mode ----

    #[test]
    fn mode_switches_on_strict_improvement() {
        assert_eq!(choose_mode(0.7988, 0.7829), FeedbackMode::Optimization);
        assert_eq!(choose_mode(0.6835, 0.7142), FeedbackMode::Failure);
        assert_eq!(choose_mode(0.5, 0.5), FeedbackMode::Failure);
    }

    // ---- validate_report ----

    #[test]
    fn valid_mixed_portfolio() {
        use SuggestionCategory::*;
        let r = report(&[
            ProposalGap,
            Architecture,
            Architecture,
            CodeFix,
            Hyperparameter,
        ]);
        assert!(validate_report(&r).is_valid());
    }

    #[test]
    fn four_suggestions_violate_count() {
        use SuggestionCategory::*;
        let r = report(&[ProposalGap, Architecture, CodeFix, Hyperparameter]);
        let v = validate_report(&r);
        assert_eq!(
            v.violations,
            vec![ReportViolation::SuggestionCount { found: 4 }]
        );
    }

    #[test]
    fn monoculture_violates_gap_and_diversity() {
        use SuggestionCategory::*;
        let r = report(&[Architecture; 5]);
        let v = validate_report(&r);
        assert!(v.violations.contains(&ReportViolation::MissingGapAudit));
        assert!(v
            .violations
            .contains(&ReportViolation::InsufficientDiversity { distinct: 1 }));
    }

    #[test]
    fn empty_description_flagged() {
        use SuggestionCategory::*;
        let mut r = report(&[
            ProposalGap,
            Architecture,
            Architecture,
            CodeFix,
            Hyperparameter,
        ]);
        r.suggestions[2].description.clear();
        let v = validate_report(&r);
        assert_eq!(
            v.violations,
            vec![ReportViolation::EmptyDescription { index: 2 }]
        );
    }

    // ---- generate_diagnosis retry loop ----

    struct FlakyGenerator {
        failures_before_valid: Cell<u32>,
    }

    impl DiagnosticGenerator for FlakyGenerator {
        fn diagnose(&self, ctx: &DiagnosticContext) -> DiagnosticReport {
            if self.failures_before_valid.get() > 0 {
                self.failures_before_valid
                    .set(self.failures_before_valid.get() - 1);
                report(&[SuggestionCategory::Architecture]) // invalid
            } else {
                RuleBasedGenerator.diagnose(ctx)
            }
        }
        fn audit(&self, ctx: &DiagnosticContext) -> CompletenessAudit {
            RuleBasedGenerator.audit(ctx)
        }
    }

    fn ctx() -> DiagnosticContext {
        let mut module_states = BTreeMap::new();
        module_states.insert("gating".to_string(), ModuleStatusLabel::Simplified);
        module_states.insert("tokenizer".to_string(), ModuleStatusLabel::FullyImplemented);
        DiagnosticContext {
            proposal_id: "p1".into(),
            module_states,
            error_class: None,
            trial_metric: Some(0.6835),
            best_metric: 0.7142,
            history_excerpt: String::new(),
        }
    }

    #[test]
    fn valid_report_passes_through() {
        let g = RuleBasedGenerator;
        let r = generate_diagnosis(&ctx(), &g, 0).unwrap();
        assert!(validate_report(&r).is_valid());
        assert_eq!(r.suggestions.len(), 5);
    }

    #[test]
    fn retry_until_valid() {
        let g = FlakyGenerator {
            failures_before_valid: Cell::new(2),
        };
        let r = generate_diagnosis(&ctx(), &g, 3).unwrap();
        assert!(validate_report(&r).is_valid());
    }

    #[test]
    fn retries_exhausted() {
        let g = FlakyGenerator {
            failures_before_valid: Cell::new(u32::MAX),
        };
        let err = generate_diagnosis(&ctx(), &g, 2).unwrap_err();
        assert!(matches!(err, DdfError::GenerationFailed { attempts: 3 }));
    }

    // ---- generate_audit ----

    #[test]
    fn audit_labels_simulated_shortcuts() {
        let mut c = ctx();
        c.module_states
            .insert("tokenizer".into(), ModuleStatusLabel::Simplified);
        c.module_states
            .insert("hierarchy-embedding".into(), ModuleStatusLabel::Simplified);
        c.module_states
            .insert("gating".into(), ModuleStatusLabel::Simplified);
        let modules: Vec<String> = c.module_states.keys().cloned().collect();
        let audit = generate_audit(&modules, &c, &RuleBasedGenerator, 0).unwrap();
        assert!(audit
            .module_statuses
            .values()
            .all(|s| *s == ModuleStatusLabel::Simplified));
        assert_eq!(audit.prioritized_suggestions.len(), 3);
    }

    #[test]
    fn faithful_implementation_audits_clean() {
        let mut c = ctx();
        c.module_states
            .insert("gating".into(), ModuleStatusLabel::FullyImplemented);
        let modules: Vec<String> = c.module_states.keys().cloned().collect();
        let audit = generate_audit(&modules, &c, &RuleBasedGenerator, 0).unwrap();
        assert!(audit
            .module_statuses
            .values()
            .all(|s| *s == ModuleStatusLabel::FullyImplemented));
        assert!(audit.prioritized_suggestions.is_empty());
    }

    #[test]
    fn absent_module_labeled_missing() {
        let mut c = ctx();
        c.module_states
            .insert("fusion".into(), ModuleStatusLabel::Missing);
        let modules: Vec<String> = c.module_states.keys().cloned().collect();
        let audit = generate_audit(&modules, &c, &RuleBasedGenerator, 0).unwrap();
        assert_eq!(
            audit.module_statuses.get("fusion"),
            Some(&ModuleStatusLabel::Missing)
        );
    }

    struct OmittingGenerator;
    impl DiagnosticGenerator for OmittingGenerator {
        fn diagnose(&self, ctx: &DiagnosticContext) -> DiagnosticReport {
            RuleBasedGenerator.diagnose(ctx)
        }
        fn audit(&self, _ctx: &DiagnosticContext) -> CompletenessAudit {
            CompletenessAudit {
                module_statuses: BTreeMap::new(),
                prioritized_suggestions: vec![],
            }
        }
    }

    #[test]
    fn audit_omission_retried_then_fails() {
        let modules = vec!["gating".to_string()];
        let err = generate_audit(&modules, &ctx(), &OmittingGenerator, 1).unwrap_err();
        assert!(matches!(err, DdfError::AuditFailed { attempts: 2, .. }));
    }

    // ---- select_suggestions ----

    #[test]
    fn partition_matches_priority_table() {
        // Priorities {1:High, 2:Med, 3:High, 4:Med, 5:Med} -> A {0,2}, B {1,3}.
        use Priority::*;
        use SuggestionCategory::*;
        let suggestions = vec![
            Suggestion {
                category: ProposalGap,
                description: "s1".into(),
                priority: High,
                target: None,
            },
            Suggestion {
                category: Architecture,
                description: "s2".into(),
                priority: Medium,
                target: None,
            },
            Suggestion {
                category: CodeFix,
                description: "s3".into(),
                priority: High,
                target: None,
            },
            Suggestion {
                category: Architecture,
                description: "s4".into(),
                priority: Medium,
                target: None,
            },
            Suggestion {
                category: Hyperparameter,
                description: "s5".into(),
                priority: Medium,
                target: None,
            },
        ];
        let r = DiagnosticReport {
            reasoning_trace: String::new(),
            suggestions,
        };
        assert_eq!(select_suggestions(&r, AgentLabel::A), vec![0, 2]);
        assert_eq!(select_suggestions(&r, AgentLabel::B), vec![1, 3]);
    }

    #[test]
    fn all_high_falls_back_to_order() {
        use SuggestionCategory::*;
        let suggestions: Vec<Suggestion> = [
            ProposalGap,
            Architecture,
            CodeFix,
            Hyperparameter,
            Architecture,
        ]
        .iter()
        .map(|&c| sugg(c, Priority::High))
        .collect();
        let r = DiagnosticReport {
            reasoning_trace: String::new(),
            suggestions,
        };
        assert_eq!(select_suggestions(&r, AgentLabel::A), vec![0, 1]);
        assert_eq!(select_suggestions(&r, AgentLabel::B), vec![2, 3]);
    }

    #[test]
    fn two_suggestion_list_overlaps_at_most_one() {
        let list = vec![
            sugg(SuggestionCategory::ProposalGap, Priority::High),
            sugg(SuggestionCategory::CodeFix, Priority::Low),
        ];
        let a = partition_selection(&list, AgentLabel::A);
        let b = partition_selection(&list, AgentLabel::B);
        assert_eq!(a, vec![0, 1]);
        assert_eq!(b, vec![0]);
        let overlap = a.iter().filter(|i| b.contains(i)).count();
        assert!(overlap <= 1);
    }

    #[test]
    fn divergence_guarantee_by_enumeration() {
        // Every priority assignment over 4- and 5-element lists covers >= 3
        // distinct suggestions across both agents.
        let prios = [Priority::High, Priority::Medium, Priority::Low];
        for size in [4usize, 5] {
            let mut assignment = vec![0usize; size];
            loop {
                let list: Vec<Suggestion> = assignment
                    .iter()
                    .map(|&p| sugg(SuggestionCategory::Architecture, prios[p]))
                    .collect();
                let mut union: BTreeSet<usize> = BTreeSet::new();
                for agent in [AgentLabel::A, AgentLabel::B] {
                    let picks = partition_selection(&list, agent);
                    assert!((1..=2).contains(&picks.len()));
                    union.extend(picks);
                }
                assert!(
                    union.len() >= 3,
                    "assignment {assignment:?} diverged too little"
                );
                // Next assignment in base-3.
                let mut i = 0;
                loop {
                    if i == size {
                        break;
                    }
                    assignment[i] += 1;
                    if assignment[i] < 3 {
                        break;
                    }
                    assignment[i] = 0;
                    i += 1;
                }
                if i == size {
                    break;
                }
            }
        }
    }

    #[test]
    fn reference_generator_handles_error_trials() {
        let mut c = ctx();
        c.error_class = Some("shape".into());
        c.trial_metric = None;
        let r = RuleBasedGenerator.diagnose(&c);
        assert!(validate_report(&r).is_valid());
        assert!(r
            .suggestions
            .iter()
            .any(|s| s.category == SuggestionCategory::CodeFix && s.description.contains("shape")));
    }

    #[test]
    fn reference_generator_valid_on_all_faithful() {
        let mut c = ctx();
        for v in c.module_states.values_mut() {
            *v = ModuleStatusLabel::FullyImplemented;
        }
        let r = RuleBasedGenerator.diagnose(&c);
        assert!(validate_report(&r).is_valid());
    }
}
