//! End-to-end orchestration of one experiment: baseline establishment, the
//! discovery loop (branch selection, dual-agent competition, memory updates,
//! diagnostic feedback, phase switching, early stopping), ablation
//! construction for winning runs, and evidence-bundle export.
//!
//! The engine is generic over a [`Workbench`] backend so the same loop runs
//! against the deterministic simulator or any future execution substrate.

use crate::ddf::{
    self, choose_mode, generate_audit, generate_diagnosis, CompletenessAudit, DiagnosticContext,
    DiagnosticGenerator, DiagnosticReport, FeedbackMode, ModuleStatusLabel, Suggestion,
};
use crate::lrm::{
    self, digest_cycle, make_seed, render_context, summarize_trial, CycleDigest, CycleEntry,
    CycleHistory, ExtractiveSummarizer, GlobalMemory, MemoryCaps, Seed, TrialView,
};
use crate::qwbe::{
    select_action, select_leaf, AgentLabel, EvalMetrics, LeafMode, OutcomeStatus, QwbeError,
    QwbeParams, SearchTree, SelectionAction, TrialError, TrialOutcome,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Dice margin of the two-tier win criterion, in absolute metric units.
pub const WIN_DICE_MARGIN: f64 = 0.005;

/// Retry budget handed to diagnostic generation.
const GENERATOR_MAX_RETRIES: u32 = 3;

/// Key offset separating ablation retraining draws from discovery draws.
const ABLATION_KEY_BASE: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("baseline bank is empty")]
    EmptyBank,
    #[error("workbench error: {0}")]
    Workbench(#[from] WorkbenchError),
    #[error("search tree error: {0}")]
    Qwbe(#[from] QwbeError),
    #[error("memory error: {0}")]
    Lrm(#[from] lrm::LrmError),
    #[error("diagnostic error: {0}")]
    Ddf(#[from] ddf::DdfError),
    #[error("evidence export refused: run did not win")]
    EvidenceOnNoWin,
    #[error("evidence export refused: ablation record missing")]
    EvidenceWithoutAblations,
}

#[derive(Debug, Error)]
pub enum WorkbenchError {
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("unknown proposal {0}")]
    UnknownProposal(String),
    #[error("workbench infrastructure failure: {0}")]
    Infra(String),
}

// ---------------------------------------------------------------------------
// Workbench contract
// ---------------------------------------------------------------------------

/// Target training configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanTarget {
    TwoD,
    ThreeD,
}

/// Outcome of one training call: a consumable result handle plus the raw
/// log, or an experiment-level failure.
#[derive(Debug)]
pub enum TrainResult<R> {
    Trained { result: R, log: String },
    Failed { error: TrialError, log: String },
}

/// Execution substrate abstraction: preprocessing, candidate implementation,
/// one-epoch verification, training, and evaluation.
///
/// `evaluate` consumes its result handle by value, so each training output is
/// resolvable exactly once by construction.
pub trait Workbench {
    type Impl: Clone + std::fmt::Debug;
    type ResultRef;
    type Plans: Clone + std::fmt::Debug;

    fn baseline_bank(
        &self,
        dataset: &str,
        seed: u64,
    ) -> Result<Vec<(String, EvalMetrics)>, WorkbenchError>;

    fn plan_and_preprocess(
        &self,
        dataset: &str,
        targets: &BTreeSet<PlanTarget>,
        seed: u64,
    ) -> Result<Self::Plans, WorkbenchError>;

    fn proposal_modules(
        &self,
        dataset: &str,
        proposal_id: &str,
    ) -> Result<Vec<String>, WorkbenchError>;

    /// First implementation of a fresh branch. `seed_gain` is the metric
    /// improvement carried by the relay artifact over the dataset baseline.
    #[allow(clippy::too_many_arguments)]
    fn initial_implementation(
        &self,
        dataset: &str,
        proposal_id: &str,
        branch_id: u32,
        agent: AgentLabel,
        seed: u64,
        seed_gain: f64,
    ) -> Result<Self::Impl, WorkbenchError>;

    #[allow(clippy::too_many_arguments)]
    fn apply_modification(
        &self,
        dataset: &str,
        base: &Self::Impl,
        suggestions: &[Suggestion],
        mode: LeafMode,
        agent: AgentLabel,
        trial_key: u64,
        seed: u64,
    ) -> Result<Self::Impl, WorkbenchError>;

    fn verify_one_epoch(
        &self,
        dataset: &str,
        implementation: &Self::Impl,
        trial_key: u64,
        agent: AgentLabel,
        seed: u64,
    ) -> Result<bool, WorkbenchError>;

    #[allow(clippy::too_many_arguments)]
    fn training_network(
        &self,
        dataset: &str,
        implementation: &Self::Impl,
        plans: &Self::Plans,
        trial_key: u64,
        agent: AgentLabel,
        seed: u64,
    ) -> Result<TrainResult<Self::ResultRef>, WorkbenchError>;

    fn evaluate(
        &self,
        dataset: &str,
        result: Self::ResultRef,
    ) -> Result<EvalMetrics, WorkbenchError>;

    /// Implementation-state labels of every proposal module.
    fn describe(&self, implementation: &Self::Impl) -> BTreeMap<String, ModuleStatusLabel>;

    /// Ablation primitive: the same implementation with one module replaced
    /// by a minimal substitute.
    fn remove_module(&self, implementation: &Self::Impl, module: &str) -> Self::Impl;
}

// ---------------------------------------------------------------------------
// Configuration and outcome types
// ---------------------------------------------------------------------------

/// System variant executed by a run; the three minus-variants each replace
/// one mechanism with its minimal substitute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    MinusQwbe,
    MinusLrm,
    MinusDdf,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::MinusQwbe => "minus-qwbe",
            Variant::MinusLrm => "minus-lrm",
            Variant::MinusDdf => "minus-ddf",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "minus-qwbe" => Ok(Variant::MinusQwbe),
            "minus-lrm" => Ok(Variant::MinusLrm),
            "minus-ddf" => Ok(Variant::MinusDdf),
            other => Err(format!("unknown variant {other}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset_id: String,
    pub proposal_ids: Vec<String>,
    pub qwbe: QwbeParams,
    pub memory: MemoryCaps,
    pub seed: u64,
    pub variant: Variant,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.qwbe
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.proposal_ids.is_empty() {
            return Err(PipelineError::Config("no proposals configured".into()));
        }
        if self.proposal_ids.len() as u32 > self.qwbe.k_max {
            return Err(PipelineError::Config(format!(
                "{} proposals exceed the proposal budget {}",
                self.proposal_ids.len(),
                self.qwbe.k_max
            )));
        }
        Ok(())
    }
}

/// Two-tier win classification against the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WinOutcome {
    WinByDice,
    WinByHd95,
    NoWin,
}

impl std::fmt::Display for WinOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WinOutcome::WinByDice => "win_dice",
            WinOutcome::WinByHd95 => "win_hd95",
            WinOutcome::NoWin => "no_win",
        };
        write!(f, "{s}")
    }
}

/// Dice improvement beyond the margin wins outright; a dice difference
/// within the margin defers to a strict HD95 improvement. A missing HD95
/// disables the tiebreak rather than erroring.
pub fn evaluate_win(best: &EvalMetrics, baseline: &EvalMetrics) -> WinOutcome {
    let delta = best.dice - baseline.dice;
    if delta > WIN_DICE_MARGIN {
        return WinOutcome::WinByDice;
    }
    if delta.abs() <= WIN_DICE_MARGIN {
        if let (Some(b), Some(base)) = (best.hd95, baseline.hd95) {
            if b < base {
                return WinOutcome::WinByHd95;
            }
        }
    }
    WinOutcome::NoWin
}

/// Best architecture of a baseline bank by dice, ties to the
/// lexicographically smallest name.
pub fn establish_baseline(
    bank: &[(String, EvalMetrics)],
) -> Result<(String, EvalMetrics), PipelineError> {
    bank.iter()
        .max_by(|(na, ma), (nb, mb)| {
            ma.dice
                .partial_cmp(&mb.dice)
                .unwrap()
                .then_with(|| nb.cmp(na))
        })
        .map(|(n, m)| (n.clone(), m.clone()))
        .ok_or(PipelineError::EmptyBank)
}

// ---------------------------------------------------------------------------
// Competition
// ---------------------------------------------------------------------------

/// One agent's attempt within a step.
#[derive(Clone, Debug)]
pub struct AgentAttempt<I> {
    pub agent: AgentLabel,
    pub implementation: I,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<TrialError>,
    pub log: String,
    pub verified: bool,
    pub selected: Vec<Suggestion>,
}

/// Competition rule: higher dice wins; a valid result beats an error; ties
/// and double errors resolve toward agent A (whose result is considered
/// first).
pub fn compete<I>(a: &AgentAttempt<I>, b: &AgentAttempt<I>) -> AgentLabel {
    match (&a.metrics, &b.metrics) {
        (Some(ma), Some(mb)) => {
            if mb.dice > ma.dice {
                AgentLabel::B
            } else {
                AgentLabel::A
            }
        }
        (Some(_), None) => AgentLabel::A,
        (None, Some(_)) => AgentLabel::B,
        (None, None) => AgentLabel::A,
    }
}

// ---------------------------------------------------------------------------
// Record types
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepMode {
    Initial,
    Improve,
    Repair,
}

/// Diagnostic feedback attached to a committed trial. The minus-ddf variant
/// reduces either mode to its single top suggestion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Feedback {
    Failure { report: DiagnosticReport },
    Optimization { audit: CompletenessAudit },
    Single { suggestion: Suggestion },
}

impl Feedback {
    pub fn suggestion_count(&self) -> usize {
        match self {
            Feedback::Failure { report } => report.suggestions.len(),
            Feedback::Optimization { audit } => audit.prioritized_suggestions.len(),
            Feedback::Single { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrialRecord {
    pub agent: AgentLabel,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<TrialError>,
    pub log_chars: u64,
    pub verified: bool,
    pub selected: Vec<Suggestion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_index: u64,
    pub action: SelectionAction,
    pub branch_id: u32,
    pub parent_id: u64,
    pub mode: StepMode,
    pub agent_a: AgentTrialRecord,
    pub agent_b: AgentTrialRecord,
    pub winner: AgentLabel,
    pub committed_node: u64,
    pub feedback: Option<Feedback>,
    /// Size of the context rendered for this step's agents.
    pub context_chars: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub removed_module: String,
    pub descriptor: BTreeMap<String, ModuleStatusLabel>,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<TrialError>,
}

/// Full replayable trace of one run; the reporting unit for all statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub baseline_name: String,
    pub baseline_metrics: EvalMetrics,
    pub steps: Vec<StepRecord>,
    pub digests: Vec<CycleDigest>,
    pub tree: SearchTree,
    pub win: WinOutcome,
    pub fsp: Option<u64>,
    pub best_node: Option<u64>,
    pub best_metrics: Option<EvalMetrics>,
    /// Module states of the best implementation.
    pub best_descriptor: Option<BTreeMap<String, ModuleStatusLabel>>,
    pub ablations: Option<Vec<AblationVariant>>,
}

impl ExperimentRecord {
    /// Dice of each committed trial in commit order (None for error trials).
    pub fn committed_dice(&self) -> Vec<Option<f64>> {
        self.steps
            .iter()
            .map(|s| self.tree.node(s.committed_node).ok().and_then(|n| n.dice()))
            .collect()
    }

    pub fn summary_csv_row(&self) -> String {
        let fsp = self.fsp.map(|f| f.to_string()).unwrap_or_default();
        let (dice, hd95) = match &self.best_metrics {
            Some(m) => (
                format!("{:.6}", m.dice),
                m.hd95.map(|h| format!("{h:.6}")).unwrap_or_default(),
            ),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.config.dataset_id,
            self.config.variant,
            self.config.seed,
            self.win,
            fsp,
            self.steps.len(),
            dice,
            hd95
        )
    }
}

pub const SUMMARY_CSV_HEADER: &str = "dataset_id,variant,seed,win,fsp,nodes,best_dice,best_hd95";

// ---------------------------------------------------------------------------
// Evidence bundle
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalEvidence {
    pub proposal_id: String,
    pub modules: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentEvidence {
    pub dataset_id: String,
    pub variant: Variant,
    pub seed: u64,
    pub baseline_name: String,
    pub baseline_metrics: EvalMetrics,
    pub best_metrics: EvalMetrics,
    pub win: WinOutcome,
    pub fsp: Option<u64>,
    pub trials: u64,
}

/// The four evidence categories exported for a winning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBundle {
    pub proposal: ProposalEvidence,
    pub experiment: ExperimentEvidence,
    pub ablation: Vec<AblationVariant>,
    pub implementation: BTreeMap<String, ModuleStatusLabel>,
}

/// Assemble the evidence bundle from a winning record; refused on a NoWin
/// record or when the ablation record is missing.
pub fn export_evidence(record: &ExperimentRecord) -> Result<EvidenceBundle, PipelineError> {
    if record.win == WinOutcome::NoWin {
        return Err(PipelineError::EvidenceOnNoWin);
    }
    let ablation = record
        .ablations
        .clone()
        .ok_or(PipelineError::EvidenceWithoutAblations)?;
    let best_node = record.best_node.ok_or(PipelineError::EvidenceOnNoWin)?;
    let node = record.tree.node(best_node)?;
    let branch = record.tree.branch(node.branch_id)?;
    let implementation: BTreeMap<String, ModuleStatusLabel> = ablation
        .first()
        .map(|v| {
            let mut full = v.descriptor.clone();
            full.insert(
                v.removed_module.clone(),
                ModuleStatusLabel::FullyImplemented,
            );
            full
        })
        .unwrap_or_default();
    Ok(EvidenceBundle {
        proposal: ProposalEvidence {
            proposal_id: branch.proposal_id.clone(),
            modules: implementation.keys().cloned().collect(),
        },
        experiment: ExperimentEvidence {
            dataset_id: record.config.dataset_id.clone(),
            variant: record.config.variant,
            seed: record.config.seed,
            baseline_name: record.baseline_name.clone(),
            baseline_metrics: record.baseline_metrics.clone(),
            best_metrics: record
                .best_metrics
                .clone()
                .ok_or(PipelineError::EvidenceOnNoWin)?,
            win: record.win,
            fsp: record.fsp,
            trials: record.steps.len() as u64,
        },
        ablation,
        implementation,
    })
}

// ---------------------------------------------------------------------------
// Discovery engine
// ---------------------------------------------------------------------------

/// Running state of one experiment's discovery stage.
pub struct Discovery<'a, W: Workbench, G: DiagnosticGenerator> {
    config: ExperimentConfig,
    /// Effective parameters (proposal budget clamped to available proposals).
    params: QwbeParams,
    workbench: &'a W,
    generator: &'a G,
    summarizer: ExtractiveSummarizer,
    plans: W::Plans,
    baseline_name: String,
    baseline_metrics: EvalMetrics,
    tree: SearchTree,
    histories: Vec<CycleHistory>,
    branch_feedback: Vec<Option<Feedback>>,
    branch_seed_gain: Vec<f64>,
    raw_logs: Vec<Vec<String>>,
    node_impls: BTreeMap<u64, W::Impl>,
    global: GlobalMemory,
    seed_relay: Seed,
    digested: Vec<bool>,
    digests: Vec<CycleDigest>,
    trial_memory: Vec<lrm::ModificationRecord>,
    steps: Vec<StepRecord>,
    best_so_far: f64,
    rr_cursor: u32,
    done: bool,
}

impl<'a, W: Workbench, G: DiagnosticGenerator> Discovery<'a, W, G> {
    pub fn new(
        config: &ExperimentConfig,
        workbench: &'a W,
        generator: &'a G,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let bank = workbench.baseline_bank(&config.dataset_id, config.seed)?;
        let (baseline_name, baseline_metrics) = establish_baseline(&bank)?;
        let targets: BTreeSet<PlanTarget> = [PlanTarget::ThreeD].into_iter().collect();
        let plans = workbench.plan_and_preprocess(&config.dataset_id, &targets, config.seed)?;
        let mut params = config.qwbe.clone();
        params.k_max = params.k_max.min(config.proposal_ids.len() as u32);
        let m0 = baseline_metrics.dice;
        let global = GlobalMemory::new(config.memory.global_cap);
        let seed_relay = Seed {
            artifact_ref: None,
            artifact_metric: m0,
            memory: global.clone(),
        };
        Ok(Self {
            config: config.clone(),
            params,
            workbench,
            generator,
            summarizer: ExtractiveSummarizer::new(config.memory.summary_cap),
            plans,
            baseline_name,
            baseline_metrics,
            tree: SearchTree::new(m0),
            histories: Vec::new(),
            branch_feedback: Vec::new(),
            branch_seed_gain: Vec::new(),
            raw_logs: Vec::new(),
            node_impls: BTreeMap::new(),
            global,
            seed_relay,
            digested: Vec::new(),
            digests: Vec::new(),
            trial_memory: Vec::new(),
            steps: Vec::new(),
            best_so_far: m0,
            rr_cursor: 0,
            done: false,
        })
    }

    pub fn tree(&self) -> &SearchTree {
        &self.tree
    }

    fn next_action(&mut self) -> Option<SelectionAction> {
        if self.config.variant == Variant::MinusQwbe
            && self.tree.phase() == crate::qwbe::Phase::Explore
        {
            return self.round_robin_action();
        }
        select_action(&self.tree, &self.params)
    }

    /// Uniform round-robin over proposal slots: each turn serves the next
    /// slot, creating its branch on first visit and skipping slots whose
    /// budget or leaves are exhausted.
    fn round_robin_action(&mut self) -> Option<SelectionAction> {
        let slots = self.params.k_max;
        let k = self.tree.branch_count();
        for t in 0..slots {
            let slot = (self.rr_cursor + t) % slots;
            if slot == k {
                self.rr_cursor = slot + 1;
                return Some(SelectionAction::CreateBranch);
            }
            if slot < k {
                let branch = self.tree.branch(slot).ok()?;
                if branch.n_i < self.params.n_per_proposal
                    && select_leaf(&self.tree, slot, &self.params).is_ok()
                {
                    self.rr_cursor = slot + 1;
                    return Some(SelectionAction::ExpandBranch(slot));
                }
            }
        }
        None
    }

    /// Execute one discovery step; returns false once the run is complete.
    pub fn step(&mut self) -> Result<bool, PipelineError> {
        if self.done {
            return Ok(false);
        }
        let Some(action) = self.next_action() else {
            self.done = true;
            return Ok(false);
        };
        let (branch_id, parent_id, mode) = match action {
            SelectionAction::CreateBranch => {
                let branch_id = self.open_branch()?;
                let root = self.tree.branch(branch_id)?.nodes[0];
                (branch_id, root, StepMode::Initial)
            }
            SelectionAction::ExpandBranch(b) => {
                let (leaf, leaf_mode) = select_leaf(&self.tree, b, &self.params)
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                let mode = match leaf_mode {
                    LeafMode::Repair => StepMode::Repair,
                    LeafMode::Improve => {
                        if self.tree.node(leaf)?.status == OutcomeStatus::Baseline
                            && self.branch_feedback[b as usize].is_none()
                        {
                            StepMode::Initial
                        } else {
                            StepMode::Improve
                        }
                    }
                };
                (b, leaf, mode)
            }
            SelectionAction::ExpandGlobalBest(node) => {
                let b = self.tree.node(node)?.branch_id;
                (b, node, StepMode::Improve)
            }
        };
        let context_chars = self.render_step_context(branch_id);
        let trial_key = self.tree.next_creation_index();

        let a = self.run_agent(AgentLabel::A, branch_id, parent_id, mode, trial_key)?;
        let b = self.run_agent(AgentLabel::B, branch_id, parent_id, mode, trial_key)?;
        let winner = compete(&a, &b);
        let (win_attempt, lose_attempt) = if winner == AgentLabel::A {
            (&a, &b)
        } else {
            (&b, &a)
        };

        let outcome = match (&win_attempt.metrics, &win_attempt.error) {
            (Some(m), _) => TrialOutcome::Metrics(m.clone()),
            (None, Some(e)) => TrialOutcome::Error(e.clone()),
            (None, None) => unreachable!("attempt carries metrics or error"),
        };
        let best_before = self.best_so_far;
        let node_id = self.tree.insert_trial(
            branch_id,
            parent_id,
            winner,
            outcome,
            mode == StepMode::Repair,
            &self.params,
        )?;
        self.node_impls
            .insert(node_id, win_attempt.implementation.clone());
        if self.config.variant == Variant::MinusLrm {
            self.raw_logs[branch_id as usize].push(win_attempt.log.clone());
        }

        // Trial-level memory: distill and discard the raw log.
        let node = self.tree.node(node_id)?.clone();
        let parent_dice = self.tree.node(parent_id)?.dice();
        let view = TrialView {
            node_id,
            status: node.status,
            dice: node.dice(),
            parent_dice,
            error_class: node.error.as_ref().map(|e| e.class.clone()),
            what_changed: describe_change(mode, &win_attempt.selected),
        };
        let record = summarize_trial(&win_attempt.log, &view, &self.summarizer);
        let mod_ref = self.trial_memory.len() as u64;
        self.trial_memory.push(record.clone());
        self.tree.set_modification_ref(node_id, mod_ref)?;

        // Diagnostic feedback for the next expansion of this branch.
        let feedback = self.make_feedback(&node, win_attempt, best_before)?;
        let excerpt = feedback_excerpt(&feedback, self.config.memory.excerpt_cap);
        self.histories[branch_id as usize].append_entry(CycleEntry {
            trial_ref: node_id,
            status: node.status,
            metrics: node.metrics.clone(),
            modification: record,
            diagnostic_excerpt: excerpt,
            losing_agent_metric: lose_attempt.metrics.as_ref().map(|m| m.dice),
            losing_agent_errored: lose_attempt.error.is_some(),
        })?;
        self.branch_feedback[branch_id as usize] = Some(feedback.clone());
        if let Some(d) = node.dice() {
            if d > self.best_so_far {
                self.best_so_far = d;
            }
        }

        self.steps.push(StepRecord {
            step_index: self.steps.len() as u64,
            action,
            branch_id,
            parent_id,
            mode,
            agent_a: attempt_record(&a),
            agent_b: attempt_record(&b),
            winner,
            committed_node: node_id,
            feedback: Some(feedback),
            context_chars,
        });

        // A branch that just consumed its iteration budget completes its
        // cycle: digest, merge into global memory, advance the relay seed.
        if self.tree.branch(branch_id)?.n_i >= self.params.n_per_proposal {
            self.complete_cycle(branch_id);
        }
        Ok(true)
    }

    /// Drain remaining steps and assemble the final record (running the
    /// ablation stage when the run won).
    pub fn finish(mut self) -> Result<ExperimentRecord, PipelineError> {
        while self.step()? {}
        for b in 0..self.tree.branch_count() {
            if !self.digested[b as usize] {
                self.complete_cycle(b);
            }
        }
        let m0 = self.baseline_metrics.dice;
        let committed: Vec<Option<f64>> = self
            .steps
            .iter()
            .map(|s| self.tree.node(s.committed_node).ok().and_then(|n| n.dice()))
            .collect();
        let fsp = crate::stats::first_success_position_of(&committed, m0);
        let best_node = self
            .tree
            .nodes()
            .iter()
            .filter(|n| n.status != OutcomeStatus::Baseline)
            .filter_map(|n| n.dice().map(|d| (n.node_id, d)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(id, _)| id);
        let best_metrics = best_node
            .and_then(|id| self.tree.node(id).ok())
            .and_then(|n| n.metrics.clone());
        let win = match &best_metrics {
            Some(m) => evaluate_win(m, &self.baseline_metrics),
            None => WinOutcome::NoWin,
        };
        let best_descriptor = best_node
            .and_then(|id| self.node_impls.get(&id))
            .map(|imp| self.workbench.describe(imp));
        let ablations = if win != WinOutcome::NoWin {
            let best = best_node.expect("win implies a best node");
            Some(self.build_ablations(best)?)
        } else {
            None
        };
        Ok(ExperimentRecord {
            config: self.config,
            baseline_name: self.baseline_name,
            baseline_metrics: self.baseline_metrics,
            steps: self.steps,
            digests: self.digests,
            tree: self.tree,
            win,
            fsp,
            best_node,
            best_metrics,
            best_descriptor,
            ablations,
        })
    }

    fn open_branch(&mut self) -> Result<u32, PipelineError> {
        let k = self.tree.branch_count() as usize;
        let proposal_id = self.config.proposal_ids[k].clone();
        let branch_id = self
            .tree
            .create_branch(&proposal_id, self.baseline_metrics.clone());
        let seed_gain = (self.seed_relay.artifact_metric - self.baseline_metrics.dice).max(0.0);
        let mut history =
            CycleHistory::new(branch_id, &proposal_id, self.seed_relay.artifact_metric);
        let root = self.tree.branch(branch_id)?.nodes[0];
        history.append_entry(CycleEntry {
            trial_ref: root,
            status: OutcomeStatus::Baseline,
            metrics: Some(self.baseline_metrics.clone()),
            modification: lrm::ModificationRecord {
                summary: format!("precomputed {} baseline", self.baseline_name),
                what_changed: String::new(),
                why_outcome_differed: String::new(),
                source_trial: root,
            },
            diagnostic_excerpt: String::new(),
            losing_agent_metric: None,
            losing_agent_errored: false,
        })?;
        self.histories.push(history);
        self.branch_feedback.push(None);
        self.branch_seed_gain.push(seed_gain);
        self.raw_logs.push(Vec::new());
        self.digested.push(false);
        Ok(branch_id)
    }

    fn render_step_context(&self, branch_id: u32) -> u64 {
        let text = match self.config.variant {
            Variant::MinusLrm => {
                let logs = &self.raw_logs[branch_id as usize];
                let mut ctx = format!("cycle {branch_id} raw history ({} logs)\n", logs.len());
                for log in logs {
                    ctx.push_str(log);
                    ctx.push('\n');
                }
                ctx
            }
            _ => render_context(
                &self.histories[branch_id as usize],
                &self.global,
                &self.config.memory,
            ),
        };
        text.chars().count() as u64
    }

    fn run_agent(
        &self,
        agent: AgentLabel,
        branch_id: u32,
        parent_id: u64,
        mode: StepMode,
        trial_key: u64,
    ) -> Result<AgentAttempt<W::Impl>, PipelineError> {
        let d = &self.config.dataset_id;
        let seed = self.config.seed;
        let selected = self.agent_selection(agent, branch_id, mode);
        let implementation = match mode {
            StepMode::Initial => self.workbench.initial_implementation(
                d,
                &self.config.proposal_ids[branch_id as usize],
                branch_id,
                agent,
                seed,
                self.branch_seed_gain[branch_id as usize],
            )?,
            StepMode::Improve | StepMode::Repair => {
                let base = self
                    .node_impls
                    .get(&parent_id)
                    .cloned()
                    .map(Ok)
                    .unwrap_or_else(|| {
                        // Parent is a baseline root expanded after feedback
                        // arrived: start from a fresh initial implementation.
                        self.workbench.initial_implementation(
                            d,
                            &self.config.proposal_ids[branch_id as usize],
                            branch_id,
                            agent,
                            seed,
                            self.branch_seed_gain[branch_id as usize],
                        )
                    })?;
                let leaf_mode = if mode == StepMode::Repair {
                    LeafMode::Repair
                } else {
                    LeafMode::Improve
                };
                self.workbench
                    .apply_modification(d, &base, &selected, leaf_mode, agent, trial_key, seed)?
            }
        };
        if !self
            .workbench
            .verify_one_epoch(d, &implementation, trial_key, agent, seed)?
        {
            return Ok(AgentAttempt {
                agent,
                implementation,
                metrics: None,
                error: Some(TrialError {
                    class: "verification".into(),
                    message: "candidate rejected by one-epoch verification".into(),
                }),
                log: format!("one-epoch verification failed for agent {agent}"),
                verified: false,
                selected,
            });
        }
        match self.workbench.training_network(
            d,
            &implementation,
            &self.plans,
            trial_key,
            agent,
            seed,
        )? {
            TrainResult::Trained { result, log } => {
                let metrics = self.workbench.evaluate(d, result)?;
                Ok(AgentAttempt {
                    agent,
                    implementation,
                    metrics: Some(metrics),
                    error: None,
                    log,
                    verified: true,
                    selected,
                })
            }
            TrainResult::Failed { error, log } => Ok(AgentAttempt {
                agent,
                implementation,
                metrics: None,
                error: Some(error),
                log,
                verified: true,
                selected,
            }),
        }
    }

    fn agent_selection(
        &self,
        agent: AgentLabel,
        branch_id: u32,
        mode: StepMode,
    ) -> Vec<Suggestion> {
        if mode != StepMode::Improve {
            return Vec::new();
        }
        match &self.branch_feedback[branch_id as usize] {
            Some(Feedback::Failure { report }) => ddf::select_suggestions(report, agent)
                .into_iter()
                .map(|i| report.suggestions[i].clone())
                .collect(),
            Some(Feedback::Optimization { audit }) => {
                let picks = ddf::partition_selection(&audit.prioritized_suggestions, agent);
                if picks.is_empty() {
                    vec![default_refinement(agent)]
                } else {
                    picks
                        .into_iter()
                        .map(|i| audit.prioritized_suggestions[i].clone())
                        .collect()
                }
            }
            Some(Feedback::Single { suggestion }) => vec![suggestion.clone()],
            None => Vec::new(),
        }
    }

    fn make_feedback(
        &self,
        node: &crate::qwbe::TrialNode,
        attempt: &AgentAttempt<W::Impl>,
        best_before: f64,
    ) -> Result<Feedback, PipelineError> {
        let branch = self.tree.branch(node.branch_id)?;
        let history = &self.histories[node.branch_id as usize];
        let ctx = DiagnosticContext {
            proposal_id: branch.proposal_id.clone(),
            module_states: self.workbench.describe(&attempt.implementation),
            error_class: node.error.as_ref().map(|e| e.class.clone()),
            trial_metric: node.dice(),
            best_metric: best_before,
            history_excerpt: format!(
                "cycle {} best {:.4} over {} entries",
                history.cycle_id,
                history.best_metric,
                history.entries.len()
            ),
        };
        let mode = match node.dice() {
            Some(d) => choose_mode(d, best_before),
            None => FeedbackMode::Failure,
        };
        let feedback = match mode {
            FeedbackMode::Failure => {
                let report = generate_diagnosis(&ctx, self.generator, GENERATOR_MAX_RETRIES)?;
                if self.config.variant == Variant::MinusDdf {
                    let top = ddf::partition_selection(&report.suggestions, AgentLabel::A)[0];
                    Feedback::Single {
                        suggestion: report.suggestions[top].clone(),
                    }
                } else {
                    Feedback::Failure { report }
                }
            }
            FeedbackMode::Optimization => {
                let modules = self
                    .workbench
                    .proposal_modules(&self.config.dataset_id, &branch.proposal_id)?;
                let audit = generate_audit(&modules, &ctx, self.generator, GENERATOR_MAX_RETRIES)?;
                if self.config.variant == Variant::MinusDdf {
                    let suggestion = audit
                        .prioritized_suggestions
                        .first()
                        .cloned()
                        .unwrap_or_else(|| default_refinement(AgentLabel::A));
                    Feedback::Single { suggestion }
                } else {
                    Feedback::Optimization { audit }
                }
            }
        };
        Ok(feedback)
    }

    fn complete_cycle(&mut self, branch_id: u32) {
        if self.digested[branch_id as usize] {
            return;
        }
        let history = &self.histories[branch_id as usize];
        let digest = digest_cycle(history, &self.config.memory, &self.summarizer);
        if self.config.variant != Variant::MinusLrm {
            self.global.merge_digest(&digest);
        }
        self.seed_relay = make_seed(history, &self.global, &self.seed_relay);
        self.digests.push(digest);
        self.digested[branch_id as usize] = true;
    }

    fn build_ablations(&self, best_node: u64) -> Result<Vec<AblationVariant>, PipelineError> {
        let implementation = self
            .node_impls
            .get(&best_node)
            .ok_or_else(|| PipelineError::Config("winning implementation missing".into()))?;
        let descriptor = self.workbench.describe(implementation);
        let d = &self.config.dataset_id;
        // Retraining runs on a seed schedule derived from the run seed so
        // ablations never replay discovery-time noise draws.
        let seed = self.config.seed ^ 0x61_62_6c;
        let mut variants = Vec::new();
        for (i, module) in descriptor.keys().enumerate() {
            let variant_impl = self.workbench.remove_module(implementation, module);
            let key = ABLATION_KEY_BASE + i as u64;
            let (metrics, error) = match self.workbench.training_network(
                d,
                &variant_impl,
                &self.plans,
                key,
                AgentLabel::A,
                seed,
            )? {
                TrainResult::Trained { result, .. } => {
                    (Some(self.workbench.evaluate(d, result)?), None)
                }
                TrainResult::Failed { error, .. } => (None, Some(error)),
            };
            variants.push(AblationVariant {
                removed_module: module.clone(),
                descriptor: self.workbench.describe(&variant_impl),
                metrics,
                error,
            });
        }
        Ok(variants)
    }
}

fn attempt_record<I>(a: &AgentAttempt<I>) -> AgentTrialRecord {
    AgentTrialRecord {
        agent: a.agent,
        metrics: a.metrics.clone(),
        error: a.error.clone(),
        log_chars: a.log.chars().count() as u64,
        verified: a.verified,
        selected: a.selected.clone(),
    }
}

fn describe_change(mode: StepMode, selected: &[Suggestion]) -> String {
    match mode {
        StepMode::Initial => "initial implementation of the proposal".to_string(),
        StepMode::Repair => "repair attempt on the failing implementation".to_string(),
        StepMode::Improve => {
            if selected.is_empty() {
                "refinement of the current best implementation".to_string()
            } else {
                selected
                    .iter()
                    .map(|s| format!("[{}] {}", s.category, s.description))
                    .collect::<Vec<_>>()
                    .join("; ")
            }
        }
    }
}

fn default_refinement(agent: AgentLabel) -> Suggestion {
    Suggestion {
        category: ddf::SuggestionCategory::Architecture,
        description: format!("refine the current best configuration (agent {agent})"),
        priority: ddf::Priority::Medium,
        target: None,
    }
}

fn feedback_excerpt(feedback: &Feedback, cap: usize) -> String {
    let text = match feedback {
        Feedback::Failure { report } => report.reasoning_trace.clone(),
        Feedback::Optimization { audit } => audit
            .module_statuses
            .iter()
            .map(|(m, s)| format!("{m}={s}"))
            .collect::<Vec<_>>()
            .join(", "),
        Feedback::Single { suggestion } => suggestion.description.clone(),
    };
    lrm::truncate_chars(&text, cap)
}

/// Run one experiment end to end and return its replayable record.
pub fn run_experiment<W: Workbench, G: DiagnosticGenerator>(
    config: &ExperimentConfig,
    workbench: &W,
    generator: &G,
) -> Result<ExperimentRecord, PipelineError> {
    Discovery::new(config, workbench, generator)?.finish()
}
