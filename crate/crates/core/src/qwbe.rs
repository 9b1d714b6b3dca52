//! Quality-weighted branch exploration.
//!
//! The search state is a forest of proposal branches, each rooted at a
//! baseline node. Branch selection uses a PUCT-style score whose exploration
//! bonus is modulated by a risk-averse prior over empirical branch quality,
//! plus a virtual new-branch action. Once any trial strictly exceeds the
//! baseline metric the tree latches into an exploitation phase that always
//! expands the globally best node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Tunable constants for branch scoring, error handling, and budgets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QwbeParams {
    /// Exploration coefficient.
    pub c_puct: f64,
    /// Exponent of the risk-averse prior.
    pub prior_exponent: f64,
    /// Below-baseline penalization exponent of the quality normalization.
    pub below_penalty_exponent: f64,
    /// Numerical-stability floor for normalization denominators.
    pub eps: f64,
    /// Quality correction subtracted for error trials.
    pub delta_buggy: f64,
    /// Maximum consecutive-error chain length still eligible for repair.
    pub debug_depth: u32,
    /// Proposal budget: maximum number of branches.
    pub k_max: u32,
    /// Iteration budget per proposal branch.
    pub n_per_proposal: u32,
}

impl Default for QwbeParams {
    fn default() -> Self {
        Self {
            c_puct: 1.5,
            prior_exponent: 3.0,
            below_penalty_exponent: 1.0,
            eps: 1e-9,
            delta_buggy: 0.2,
            debug_depth: 3,
            k_max: 3,
            n_per_proposal: 10,
        }
    }
}

impl QwbeParams {
    pub fn validate(&self) -> Result<(), QwbeError> {
        let positive = [
            ("c_puct", self.c_puct),
            ("prior_exponent", self.prior_exponent),
            ("below_penalty_exponent", self.below_penalty_exponent),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(QwbeError::InvalidParam { name, value: v });
            }
        }
        if !(0.0..=1.0).contains(&self.delta_buggy) {
            return Err(QwbeError::InvalidParam {
                name: "delta_buggy",
                value: self.delta_buggy,
            });
        }
        if self.debug_depth == 0 || self.k_max == 0 || self.n_per_proposal == 0 {
            return Err(QwbeError::InvalidParam {
                name: "budget",
                value: 0.0,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum QwbeError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("unknown branch {0}")]
    UnknownBranch(u32),
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("parent {parent} does not belong to branch {branch}")]
    ParentOutsideBranch { parent: u64, branch: u32 },
    #[error("no valid ancestor for error node (tree must contain a baseline root)")]
    NoValidAncestor,
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Evaluation metrics of one trial. `dice` is the primary signal; `hd95`
/// participates only in the win tiebreak.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub dice: f64,
    pub hd95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_class: Option<Vec<f64>>,
}

impl EvalMetrics {
    pub fn new(dice: f64, hd95: f64) -> Self {
        Self {
            dice,
            hd95: Some(hd95),
            per_class: None,
        }
    }
}

/// Outcome classification of a trial relative to the baseline metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeStatus {
    Baseline,
    Success,
    Underperforming,
    Error,
}

impl OutcomeStatus {
    /// Status rule: errors classify as `Error`; a metric strictly above the
    /// baseline is `Success`; anything else is `Underperforming`.
    pub fn classify(metric: Option<f64>, m0: f64, error: bool) -> Self {
        if error {
            OutcomeStatus::Error
        } else if metric.is_some_and(|m| m > m0) {
            OutcomeStatus::Success
        } else {
            OutcomeStatus::Underperforming
        }
    }
}

impl std::fmt::Display for OutcomeStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OutcomeStatus::Baseline => "baseline",
            OutcomeStatus::Success => "success",
            OutcomeStatus::Underperforming => "underperforming",
            OutcomeStatus::Error => "error",
        };
        write!(f, "{s}")
    }
}

/// Which of the two competing agents produced a trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentLabel {
    A,
    B,
}

impl AgentLabel {
    pub fn stream_tag(self) -> u64 {
        match self {
            AgentLabel::A => 0,
            AgentLabel::B => 1,
        }
    }
}

impl std::fmt::Display for AgentLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AgentLabel::A => write!(f, "A"),
            AgentLabel::B => write!(f, "B"),
        }
    }
}

/// Error descriptor for trials that terminated without a valid metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialError {
    pub class: String,
    pub message: String,
}

/// One executed (or failed) experiment attempt committed to the tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialNode {
    pub node_id: u64,
    pub branch_id: u32,
    pub parent_id: Option<u64>,
    pub agent_label: Option<AgentLabel>,
    pub metrics: Option<EvalMetrics>,
    pub error: Option<TrialError>,
    pub status: OutcomeStatus,
    pub q: Option<f64>,
    pub stale: bool,
    pub creation_index: u64,
    pub modification_ref: Option<u64>,
}

impl TrialNode {
    pub fn dice(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.dice)
    }
}

/// One proposal branch: an independent experimental subtree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub branch_id: u32,
    pub proposal_id: String,
    /// Node ids in creation order; the first is the baseline root.
    pub nodes: Vec<u64>,
    /// Expansion count: number of non-baseline trials allocated.
    pub n_i: u32,
    /// Mean normalized quality over non-stale scored trials; 0 when empty.
    pub q_cached: f64,
}

/// Search phase. The transition Explore -> Exploit is a latch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Explore,
    Exploit,
}

/// Action chosen by one selection step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionAction {
    ExpandBranch(u32),
    CreateBranch,
    ExpandGlobalBest(u64),
}

/// Expansion mode for a selected leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeafMode {
    Repair,
    Improve,
}

/// Payload of one trial result to apply to the tree.
#[derive(Clone, Debug)]
pub enum TrialOutcome {
    Metrics(EvalMetrics),
    Error(TrialError),
}

// ---------------------------------------------------------------------------
// Scalar operations
// ---------------------------------------------------------------------------

/// Map a raw metric into normalized quality in [-1, 1] relative to the
/// baseline `m0`. Improvements scale by the remaining headroom; shortfalls
/// scale by the baseline itself and are shaped by the penalty exponent.
pub fn normalize_quality(m: f64, m0: f64, params: &QwbeParams) -> f64 {
    if m >= m0 {
        (m - m0) / (1.0 - m0).max(params.eps)
    } else {
        -((m0 - m) / m0.max(params.eps))
            .powf(params.below_penalty_exponent)
            .min(1.0)
    }
}

/// Quality assigned to an error trial: the nearest valid ancestor's quality
/// minus a fixed correction, clamped back into [-1, 1].
pub fn error_node_quality(ancestor_q: f64, params: &QwbeParams) -> f64 {
    (ancestor_q - params.delta_buggy).clamp(-1.0, 1.0)
}

/// Risk-averse prior P(q) = max(0, 1 + q)^p. Zero at q = -1, unit at q = 0.
pub fn prior_value(q: f64, params: &QwbeParams) -> f64 {
    (1.0 + q).max(0.0).powf(params.prior_exponent)
}

// ---------------------------------------------------------------------------
// Search tree
// ---------------------------------------------------------------------------

/// The full search state: branches, their trial nodes, phase, and baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<TrialNode>,
    branches: Vec<Branch>,
    phase: Phase,
    baseline_m0: f64,
    next_creation_index: u64,
}

impl SearchTree {
    pub fn new(baseline_m0: f64) -> Self {
        Self {
            nodes: Vec::new(),
            branches: Vec::new(),
            phase: Phase::Explore,
            baseline_m0,
            next_creation_index: 0,
        }
    }

    /// Rebuild a tree from serialized parts, revalidating the core
    /// bookkeeping invariants.
    pub fn from_parts(
        nodes: Vec<TrialNode>,
        branches: Vec<Branch>,
        phase: Phase,
        baseline_m0: f64,
    ) -> Result<Self, QwbeError> {
        for (i, node) in nodes.iter().enumerate() {
            if node.node_id != i as u64 {
                return Err(QwbeError::UnknownNode(node.node_id));
            }
            if node.branch_id as usize >= branches.len() {
                return Err(QwbeError::UnknownBranch(node.branch_id));
            }
        }
        for (i, branch) in branches.iter().enumerate() {
            if branch.branch_id != i as u32 {
                return Err(QwbeError::UnknownBranch(branch.branch_id));
            }
            let non_baseline = branch
                .nodes
                .iter()
                .filter(|&&id| {
                    nodes
                        .get(id as usize)
                        .is_some_and(|n| n.status != OutcomeStatus::Baseline)
                })
                .count();
            if non_baseline != branch.n_i as usize {
                return Err(QwbeError::UnknownBranch(branch.branch_id));
            }
        }
        let next = nodes.len() as u64;
        Ok(Self {
            nodes,
            branches,
            phase,
            baseline_m0,
            next_creation_index: next,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn baseline_m0(&self) -> f64 {
        self.baseline_m0
    }

    /// Current branch count K.
    pub fn branch_count(&self) -> u32 {
        self.branches.len() as u32
    }

    /// N_total = K + sum of all expansion counts.
    pub fn n_total(&self) -> u64 {
        self.branches.len() as u64 + self.branches.iter().map(|b| b.n_i as u64).sum::<u64>()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn nodes(&self) -> &[TrialNode] {
        &self.nodes
    }

    pub fn branch(&self, branch_id: u32) -> Result<&Branch, QwbeError> {
        self.branches
            .get(branch_id as usize)
            .ok_or(QwbeError::UnknownBranch(branch_id))
    }

    pub fn node(&self, node_id: u64) -> Result<&TrialNode, QwbeError> {
        self.nodes
            .get(node_id as usize)
            .ok_or(QwbeError::UnknownNode(node_id))
    }

    /// Creation index the next inserted node will receive.
    pub fn next_creation_index(&self) -> u64 {
        self.next_creation_index
    }

    /// Number of committed non-baseline trials.
    pub fn trial_count(&self) -> u64 {
        self.branches.iter().map(|b| b.n_i as u64).sum()
    }

    /// Open a new proposal branch rooted at a baseline node with q = 0.
    pub fn create_branch(&mut self, proposal_id: &str, baseline: EvalMetrics) -> u32 {
        let branch_id = self.branches.len() as u32;
        let node_id = self.alloc_node_id();
        self.nodes.push(TrialNode {
            node_id,
            branch_id,
            parent_id: None,
            agent_label: None,
            metrics: Some(baseline),
            error: None,
            status: OutcomeStatus::Baseline,
            q: Some(0.0),
            stale: false,
            creation_index: node_id,
            modification_ref: None,
        });
        self.branches.push(Branch {
            branch_id,
            proposal_id: proposal_id.to_string(),
            nodes: vec![node_id],
            n_i: 0,
            q_cached: 0.0,
        });
        branch_id
    }

    /// Apply one trial result. Assigns normalized quality, classifies the
    /// outcome, refreshes the branch quality cache, and updates the phase.
    /// A repair commit marks the repaired parent stale.
    pub fn insert_trial(
        &mut self,
        branch_id: u32,
        parent_id: u64,
        agent: AgentLabel,
        outcome: TrialOutcome,
        is_repair: bool,
        params: &QwbeParams,
    ) -> Result<u64, QwbeError> {
        self.branch(branch_id)?;
        let parent = self.node(parent_id)?;
        if parent.branch_id != branch_id {
            return Err(QwbeError::ParentOutsideBranch {
                parent: parent_id,
                branch: branch_id,
            });
        }
        let (metrics, error, q) = match outcome {
            TrialOutcome::Metrics(m) => {
                let q = normalize_quality(m.dice, self.baseline_m0, params);
                (Some(m), None, q)
            }
            TrialOutcome::Error(e) => {
                let ancestor_q = self.nearest_valid_ancestor_q(parent_id)?;
                (None, Some(e), error_node_quality(ancestor_q, params))
            }
        };
        let status = OutcomeStatus::classify(
            metrics.as_ref().map(|m| m.dice),
            self.baseline_m0,
            error.is_some(),
        );
        let node_id = self.alloc_node_id();
        self.nodes.push(TrialNode {
            node_id,
            branch_id,
            parent_id: Some(parent_id),
            agent_label: Some(agent),
            metrics,
            error,
            status,
            q: Some(q),
            stale: false,
            creation_index: node_id,
            modification_ref: None,
        });
        if is_repair {
            self.nodes[parent_id as usize].stale = true;
        }
        let branch = &mut self.branches[branch_id as usize];
        branch.nodes.push(node_id);
        branch.n_i += 1;
        self.refresh_branch_quality(branch_id);
        self.update_phase();
        Ok(node_id)
    }

    pub fn set_modification_ref(&mut self, node_id: u64, idx: u64) -> Result<(), QwbeError> {
        self.nodes
            .get_mut(node_id as usize)
            .ok_or(QwbeError::UnknownNode(node_id))?
            .modification_ref = Some(idx);
        Ok(())
    }

    /// Mean normalized quality over the branch's non-stale, non-baseline
    /// trials; 0 when no trial has been scored yet.
    pub fn branch_quality(&self, branch_id: u32) -> Result<f64, QwbeError> {
        let branch = self.branch(branch_id)?;
        let scored: Vec<f64> = branch
            .nodes
            .iter()
            .map(|&id| &self.nodes[id as usize])
            .filter(|n| n.status != OutcomeStatus::Baseline && !n.stale)
            .filter_map(|n| n.q)
            .collect();
        if scored.is_empty() {
            Ok(0.0)
        } else {
            Ok(scored.iter().sum::<f64>() / scored.len() as f64)
        }
    }

    fn refresh_branch_quality(&mut self, branch_id: u32) {
        let q = self.branch_quality(branch_id).expect("branch exists");
        self.branches[branch_id as usize].q_cached = q;
    }

    fn nearest_valid_ancestor_q(&self, mut id: u64) -> Result<f64, QwbeError> {
        loop {
            let node = self.node(id)?;
            if node.metrics.is_some() {
                return node.q.ok_or(QwbeError::NoValidAncestor);
            }
            match node.parent_id {
                Some(p) => id = p,
                None => return Err(QwbeError::NoValidAncestor),
            }
        }
    }

    /// Latch into exploitation once any non-stale trial strictly exceeds the
    /// baseline metric. Exploitation is permanent.
    pub fn update_phase(&mut self) {
        if self.phase == Phase::Exploit {
            return;
        }
        let beaten = self.nodes.iter().any(|n| {
            n.status != OutcomeStatus::Baseline
                && !n.stale
                && n.dice().is_some_and(|d| d > self.baseline_m0)
        });
        if beaten {
            self.phase = Phase::Exploit;
        }
    }

    /// Node with the maximal metric tree-wide; ties go to the lowest id.
    pub fn global_best_node(&self) -> Option<u64> {
        self.nodes
            .iter()
            .filter_map(|n| n.dice().map(|d| (n.node_id, d)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
            .map(|(id, _)| id)
    }

    fn alloc_node_id(&mut self) -> u64 {
        let id = self.next_creation_index;
        self.next_creation_index += 1;
        debug_assert_eq!(id, self.nodes.len() as u64);
        id
    }
}

// ---------------------------------------------------------------------------
// Scoring and selection
// ---------------------------------------------------------------------------

/// PUCT-style branch score: Q_i + c_puct * P(Q_i) * sqrt(N_total) / (1 + N_i).
pub fn score_branch(branch: &Branch, tree: &SearchTree, params: &QwbeParams) -> f64 {
    let q = branch.q_cached;
    let explore = params.c_puct * prior_value(q, params) * (tree.n_total() as f64).sqrt()
        / (1.0 + branch.n_i as f64);
    q + explore
}

/// Score of the virtual new-branch action; absent once the proposal budget
/// is exhausted.
pub fn score_new_branch(tree: &SearchTree, params: &QwbeParams) -> Option<f64> {
    let k = tree.branch_count();
    if k >= params.k_max {
        return None;
    }
    Some(params.c_puct * (tree.n_total() as f64).sqrt() / (1.0 + k as f64))
}

/// Choose the next action, or `None` when no budget-respecting action
/// remains. In the exploit phase the globally best node is expanded as long
/// as its branch retains iteration budget; in the explore phase the argmax
/// over eligible branch scores and the new-branch score decides, with ties
/// broken toward the lowest branch id and against branch creation.
pub fn select_action(tree: &SearchTree, params: &QwbeParams) -> Option<SelectionAction> {
    match tree.phase() {
        Phase::Exploit => {
            let best = tree.global_best_node()?;
            let branch_id = tree.node(best).ok()?.branch_id;
            let branch = tree.branch(branch_id).ok()?;
            if branch.n_i < params.n_per_proposal {
                Some(SelectionAction::ExpandGlobalBest(best))
            } else {
                None
            }
        }
        Phase::Explore => {
            let mut best: Option<(u32, f64)> = None;
            for branch in tree.branches() {
                if branch.n_i >= params.n_per_proposal {
                    continue;
                }
                if select_leaf(tree, branch.branch_id, params).is_err() {
                    continue;
                }
                let score = score_branch(branch, tree, params);
                let better = match best {
                    None => true,
                    Some((_, s)) => score > s,
                };
                if better {
                    best = Some((branch.branch_id, score));
                }
            }
            let new_score = score_new_branch(tree, params);
            match (best, new_score) {
                (Some((id, s)), Some(n)) => {
                    if n > s {
                        Some(SelectionAction::CreateBranch)
                    } else {
                        Some(SelectionAction::ExpandBranch(id))
                    }
                }
                (Some((id, _)), None) => Some(SelectionAction::ExpandBranch(id)),
                (None, Some(_)) => Some(SelectionAction::CreateBranch),
                (None, None) => None,
            }
        }
    }
}

/// Pick the best available leaf of a branch and the expansion mode.
///
/// The leaf with maximal q wins (ties to the lowest node id). An error leaf
/// within the debugging depth is submitted for repair; one at or beyond the
/// depth is excluded so that a broken chain cannot absorb the whole budget.
pub fn select_leaf(
    tree: &SearchTree,
    branch_id: u32,
    params: &QwbeParams,
) -> Result<(u64, LeafMode), BranchExhausted> {
    let branch = tree
        .branch(branch_id)
        .map_err(|_| BranchExhausted(branch_id))?;
    let mut leaves: Vec<&TrialNode> = branch
        .nodes
        .iter()
        .map(|&id| tree.node(id).expect("branch node exists"))
        .filter(|n| {
            !branch
                .nodes
                .iter()
                .any(|&other| tree.node(other).unwrap().parent_id == Some(n.node_id))
        })
        .collect();
    leaves.sort_by(|a, b| {
        let qa = a.q.unwrap_or(f64::NEG_INFINITY);
        let qb = b.q.unwrap_or(f64::NEG_INFINITY);
        qb.partial_cmp(&qa).unwrap().then(a.node_id.cmp(&b.node_id))
    });
    for leaf in leaves {
        if leaf.status == OutcomeStatus::Error {
            if consecutive_error_chain(tree, leaf.node_id) < params.debug_depth {
                return Ok((leaf.node_id, LeafMode::Repair));
            }
            continue;
        }
        return Ok((leaf.node_id, LeafMode::Improve));
    }
    Err(BranchExhausted(branch_id))
}

/// Signal that every leaf of a branch is excluded from expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Error)]
#[error("branch {0} has no expandable leaf")]
pub struct BranchExhausted(pub u32);

/// Length of the consecutive-error chain ending at `node_id` (inclusive).
fn consecutive_error_chain(tree: &SearchTree, node_id: u64) -> u32 {
    let mut len = 0;
    let mut cur = Some(node_id);
    while let Some(id) = cur {
        let node = tree.node(id).expect("node exists");
        if node.status != OutcomeStatus::Error {
            break;
        }
        len += 1;
        cur = node.parent_id;
    }
    len
}
