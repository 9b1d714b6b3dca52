//! Deterministic synthetic workbench.
//!
//! Implements the preprocess / train / evaluate contract over configurable
//! hidden quality landscapes: each proposal has a latent base quality,
//! per-category modification-effect distributions, and labeled modules whose
//! faithful contribution is only earned once gap-audit suggestions restore
//! them. Error injection and a one-epoch verification gate model the
//! implementation-failure lifecycle.
//!
//! Every draw is a pure function of (config, run seed, draw key, agent), so
//! identical configurations replay bit-for-bit under arbitrary concurrency.

use crate::ddf::{ModuleStatusLabel, Suggestion, SuggestionCategory};
use crate::pipeline::{PlanTarget, TrainResult, Workbench, WorkbenchError};
use crate::qwbe::{AgentLabel, EvalMetrics, LeafMode, TrialError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

// ---------------------------------------------------------------------------
// Seed streams
// ---------------------------------------------------------------------------

mod tag {
    pub const BANK: u64 = 1;
    pub const PLANS: u64 = 2;
    pub const INIT: u64 = 3;
    pub const INIT_DEFECT: u64 = 4;
    pub const EFFECT: u64 = 5;
    pub const DEFECT: u64 = 6;
    pub const CATCH: u64 = 7;
    pub const ERR: u64 = 8;
    pub const NOISE: u64 = 9;
    pub const HD: u64 = 10;
    pub const CASE: u64 = 11;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent RNG from the run seed and a draw key path.
fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut acc = splitmix64(seed);
    for &t in tags {
        acc = splitmix64(acc ^ t.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    ChaCha8Rng::seed_from_u64(acc)
}

fn draw_normal(rng: &mut ChaCha8Rng, mean: f64, spread: f64) -> f64 {
    Normal::new(mean, spread.max(0.0))
        .expect("valid normal parameters")
        .sample(rng)
}

fn draw_error_class(rng: &mut ChaCha8Rng) -> String {
    ["shape", "numeric", "memory"][rng.random_range(0..3usize)].to_string()
}

// ---------------------------------------------------------------------------
// Landscape configuration
// ---------------------------------------------------------------------------

/// Effect distribution of one suggestion category.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEffect {
    pub mean: f64,
    pub spread: f64,
}

impl CategoryEffect {
    pub const fn new(mean: f64, spread: f64) -> Self {
        Self { mean, spread }
    }
}

/// Per-category effect distributions of one proposal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryEffects {
    pub architecture: CategoryEffect,
    pub hyperparameter: CategoryEffect,
    pub code_fix: CategoryEffect,
    pub proposal_gap: CategoryEffect,
}

impl CategoryEffects {
    pub fn effect(&self, category: SuggestionCategory) -> CategoryEffect {
        match category {
            SuggestionCategory::Architecture => self.architecture,
            SuggestionCategory::Hyperparameter => self.hyperparameter,
            SuggestionCategory::CodeFix => self.code_fix,
            SuggestionCategory::ProposalGap => self.proposal_gap,
        }
    }

    pub fn flat(mean: f64, spread: f64) -> Self {
        let e = CategoryEffect::new(mean, spread);
        Self {
            architecture: e,
            hyperparameter: e,
            code_fix: CategoryEffect::new(0.0, spread),
            proposal_gap: CategoryEffect::new(0.0, spread),
        }
    }
}

/// One proposed module: its faithful metric contribution, the state agents
/// implement it in initially (the hidden cause the diagnostic generator
/// sees), and the fraction of the contribution a shortcut still earns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub name: String,
    pub contribution: f64,
    pub initial_state: ModuleStatusLabel,
    #[serde(default)]
    pub shortcut_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalLandscape {
    pub proposal_id: String,
    /// Latent base quality of the proposal's core idea.
    pub theta_base: f64,
    pub modules: Vec<ModuleSpec>,
    pub effects: CategoryEffects,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub proposals: Vec<ProposalLandscape>,
    /// Observation noise applied to every trained metric.
    pub sigma: f64,
    /// Probability a training run fails outright.
    pub p_err: f64,
    /// Probability a modification introduces a latent defect.
    #[serde(default)]
    pub p_defect: f64,
    /// Probability the one-epoch verification catches a latent defect.
    pub q_catch: f64,
    /// HD95 scale: hd95 = h0 * (1 - dice) * (1 + eta).
    pub h0: f64,
    /// Fraction of the relay seed's improvement carried into a new branch.
    #[serde(default)]
    pub seed_carry: f64,
    /// Per-case samples emitted by evaluation (0 disables).
    #[serde(default)]
    pub cases: u32,
}

impl LandscapeConfig {
    pub fn validate(&self) -> Result<(), WorkbenchError> {
        let fractions = [
            ("p_err", self.p_err),
            ("p_defect", self.p_defect),
            ("q_catch", self.q_catch),
            ("seed_carry", self.seed_carry),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(WorkbenchError::Infra(format!("{name}={v} outside [0, 1]")));
            }
        }
        if self.sigma < 0.0 || self.h0 <= 0.0 {
            return Err(WorkbenchError::Infra(
                "sigma must be >= 0 and h0 > 0".into(),
            ));
        }
        for p in &self.proposals {
            if !(0.0..=1.0).contains(&p.theta_base) {
                return Err(WorkbenchError::Infra(format!(
                    "theta_base of {} outside [0, 1]",
                    p.proposal_id
                )));
            }
        }
        Ok(())
    }
}

/// Baseline-bank configuration: either explicit entries or a synthesized
/// bank whose configured winner holds strictly maximal dice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub m0: f64,
    pub hd95: f64,
    #[serde(default = "default_bank_size")]
    pub size: u32,
    #[serde(default = "default_bank_winner")]
    pub winner: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub explicit: Option<Vec<(String, EvalMetrics)>>,
}

fn default_bank_size() -> u32 {
    14
}

fn default_bank_winner() -> String {
    "arch-07".to_string()
}

impl BankConfig {
    pub fn synthetic(m0: f64, hd95: f64) -> Self {
        Self {
            m0,
            hd95,
            size: 14,
            winner: "arch-07".to_string(),
            explicit: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub dataset_id: String,
    pub bank: BankConfig,
    pub landscape: LandscapeConfig,
}

// ---------------------------------------------------------------------------
// Implementations and outputs
// ---------------------------------------------------------------------------

/// Synthetic implementation: module states plus accumulated effect draws.
/// The latent metric is the proposal base plus the seed bonus, module
/// contributions, and all drawn effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimImplementation {
    pub branch_id: u32,
    pub proposal_id: String,
    pub modules: BTreeMap<String, ModuleStatusLabel>,
    pub drawn_effects: Vec<(SuggestionCategory, f64)>,
    pub latent_defect: Option<String>,
    pub seed_bonus: f64,
}

/// Plans object: fingerprint summary plus the requested configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPlans {
    pub fingerprint: String,
    pub targets: BTreeSet<PlanTarget>,
}

/// Consumable handle to one training result; `evaluate` takes it by value,
/// making double consumption unrepresentable.
#[derive(Debug)]
pub struct SimResultRef {
    dataset_id: String,
    dice: f64,
    trial_key: u64,
    agent_tag: u64,
    seed: u64,
}

// ---------------------------------------------------------------------------
// Workbench
// ---------------------------------------------------------------------------

/// Registry of synthetic datasets implementing the workbench contract.
#[derive(Clone, Debug, Default)]
pub struct SimWorkbench {
    datasets: BTreeMap<String, SimDataset>,
}

impl SimWorkbench {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dataset(dataset: SimDataset) -> Result<Self, WorkbenchError> {
        let mut wb = Self::new();
        wb.register(dataset)?;
        Ok(wb)
    }

    pub fn register(&mut self, dataset: SimDataset) -> Result<(), WorkbenchError> {
        dataset.landscape.validate()?;
        if dataset.bank.explicit.as_ref().is_some_and(|b| b.is_empty()) {
            return Err(WorkbenchError::Infra(
                "explicit bank must be non-empty".into(),
            ));
        }
        self.datasets.insert(dataset.dataset_id.clone(), dataset);
        Ok(())
    }

    fn dataset(&self, id: &str) -> Result<&SimDataset, WorkbenchError> {
        self.datasets
            .get(id)
            .ok_or_else(|| WorkbenchError::UnknownDataset(id.to_string()))
    }

    /// Configuration of a registered dataset (for manifests and tooling).
    pub fn dataset_config(&self, id: &str) -> Option<&SimDataset> {
        self.datasets.get(id)
    }

    fn proposal<'a>(
        &'a self,
        dataset: &'a SimDataset,
        proposal_id: &str,
    ) -> Result<&'a ProposalLandscape, WorkbenchError> {
        dataset
            .landscape
            .proposals
            .iter()
            .find(|p| p.proposal_id == proposal_id)
            .ok_or_else(|| WorkbenchError::UnknownProposal(proposal_id.to_string()))
    }

    /// Latent (noise-free) metric of an implementation.
    pub fn latent_metric(
        &self,
        dataset_id: &str,
        imp: &SimImplementation,
    ) -> Result<f64, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        let proposal = self.proposal(dataset, &imp.proposal_id)?;
        let mut latent = proposal.theta_base + imp.seed_bonus;
        for spec in &proposal.modules {
            let factor = match imp.modules.get(&spec.name) {
                Some(ModuleStatusLabel::FullyImplemented) => 1.0,
                Some(ModuleStatusLabel::Simplified) => spec.shortcut_factor,
                Some(ModuleStatusLabel::Missing) | None => 0.0,
            };
            latent += spec.contribution * factor;
        }
        latent += imp.drawn_effects.iter().map(|(_, e)| e).sum::<f64>();
        Ok(latent)
    }

    fn synth_log(
        &self,
        dataset_id: &str,
        imp: &SimImplementation,
        trial_key: u64,
        dice: Option<f64>,
        error: Option<&str>,
    ) -> String {
        let mut log = format!(
            "== training run :: dataset {dataset_id} proposal {} trial {trial_key} ==\n",
            imp.proposal_id
        );
        log.push_str(&format!(
            "CHANGE: {} modules, {} accumulated effects\n",
            imp.modules.len(),
            imp.drawn_effects.len()
        ));
        let epochs = 8 + (trial_key % 5) * 4;
        for e in 0..epochs {
            let loss = 1.0 / (1.0 + 0.35 * e as f64 + trial_key as f64 * 1e-3);
            log.push_str(&format!(
                "epoch {e:03} | loss {loss:.6} | lr 1.0e-02 | grad-norm {:.4} | eta 00:{:02}:00\n",
                loss * 3.1,
                epochs - e
            ));
        }
        match (dice, error) {
            (Some(d), _) => log.push_str(&format!("RESULT: pseudo-dice {d:.4}\n")),
            (None, Some(class)) => {
                log.push_str(&format!("FATAL: {class} failure\n"));
                log.push_str("trace: trainer.step -> forward -> assert\n");
            }
            (None, None) => {}
        }
        log
    }
}

impl Workbench for SimWorkbench {
    type Impl = SimImplementation;
    type ResultRef = SimResultRef;
    type Plans = SimPlans;

    fn baseline_bank(
        &self,
        dataset_id: &str,
        seed: u64,
    ) -> Result<Vec<(String, EvalMetrics)>, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        if let Some(bank) = &dataset.bank.explicit {
            return Ok(bank.clone());
        }
        let cfg = &dataset.bank;
        let mut entries = Vec::with_capacity(cfg.size as usize);
        for i in 0..cfg.size {
            let name = format!("arch-{:02}", i + 1);
            if name == cfg.winner {
                entries.push((name, EvalMetrics::new(cfg.m0, cfg.hd95)));
                continue;
            }
            let mut rng = stream(seed, &[tag::BANK, i as u64]);
            let dice = (cfg.m0 - rng.random_range(0.005..0.15)).clamp(0.0, 1.0);
            let eta: f64 = rng.random_range(-0.2..0.2);
            let hd95 = dataset.landscape.h0 * (1.0 - dice) * (1.0 + eta);
            entries.push((name, EvalMetrics::new(dice, hd95)));
        }
        if !entries.iter().any(|(n, _)| *n == cfg.winner) {
            return Err(WorkbenchError::Infra(format!(
                "configured winner {} outside bank of size {}",
                cfg.winner, cfg.size
            )));
        }
        Ok(entries)
    }

    fn plan_and_preprocess(
        &self,
        dataset_id: &str,
        targets: &BTreeSet<PlanTarget>,
        seed: u64,
    ) -> Result<SimPlans, WorkbenchError> {
        self.dataset(dataset_id)?;
        let mut rng = stream(seed, &[tag::PLANS]);
        let spacing: f64 = rng.random_range(0.4..2.5);
        let size_class = ["small", "medium", "large"][rng.random_range(0..3usize)];
        Ok(SimPlans {
            fingerprint: format!("{dataset_id}:spacing-{spacing:.2}:{size_class}"),
            targets: targets.clone(),
        })
    }

    fn proposal_modules(
        &self,
        dataset_id: &str,
        proposal_id: &str,
    ) -> Result<Vec<String>, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        let proposal = self.proposal(dataset, proposal_id)?;
        Ok(proposal.modules.iter().map(|m| m.name.clone()).collect())
    }

    fn initial_implementation(
        &self,
        dataset_id: &str,
        proposal_id: &str,
        branch_id: u32,
        agent: AgentLabel,
        seed: u64,
        seed_gain: f64,
    ) -> Result<SimImplementation, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        let proposal = self.proposal(dataset, proposal_id)?;
        let modules: BTreeMap<String, ModuleStatusLabel> = proposal
            .modules
            .iter()
            .map(|m| (m.name.clone(), m.initial_state))
            .collect();
        let mut rng = stream(seed, &[tag::INIT, branch_id as u64, agent.stream_tag()]);
        let eff = proposal.effects.architecture;
        let drawn = draw_normal(&mut rng, eff.mean, eff.spread);
        let mut defect_rng = stream(
            seed,
            &[tag::INIT_DEFECT, branch_id as u64, agent.stream_tag()],
        );
        let latent_defect = if defect_rng.random_range(0.0..1.0) < dataset.landscape.p_defect {
            Some(draw_error_class(&mut defect_rng))
        } else {
            None
        };
        Ok(SimImplementation {
            branch_id,
            proposal_id: proposal_id.to_string(),
            modules,
            drawn_effects: vec![(SuggestionCategory::Architecture, drawn)],
            latent_defect,
            seed_bonus: seed_gain * dataset.landscape.seed_carry,
        })
    }

    fn apply_modification(
        &self,
        dataset_id: &str,
        base: &SimImplementation,
        suggestions: &[Suggestion],
        mode: LeafMode,
        agent: AgentLabel,
        trial_key: u64,
        seed: u64,
    ) -> Result<SimImplementation, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        let proposal = self.proposal(dataset, &base.proposal_id)?;
        let mut imp = base.clone();
        if mode == LeafMode::Repair {
            imp.latent_defect = None;
            return Ok(imp);
        }
        if suggestions.is_empty() {
            return Ok(imp);
        }
        for (k, suggestion) in suggestions.iter().enumerate() {
            match (suggestion.category, &suggestion.target) {
                (SuggestionCategory::ProposalGap, Some(target))
                    if imp
                        .modules
                        .get(target)
                        .is_some_and(|s| *s != ModuleStatusLabel::FullyImplemented) =>
                {
                    imp.modules
                        .insert(target.clone(), ModuleStatusLabel::FullyImplemented);
                }
                (SuggestionCategory::CodeFix, _) if imp.latent_defect.is_some() => {
                    imp.latent_defect = None;
                }
                (category, _) => {
                    let eff = proposal.effects.effect(category);
                    let mut rng = stream(
                        seed,
                        &[tag::EFFECT, trial_key, agent.stream_tag(), k as u64],
                    );
                    imp.drawn_effects
                        .push((category, draw_normal(&mut rng, eff.mean, eff.spread)));
                }
            }
        }
        let mut defect_rng = stream(seed, &[tag::DEFECT, trial_key, agent.stream_tag()]);
        if defect_rng.random_range(0.0..1.0) < dataset.landscape.p_defect {
            imp.latent_defect = Some(draw_error_class(&mut defect_rng));
        }
        Ok(imp)
    }

    fn verify_one_epoch(
        &self,
        dataset_id: &str,
        imp: &SimImplementation,
        trial_key: u64,
        agent: AgentLabel,
        seed: u64,
    ) -> Result<bool, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        if imp.latent_defect.is_none() {
            return Ok(true);
        }
        let mut rng = stream(seed, &[tag::CATCH, trial_key, agent.stream_tag()]);
        Ok(rng.random_range(0.0..1.0) >= dataset.landscape.q_catch)
    }

    fn training_network(
        &self,
        dataset_id: &str,
        imp: &SimImplementation,
        plans: &SimPlans,
        trial_key: u64,
        agent: AgentLabel,
        seed: u64,
    ) -> Result<TrainResult<SimResultRef>, WorkbenchError> {
        let dataset = self.dataset(dataset_id)?;
        debug_assert!(!plans.fingerprint.is_empty());
        // An uncaught defect always surfaces here.
        if let Some(class) = &imp.latent_defect {
            let error = TrialError {
                class: class.clone(),
                message: format!("uncaught defect surfaced during training ({class})"),
            };
            return Ok(TrainResult::Failed {
                log: self.synth_log(dataset_id, imp, trial_key, None, Some(class)),
                error,
            });
        }
        let mut err_rng = stream(seed, &[tag::ERR, trial_key, agent.stream_tag()]);
        if err_rng.random_range(0.0..1.0) < dataset.landscape.p_err {
            let class = draw_error_class(&mut err_rng);
            let error = TrialError {
                class: class.clone(),
                message: format!("training aborted with a {class} failure"),
            };
            return Ok(TrainResult::Failed {
                log: self.synth_log(dataset_id, imp, trial_key, None, Some(&class)),
                error,
            });
        }
        let latent = self.latent_metric(dataset_id, imp)?;
        let mut noise_rng = stream(seed, &[tag::NOISE, trial_key, agent.stream_tag()]);
        let dice =
            (latent + draw_normal(&mut noise_rng, 0.0, dataset.landscape.sigma)).clamp(0.0, 1.0);
        Ok(TrainResult::Trained {
            log: self.synth_log(dataset_id, imp, trial_key, Some(dice), None),
            result: SimResultRef {
                dataset_id: dataset_id.to_string(),
                dice,
                trial_key,
                agent_tag: agent.stream_tag(),
                seed,
            },
        })
    }

    fn evaluate(
        &self,
        dataset_id: &str,
        result: SimResultRef,
    ) -> Result<EvalMetrics, WorkbenchError> {
        let dataset = self.dataset(&result.dataset_id)?;
        if result.dataset_id != dataset_id {
            return Err(WorkbenchError::Infra(format!(
                "result handle belongs to dataset {}",
                result.dataset_id
            )));
        }
        let mut hd_rng = stream(result.seed, &[tag::HD, result.trial_key, result.agent_tag]);
        let eta = draw_normal(&mut hd_rng, 0.0, 0.1).max(-0.5);
        let hd95 = dataset.landscape.h0 * (1.0 - result.dice) * (1.0 + eta);
        let per_class = if dataset.landscape.cases > 0 {
            let mut case_rng = stream(
                result.seed,
                &[tag::CASE, result.trial_key, result.agent_tag],
            );
            Some(
                (0..dataset.landscape.cases)
                    .map(|_| (result.dice + draw_normal(&mut case_rng, 0.0, 0.02)).clamp(0.0, 1.0))
                    .collect(),
            )
        } else {
            None
        };
        Ok(EvalMetrics {
            dice: result.dice,
            hd95: Some(hd95.max(0.0)),
            per_class,
        })
    }

    fn describe(&self, imp: &SimImplementation) -> BTreeMap<String, ModuleStatusLabel> {
        imp.modules.clone()
    }

    fn remove_module(&self, imp: &SimImplementation, module: &str) -> SimImplementation {
        let mut ablated = imp.clone();
        if ablated.modules.contains_key(module) {
            ablated
                .modules
                .insert(module.to_string(), ModuleStatusLabel::Missing);
        }
        ablated
    }
}

// ---------------------------------------------------------------------------
// Fixture landscapes
// ---------------------------------------------------------------------------

/// Ready-made landscapes used by the acceptance suite and integration tests.
pub mod fixtures {
    use super::*;
    use crate::lrm::MemoryCaps;
    use crate::pipeline::{ExperimentConfig, Variant};
    use crate::qwbe::QwbeParams;

    fn proposal(
        id: &str,
        theta_base: f64,
        effects: CategoryEffects,
        modules: Vec<ModuleSpec>,
    ) -> ProposalLandscape {
        ProposalLandscape {
            proposal_id: id.to_string(),
            theta_base,
            modules,
            effects,
        }
    }

    fn module(name: &str, contribution: f64, state: ModuleStatusLabel) -> ModuleSpec {
        ModuleSpec {
            name: name.to_string(),
            contribution,
            initial_state: state,
            shortcut_factor: 0.0,
        }
    }

    fn config(dataset_id: &str, proposals: &[&str], k_max: u32, n: u32) -> ExperimentConfig {
        ExperimentConfig {
            dataset_id: dataset_id.to_string(),
            proposal_ids: proposals.iter().map(|s| s.to_string()).collect(),
            qwbe: QwbeParams {
                k_max,
                n_per_proposal: n,
                ..QwbeParams::default()
            },
            memory: MemoryCaps::default(),
            seed: 0,
            variant: Variant::Full,
        }
    }

    /// Three branches, two drifting down from a low base, one positive-drift
    /// arm that starts near the baseline and climbs past it.
    pub fn one_good_arm() -> (SimWorkbench, ExperimentConfig) {
        let landscape = LandscapeConfig {
            proposals: vec![
                proposal(
                    "flow-field-diffusion",
                    0.30,
                    CategoryEffects::flat(-0.010, 0.012),
                    vec![],
                ),
                proposal(
                    "cascaded-nesting",
                    0.34,
                    CategoryEffects::flat(-0.008, 0.012),
                    vec![],
                ),
                proposal(
                    "gated-axial-attention",
                    0.515,
                    CategoryEffects {
                        architecture: CategoryEffect::new(0.016, 0.010),
                        hyperparameter: CategoryEffect::new(0.010, 0.008),
                        code_fix: CategoryEffect::new(0.002, 0.004),
                        proposal_gap: CategoryEffect::new(0.0, 0.004),
                    },
                    vec![
                        module(
                            "axial-decomposition",
                            0.02,
                            ModuleStatusLabel::FullyImplemented,
                        ),
                        module(
                            "multi-scale-head",
                            0.015,
                            ModuleStatusLabel::FullyImplemented,
                        ),
                    ],
                ),
            ],
            sigma: 0.012,
            p_err: 0.04,
            p_defect: 0.03,
            q_catch: 0.5,
            h0: 20.0,
            seed_carry: 0.3,
            cases: 12,
        };
        let dataset = SimDataset {
            dataset_id: "one-good-arm".to_string(),
            bank: BankConfig::synthetic(0.60, 12.0),
            landscape,
        };
        let cfg = config(
            "one-good-arm",
            &[
                "flow-field-diffusion",
                "cascaded-nesting",
                "gated-axial-attention",
            ],
            3,
            10,
        );
        (
            SimWorkbench::with_dataset(dataset).expect("valid fixture"),
            cfg,
        )
    }

    /// Every arm decays; no configuration beats the baseline.
    pub fn all_bad_arms() -> (SimWorkbench, ExperimentConfig) {
        let landscape = LandscapeConfig {
            proposals: vec![
                proposal(
                    "scalar-gating",
                    0.30,
                    CategoryEffects::flat(-0.012, 0.010),
                    vec![],
                ),
                proposal(
                    "fixed-grid-pooling",
                    0.32,
                    CategoryEffects::flat(-0.010, 0.010),
                    vec![],
                ),
                proposal(
                    "dense-refinement",
                    0.28,
                    CategoryEffects::flat(-0.008, 0.010),
                    vec![],
                ),
            ],
            sigma: 0.010,
            p_err: 0.05,
            p_defect: 0.04,
            q_catch: 0.5,
            h0: 20.0,
            seed_carry: 0.3,
            cases: 8,
        };
        let dataset = SimDataset {
            dataset_id: "all-bad-arms".to_string(),
            bank: BankConfig::synthetic(0.60, 12.0),
            landscape,
        };
        let cfg = config(
            "all-bad-arms",
            &["scalar-gating", "fixed-grid-pooling", "dense-refinement"],
            3,
            10,
        );
        (
            SimWorkbench::with_dataset(dataset).expect("valid fixture"),
            cfg,
        )
    }

    /// One proposal whose five modules all start as zero-contribution
    /// shortcuts; at least four must be restored through gap-audit
    /// suggestions to cross the baseline within a four-trial budget.
    pub fn multi_cause_failure() -> (SimWorkbench, ExperimentConfig) {
        let landscape = LandscapeConfig {
            proposals: vec![proposal(
                "gated-pyramid",
                0.385,
                CategoryEffects {
                    architecture: CategoryEffect::new(0.0, 0.003),
                    hyperparameter: CategoryEffect::new(0.0, 0.003),
                    code_fix: CategoryEffect::new(0.0, 0.002),
                    proposal_gap: CategoryEffect::new(0.0, 0.002),
                },
                vec![
                    module("adaptive-tokenizer", 0.06, ModuleStatusLabel::Simplified),
                    module("boundary-normalizer", 0.06, ModuleStatusLabel::Simplified),
                    module("context-gate", 0.06, ModuleStatusLabel::Simplified),
                    module("hierarchy-embedding", 0.06, ModuleStatusLabel::Simplified),
                    module("scale-fusion", 0.06, ModuleStatusLabel::Simplified),
                ],
            )],
            sigma: 0.008,
            p_err: 0.02,
            p_defect: 0.0,
            q_catch: 1.0,
            h0: 20.0,
            seed_carry: 0.0,
            cases: 8,
        };
        let dataset = SimDataset {
            dataset_id: "multi-cause-failure".to_string(),
            bank: BankConfig::synthetic(0.60, 12.0),
            landscape,
        };
        let cfg = config("multi-cause-failure", &["gated-pyramid"], 1, 4);
        (
            SimWorkbench::with_dataset(dataset).expect("valid fixture"),
            cfg,
        )
    }

    /// Fixture lookup by CLI-facing name.
    pub fn by_name(name: &str) -> Option<(SimWorkbench, ExperimentConfig)> {
        match name {
            "one-good-arm" => Some(one_good_arm()),
            "all-bad-arms" => Some(all_bad_arms()),
            "multi-cause-failure" => Some(multi_cause_failure()),
            "scripted-win" => Some(scripted_win()),
            _ => None,
        }
    }

    /// Fully deterministic single-proposal climb (no noise, no errors) that
    /// crosses the baseline at the fourth committed trial. The proposal
    /// budget is one, so a win leaves every other proposal unexplored by
    /// construction; the selection rule itself probes every available
    /// proposal once before a win under default parameters.
    pub fn scripted_win() -> (SimWorkbench, ExperimentConfig) {
        let landscape = LandscapeConfig {
            proposals: vec![proposal(
                "steady-climb",
                0.522,
                CategoryEffects::flat(0.015, 0.0),
                vec![],
            )],
            sigma: 0.0,
            p_err: 0.0,
            p_defect: 0.0,
            q_catch: 1.0,
            h0: 20.0,
            seed_carry: 0.0,
            cases: 0,
        };
        let dataset = SimDataset {
            dataset_id: "scripted-win".to_string(),
            bank: BankConfig::synthetic(0.60, 12.0),
            landscape,
        };
        let cfg = config("scripted-win", &["steady-climb"], 1, 10);
        (
            SimWorkbench::with_dataset(dataset).expect("valid fixture"),
            cfg,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_dataset(
        id: &str,
        theta: f64,
        p_err: f64,
        p_defect: f64,
        q_catch: f64,
        sigma: f64,
    ) -> SimDataset {
        SimDataset {
            dataset_id: id.to_string(),
            bank: BankConfig::synthetic(0.60, 12.0),
            landscape: LandscapeConfig {
                proposals: vec![ProposalLandscape {
                    proposal_id: "p1".to_string(),
                    theta_base: theta,
                    modules: vec![ModuleSpec {
                        name: "gate".to_string(),
                        contribution: 0.05,
                        initial_state: ModuleStatusLabel::Simplified,
                        shortcut_factor: 0.2,
                    }],
                    effects: CategoryEffects::flat(0.01, 0.005),
                }],
                sigma,
                p_err,
                p_defect,
                q_catch,
                h0: 20.0,
                seed_carry: 0.5,
                cases: 6,
            },
        }
    }

    fn wb(d: SimDataset) -> SimWorkbench {
        SimWorkbench::with_dataset(d).unwrap()
    }

    fn init(wb: &SimWorkbench, id: &str, seed: u64) -> SimImplementation {
        wb.initial_implementation(id, "p1", 0, AgentLabel::A, seed, 0.0)
            .unwrap()
    }

    fn targets() -> BTreeSet<PlanTarget> {
        [PlanTarget::ThreeD].into_iter().collect()
    }

    // ---- plan_and_preprocess ----

    #[test]
    fn plans_deterministic_and_scoped() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let a = wb.plan_and_preprocess("d", &targets(), 7).unwrap();
        let b = wb.plan_and_preprocess("d", &targets(), 7).unwrap();
        assert_eq!(a, b);
        assert!(a.targets.contains(&PlanTarget::ThreeD));
        assert!(matches!(
            wb.plan_and_preprocess("nope", &targets(), 7),
            Err(WorkbenchError::UnknownDataset(_))
        ));
    }

    // ---- verification gate ----

    #[test]
    fn certain_catch_blocks_defect() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let mut imp = init(&wb, "d", 1);
        imp.latent_defect = Some("shape".to_string());
        assert!(!wb.verify_one_epoch("d", &imp, 5, AgentLabel::A, 1).unwrap());
    }

    #[test]
    fn clean_implementation_passes() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let imp = init(&wb, "d", 1);
        assert!(imp.latent_defect.is_none());
        assert!(wb.verify_one_epoch("d", &imp, 5, AgentLabel::A, 1).unwrap());
    }

    #[test]
    fn uncaught_defect_surfaces_in_training() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 0.0, 0.0));
        let mut imp = init(&wb, "d", 1);
        imp.latent_defect = Some("numeric".to_string());
        // q_catch = 0: verification passes now...
        assert!(wb.verify_one_epoch("d", &imp, 5, AgentLabel::A, 1).unwrap());
        // ...and training fails with certainty.
        let plans = wb.plan_and_preprocess("d", &targets(), 1).unwrap();
        match wb
            .training_network("d", &imp, &plans, 5, AgentLabel::A, 1)
            .unwrap()
        {
            TrainResult::Failed { error, .. } => assert_eq!(error.class, "numeric"),
            TrainResult::Trained { .. } => panic!("defect did not surface"),
        }
    }

    // ---- training_network ----

    #[test]
    fn certain_error_probability_fails() {
        let wb = wb(flat_dataset("d", 0.5, 1.0, 0.0, 1.0, 0.0));
        let imp = init(&wb, "d", 3);
        let plans = wb.plan_and_preprocess("d", &targets(), 3).unwrap();
        assert!(matches!(
            wb.training_network("d", &imp, &plans, 9, AgentLabel::B, 3)
                .unwrap(),
            TrainResult::Failed { .. }
        ));
    }

    #[test]
    fn noise_free_training_returns_latent() {
        let mut d = flat_dataset("d", 0.47, 0.0, 0.0, 1.0, 0.0);
        d.landscape.proposals[0].effects = CategoryEffects::flat(0.0, 0.0);
        let wb = wb(d);
        let imp = init(&wb, "d", 3);
        // theta 0.47 + simplified module 0.05 * 0.2 + zero architecture draw.
        let latent = wb.latent_metric("d", &imp).unwrap();
        assert!((latent - 0.48).abs() < 1e-12);
        let plans = wb.plan_and_preprocess("d", &targets(), 3).unwrap();
        match wb
            .training_network("d", &imp, &plans, 9, AgentLabel::A, 3)
            .unwrap()
        {
            TrainResult::Trained { result, .. } => {
                let metrics = wb.evaluate("d", result).unwrap();
                assert!((metrics.dice - latent).abs() < 1e-12);
            }
            TrainResult::Failed { .. } => panic!("unexpected failure"),
        }
    }

    #[test]
    fn training_deterministic_per_seed() {
        let wb = wb(flat_dataset("d", 0.5, 0.1, 0.0, 1.0, 0.02));
        let plans = wb.plan_and_preprocess("d", &targets(), 11).unwrap();
        let imp = init(&wb, "d", 11);
        let run = |wb: &SimWorkbench| match wb
            .training_network("d", &imp, &plans, 4, AgentLabel::A, 11)
            .unwrap()
        {
            TrainResult::Trained { result, .. } => Some(wb.evaluate("d", result).unwrap()),
            TrainResult::Failed { .. } => None,
        };
        assert_eq!(run(&wb), run(&wb));
    }

    // ---- evaluate ----

    #[test]
    fn hd95_vanishes_at_perfect_dice() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let result = SimResultRef {
            dataset_id: "d".to_string(),
            dice: 1.0,
            trial_key: 2,
            agent_tag: 0,
            seed: 5,
        };
        let m = wb.evaluate("d", result).unwrap();
        assert_eq!(m.hd95, Some(0.0));
        assert_eq!(m.per_class.as_ref().map(|c| c.len()), Some(6));
    }

    #[test]
    fn bank_passthrough_and_winner() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let bank = wb.baseline_bank("d", 5).unwrap();
        assert_eq!(bank.len(), 14);
        let winner = bank.iter().find(|(n, _)| n == "arch-07").unwrap();
        assert_eq!(winner.1, EvalMetrics::new(0.60, 12.0));
        for (name, m) in &bank {
            if name != "arch-07" {
                assert!(m.dice < 0.60);
            }
        }
        assert_eq!(wb.baseline_bank("d", 5).unwrap(), bank);
    }

    // ---- apply_modification ----

    #[test]
    fn repair_clears_defect() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let mut imp = init(&wb, "d", 2);
        imp.latent_defect = Some("memory".to_string());
        let fixed = wb
            .apply_modification("d", &imp, &[], LeafMode::Repair, AgentLabel::A, 7, 2)
            .unwrap();
        assert!(fixed.latent_defect.is_none());
        assert_eq!(fixed.drawn_effects, imp.drawn_effects);
    }

    #[test]
    fn empty_improve_is_identity() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.5, 1.0, 0.0));
        let imp = init(&wb, "d", 2);
        let same = wb
            .apply_modification("d", &imp, &[], LeafMode::Improve, AgentLabel::A, 7, 2)
            .unwrap();
        assert_eq!(same, imp);
    }

    #[test]
    fn gap_suggestion_restores_module() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let imp = init(&wb, "d", 2);
        assert_eq!(imp.modules["gate"], ModuleStatusLabel::Simplified);
        let suggestion = Suggestion {
            category: SuggestionCategory::ProposalGap,
            description: "restore gate".to_string(),
            priority: crate::ddf::Priority::High,
            target: Some("gate".to_string()),
        };
        let better = wb
            .apply_modification(
                "d",
                &imp,
                &[suggestion],
                LeafMode::Improve,
                AgentLabel::A,
                7,
                2,
            )
            .unwrap();
        assert_eq!(better.modules["gate"], ModuleStatusLabel::FullyImplemented);
        let gain = wb.latent_metric("d", &better).unwrap() - wb.latent_metric("d", &imp).unwrap();
        assert!((gain - 0.05 * 0.8).abs() < 1e-12);
    }

    #[test]
    fn category_effect_mean_matches_configuration() {
        // Monte Carlo over seeds: the mean drawn architecture effect matches
        // the configured mean within three standard errors.
        let mean = 0.013;
        let spread = 0.01;
        let mut d = flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0);
        d.landscape.proposals[0].effects = CategoryEffects {
            architecture: CategoryEffect::new(mean, spread),
            hyperparameter: CategoryEffect::new(0.0, 0.0),
            code_fix: CategoryEffect::new(0.0, 0.0),
            proposal_gap: CategoryEffect::new(0.0, 0.0),
        };
        let wb = wb(d);
        let imp = init(&wb, "d", 0);
        let suggestion = Suggestion {
            category: SuggestionCategory::Architecture,
            description: "widen".to_string(),
            priority: crate::ddf::Priority::Medium,
            target: None,
        };
        let n = 1500;
        let mut sum = 0.0;
        for seed in 0..n {
            let modified = wb
                .apply_modification(
                    "d",
                    &imp,
                    std::slice::from_ref(&suggestion),
                    LeafMode::Improve,
                    AgentLabel::B,
                    seed,
                    seed,
                )
                .unwrap();
            sum += modified.drawn_effects.last().unwrap().1;
        }
        let empirical = sum / n as f64;
        let tolerance = 3.0 * spread / (n as f64).sqrt();
        assert!(
            (empirical - mean).abs() < tolerance,
            "empirical {empirical} vs configured {mean} (tol {tolerance})"
        );
    }

    #[test]
    fn agent_streams_diverge() {
        let wb = wb(flat_dataset("d", 0.5, 0.0, 0.0, 1.0, 0.0));
        let imp = init(&wb, "d", 2);
        let suggestion = Suggestion {
            category: SuggestionCategory::Architecture,
            description: "widen".to_string(),
            priority: crate::ddf::Priority::Medium,
            target: None,
        };
        let a = wb
            .apply_modification(
                "d",
                &imp,
                std::slice::from_ref(&suggestion),
                LeafMode::Improve,
                AgentLabel::A,
                7,
                2,
            )
            .unwrap();
        let b = wb
            .apply_modification(
                "d",
                &imp,
                std::slice::from_ref(&suggestion),
                LeafMode::Improve,
                AgentLabel::B,
                7,
                2,
            )
            .unwrap();
        assert_ne!(a.drawn_effects, b.drawn_effects);
    }

    // ---- metric bounds over random landscapes ----

    #[test]
    fn metrics_bounded_over_random_landscapes() {
        for seed in 0..60u64 {
            let mut rng = stream(seed, &[99]);
            let theta: f64 = rng.random_range(0.0..1.0);
            let mean: f64 = rng.random_range(-0.1..0.1);
            let spread: f64 = rng.random_range(0.0..0.08);
            let sigma: f64 = rng.random_range(0.0..0.1);
            let mut d = flat_dataset("d", theta, 0.0, 0.0, 1.0, sigma);
            d.landscape.proposals[0].effects = CategoryEffects::flat(mean, spread);
            let wb = wb(d);
            let plans = wb.plan_and_preprocess("d", &targets(), seed).unwrap();
            let mut imp = init(&wb, "d", seed);
            let suggestion = Suggestion {
                category: SuggestionCategory::Architecture,
                description: "mutate".to_string(),
                priority: crate::ddf::Priority::Medium,
                target: None,
            };
            for key in 0..12u64 {
                imp = wb
                    .apply_modification(
                        "d",
                        &imp,
                        std::slice::from_ref(&suggestion),
                        LeafMode::Improve,
                        AgentLabel::A,
                        key,
                        seed,
                    )
                    .unwrap();
                if let TrainResult::Trained { result, .. } = wb
                    .training_network("d", &imp, &plans, key, AgentLabel::A, seed)
                    .unwrap()
                {
                    let m = wb.evaluate("d", result).unwrap();
                    assert!((0.0..=1.0).contains(&m.dice));
                    assert!(m.hd95.unwrap() >= 0.0);
                    for c in m.per_class.unwrap() {
                        assert!((0.0..=1.0).contains(&c));
                    }
                }
            }
        }
    }
}
