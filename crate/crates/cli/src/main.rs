//! Command-line front door: run simulated experiments and ablation suites,
//! compute statistics, and analyze trace corpora. Output is CSV and plain
//! text only; runs are fully determined by (config, seed).

use clap::{Parser, Subcommand};
use labtree::ddf::RuleBasedGenerator;
use labtree::lrm::MemoryCaps;
use labtree::pipeline::{
    run_experiment, ExperimentConfig, PipelineError, Variant, SUMMARY_CSV_HEADER,
};
use labtree::qwbe::QwbeParams;
use labtree::simulator::{fixtures, BankConfig, LandscapeConfig, SimDataset, SimWorkbench};
use labtree::stats;
use labtree::trace_io;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Parser)]
#[command(
    name = "labtree",
    version,
    about = "Quality-weighted experiment-tree orchestration over a deterministic synthetic workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its record plus a CSV summary row.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeds x variants experiments and write per-variant aggregates.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of full,minus-qwbe,minus-lrm,minus-ddf.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Budgets for an additional cumulative win-rate CSV.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
    },
    /// Print a statistic to standard output.
    Stats {
        #[command(subcommand)]
        query: StatsQuery,
    },
    /// Analyze a trace corpus.
    Trace {
        #[command(subcommand)]
        report: TraceReport,
    },
}

#[derive(Subcommand)]
enum StatsQuery {
    /// One-sided binomial tail P(X >= k), X ~ Bin(n, p0).
    Binomial { k: u64, n: u64, p0: f64 },
    /// Wilson score interval bounds.
    Wilson { k: u64, n: u64, confidence: f64 },
    /// Bonferroni-corrected threshold alpha / m.
    Bonferroni { alpha: f64, m: u64 },
    /// Cumulative win curve from a run-summary CSV.
    Curve {
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<u64>,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Two-sided Wilcoxon signed-rank test over a two-column CSV of pairs.
    Wilcoxon {
        #[arg(long)]
        pairs: PathBuf,
    },
}

#[derive(Subcommand)]
enum TraceReport {
    /// Corpus index: datasets, experiments, per-stage artifact counts.
    Index {
        #[arg(long)]
        root: PathBuf,
    },
    /// Event-type histogram over every session file under the root.
    Histogram {
        #[arg(long)]
        root: PathBuf,
        /// Skip malformed lines instead of failing.
        #[arg(long)]
        lenient: bool,
    },
    /// Pretty-print the diagnostic feedback recorded in an experiment run.
    Reports {
        #[arg(long)]
        record: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Internal(String),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::EmptyBank => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<trace_io::TraceError> for CliError {
    fn from(e: trace_io::TraceError) -> Self {
        match e {
            trace_io::TraceError::MissingRoot(_) => CliError::Usage(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<stats::StatsError> for CliError {
    fn from(e: stats::StatsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes instead of panicking on
    // EPIPE mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(message)) => {
            eprintln!("internal error: {message}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { config, seed, out } => cmd_simulate(&config, seed, &out),
        Command::Ablate {
            config,
            variants,
            seeds,
            out,
            workers,
            budgets,
        } => cmd_ablate(&config, &variants, seeds, &out, workers, &budgets),
        Command::Stats { query } => cmd_stats(query),
        Command::Trace { report } => cmd_trace(report),
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentSection {
    dataset_id: Option<String>,
    proposal_ids: Option<Vec<String>>,
    seed: Option<u64>,
    variant: Option<Variant>,
    qwbe: Option<QwbeParams>,
    memory: Option<MemoryCaps>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulatorSection {
    fixture: Option<String>,
    bank: Option<BankConfig>,
    landscape: Option<LandscapeConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CliConfig {
    #[serde(default)]
    experiment: ExperimentSection,
    #[serde(default)]
    simulator: SimulatorSection,
}

/// Fully resolved run setup, echoed into the output manifest.
#[derive(Serialize)]
struct Manifest<'a> {
    dataset: &'a SimDataset,
    experiment: &'a ExperimentConfig,
}

fn load_config(path: &Path) -> Result<CliConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

fn resolve(config: &CliConfig) -> Result<(SimDataset, SimWorkbench, ExperimentConfig), CliError> {
    let (dataset, mut experiment) = match (&config.simulator.fixture, &config.simulator.landscape) {
        (Some(name), None) => {
            let (wb, cfg) = fixtures::by_name(name)
                .ok_or_else(|| CliError::Usage(format!("unknown fixture {name}")))?;
            let dataset = wb
                .dataset_config(&cfg.dataset_id)
                .expect("fixture registers its dataset")
                .clone();
            (dataset, cfg)
        }
        (None, Some(landscape)) => {
            let dataset_id = config
                .experiment
                .dataset_id
                .clone()
                .ok_or_else(|| CliError::Usage("experiment.dataset_id required".into()))?;
            let bank = config
                .simulator
                .bank
                .clone()
                .ok_or_else(|| CliError::Usage("simulator.bank required".into()))?;
            let proposal_ids = config.experiment.proposal_ids.clone().unwrap_or_else(|| {
                landscape
                    .proposals
                    .iter()
                    .map(|p| p.proposal_id.clone())
                    .collect()
            });
            let dataset = SimDataset {
                dataset_id: dataset_id.clone(),
                bank,
                landscape: landscape.clone(),
            };
            let experiment = ExperimentConfig {
                dataset_id,
                proposal_ids,
                qwbe: QwbeParams::default(),
                memory: MemoryCaps::default(),
                seed: 0,
                variant: Variant::Full,
            };
            (dataset, experiment)
        }
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "config sets both simulator.fixture and simulator.landscape".into(),
            ))
        }
        (None, None) => {
            return Err(CliError::Usage(
                "config needs simulator.fixture or simulator.landscape".into(),
            ))
        }
    };
    if let Some(seed) = config.experiment.seed {
        experiment.seed = seed;
    }
    if let Some(variant) = config.experiment.variant {
        experiment.variant = variant;
    }
    if let Some(qwbe) = &config.experiment.qwbe {
        experiment.qwbe = qwbe.clone();
    }
    if let Some(memory) = &config.experiment.memory {
        experiment.memory = memory.clone();
    }
    if let Some(ids) = &config.experiment.proposal_ids {
        experiment.proposal_ids = ids.clone();
    }
    let workbench =
        SimWorkbench::with_dataset(dataset.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((dataset, workbench, experiment))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn append_summary_row(path: &Path, row: &str) -> Result<(), CliError> {
    let mut body = match std::fs::read_to_string(path) {
        Ok(existing) => existing,
        Err(_) => format!("{SUMMARY_CSV_HEADER}\n"),
    };
    // Re-running an identical invocation keeps outputs identical.
    if body.lines().any(|l| l == row) {
        return Ok(());
    }
    body.push_str(row);
    body.push('\n');
    write_file(path, &body)
}

fn cmd_simulate(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let config = load_config(config_path)?;
    let (dataset, workbench, mut experiment) = resolve(&config)?;
    if let Some(seed) = seed {
        experiment.seed = seed;
    }
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;
    let record = run_experiment(&experiment, &workbench, &RuleBasedGenerator)?;
    let stem = format!(
        "record-{}-{}-seed{}",
        experiment.dataset_id, experiment.variant, experiment.seed
    );
    let record_path = out.join(format!("{stem}.json"));
    trace_io::persist_record(&record, &record_path)?;
    append_summary_row(&out.join("summary.csv"), &record.summary_csv_row())?;
    let manifest = Manifest {
        dataset: &dataset,
        experiment: &experiment,
    };
    write_file(
        &out.join(format!("{stem}.manifest.json")),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&manifest).expect("manifest serializes")
        ),
    )?;
    println!(
        "run dataset={} variant={} seed={} win={} fsp={} nodes={}",
        experiment.dataset_id,
        experiment.variant,
        experiment.seed,
        record.win,
        record
            .fsp
            .map(|f| f.to_string())
            .unwrap_or_else(|| "-".into()),
        record.steps.len(),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct RunRow {
    variant: Variant,
    seed: u64,
    csv: String,
    win: bool,
    delta_dice: Option<f64>,
    fsp: Option<u64>,
    nodes: u64,
}

fn cmd_ablate(
    config_path: &Path,
    variant_names: &[String],
    seeds: u64,
    out: &Path,
    workers: usize,
    budgets: &[u64],
) -> Result<(), CliError> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    if variant_names.is_empty() {
        return Err(CliError::Usage(
            "--variants must name at least one variant".into(),
        ));
    }
    let mut variants = Vec::new();
    for name in variant_names {
        variants.push(name.parse::<Variant>().map_err(CliError::Usage)?);
    }
    let config = load_config(config_path)?;
    let (_, workbench, base) = resolve(&config)?;
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out.display())))?;

    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| (0..seeds).map(move |i| (v, i)))
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<RunRow>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let workers = workers.clamp(1, jobs.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= jobs.len() {
                    break;
                }
                let (variant, offset) = jobs[index];
                let mut cfg = base.clone();
                cfg.variant = variant;
                cfg.seed = base.seed.wrapping_add(offset);
                match run_experiment(&cfg, &workbench, &RuleBasedGenerator) {
                    Ok(record) => {
                        let m0 = record.baseline_metrics.dice;
                        let row = RunRow {
                            variant,
                            seed: cfg.seed,
                            csv: record.summary_csv_row(),
                            win: record.win != labtree::pipeline::WinOutcome::NoWin,
                            delta_dice: record.best_metrics.as_ref().map(|m| m.dice - m0),
                            fsp: record.fsp,
                            nodes: record.steps.len() as u64,
                        };
                        eprintln!(
                            "run variant={} seed={} win={} fsp={} nodes={}",
                            variant,
                            row.seed,
                            record.win,
                            record
                                .fsp
                                .map(|f| f.to_string())
                                .unwrap_or_else(|| "-".into()),
                            row.nodes
                        );
                        results.lock().unwrap()[index] = Some(row);
                    }
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e.to_string());
                        break;
                    }
                }
            });
        }
    });
    if let Some(message) = failure.into_inner().unwrap() {
        return Err(CliError::Internal(message));
    }
    let rows: Vec<RunRow> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all jobs completed"))
        .collect();

    let mut runs_csv = format!("{SUMMARY_CSV_HEADER}\n");
    for row in &rows {
        runs_csv.push_str(&row.csv);
        runs_csv.push('\n');
    }
    write_file(&out.join("runs.csv"), &runs_csv)?;

    let mut summary =
        String::from("variant,runs,wins,win_rate,mean_delta_dice,mean_fsp,mean_nodes\n");
    for &variant in &variants {
        let of_variant: Vec<&RunRow> = rows.iter().filter(|r| r.variant == variant).collect();
        let runs = of_variant.len();
        let wins = of_variant.iter().filter(|r| r.win).count();
        let deltas: Vec<f64> = of_variant.iter().filter_map(|r| r.delta_dice).collect();
        let fsps: Vec<f64> = of_variant
            .iter()
            .filter_map(|r| r.fsp.map(|f| f as f64))
            .collect();
        let mean = |v: &[f64]| {
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let mean_nodes =
            of_variant.iter().map(|r| r.nodes as f64).sum::<f64>() / runs.max(1) as f64;
        summary.push_str(&format!(
            "{variant},{runs},{wins},{:.6},{:.6},{:.6},{:.6}\n",
            wins as f64 / runs.max(1) as f64,
            mean(&deltas),
            mean(&fsps),
            mean_nodes
        ));
    }
    write_file(&out.join("ablation-summary.csv"), &summary)?;
    let manifest = serde_json::json!({
        "dataset": base.dataset_id,
        "experiment": base,
        "variants": variants.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        "seeds": seeds,
    });
    write_file(
        &out.join("manifest.json"),
        &format!(
            "{}\n",
            serde_json::to_string_pretty(&manifest).expect("manifest serializes")
        ),
    )?;

    if !budgets.is_empty() {
        let mut curves = String::from("variant,budget,win_rate\n");
        for &variant in &variants {
            let fsps: Vec<Option<u64>> = rows
                .iter()
                .filter(|r| r.variant == variant)
                .map(|r| r.fsp)
                .collect();
            let curve = stats::cumulative_win_curve_from_fsps(&fsps, budgets);
            for (budget, rate) in curve.points {
                curves.push_str(&format!("{variant},{budget},{rate:.6}\n"));
            }
        }
        write_file(&out.join("win-curves.csv"), &curves)?;
    }
    println!(
        "ablation complete: {} runs over {} variants -> {}",
        rows.len(),
        variants.len(),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

/// Format with six significant digits, plain notation.
fn fmt_sig(value: f64) -> String {
    if value == 0.0 || !value.is_finite() {
        return format!("{value}");
    }
    let magnitude = value.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{value:.decimals$}")
}

fn cmd_stats(query: StatsQuery) -> Result<(), CliError> {
    match query {
        StatsQuery::Binomial { k, n, p0 } => {
            println!("{}", fmt_sig(stats::binomial_test_one_sided(k, n, p0)?));
        }
        StatsQuery::Wilson { k, n, confidence } => {
            let (lo, hi) = stats::wilson_ci(k, n, confidence)?;
            println!("{} {}", fmt_sig(lo), fmt_sig(hi));
        }
        StatsQuery::Bonferroni { alpha, m } => {
            println!("{}", fmt_sig(stats::bonferroni_threshold(alpha, m)?));
        }
        StatsQuery::Curve { budgets, summary } => {
            if budgets.is_empty() {
                return Err(CliError::Usage(
                    "--budgets must list at least one budget".into(),
                ));
            }
            let fsps = read_fsp_column(&summary)?;
            let curve = stats::cumulative_win_curve_from_fsps(&fsps, &budgets);
            println!("budget,win_rate");
            for (budget, rate) in curve.points {
                println!("{budget},{}", fmt_sig(rate));
            }
        }
        StatsQuery::Wilcoxon { pairs } => {
            let samples = read_pairs(&pairs)?;
            let result = stats::wilcoxon_signed_rank(&samples)?;
            println!(
                "statistic={} p={} method={}",
                fmt_sig(result.statistic),
                fmt_sig(result.p_value),
                match result.method {
                    stats::WilcoxonMethod::Exact => "exact",
                    stats::WilcoxonMethod::NormalApprox => "normal-approx",
                }
            );
        }
    }
    Ok(())
}

fn read_fsp_column(path: &Path) -> Result<Vec<Option<u64>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Usage("summary CSV is empty".into()))?;
    let fsp_column = header
        .split(',')
        .position(|c| c == "fsp")
        .ok_or_else(|| CliError::Usage("summary CSV lacks an fsp column".into()))?;
    let mut fsps = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let field = line.split(',').nth(fsp_column).unwrap_or("");
        if field.is_empty() {
            fsps.push(None);
        } else {
            fsps.push(Some(field.parse().map_err(|_| {
                CliError::Usage(format!("bad fsp value {field:?} on data row {}", i + 1))
            })?));
        }
    }
    Ok(fsps)
}

fn read_pairs(path: &Path) -> Result<stats::PairedSamples, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.chars().any(|c| c.is_alphabetic())) {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |f: Option<&str>| -> Result<f64, CliError> {
            f.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("bad pair on line {}", i + 1)))
        };
        let a = parse(fields.next())?;
        let b = parse(fields.next())?;
        pairs.push((a, b));
    }
    stats::PairedSamples::new(pairs).map_err(|e| CliError::Usage(e.to_string()))
}

// ---------------------------------------------------------------------------
// trace
// ---------------------------------------------------------------------------

fn cmd_trace(report: TraceReport) -> Result<(), CliError> {
    match report {
        TraceReport::Index { root } => {
            let index = trace_io::scan_corpus(&root)?;
            println!(
                "datasets={} experiments={} stages={}",
                index.datasets.len(),
                index.experiments.values().map(|v| v.len()).sum::<usize>(),
                index.stages.len()
            );
            println!(
                "events={} summaries={} codes={}",
                index.totals.events, index.totals.summaries, index.totals.codes
            );
            for (stage, counts) in &index.stages {
                println!(
                    "{stage}: events={} summaries={} codes={}",
                    counts.events, counts.summaries, counts.codes
                );
            }
        }
        TraceReport::Reports { record } => {
            let record = trace_io::load_record(&record)?;
            print_reports(&record);
        }
        TraceReport::Histogram { root, lenient } => {
            if !root.is_dir() {
                return Err(CliError::Usage(format!(
                    "missing corpus root {}",
                    root.display()
                )));
            }
            let options = trace_io::LoadOptions {
                tolerance: if lenient { 1.0 } else { 0.0 },
                ..trace_io::LoadOptions::default()
            };
            let mut sessions = Vec::new();
            collect_sessions(&root, &options, &mut sessions)?;
            let histogram = trace_io::event_type_histogram(&sessions);
            let total: u64 = histogram.values().sum();
            println!("event_type,count");
            for (event_type, count) in &histogram {
                println!("{event_type},{count}");
            }
            println!("total,{total}");
        }
    }
    Ok(())
}

fn print_suggestion_table(suggestions: &[labtree::ddf::Suggestion]) {
    println!(
        "  {:<2} {:<14} {:<8} suggestion",
        "#", "category", "priority"
    );
    for (i, s) in suggestions.iter().enumerate() {
        let priority = match s.priority {
            labtree::ddf::Priority::High => "high",
            labtree::ddf::Priority::Medium => "medium",
            labtree::ddf::Priority::Low => "low",
        };
        println!(
            "  {:<2} {:<14} {:<8} {}",
            i + 1,
            s.category.to_string(),
            priority,
            s.description
        );
    }
}

fn print_reports(record: &labtree::pipeline::ExperimentRecord) {
    for step in &record.steps {
        let Some(feedback) = &step.feedback else {
            continue;
        };
        match feedback {
            labtree::pipeline::Feedback::Failure { report } => {
                println!(
                    "step {} branch {} node {} :: failure diagnosis",
                    step.step_index, step.branch_id, step.committed_node
                );
                println!("  reasoning: {}", report.reasoning_trace);
                print_suggestion_table(&report.suggestions);
            }
            labtree::pipeline::Feedback::Optimization { audit } => {
                println!(
                    "step {} branch {} node {} :: completeness audit",
                    step.step_index, step.branch_id, step.committed_node
                );
                println!("  {:<24} status", "module");
                for (module, status) in &audit.module_statuses {
                    println!("  {module:<24} {status}");
                }
                if !audit.prioritized_suggestions.is_empty() {
                    print_suggestion_table(&audit.prioritized_suggestions);
                }
            }
            labtree::pipeline::Feedback::Single { suggestion } => {
                println!(
                    "step {} branch {} node {} :: single-point feedback",
                    step.step_index, step.branch_id, step.committed_node
                );
                print_suggestion_table(std::slice::from_ref(suggestion));
            }
        }
        println!();
    }
}

fn collect_sessions(
    dir: &Path,
    options: &trace_io::LoadOptions,
    sessions: &mut Vec<trace_io::Session>,
) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Internal(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_sessions(&path, options, sessions)?;
        } else if path.extension().is_some_and(|e| e == "jsonl") {
            sessions.push(trace_io::load_session(&path, options)?);
        }
    }
    Ok(())
}
