//! Trace corpus parsing and record persistence.
//!
//! Reads agent-event corpora laid out as
//! `<root>/<dataset_id>/<experiment_ts>/<stage_dir>/{events,summaries,codes}/`
//! with one JSONL event file per coding session, and persists this engine's
//! own experiment records and tree snapshots in versioned structured-text
//! formats. Unknown event types are preserved rather than rejected, and
//! session loading streams line by line under a length guard.

use crate::lrm::{CycleDigest, CycleEntry, CycleHistory};
use crate::pipeline::ExperimentRecord;
use crate::qwbe::{Branch, Phase, SearchTree, TrialNode};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("line {line} exceeds the {limit}-byte guard")]
    LineTooLong { line: usize, limit: usize },
    #[error("{failed} of {total} lines failed to parse (first failure at line {first_line}: {first_message})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_line: usize,
        first_message: String,
    },
    #[error("unsupported record version {found} (expected {expected})")]
    VersionMismatch { found: String, expected: String },
    #[error("missing corpus root {0}")]
    MissingRoot(PathBuf),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

fn io_err(path: &Path, source: std::io::Error) -> TraceError {
    TraceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Agent events
// ---------------------------------------------------------------------------

/// The four documented event types; anything else is preserved as-is so new
/// corpus releases never silently drop data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum EventType {
    SystemPromptEvent,
    MessageEvent,
    ActionEvent,
    ObservationEvent,
    Unknown(String),
}

impl From<String> for EventType {
    fn from(s: String) -> Self {
        match s.as_str() {
            "SystemPromptEvent" => EventType::SystemPromptEvent,
            "MessageEvent" => EventType::MessageEvent,
            "ActionEvent" => EventType::ActionEvent,
            "ObservationEvent" => EventType::ObservationEvent,
            _ => EventType::Unknown(s),
        }
    }
}

impl From<EventType> for String {
    fn from(e: EventType) -> Self {
        match e {
            EventType::SystemPromptEvent => "SystemPromptEvent".to_string(),
            EventType::MessageEvent => "MessageEvent".to_string(),
            EventType::ActionEvent => "ActionEvent".to_string(),
            EventType::ObservationEvent => "ObservationEvent".to_string(),
            EventType::Unknown(s) => s,
        }
    }
}

/// Nested model-message record. The preview is truncated, so its length may
/// legitimately disagree with `content_length`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmMessage {
    pub role: String,
    pub content_preview: String,
    pub content_length: u64,
}

/// One line of an agent-event JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub timestamp: String,
    pub event_type: EventType,
    pub event_str: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub llm_message: Option<LlmMessage>,
}

/// Accept `YYYY-MM-DDTHH:MM:SS` with an optional fractional-second suffix.
fn validate_timestamp(ts: &str) -> Result<(), String> {
    let b = ts.as_bytes();
    if b.len() < 19 {
        return Err(format!("timestamp {ts:?} too short"));
    }
    let digit = |i: usize| b[i].is_ascii_digit();
    let sep = |i: usize, c: u8| b[i] == c;
    let shape_ok = (0..4).all(digit)
        && sep(4, b'-')
        && digit(5)
        && digit(6)
        && sep(7, b'-')
        && digit(8)
        && digit(9)
        && sep(10, b'T')
        && digit(11)
        && digit(12)
        && sep(13, b':')
        && digit(14)
        && digit(15)
        && sep(16, b':')
        && digit(17)
        && digit(18);
    if !shape_ok {
        return Err(format!(
            "timestamp {ts:?} does not match ISO-8601 date-time"
        ));
    }
    if b.len() > 19
        && (b[19] != b'.' || b.len() == 20 || !b[20..].iter().all(|c| c.is_ascii_digit()))
    {
        return Err(format!("timestamp {ts:?} has a malformed fraction"));
    }
    let field = |range: std::ops::Range<usize>| ts[range].parse::<u32>().unwrap();
    let (month, day) = (field(5..7), field(8..10));
    let (hour, minute, second) = (field(11..13), field(14..16), field(17..19));
    if !(1..=12).contains(&month)
        || !(1..=31).contains(&day)
        || hour > 23
        || minute > 59
        || second > 60
    {
        return Err(format!("timestamp {ts:?} has out-of-range fields"));
    }
    Ok(())
}

/// Parse one JSONL event line. Malformed structure reports the byte offset;
/// unknown event types are preserved; extra fields are ignored.
pub fn parse_event_line(line: &str) -> Result<AgentEvent, TraceError> {
    let event: AgentEvent = serde_json::from_str(line).map_err(|e| TraceError::Parse {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    validate_timestamp(&event.timestamp)
        .map_err(|message| TraceError::Parse { offset: 0, message })?;
    Ok(event)
}

/// Inverse of [`parse_event_line`] on the known schema.
pub fn serialize_event(event: &AgentEvent) -> String {
    serde_json::to_string(event).expect("event serializes")
}

// ---------------------------------------------------------------------------
// Session loading
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Maximum tolerated fraction of failing lines; 0 is strict.
    pub tolerance: f64,
    /// Per-line byte guard; longer lines fail without being buffered whole.
    pub max_line_bytes: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.0,
            max_line_bytes: 16 * 1024 * 1024,
        }
    }
}

/// One coding session: ordered events, per-line failures (empty under
/// strict loading), and the sibling summary file when one exists.
#[derive(Clone, Debug)]
pub struct Session {
    pub path: PathBuf,
    pub events: Vec<AgentEvent>,
    pub failures: Vec<(usize, String)>,
    pub summary_ref: Option<PathBuf>,
}

/// Read one line, buffering at most `limit + 1` bytes. A `true` flag marks
/// an over-limit line; callers treat that as fatal, so the remainder of the
/// line is never consumed.
fn read_limited_line<R: BufRead>(
    reader: &mut R,
    limit: usize,
) -> std::io::Result<Option<(Vec<u8>, bool)>> {
    let mut buf = Vec::new();
    let n = reader
        .by_ref()
        .take(limit as u64 + 1)
        .read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    Ok(Some((buf, n > limit)))
}

/// Pair `events/<name>_<ts>.jsonl` with `../summaries/*_<ts>.md`.
fn sibling_summary(path: &Path) -> Option<PathBuf> {
    let stem = path.file_stem()?.to_str()?;
    let ts = stem.rsplit('_').next()?;
    let summaries = path.parent()?.parent()?.join("summaries");
    let entries = std::fs::read_dir(&summaries).ok()?;
    let mut candidates: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "md")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.ends_with(&format!("_{ts}")))
        })
        .collect();
    candidates.sort();
    candidates.into_iter().next()
}

/// Load one session file, streaming line by line. The session is rejected
/// when the failing-line fraction exceeds the tolerance.
pub fn load_session(path: &Path, options: &LoadOptions) -> Result<Session, TraceError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut failures: Vec<(usize, String)> = Vec::new();
    let mut line_no = 0usize;
    let mut attempted = 0usize;
    while let Some((raw, truncated)) =
        read_limited_line(&mut reader, options.max_line_bytes).map_err(|e| io_err(path, e))?
    {
        line_no += 1;
        if truncated {
            return Err(TraceError::LineTooLong {
                line: line_no,
                limit: options.max_line_bytes,
            });
        }
        let text = String::from_utf8_lossy(&raw);
        let trimmed = text.trim_end_matches(['\n', '\r']);
        if trimmed.is_empty() {
            continue;
        }
        attempted += 1;
        match parse_event_line(trimmed) {
            Ok(event) => events.push(event),
            Err(e) => failures.push((line_no, e.to_string())),
        }
    }
    if !failures.is_empty() {
        let frac = failures.len() as f64 / attempted.max(1) as f64;
        if frac > options.tolerance {
            let (first_line, first_message) = failures[0].clone();
            return Err(TraceError::TooManyFailures {
                failed: failures.len(),
                total: attempted,
                first_line,
                first_message,
            });
        }
    }
    Ok(Session {
        path: path.to_path_buf(),
        events,
        failures,
        summary_ref: sibling_summary(path),
    })
}

/// Event counts per type name, for corpus reporting.
pub fn event_type_histogram(sessions: &[Session]) -> BTreeMap<String, u64> {
    let mut hist = BTreeMap::new();
    for session in sessions {
        for event in &session.events {
            *hist
                .entry(String::from(event.event_type.clone()))
                .or_insert(0u64) += 1;
        }
    }
    hist
}

// ---------------------------------------------------------------------------
// Corpus scanning
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub events: u64,
    pub summaries: u64,
    pub codes: u64,
}

impl StageCounts {
    fn add(&mut self, other: &StageCounts) {
        self.events += other.events;
        self.summaries += other.summaries;
        self.codes += other.codes;
    }
}

/// Index of a trace corpus: datasets, experiment timestamps, and per-stage
/// artifact counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub datasets: BTreeSet<String>,
    pub experiments: BTreeMap<String, BTreeSet<String>>,
    /// Keyed by `<dataset>/<experiment>/<stage>`.
    pub stages: BTreeMap<String, StageCounts>,
    pub totals: StageCounts,
}

fn count_files_with_extension(dir: &Path, ext: &str) -> Result<u64, TraceError> {
    if !dir.is_dir() {
        return Ok(0);
    }
    let mut count = 0;
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            count += 1;
        }
    }
    Ok(count)
}

fn subdirectories(dir: &Path) -> Result<Vec<PathBuf>, TraceError> {
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Walk the documented corpus layout. Missing subdirectories contribute
/// zero counts; a missing root is an error.
pub fn scan_corpus(root: &Path) -> Result<CorpusIndex, TraceError> {
    if !root.is_dir() {
        return Err(TraceError::MissingRoot(root.to_path_buf()));
    }
    let mut index = CorpusIndex::default();
    for dataset_dir in subdirectories(root)? {
        let dataset = file_name(&dataset_dir);
        index.datasets.insert(dataset.clone());
        for experiment_dir in subdirectories(&dataset_dir)? {
            let experiment = file_name(&experiment_dir);
            index
                .experiments
                .entry(dataset.clone())
                .or_default()
                .insert(experiment.clone());
            for stage_dir in subdirectories(&experiment_dir)? {
                let counts = StageCounts {
                    events: count_files_with_extension(&stage_dir.join("events"), "jsonl")?,
                    summaries: count_files_with_extension(&stage_dir.join("summaries"), "md")?,
                    codes: count_files_with_extension(&stage_dir.join("codes"), "py")?,
                };
                index.totals.add(&counts);
                index.stages.insert(
                    format!("{dataset}/{experiment}/{}", file_name(&stage_dir)),
                    counts,
                );
            }
        }
    }
    Ok(index)
}

// ---------------------------------------------------------------------------
// Record persistence
// ---------------------------------------------------------------------------

pub const RECORD_FORMAT: &str = "labtree-experiment-record";
pub const RECORD_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a> {
    format: &'a str,
    version: u32,
    record: &'a ExperimentRecord,
}

#[derive(Deserialize)]
struct EnvelopeProbe {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct EnvelopeFull {
    record: ExperimentRecord,
}

/// Serialize a record to its versioned on-disk form (deterministic bytes).
pub fn record_to_string(record: &ExperimentRecord) -> String {
    let envelope = Envelope {
        format: RECORD_FORMAT,
        version: RECORD_VERSION,
        record,
    };
    let mut s = serde_json::to_string_pretty(&envelope).expect("record serializes");
    s.push('\n');
    s
}

pub fn record_from_str(text: &str) -> Result<ExperimentRecord, TraceError> {
    let probe: EnvelopeProbe = serde_json::from_str(text).map_err(|e| TraceError::Parse {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    if probe.format != RECORD_FORMAT || probe.version != RECORD_VERSION {
        return Err(TraceError::VersionMismatch {
            found: format!("{} v{}", probe.format, probe.version),
            expected: format!("{RECORD_FORMAT} v{RECORD_VERSION}"),
        });
    }
    let full: EnvelopeFull = serde_json::from_str(text).map_err(|e| TraceError::Parse {
        offset: e.column().saturating_sub(1),
        message: e.to_string(),
    })?;
    Ok(full.record)
}

pub fn persist_record(record: &ExperimentRecord, path: &Path) -> Result<(), TraceError> {
    let mut file = File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(record_to_string(record).as_bytes())
        .map_err(|e| io_err(path, e))
}

pub fn load_record(path: &Path) -> Result<ExperimentRecord, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    record_from_str(&text)
}

// ---------------------------------------------------------------------------
// Line-oriented snapshots (trees, histories, digests)
// ---------------------------------------------------------------------------

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum RecordLine {
    Tree {
        version: u32,
        phase: Phase,
        baseline_m0: f64,
    },
    Branch(Branch),
    Node(TrialNode),
    History {
        version: u32,
        cycle_id: u32,
        proposal_id: String,
        best_metric: f64,
        seed_metric: f64,
    },
    Entry(CycleEntry),
    Digest(CycleDigest),
}

fn write_lines<W: Write>(writer: &mut W, lines: &[RecordLine]) -> Result<(), TraceError> {
    for line in lines {
        let s = serde_json::to_string(line).expect("record line serializes");
        writeln!(writer, "{s}").map_err(|e| io_err(Path::new("<writer>"), e))?;
    }
    Ok(())
}

fn parse_lines(text: &str) -> Result<Vec<RecordLine>, TraceError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| TraceError::Parse {
                offset: e.column().saturating_sub(1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Write a tree snapshot: one header line, then one line per branch and per
/// node in creation order.
pub fn write_tree_snapshot<W: Write>(tree: &SearchTree, writer: &mut W) -> Result<(), TraceError> {
    let mut lines = vec![RecordLine::Tree {
        version: SNAPSHOT_VERSION,
        phase: tree.phase(),
        baseline_m0: tree.baseline_m0(),
    }];
    lines.extend(tree.branches().iter().cloned().map(RecordLine::Branch));
    lines.extend(tree.nodes().iter().cloned().map(RecordLine::Node));
    write_lines(writer, &lines)
}

pub fn read_tree_snapshot(text: &str) -> Result<SearchTree, TraceError> {
    let mut phase = None;
    let mut m0 = 0.0;
    let mut branches = Vec::new();
    let mut nodes = Vec::new();
    for line in parse_lines(text)? {
        match line {
            RecordLine::Tree {
                version,
                phase: p,
                baseline_m0,
            } => {
                if version != SNAPSHOT_VERSION {
                    return Err(TraceError::VersionMismatch {
                        found: format!("snapshot v{version}"),
                        expected: format!("snapshot v{SNAPSHOT_VERSION}"),
                    });
                }
                phase = Some(p);
                m0 = baseline_m0;
            }
            RecordLine::Branch(b) => branches.push(b),
            RecordLine::Node(n) => nodes.push(n),
            other => {
                return Err(TraceError::Snapshot(format!(
                    "unexpected line kind in tree snapshot: {}",
                    serde_json::to_string(&other).unwrap_or_default()
                )))
            }
        }
    }
    let phase = phase.ok_or_else(|| TraceError::Snapshot("missing tree header".into()))?;
    SearchTree::from_parts(nodes, branches, phase, m0)
        .map_err(|e| TraceError::Snapshot(e.to_string()))
}

/// Write a cycle history in the same record-line format.
pub fn write_history<W: Write>(history: &CycleHistory, writer: &mut W) -> Result<(), TraceError> {
    let mut lines = vec![RecordLine::History {
        version: SNAPSHOT_VERSION,
        cycle_id: history.cycle_id,
        proposal_id: history.proposal_id.clone(),
        best_metric: history.best_metric,
        seed_metric: history.seed_metric,
    }];
    lines.extend(history.entries.iter().cloned().map(RecordLine::Entry));
    write_lines(writer, &lines)
}

pub fn read_history(text: &str) -> Result<CycleHistory, TraceError> {
    let mut header: Option<CycleHistory> = None;
    let mut entries = Vec::new();
    for line in parse_lines(text)? {
        match line {
            RecordLine::History {
                version,
                cycle_id,
                proposal_id,
                best_metric,
                seed_metric,
            } => {
                if version != SNAPSHOT_VERSION {
                    return Err(TraceError::VersionMismatch {
                        found: format!("history v{version}"),
                        expected: format!("history v{SNAPSHOT_VERSION}"),
                    });
                }
                header = Some(CycleHistory {
                    cycle_id,
                    proposal_id,
                    entries: Vec::new(),
                    best_metric,
                    seed_metric,
                });
            }
            RecordLine::Entry(e) => entries.push(e),
            other => {
                return Err(TraceError::Snapshot(format!(
                    "unexpected line kind in history: {}",
                    serde_json::to_string(&other).unwrap_or_default()
                )))
            }
        }
    }
    let mut history =
        header.ok_or_else(|| TraceError::Snapshot("missing history header".into()))?;
    history.entries = entries;
    Ok(history)
}

pub fn write_digest<W: Write>(digest: &CycleDigest, writer: &mut W) -> Result<(), TraceError> {
    write_lines(writer, &[RecordLine::Digest(digest.clone())])
}

pub fn read_digest(text: &str) -> Result<CycleDigest, TraceError> {
    match parse_lines(text)?.into_iter().next() {
        Some(RecordLine::Digest(d)) => Ok(d),
        _ => Err(TraceError::Snapshot("expected a digest line".into())),
    }
}
