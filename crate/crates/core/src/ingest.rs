//! Phase I: the offline construction pipeline.
//!
//! Dialogue turns flow through entropy-aware gating, a sliding window
//! buffer, an extractor that turns windows into atomic facts, and
//! conflict-aware coarsening that folds each fact into the graph as a
//! merge (duplicate), a link (state update), or an add (new fact).

use std::collections::BTreeSet;
use std::io::BufRead;
use std::sync::OnceLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embed::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::graph::{AtomicEntry, DialogueItem, EntryId, MemoryGraph, Timestamp};
use crate::index::DenseIndex;
use crate::store::MemoryStore;
use crate::text::content_words;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Entropy-aware gating thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Redundancy threshold on nearest-neighbor cosine.
    pub lambda_red: f64,
    /// Short-horizon window in seconds; repeats inside it are dropped.
    pub delta_short_secs: i64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { lambda_red: 0.6, delta_short_secs: 3600 }
    }
}

/// Conflict-aware coarsening thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarsenConfig {
    /// Semantic similarity threshold separating related from distinct.
    pub lambda_coal: f64,
    /// Keyword-overlap threshold separating duplicates from state updates.
    pub lambda_ovlp: f64,
}

impl Default for CoarsenConfig {
    fn default() -> Self {
        CoarsenConfig { lambda_coal: 0.7, lambda_ovlp: 0.5 }
    }
}

pub const DEFAULT_WINDOW_CAPACITY: usize = 20;

// ---------------------------------------------------------------------------
// Gating
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum GateDecision {
    Pass,
    /// Dropped as short-term repetition of `nearest`.
    Drop {
        nearest: EntryId,
        similarity: f64,
        gap_secs: i64,
    },
}

/// Decide whether a turn carries enough new information to keep.
///
/// A turn is dropped only when its nearest stored neighbor is both very
/// similar (cosine above `lambda_red`) and recent (gap strictly inside the
/// short horizon). Long-term recurrence therefore always passes, and an
/// empty memory passes everything.
pub fn gate(
    item: &DialogueItem,
    graph: &MemoryGraph,
    dense: &DenseIndex,
    embedder: &dyn Embedder,
    cfg: &GateConfig,
) -> Result<GateDecision> {
    if graph.is_empty() {
        return Ok(GateDecision::Pass);
    }
    let query = embedder.embed(&item.text)?;
    let nearest = dense.top_k(&query, 1, &BTreeSet::new())?;
    let Some((nearest_id, similarity)) = nearest.first().copied() else {
        return Ok(GateDecision::Pass);
    };
    let neighbor = graph.entry(nearest_id).expect("index aligned with graph");
    let gap_secs = item.timestamp.gap_secs(neighbor.timestamp);
    if similarity > cfg.lambda_red && gap_secs < cfg.delta_short_secs {
        Ok(GateDecision::Drop { nearest: nearest_id, similarity, gap_secs })
    } else {
        Ok(GateDecision::Pass)
    }
}

// ---------------------------------------------------------------------------
// Sliding window
// ---------------------------------------------------------------------------

/// Buffer of gated-in turns awaiting extraction.
#[derive(Debug, Clone)]
pub struct SlidingWindow {
    items: Vec<DialogueItem>,
    capacity: usize,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        SlidingWindow { items: Vec::new(), capacity: capacity.max(1) }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append an item; when the buffer reaches capacity the full window is
    /// emitted and the buffer resets.
    pub fn push(&mut self, item: DialogueItem) -> Option<Vec<DialogueItem>> {
        self.items.push(item);
        if self.items.len() >= self.capacity {
            Some(std::mem::take(&mut self.items))
        } else {
            None
        }
    }

    /// Emit whatever is buffered (end of stream or session boundary).
    pub fn flush(&mut self) -> Option<Vec<DialogueItem>> {
        if self.items.is_empty() {
            None
        } else {
            Some(std::mem::take(&mut self.items))
        }
    }
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// A fact produced by an extractor, not yet embedded or assigned an id.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedFact {
    pub statement: String,
    pub keywords: BTreeSet<String>,
    pub entities: BTreeSet<String>,
    pub record: std::collections::BTreeMap<String, String>,
    pub timestamp: Timestamp,
    pub source: (String, u32),
}

/// Turns a window of dialogue into self-contained facts. Implementations
/// must resolve pronouns to speaker names and ground time expressions, and
/// may only reference content present in the window.
pub trait Extractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(&self, window: &[DialogueItem]) -> Result<Vec<ExtractedFact>>;
}

fn regexes() -> &'static ExtractorRegexes {
    static REGEXES: OnceLock<ExtractorRegexes> = OnceLock::new();
    REGEXES.get_or_init(|| ExtractorRegexes {
        i_am: Regex::new(r"\bI'm\b").unwrap(),
        i_have: Regex::new(r"\bI've\b").unwrap(),
        i_will: Regex::new(r"\bI'll\b").unwrap(),
        i_would: Regex::new(r"\bI'd\b").unwrap(),
        i_word: Regex::new(r"\bI\b").unwrap(),
        my_word: Regex::new(r"(?i)\bmy\b").unwrap(),
        me_word: Regex::new(r"(?i)\bme\b").unwrap(),
        today: Regex::new(r"(?i)\s*\btoday\b").unwrap(),
        spaces: Regex::new(r"\s+").unwrap(),
        my_attr: Regex::new(r"(?i)^my ([a-z][a-z ]*?) (?:is|are) (.+)$").unwrap(),
        named_attr: Regex::new(r"^([A-Z]\w*(?: [A-Z]\w*)*)'s ([a-z][a-z ]*?) (?:is|are) (.+)$")
            .unwrap(),
    })
}

struct ExtractorRegexes {
    i_am: Regex,
    i_have: Regex,
    i_will: Regex,
    i_would: Regex,
    i_word: Regex,
    my_word: Regex,
    me_word: Regex,
    today: Regex,
    spaces: Regex,
    my_attr: Regex,
    named_attr: Regex,
}

const SMALLTALK: &[&str] = &[
    "a", "afternoon", "again", "alright", "are", "awesome", "been", "bye", "care", "catch",
    "cool", "day", "doing", "evening", "fine", "good", "goodbye", "great", "haha", "have",
    "hello", "hey", "hi", "hmm", "how", "i", "it", "later", "lol", "long", "lovely", "m",
    "morning", "much", "nice", "night", "no", "oh", "ok", "okay", "please", "s", "see", "so",
    "soon", "sorry", "sounds", "sure", "take", "talk", "thank", "thanks", "there", "time",
    "too", "up", "was", "welcome", "well", "what", "while", "wow", "yeah", "yes", "you",
];

fn is_smalltalk(text: &str) -> bool {
    let tokens = crate::text::tokenize(text);
    !tokens.is_empty()
        && tokens
            .iter()
            .all(|t| SMALLTALK.binary_search(&t.as_str()).is_ok())
}

/// Deterministic rule-based extractor.
///
/// One fact per declarative turn: first-person references are rewritten to
/// the speaker's name, a trailing "today" is grounded into the timestamp,
/// questions and pure smalltalk produce nothing. Keywords are the content
/// words of the restatement, entities are capitalized token runs plus the
/// speaker, and `My <attribute> is <value>` turns populate the metadata
/// record.
#[derive(Debug, Clone, Default)]
pub struct RuleExtractor;

impl RuleExtractor {
    /// Restate a single turn; `None` when the turn carries no fact.
    pub fn restate(&self, item: &DialogueItem) -> Option<ExtractedFact> {
        let re = regexes();
        let speaker = item.speaker.trim();
        let raw = item.text.trim();
        if raw.is_empty() || raw.ends_with('?') || is_smalltalk(raw) {
            return None;
        }

        let possessive = format!("{speaker}'s");
        let mut text = re.i_am.replace_all(raw, format!("{speaker} is")).into_owned();
        text = re.i_have.replace_all(&text, format!("{speaker} has")).into_owned();
        text = re.i_will.replace_all(&text, format!("{speaker} will")).into_owned();
        text = re.i_would.replace_all(&text, format!("{speaker} would")).into_owned();
        text = re.i_word.replace_all(&text, speaker).into_owned();
        text = re.my_word.replace_all(&text, possessive.as_str()).into_owned();
        text = re.me_word.replace_all(&text, speaker).into_owned();
        text = re.today.replace_all(&text, "").into_owned();
        text = re.spaces.replace_all(&text, " ").into_owned();
        let statement = finish_statement(&text);
        if statement.is_empty() {
            return None;
        }

        let entities = extract_entities(&statement, speaker);
        let entity_words: BTreeSet<String> = entities
            .iter()
            .flat_map(|e| crate::text::tokenize(e))
            .collect();
        let keywords: BTreeSet<String> = content_words(&statement)
            .into_iter()
            .filter(|w| !entity_words.contains(w))
            .filter(|w| !w.chars().all(|c| c.is_ascii_digit()))
            .collect();
        if keywords.len() + entity_words.len() < 2 {
            return None;
        }

        let mut record = std::collections::BTreeMap::new();
        record.insert("persons".to_string(), speaker.to_string());
        record.insert(
            "entities".to_string(),
            entities.iter().cloned().collect::<Vec<_>>().join(", "),
        );
        record.insert("time".to_string(), item.timestamp.iso_date());
        if let Some(captures) = re.my_attr.captures(raw) {
            record.insert(
                captures[1].to_lowercase(),
                trim_trailing_punct(&captures[2]).to_string(),
            );
        } else if let Some(captures) = re.named_attr.captures(raw) {
            let mut persons = vec![speaker.to_string()];
            if captures[1].to_string() != speaker {
                persons.push(captures[1].to_string());
            }
            record.insert("persons".to_string(), persons.join(", "));
            record.insert(
                captures[2].to_lowercase(),
                trim_trailing_punct(&captures[3]).to_string(),
            );
        }

        Some(ExtractedFact {
            statement,
            keywords,
            entities,
            record,
            timestamp: item.timestamp,
            source: (item.session_id.clone(), item.turn_index),
        })
    }
}

fn trim_trailing_punct(s: &str) -> &str {
    s.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
}

fn finish_statement(text: &str) -> String {
    let trimmed = trim_trailing_punct(text.trim());
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// Capitalized token runs (joined) plus the speaker. A lone capitalized
/// token at the start of a sentence only counts when it is the speaker.
fn extract_entities(statement: &str, speaker: &str) -> BTreeSet<String> {
    let mut entities = BTreeSet::new();
    if !speaker.is_empty() {
        entities.insert(speaker.to_string());
    }
    let speaker_tokens: BTreeSet<&str> = speaker.split_whitespace().collect();

    // Track sentence starts so ordinary sentence-initial words are not
    // mistaken for names.
    let mut sentence_start = vec![];
    let mut starts = true;
    let mut tokens = vec![];
    for piece in statement.split_inclusive(|c: char| !c.is_alphanumeric()) {
        let token: String = piece.chars().filter(|c| c.is_alphanumeric()).collect();
        if !token.is_empty() {
            tokens.push(token);
            sentence_start.push(starts);
            starts = false;
        }
        if piece.ends_with(['.', '!', '?']) {
            starts = true;
        }
    }

    let mut run: Vec<&str> = Vec::new();
    let mut run_starts_sentence = false;
    let mut close_run = |run: &mut Vec<&str>, starts: bool| {
        if run.is_empty() {
            return;
        }
        let keep = run.len() > 1 || !starts || speaker_tokens.contains(run[0]);
        if keep {
            entities.insert(run.join(" "));
        }
        run.clear();
    };
    for (i, token) in tokens.iter().enumerate() {
        let capitalized = token.chars().next().is_some_and(|c| c.is_uppercase());
        if capitalized {
            if run.is_empty() {
                run_starts_sentence = sentence_start[i];
            }
            run.push(token.as_str());
        } else {
            close_run(&mut run, run_starts_sentence);
        }
    }
    close_run(&mut run, run_starts_sentence);
    entities
}

impl Extractor for RuleExtractor {
    fn name(&self) -> &str {
        "rule"
    }

    fn extract(&self, window: &[DialogueItem]) -> Result<Vec<ExtractedFact>> {
        Ok(window.iter().filter_map(|item| self.restate(item)).collect())
    }
}

/// LLM-backed extractor speaking a chat endpoint. The model is asked for a
/// JSON array of facts mirroring [`ExtractedFact`].
pub struct RemoteExtractor {
    client: crate::provider::ChatClient,
    name: String,
}

const EXTRACTOR_INSTRUCTIONS: &str = "You convert dialogue turns into self-contained facts. \
Rewrite pronouns to speaker names, ground relative dates to absolute dates, and keep each fact \
independent. Respond with a JSON array; each element must be an object with fields \
\"statement\" (string), \"keywords\" (array of lowercase strings), \"entities\" (array of \
strings), \"record\" (object of string fields), \"timestamp\" (unix seconds, integer), and \
\"turn_index\" (integer index into the window). Output nothing but JSON.";

#[derive(Deserialize)]
struct RemoteFact {
    statement: String,
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    entities: Vec<String>,
    #[serde(default)]
    record: std::collections::BTreeMap<String, String>,
    timestamp: i64,
    #[serde(default)]
    turn_index: u32,
}

impl RemoteExtractor {
    pub fn new(client: crate::provider::ChatClient) -> Self {
        let name = format!("remote:{}", client.model());
        RemoteExtractor { client, name }
    }
}

impl Extractor for RemoteExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn extract(&self, window: &[DialogueItem]) -> Result<Vec<ExtractedFact>> {
        let mut user = String::new();
        for item in window {
            user.push_str(&format!(
                "[{} | session {} | turn {}] {}: {}\n",
                item.timestamp.iso_datetime(),
                item.session_id,
                item.turn_index,
                item.speaker,
                item.text
            ));
        }
        let body = self.client.complete(EXTRACTOR_INSTRUCTIONS, &user)?;
        let raw: Vec<RemoteFact> = serde_json::from_str(body.trim())
            .map_err(|e| Error::ProviderParse(format!("extractor output: {e}")))?;
        let (min_ts, max_ts) = window
            .iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), item| {
                (lo.min(item.timestamp.0), hi.max(item.timestamp.0))
            });
        let session = window.first().map(|i| i.session_id.clone()).unwrap_or_default();
        Ok(raw
            .into_iter()
            .filter(|f| !f.statement.trim().is_empty())
            .map(|f| ExtractedFact {
                statement: f.statement.trim().to_string(),
                keywords: f.keywords.into_iter().map(|k| k.to_lowercase()).collect(),
                entities: f.entities.into_iter().collect(),
                record: f.record,
                // Clamp into the window range per the extractor contract.
                timestamp: Timestamp(f.timestamp.clamp(min_ts, max_ts)),
                source: (session.clone(), f.turn_index),
            })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Coarsening
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoarsenAction {
    Merge(EntryId),
    Link(EntryId),
    Add,
}

/// The coarsening decision rule on (similarity, overlap).
pub fn decide_action(sim: f64, ovlp: f64, cfg: &CoarsenConfig, target: EntryId) -> CoarsenAction {
    if sim > cfg.lambda_coal {
        if ovlp > cfg.lambda_ovlp {
            CoarsenAction::Merge(target)
        } else {
            CoarsenAction::Link(target)
        }
    } else {
        CoarsenAction::Add
    }
}

/// Keyword overlap normalized by the candidate's keyword count.
pub fn keyword_overlap(candidate: &BTreeSet<String>, existing: &BTreeSet<String>) -> f64 {
    let shared = candidate.intersection(existing).count() as f64;
    shared / (candidate.len().max(1)) as f64
}

/// Classify a candidate against one existing entry.
pub fn classify(
    candidate: &AtomicEntry,
    existing: &AtomicEntry,
    cfg: &CoarsenConfig,
) -> Result<CoarsenAction> {
    let sim = cosine(&candidate.embedding, &existing.embedding)?;
    let ovlp = keyword_overlap(&candidate.keywords, &existing.keywords);
    Ok(decide_action(sim, ovlp, cfg, existing.id))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CoarsenCounts {
    pub merged: usize,
    pub linked: usize,
    pub added: usize,
}

/// Fold extracted facts into the store, one nearest-neighbor comparison
/// per candidate. With coarsening disabled every candidate is added.
pub fn coarsen(
    store: &mut MemoryStore,
    facts: Vec<ExtractedFact>,
    embedder: &dyn Embedder,
    cfg: &CoarsenConfig,
    enabled: bool,
) -> Result<CoarsenCounts> {
    let mut counts = CoarsenCounts::default();
    for fact in facts {
        let embedding = embedder.embed(&fact.statement)?;
        let candidate = AtomicEntry {
            id: store.graph().next_id(),
            statement: fact.statement,
            keywords: fact.keywords,
            entities: fact.entities,
            record: fact.record,
            embedding,
            timestamp: fact.timestamp,
            sources: vec![fact.source],
        };
        let action = if !enabled {
            CoarsenAction::Add
        } else {
            let nearest =
                store.index().dense.top_k(&candidate.embedding, 1, &BTreeSet::new())?;
            match nearest.first() {
                None => CoarsenAction::Add,
                Some((id, _)) => {
                    let existing = store.graph().entry(*id).expect("index aligned");
                    classify(&candidate, existing, cfg)?
                }
            }
        };
        match action {
            CoarsenAction::Merge(id) => {
                store.merge_entry(id, &candidate)?;
                counts.merged += 1;
            }
            CoarsenAction::Link(id) => {
                store.link_entries(id, candidate)?;
                counts.linked += 1;
            }
            CoarsenAction::Add => {
                store.add_entry(candidate)?;
                counts.added += 1;
            }
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------------------
// Stream format and the full Phase I driver
// ---------------------------------------------------------------------------

/// One line of the ingestion stream.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamRecord {
    /// Session header carrying the session date.
    Session { session_id: String, date: String },
    Turn {
        session_id: String,
        speaker: String,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timestamp: Option<TimeSpec>,
    },
}

/// Turn timestamps accept unix seconds or a date/datetime string.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TimeSpec {
    Epoch(i64),
    Text(String),
}

impl TimeSpec {
    pub fn resolve(&self) -> Result<Timestamp> {
        match self {
            TimeSpec::Epoch(secs) => Ok(Timestamp(*secs)),
            TimeSpec::Text(text) => parse_time_text(text),
        }
    }
}

pub fn parse_time_text(text: &str) -> Result<Timestamp> {
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(text) {
        return Ok(Timestamp(dt.timestamp()));
    }
    for format in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(text, format) {
            return Ok(Timestamp(dt.and_utc().timestamp()));
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(Timestamp::from_date(date));
    }
    Err(Error::Dataset(format!("unparseable timestamp {text:?}")))
}

pub fn parse_stream(reader: impl BufRead) -> Result<Vec<StreamRecord>> {
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: StreamRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: index + 1,
                reason: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct IngestReport {
    pub turns: usize,
    pub gated_out: usize,
    pub windows: usize,
    pub skipped_windows: usize,
    pub extracted: usize,
    pub merged: usize,
    pub linked: usize,
    pub added: usize,
    pub construction_secs: f64,
}

/// Stage toggles used by the ablation switches.
#[derive(Debug, Clone, Copy)]
pub struct PhaseOneToggles {
    pub gating: bool,
    pub coarsening: bool,
}

impl Default for PhaseOneToggles {
    fn default() -> Self {
        PhaseOneToggles { gating: true, coarsening: true }
    }
}

/// Single-writer Phase I driver: feed it stream records, then `finish`.
pub struct Ingestor<'a> {
    store: &'a mut MemoryStore,
    embedder: &'a dyn Embedder,
    extractor: &'a dyn Extractor,
    gate_cfg: GateConfig,
    coarsen_cfg: CoarsenConfig,
    toggles: PhaseOneToggles,
    window: SlidingWindow,
    report: IngestReport,
    session_dates: std::collections::BTreeMap<String, Timestamp>,
    turn_counters: std::collections::BTreeMap<String, u32>,
    current_session: Option<String>,
    started: std::time::Instant,
}

impl<'a> Ingestor<'a> {
    pub fn new(
        store: &'a mut MemoryStore,
        embedder: &'a dyn Embedder,
        extractor: &'a dyn Extractor,
        gate_cfg: GateConfig,
        coarsen_cfg: CoarsenConfig,
        window_capacity: usize,
        toggles: PhaseOneToggles,
    ) -> Self {
        Ingestor {
            store,
            embedder,
            extractor,
            gate_cfg,
            coarsen_cfg,
            toggles,
            window: SlidingWindow::new(window_capacity),
            report: IngestReport::default(),
            session_dates: Default::default(),
            turn_counters: Default::default(),
            current_session: None,
            started: std::time::Instant::now(),
        }
    }

    pub fn handle(&mut self, record: StreamRecord) -> Result<()> {
        match record {
            StreamRecord::Session { session_id, date } => {
                // A session boundary flushes the buffer so facts never mix
                // session contexts.
                self.flush_window()?;
                let ts = parse_time_text(&date)?;
                self.session_dates.insert(session_id.clone(), ts);
                self.current_session = Some(session_id);
            }
            StreamRecord::Turn { session_id, speaker, text, timestamp } => {
                if self.current_session.as_deref() != Some(session_id.as_str()) {
                    self.flush_window()?;
                    self.current_session = Some(session_id.clone());
                }
                let resolved = match timestamp {
                    Some(spec) => spec.resolve()?,
                    None => self
                        .session_dates
                        .get(&session_id)
                        .copied()
                        .ok_or_else(|| {
                            Error::Dataset(format!(
                                "turn in session {session_id} before any session header"
                            ))
                        })?,
                };
                let turn_index = {
                    let counter = self.turn_counters.entry(session_id.clone()).or_insert(0);
                    let index = *counter;
                    *counter += 1;
                    index
                };
                let item = DialogueItem {
                    speaker,
                    text,
                    timestamp: resolved,
                    session_id,
                    turn_index,
                };
                item.validate()?;
                self.report.turns += 1;
                if self.toggles.gating {
                    let decision = gate(
                        &item,
                        self.store.graph(),
                        &self.store.index().dense,
                        self.embedder,
                        &self.gate_cfg,
                    )?;
                    if let GateDecision::Drop { nearest, similarity, gap_secs } = decision {
                        log::debug!(
                            "gated out turn {}/{} (near {nearest}, cos {similarity:.3}, gap {gap_secs}s)",
                            item.session_id,
                            item.turn_index
                        );
                        self.report.gated_out += 1;
                        return Ok(());
                    }
                }
                if let Some(full) = self.window.push(item) {
                    self.process_window(full)?;
                }
            }
        }
        Ok(())
    }

    fn flush_window(&mut self) -> Result<()> {
        if let Some(partial) = self.window.flush() {
            self.process_window(partial)?;
        }
        Ok(())
    }

    fn process_window(&mut self, items: Vec<DialogueItem>) -> Result<()> {
        self.report.windows += 1;
        let facts = match self.extractor.extract(&items) {
            Ok(facts) => facts,
            Err(first_err) => {
                log::warn!("extractor failed ({first_err}); retrying window once");
                match self.extractor.extract(&items) {
                    Ok(facts) => facts,
                    Err(second_err) => {
                        log::warn!("extractor failed twice ({second_err}); skipping window");
                        self.report.skipped_windows += 1;
                        return Ok(());
                    }
                }
            }
        };
        self.report.extracted += facts.len();
        let counts = coarsen(
            self.store,
            facts,
            self.embedder,
            &self.coarsen_cfg,
            self.toggles.coarsening,
        )?;
        self.report.merged += counts.merged;
        self.report.linked += counts.linked;
        self.report.added += counts.added;
        Ok(())
    }

    /// Flush the final partial window and return the report.
    pub fn finish(mut self) -> Result<IngestReport> {
        self.flush_window()?;
        self.report.construction_secs = self.started.elapsed().as_secs_f64();
        Ok(self.report)
    }
}

/// Run the whole Phase I pipeline over a record stream.
#[allow(clippy::too_many_arguments)]
pub fn ingest_records(
    store: &mut MemoryStore,
    records: Vec<StreamRecord>,
    embedder: &dyn Embedder,
    extractor: &dyn Extractor,
    gate_cfg: GateConfig,
    coarsen_cfg: CoarsenConfig,
    window_capacity: usize,
    toggles: PhaseOneToggles,
) -> Result<IngestReport> {
    let mut ingestor = Ingestor::new(
        store,
        embedder,
        extractor,
        gate_cfg,
        coarsen_cfg,
        window_capacity,
        toggles,
    );
    for record in records {
        ingestor.handle(record)?;
    }
    ingestor.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::OfflineEmbedder;

    fn item(speaker: &str, text: &str, ts: i64) -> DialogueItem {
        DialogueItem {
            speaker: speaker.to_string(),
            text: text.to_string(),
            timestamp: Timestamp(ts),
            session_id: "s1".to_string(),
            turn_index: 0,
        }
    }

    fn seeded_store(statements: &[(&str, i64)]) -> MemoryStore {
        let embedder = OfflineEmbedder::default();
        let mut store = MemoryStore::new();
        for (i, (turn_text, ts)) in statements.iter().enumerate() {
            let fact = RuleExtractor.restate(&item("Alice", turn_text, *ts)).unwrap();
            let embedding = embedder.embed(&fact.statement).unwrap();
            store
                .add_entry(AtomicEntry {
                    id: EntryId(i as u64 + 1),
                    statement: fact.statement,
                    keywords: fact.keywords,
                    entities: fact.entities,
                    record: fact.record,
                    embedding,
                    timestamp: Timestamp(*ts),
                    sources: vec![fact.source],
                })
                .unwrap();
        }
        store
    }

    #[test]
    fn gate_passes_on_empty_memory() {
        let store = MemoryStore::new();
        let decision = gate(
            &item("Alice", "I adopted a cat", 0),
            store.graph(),
            &store.index().dense,
            &OfflineEmbedder::default(),
            &GateConfig::default(),
        )
        .unwrap();
        assert_eq!(decision, GateDecision::Pass);
    }

    #[test]
    fn gate_drops_short_term_repetition() {
        // Stored: "Alice adopted a cat" at t=0. A raw near-duplicate 30
        // minutes later shares {adopted, a, cat} of its 4 tokens, so the
        // cosine is 3/4 = 0.75 > 0.6 and the 1800 s gap is inside the hour.
        let store = seeded_store(&[("I adopted a cat", 0)]);
        let decision = gate(
            &item("Alice", "I adopted a cat", 1800),
            store.graph(),
            &store.index().dense,
            &OfflineEmbedder::default(),
            &GateConfig::default(),
        )
        .unwrap();
        match decision {
            GateDecision::Drop { similarity, gap_secs, .. } => {
                assert!(similarity > 0.6, "similarity {similarity}");
                assert_eq!(gap_secs, 1800);
            }
            GateDecision::Pass => panic!("expected drop"),
        }
    }

    #[test]
    fn gate_allows_long_term_recurrence() {
        let store = seeded_store(&[("I adopted a cat", 0)]);
        let three_days = 3 * 24 * 3600;
        let decision = gate(
            &item("Alice", "I adopted a cat", three_days),
            store.graph(),
            &store.index().dense,
            &OfflineEmbedder::default(),
            &GateConfig::default(),
        )
        .unwrap();
        assert_eq!(decision, GateDecision::Pass);
    }

    #[test]
    fn gate_monotone_in_thresholds() {
        // At a fixed view, lowering lambda_red can only turn passes into
        // drops, and shrinking delta_short can only turn drops into passes.
        let store = seeded_store(&[("I adopted a cat", 0)]);
        let turn = item("Alice", "I adopted a cat", 1800);
        let embedder = OfflineEmbedder::default();
        let decide = |lambda: f64, delta: i64| {
            gate(
                &turn,
                store.graph(),
                &store.index().dense,
                &embedder,
                &GateConfig { lambda_red: lambda, delta_short_secs: delta },
            )
            .unwrap()
        };
        let lambdas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        for pair in lambdas.windows(2) {
            let lower = decide(pair[0], 3600);
            let higher = decide(pair[1], 3600);
            if lower == GateDecision::Pass {
                assert_eq!(higher, GateDecision::Pass);
            }
        }
        let deltas = [1, 600, 1800, 3600, 7200];
        for pair in deltas.windows(2) {
            let shorter = decide(0.6, pair[0]);
            let longer = decide(0.6, pair[1]);
            if shorter != GateDecision::Pass {
                assert_ne!(longer, GateDecision::Pass);
            }
        }
    }

    #[test]
    fn window_emits_at_capacity() {
        let mut window = SlidingWindow::new(20);
        for i in 0..19 {
            assert!(window.push(item("Alice", "I adopted a cat", i)).is_none());
        }
        let emitted = window.push(item("Alice", "I adopted a cat", 19)).unwrap();
        assert_eq!(emitted.len(), 20);
        assert!(window.is_empty());
    }

    #[test]
    fn window_flush_emits_partial() {
        let mut window = SlidingWindow::new(20);
        for i in 0..7 {
            window.push(item("Alice", "I adopted a cat", i));
        }
        assert_eq!(window.flush().unwrap().len(), 7);
        assert!(window.flush().is_none());
    }

    #[test]
    fn rule_extractor_restates_first_person() {
        let fact = RuleExtractor
            .restate(&item("Alice", "I adopted a cat today", 1_682_899_200))
            .unwrap();
        assert_eq!(fact.statement, "Alice adopted a cat");
        assert!(fact.entities.contains("Alice"));
        assert!(fact.keywords.contains("adopted") && fact.keywords.contains("cat"));
        assert_eq!(fact.timestamp, Timestamp(1_682_899_200));
        assert_eq!(fact.record["time"], "2023-05-01");
    }

    #[test]
    fn smalltalk_table_is_sorted() {
        let mut sorted = SMALLTALK.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, SMALLTALK);
    }

    #[test]
    fn rule_extractor_skips_greetings_and_questions() {
        let extractor = RuleExtractor;
        let window = vec![
            item("Alice", "Hey! How are you doing?", 0),
            item("Bob", "Good morning!", 0),
            item("Alice", "What's up?", 0),
        ];
        assert!(extractor.extract(&window).unwrap().is_empty());
    }

    #[test]
    fn rule_extractor_captures_attributes() {
        let fact = RuleExtractor
            .restate(&item("Bob", "My phone number is 555-0199.", 0))
            .unwrap();
        assert_eq!(fact.statement, "Bob's phone number is 555-0199");
        assert_eq!(fact.record["phone number"], "555-0199");
        assert_eq!(fact.record["persons"], "Bob");
    }

    #[test]
    fn rule_extractor_joins_capitalized_runs() {
        let fact = RuleExtractor
            .restate(&item(
                "Melanie",
                "The band Summer Sounds played an awesome pop song",
                0,
            ))
            .unwrap();
        assert!(fact.entities.contains("Summer Sounds"));
        assert!(fact.entities.contains("Melanie"));
        // Sentence-initial "The" is not an entity.
        assert!(!fact.entities.contains("The"));
    }

    #[test]
    fn decide_action_truth_table_spot_checks() {
        let cfg = CoarsenConfig::default();
        let t = EntryId(1);
        assert_eq!(decide_action(0.9, 1.0, &cfg, t), CoarsenAction::Merge(t));
        assert_eq!(decide_action(0.8, 0.5, &cfg, t), CoarsenAction::Link(t));
        assert_eq!(decide_action(0.2, 1.0, &cfg, t), CoarsenAction::Add);
        // Boundary: sim exactly at lambda_coal is not "greater than".
        assert_eq!(decide_action(0.7, 1.0, &cfg, t), CoarsenAction::Add);
    }

    #[test]
    fn keyword_overlap_is_candidate_normalized() {
        let candidate: BTreeSet<String> =
            ["meeting", "3pm"].iter().map(|s| s.to_string()).collect();
        let existing: BTreeSet<String> =
            ["meeting", "2pm"].iter().map(|s| s.to_string()).collect();
        assert!((keyword_overlap(&candidate, &existing) - 0.5).abs() < 1e-12);
        let empty = BTreeSet::new();
        assert_eq!(keyword_overlap(&empty, &existing), 0.0);
    }

    #[test]
    fn coarsen_merge_link_add_paths() {
        let embedder = OfflineEmbedder::default();
        let cfg = CoarsenConfig::default();
        let mut store = MemoryStore::new();
        let extractor = RuleExtractor;

        // Candidate into empty store: Add.
        let first = extractor.restate(&item("Alice", "My recital is at 2pm", 100)).unwrap();
        let counts = coarsen(&mut store, vec![first], &embedder, &cfg, true).unwrap();
        assert_eq!(counts, CoarsenCounts { merged: 0, linked: 0, added: 1 });
        assert_eq!(store.graph().len(), 1);

        // Exact restatement: identical text embeds identically, so Merge.
        let dup = extractor.restate(&item("Alice", "My recital is at 2pm", 200)).unwrap();
        let counts = coarsen(&mut store, vec![dup], &embedder, &cfg, true).unwrap();
        assert_eq!(counts.merged, 1);
        assert_eq!(store.graph().len(), 1);

        // Schedule change: high similarity, half the keywords differ: Link.
        let update = extractor.restate(&item("Alice", "My recital is at 3pm", 300)).unwrap();
        let counts = coarsen(&mut store, vec![update], &embedder, &cfg, true).unwrap();
        assert_eq!(counts.linked, 1);
        assert_eq!(store.graph().len(), 2);
        assert_eq!(store.graph().edge_count(), 1);
        let edge = store.graph().edges().next().unwrap();
        assert_eq!(edge.kind, crate::graph::EdgeKind::TemporalUpdate);
    }

    #[test]
    fn session_flush_and_partial_windows() {
        let embedder = OfflineEmbedder::default();
        let extractor = RuleExtractor;
        let mut store = MemoryStore::new();
        let records = vec![
            StreamRecord::Session {
                session_id: "s1".to_string(),
                date: "2023-05-01".to_string(),
            },
            StreamRecord::Turn {
                session_id: "s1".to_string(),
                speaker: "Alice".to_string(),
                text: "I adopted a cat today".to_string(),
                timestamp: None,
            },
            StreamRecord::Session {
                session_id: "s2".to_string(),
                date: "2023-05-09".to_string(),
            },
            StreamRecord::Turn {
                session_id: "s2".to_string(),
                speaker: "Bob".to_string(),
                text: "I planted tomatoes in the garden".to_string(),
                timestamp: None,
            },
        ];
        let report = ingest_records(
            &mut store,
            records,
            &embedder,
            &extractor,
            GateConfig::default(),
            CoarsenConfig::default(),
            DEFAULT_WINDOW_CAPACITY,
            PhaseOneToggles::default(),
        )
        .unwrap();
        assert_eq!(report.turns, 2);
        assert_eq!(report.windows, 2);
        assert_eq!(report.added, 2);
        assert_eq!(store.graph().len(), 2);
        let ts: Vec<Timestamp> = store.graph().entries().map(|e| e.timestamp).collect();
        assert_eq!(
            ts,
            vec![Timestamp::from_ymd(2023, 5, 1), Timestamp::from_ymd(2023, 5, 9)]
        );
    }

    #[test]
    fn failing_extractor_is_retried_then_skipped() {
        struct Flaky {
            failures: std::sync::atomic::AtomicUsize,
        }
        impl Extractor for Flaky {
            fn name(&self) -> &str {
                "flaky"
            }
            fn extract(&self, _window: &[DialogueItem]) -> Result<Vec<ExtractedFact>> {
                self.failures.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Err(Error::Transport("boom".into()))
            }
        }
        let embedder = OfflineEmbedder::default();
        let extractor = Flaky { failures: Default::default() };
        let mut store = MemoryStore::new();
        let records = vec![
            StreamRecord::Session {
                session_id: "s1".to_string(),
                date: "2023-05-01".to_string(),
            },
            StreamRecord::Turn {
                session_id: "s1".to_string(),
                speaker: "Alice".to_string(),
                text: "I adopted a cat".to_string(),
                timestamp: None,
            },
        ];
        let report = ingest_records(
            &mut store,
            records,
            &embedder,
            &extractor,
            GateConfig::default(),
            CoarsenConfig::default(),
            DEFAULT_WINDOW_CAPACITY,
            PhaseOneToggles::default(),
        )
        .unwrap();
        assert_eq!(report.skipped_windows, 1);
        assert_eq!(extractor.failures.load(std::sync::atomic::Ordering::SeqCst), 2);
        assert!(store.graph().is_empty());
    }
}
