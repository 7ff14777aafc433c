//! Canonical store of atomic entries and typed directed edges.
//!
//! The graph is append-mostly: entries are added, merged into, or linked
//! with temporal-update edges; nothing is ever deleted. A single writer
//! mutates the live graph while readers work on immutable snapshots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::embed::Vector;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "ariadne-mem/1";

/// Opaque entry identifier, unique within one graph.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct EntryId(pub u64);

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

/// UTC instant at second resolution.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_date(date: NaiveDate) -> Self {
        Timestamp(date.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp())
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Self {
        Timestamp::from_date(NaiveDate::from_ymd_opt(year, month, day).unwrap())
    }

    pub fn plus_hours(self, hours: i64) -> Self {
        Timestamp(self.0 + hours * 3600)
    }

    pub fn plus_secs(self, secs: i64) -> Self {
        Timestamp(self.0 + secs)
    }

    /// Absolute gap in seconds.
    pub fn gap_secs(self, other: Timestamp) -> i64 {
        (self.0 - other.0).abs()
    }

    pub fn iso_date(self) -> String {
        DateTime::<Utc>::from_timestamp(self.0, 0)
            .map(|dt| dt.format("%Y-%m-%d").to_string())
            .unwrap_or_else(|| self.0.to_string())
    }

    pub fn iso_datetime(self) -> String {
        DateTime::<Utc>::from_timestamp(self.0, 0)
            .map(|dt| dt.format("%Y-%m-%dT%H:%M:%SZ").to_string())
            .unwrap_or_else(|| self.0.to_string())
    }
}

/// One raw dialogue turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueItem {
    pub speaker: String,
    pub text: String,
    pub timestamp: Timestamp,
    pub session_id: String,
    pub turn_index: u32,
}

impl DialogueItem {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Dataset(format!(
                "empty dialogue text in session {} turn {}",
                self.session_id, self.turn_index
            )));
        }
        Ok(())
    }
}

/// A self-contained, timestamped fact: the unit of memory storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicEntry {
    pub id: EntryId,
    /// Lossless third-person restatement with references resolved.
    pub statement: String,
    /// Lowercase content words.
    pub keywords: BTreeSet<String>,
    /// Canonical entity strings.
    pub entities: BTreeSet<String>,
    /// Metadata record: persons / entities / location / time plus free
    /// attribute fields.
    pub record: BTreeMap<String, String>,
    pub embedding: Vector,
    pub timestamp: Timestamp,
    /// Provenance: (session_id, turn_index) pairs, one per ingest event.
    pub sources: Vec<(String, u32)>,
}

impl AtomicEntry {
    pub fn validate(&self) -> Result<()> {
        if self.statement.trim().is_empty() {
            return Err(Error::Dataset("entry statement is empty".into()));
        }
        if self.keywords.iter().any(|k| k.is_empty())
            || self.entities.iter().any(|e| e.is_empty())
        {
            return Err(Error::Dataset("empty string in keyword/entity set".into()));
        }
        self.embedding.validate()
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// State transition recorded by coarsening: old fact -> newer fact.
    TemporalUpdate,
    /// Evidence-graph edge: endpoints share at least one entity.
    EntityShared,
    /// Evidence-graph edge: endpoints are temporally close.
    TemporalProximity,
    /// Evidence-graph edge added by bridge discovery.
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: EntryId,
    pub dst: EntryId,
    pub kind: EdgeKind,
    pub created_at: Timestamp,
}

#[derive(Serialize, Deserialize)]
enum Record {
    #[serde(rename = "entry")]
    Entry(AtomicEntry),
    #[serde(rename = "edge")]
    Edge(Edge),
}

#[derive(Serialize, Deserialize)]
struct SchemaHeader {
    schema: String,
}

/// Append-mostly node store plus typed directed edges.
#[derive(Debug, Clone, Default)]
pub struct MemoryGraph {
    entries: BTreeMap<EntryId, AtomicEntry>,
    edges: BTreeMap<(EntryId, EntryId, EdgeKind), Edge>,
    incoming: BTreeMap<EntryId, BTreeSet<(EntryId, EdgeKind)>>,
    revision: u64,
    dimension: Option<usize>,
}

impl MemoryGraph {
    pub fn new() -> Self {
        MemoryGraph::default()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dimension
    }

    /// Next unused id. Callers mint ids through this before `add_entry`.
    pub fn next_id(&self) -> EntryId {
        EntryId(self.entries.keys().next_back().map_or(1, |id| id.0 + 1))
    }

    pub fn entry(&self, id: EntryId) -> Option<&AtomicEntry> {
        self.entries.get(&id)
    }

    pub fn entries(&self) -> impl Iterator<Item = &AtomicEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.entries.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn has_edge(&self, src: EntryId, dst: EntryId, kind: EdgeKind) -> bool {
        self.edges.contains_key(&(src, dst, kind))
    }

    pub fn outgoing(&self, src: EntryId) -> impl Iterator<Item = &Edge> {
        self.edges
            .range((src, EntryId(0), EdgeKind::TemporalUpdate)..)
            .take_while(move |((s, _, _), _)| *s == src)
            .map(|(_, e)| e)
    }

    pub fn incoming(&self, dst: EntryId) -> impl Iterator<Item = &Edge> + '_ {
        self.incoming
            .get(&dst)
            .into_iter()
            .flatten()
            .filter_map(move |(src, kind)| self.edges.get(&(*src, dst, *kind)))
    }

    fn check_dimension(&self, entry: &AtomicEntry) -> Result<()> {
        if let Some(d) = self.dimension {
            if entry.embedding.dimension() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: entry.embedding.dimension(),
                });
            }
        }
        Ok(())
    }

    /// Insert a distinct new fact as an isolated node.
    pub fn add_entry(&mut self, entry: AtomicEntry) -> Result<EntryId> {
        entry.validate()?;
        self.check_dimension(&entry)?;
        if self.entries.contains_key(&entry.id) {
            return Err(Error::DuplicateId(entry.id));
        }
        let id = entry.id;
        self.dimension.get_or_insert(entry.embedding.dimension());
        self.entries.insert(id, entry);
        self.revision += 1;
        Ok(id)
    }

    /// Fold a duplicate into an existing entry: the duplicate is discarded,
    /// the existing entry's timestamp advances to the newer of the two, its
    /// provenance is extended, and keyword/entity sets are unioned. Record
    /// fields are unioned with the earlier scalar kept on conflict.
    ///
    /// When the timestamp advances past the target of an outgoing
    /// temporal-update edge, that edge is re-oriented: the re-asserted
    /// state is now the latest one, and edge direction follows time.
    pub fn merge_entry(&mut self, existing_id: EntryId, new_entry: &AtomicEntry) -> Result<()> {
        new_entry.validate()?;
        let existing = self
            .entries
            .get_mut(&existing_id)
            .ok_or(Error::UnknownEntry(existing_id))?;
        existing.timestamp = existing.timestamp.max(new_entry.timestamp);
        existing.sources.extend(new_entry.sources.iter().cloned());
        existing.keywords.extend(new_entry.keywords.iter().cloned());
        existing.entities.extend(new_entry.entities.iter().cloned());
        for (key, value) in &new_entry.record {
            existing
                .record
                .entry(key.clone())
                .or_insert_with(|| value.clone());
        }
        let merged_ts = existing.timestamp;
        let stale: Vec<Edge> = self
            .outgoing(existing_id)
            .filter(|e| {
                e.kind == EdgeKind::TemporalUpdate && self.entries[&e.dst].timestamp < merged_ts
            })
            .copied()
            .collect();
        for edge in stale {
            self.remove_edge(edge.src, edge.dst, edge.kind);
            self.add_edge(edge.dst, edge.src, edge.kind, edge.created_at)?;
        }
        self.revision += 1;
        Ok(())
    }

    fn remove_edge(&mut self, src: EntryId, dst: EntryId, kind: EdgeKind) {
        if self.edges.remove(&(src, dst, kind)).is_some() {
            if let Some(incoming) = self.incoming.get_mut(&dst) {
                incoming.remove(&(src, kind));
            }
        }
    }

    /// Store a state update: the new entry is added and connected to the
    /// superseded entry with a temporal-update edge. Direction follows
    /// timestamp order (insertion order on ties), so the subgraph of
    /// temporal updates stays acyclic.
    pub fn link_entries(&mut self, old_id: EntryId, new_entry: AtomicEntry) -> Result<EntryId> {
        if !self.entries.contains_key(&old_id) {
            return Err(Error::UnknownEntry(old_id));
        }
        let old_ts = self.entries[&old_id].timestamp;
        let new_ts = new_entry.timestamp;
        let new_id = self.add_entry(new_entry)?;
        // The existing entry was inserted first, so equal timestamps keep
        // the old -> new direction.
        let (src, dst) = if new_ts >= old_ts {
            (old_id, new_id)
        } else {
            (new_id, old_id)
        };
        self.add_edge(src, dst, EdgeKind::TemporalUpdate, new_ts)?;
        Ok(new_id)
    }

    /// Add a typed edge. Returns false if the same (src, dst, kind) edge
    /// already exists.
    pub fn add_edge(
        &mut self,
        src: EntryId,
        dst: EntryId,
        kind: EdgeKind,
        created_at: Timestamp,
    ) -> Result<bool> {
        if src == dst {
            return Err(Error::Dataset(format!("self edge on {src}")));
        }
        let (src_entry, dst_entry) = match (self.entries.get(&src), self.entries.get(&dst)) {
            (Some(s), Some(d)) => (s, d),
            (None, _) => return Err(Error::UnknownEntry(src)),
            (_, None) => return Err(Error::UnknownEntry(dst)),
        };
        if kind == EdgeKind::TemporalUpdate && src_entry.timestamp > dst_entry.timestamp {
            return Err(Error::Dataset(format!(
                "temporal update edge {src} -> {dst} would run against time"
            )));
        }
        if self.edges.contains_key(&(src, dst, kind)) {
            return Ok(false);
        }
        self.edges.insert(
            (src, dst, kind),
            Edge { src, dst, kind, created_at },
        );
        self.incoming.entry(dst).or_default().insert((src, kind));
        self.revision += 1;
        Ok(true)
    }

    /// Follow temporal-update edges to the latest state reachable from
    /// `id`. At branch points the newer (timestamp, id) successor wins.
    pub fn latest_state(&self, id: EntryId) -> EntryId {
        let mut current = id;
        let mut seen = BTreeSet::new();
        while seen.insert(current) {
            let next = self
                .outgoing(current)
                .filter(|e| e.kind == EdgeKind::TemporalUpdate)
                .map(|e| e.dst)
                .max_by_key(|dst| (self.entries[dst].timestamp, *dst));
            match next {
                Some(dst) => current = dst,
                None => break,
            }
        }
        current
    }

    /// Immutable view of the graph at its current revision.
    pub fn snapshot(&self) -> GraphView {
        GraphView(Arc::new(self.clone()))
    }

    /// Structural equality ignoring the revision counter.
    pub fn same_content(&self, other: &MemoryGraph) -> bool {
        self.entries == other.entries && self.edges == other.edges
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(
            &mut writer,
            &SchemaHeader { schema: SCHEMA_VERSION.to_string() },
        )?;
        writer.write_all(b"\n")?;
        for entry in self.entries.values() {
            serde_json::to_writer(&mut writer, &Record::Entry(entry.clone()))?;
            writer.write_all(b"\n")?;
        }
        for edge in self.edges.values() {
            serde_json::to_writer(&mut writer, &Record::Edge(*edge))?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MemoryGraph> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines().enumerate();
        let header_line = match lines.next() {
            Some((_, line)) => line?,
            None => {
                return Err(Error::SchemaVersion {
                    expected: SCHEMA_VERSION.to_string(),
                    found: "<empty file>".to_string(),
                })
            }
        };
        let header: SchemaHeader =
            serde_json::from_str(&header_line).map_err(|e| Error::MalformedRecord {
                line: 1,
                reason: e.to_string(),
            })?;
        if header.schema != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: SCHEMA_VERSION.to_string(),
                found: header.schema,
            });
        }
        let mut graph = MemoryGraph::new();
        let mut pending_edges = Vec::new();
        for (index, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                    line: index + 1,
                    reason: e.to_string(),
                })?;
            match record {
                Record::Entry(entry) => {
                    graph.add_entry(entry)?;
                }
                Record::Edge(edge) => pending_edges.push(edge),
            }
        }
        for edge in pending_edges {
            graph.add_edge(edge.src, edge.dst, edge.kind, edge.created_at)?;
        }
        graph.revision = 0;
        Ok(graph)
    }
}

/// Immutable snapshot of a [`MemoryGraph`]; cheap to share across threads.
#[derive(Debug, Clone)]
pub struct GraphView(Arc<MemoryGraph>);

impl std::ops::Deref for GraphView {
    type Target = MemoryGraph;

    fn deref(&self) -> &MemoryGraph {
        &self.0
    }
}
