//! Phase II structural reasoning, short of generation: fast-path lookup,
//! hybrid retrieval of terminal nodes, base-graph construction, bridge
//! discovery, bounded-depth path mining, and node-budget enforcement.
//!
//! Everything here is a pure function over a snapshot, so concurrent
//! queries can share one view.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::Result;
use crate::graph::{AtomicEntry, Edge, EdgeKind, EntryId, Timestamp};
use crate::store::MemorySnapshot;
use crate::text::tokenize;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Dense recall depth.
    pub k_sem: usize,
    /// Lexical recall depth.
    pub k_lex: usize,
    /// Temporal-proximity window for base-graph edges, seconds.
    pub delta_time_secs: i64,
    /// Bridge search is attempted only for gaps inside this band, seconds.
    pub bridge_gap_min_secs: i64,
    pub bridge_gap_max_secs: i64,
    /// Dense candidates considered per bridge search.
    pub bridge_candidates: usize,
    /// Maximum nodes per mined path.
    pub max_path_nodes: usize,
    /// Node budget for the evidence graph.
    pub budget_min: usize,
    pub budget_max: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_sem: 20,
            k_lex: 5,
            delta_time_secs: 6 * 3600,
            bridge_gap_min_secs: 3600,
            bridge_gap_max_secs: 168 * 3600,
            bridge_candidates: 5,
            max_path_nodes: 3,
            budget_min: 8,
            budget_max: 25,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.budget_min > self.budget_max {
            return Err(crate::error::Error::Config(
                "budget_min must not exceed budget_max".into(),
            ));
        }
        if self.bridge_gap_min_secs >= self.bridge_gap_max_secs {
            return Err(crate::error::Error::Config(
                "bridge_gap_min must be below bridge_gap_max".into(),
            ));
        }
        if self.max_path_nodes < 2 {
            return Err(crate::error::Error::Config(
                "max_path_nodes must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Evidence graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Terminal,
    Bridge,
    FastPath,
}

#[derive(Debug, Clone)]
pub struct EvidenceNode {
    pub entry: AtomicEntry,
    pub role: NodeRole,
}

/// A simple directed path through the evidence graph, temporally
/// non-decreasing by construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Path {
    pub nodes: Vec<EntryId>,
}

impl Path {
    pub fn hop_count(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }
}

/// Query-specific subgraph: terminals, bridges, edges, and mined paths.
#[derive(Debug, Clone, Default)]
pub struct EvidenceGraph {
    nodes: BTreeMap<EntryId, EvidenceNode>,
    edges: BTreeMap<(EntryId, EntryId, EdgeKind), Edge>,
    pub paths: Vec<Path>,
    /// Terminal ids in hybrid-retrieval rank order.
    pub terminal_order: Vec<EntryId>,
    /// Precomputed answer when a fast path produced this graph.
    pub fast_answer: Option<String>,
}

impl EvidenceGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: EntryId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn node(&self, id: EntryId) -> Option<&EvidenceNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&EntryId, &EvidenceNode)> {
        self.nodes.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.nodes.keys().copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, src: EntryId, dst: EntryId, kind: EdgeKind) -> bool {
        self.edges.contains_key(&(src, dst, kind))
    }

    pub fn add_node(&mut self, entry: AtomicEntry, role: NodeRole) {
        self.nodes.entry(entry.id).or_insert(EvidenceNode { entry, role });
    }

    pub fn add_edge(&mut self, src: EntryId, dst: EntryId, kind: EdgeKind, created_at: Timestamp) {
        debug_assert!(self.nodes.contains_key(&src) && self.nodes.contains_key(&dst));
        if src != dst {
            self.edges
                .entry((src, dst, kind))
                .or_insert(Edge { src, dst, kind, created_at });
        }
    }

    pub fn clear_edges(&mut self) {
        self.edges.clear();
    }

    pub fn timestamp(&self, id: EntryId) -> Timestamp {
        self.nodes[&id].entry.timestamp
    }

    /// Weakly-connected component label per node.
    pub fn components(&self) -> BTreeMap<EntryId, usize> {
        let mut undirected: BTreeMap<EntryId, BTreeSet<EntryId>> = BTreeMap::new();
        for id in self.nodes.keys() {
            undirected.entry(*id).or_default();
        }
        for (src, dst, _) in self.edges.keys() {
            undirected.entry(*src).or_default().insert(*dst);
            undirected.entry(*dst).or_default().insert(*src);
        }
        let mut labels = BTreeMap::new();
        let mut next = 0;
        for start in self.nodes.keys() {
            if labels.contains_key(start) {
                continue;
            }
            let mut stack = vec![*start];
            while let Some(id) = stack.pop() {
                if labels.insert(id, next).is_none() {
                    stack.extend(undirected[&id].iter().copied());
                }
            }
            next += 1;
        }
        labels
    }

    fn retain_nodes(&mut self, keep: &BTreeSet<EntryId>) {
        self.nodes.retain(|id, _| keep.contains(id));
        self.edges
            .retain(|(src, dst, _), _| keep.contains(src) && keep.contains(dst));
        self.terminal_order.retain(|id| keep.contains(id));
        self.paths.retain(|p| p.nodes.iter().all(|id| keep.contains(id)));
    }
}

// ---------------------------------------------------------------------------
// Query entity heuristics
// ---------------------------------------------------------------------------

/// Entities mentioned in a query: capitalized token runs away from
/// sentence starts, plus any token matching an entity already known to the
/// graph (canonical capitalization returned).
pub fn query_entities(query: &str, snapshot: &MemorySnapshot) -> BTreeSet<String> {
    let mut known: BTreeMap<String, String> = BTreeMap::new();
    for entry in snapshot.graph.entries() {
        for entity in &entry.entities {
            known.entry(entity.to_lowercase()).or_insert_with(|| entity.clone());
        }
    }

    let mut entities = BTreeSet::new();
    let mut sentence_start = true;
    let mut run: Vec<String> = Vec::new();
    let mut run_starts = false;
    fn flush(run: &mut Vec<String>, starts: bool, out: &mut BTreeSet<String>) {
        if run.is_empty() {
            return;
        }
        if run.len() > 1 || !starts {
            out.insert(run.join(" "));
        }
        run.clear();
    }
    for piece in query.split_inclusive(|c: char| !c.is_alphanumeric()) {
        let token: String = piece.chars().filter(|c| c.is_alphanumeric()).collect();
        if !token.is_empty() {
            let capitalized = token.chars().next().is_some_and(|c| c.is_uppercase());
            if capitalized {
                if run.is_empty() {
                    run_starts = sentence_start;
                }
                run.push(token.clone());
            } else {
                flush(&mut run, run_starts, &mut entities);
            }
            if let Some(canonical) = known.get(&token.to_lowercase()) {
                entities.insert(canonical.clone());
            }
            sentence_start = false;
        }
        if piece.ends_with(['.', '!', '?']) {
            sentence_start = true;
        }
    }
    flush(&mut run, run_starts, &mut entities);
    entities
}

fn entities_lower(entry: &AtomicEntry) -> BTreeSet<String> {
    entry.entities.iter().map(|e| e.to_lowercase()).collect()
}

// ---------------------------------------------------------------------------
// Fast paths
// ---------------------------------------------------------------------------

struct FastPathRegexes {
    count: Regex,
    attribute: Regex,
}

fn fast_path_regexes() -> &'static FastPathRegexes {
    static REGEXES: OnceLock<FastPathRegexes> = OnceLock::new();
    REGEXES.get_or_init(|| FastPathRegexes {
        count: Regex::new(r"(?i)^how many\s+([a-z]+)\b").unwrap(),
        attribute: Regex::new(r"(?i)^what(?:'s|\s+is)\s+(.+?)'s\s+([a-z][a-z ]*?)\s*\?*$")
            .unwrap(),
    })
}

/// Last capitalized token run in the question, skipping the leading word.
fn trailing_entity(query: &str) -> Option<String> {
    let tokens: Vec<String> = crate::text::tokenize_cased(query);
    let mut best: Option<String> = None;
    let mut run: Vec<&str> = Vec::new();
    for (i, token) in tokens.iter().enumerate() {
        let capitalized = token.chars().next().is_some_and(|c| c.is_uppercase());
        if capitalized && i > 0 {
            run.push(token.as_str());
        } else {
            if !run.is_empty() {
                best = Some(run.join(" "));
            }
            run.clear();
        }
    }
    if !run.is_empty() {
        best = Some(run.join(" "));
    }
    best
}

/// Try to answer the query from precomputed state: counting questions from
/// the ingest counters, attribute questions from the attribute table.
/// Returns a minimal evidence graph carrying the answer, or `None` to
/// defer to full retrieval.
pub fn fast_path(query: &str, snapshot: &MemorySnapshot) -> Option<EvidenceGraph> {
    let re = fast_path_regexes();
    if let Some(captures) = re.count.captures(query) {
        let noun = captures[1].to_lowercase();
        let entity = trailing_entity(query)?;
        let (count, support) = snapshot.fast_path.count(&entity, &noun)?;
        let mut graph = EvidenceGraph::default();
        for id in support {
            let entry = snapshot.graph.entry(*id)?.clone();
            graph.add_node(entry, NodeRole::FastPath);
        }
        graph.fast_answer = Some(count.to_string());
        return Some(graph);
    }
    if let Some(captures) = re.attribute.captures(query) {
        let entity = captures[1].trim().to_string();
        let attribute = captures[2].trim().to_lowercase();
        let (value, id) = snapshot.fast_path.attribute(&entity, &attribute)?;
        let value = value.to_string();
        let mut graph = EvidenceGraph::default();
        graph.add_node(snapshot.graph.entry(id)?.clone(), NodeRole::FastPath);
        graph.fast_answer = Some(value);
        return Some(graph);
    }
    None
}

// ---------------------------------------------------------------------------
// Hybrid retrieval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalSource {
    Dense,
    Lexical,
}

#[derive(Debug, Clone)]
pub struct Terminal {
    pub id: EntryId,
    pub score: f64,
    pub source: RetrievalSource,
    pub entity_aligned: bool,
}

/// Union of dense top-k and lexical top-k, dense hits first. Within equal
/// scores, candidates lacking any query-entity alignment are demoted
/// behind aligned ones.
pub fn hybrid_retrieve(
    query: &str,
    snapshot: &MemorySnapshot,
    embedder: &dyn Embedder,
    cfg: &RetrievalConfig,
) -> Result<Vec<Terminal>> {
    let query_ents: BTreeSet<String> = query_entities(query, snapshot)
        .into_iter()
        .map(|e| e.to_lowercase())
        .collect();
    let aligned = |id: EntryId| -> bool {
        let entry = snapshot.graph.entry(id).expect("index aligned");
        !query_ents.is_disjoint(&entities_lower(entry))
    };

    let query_vector = embedder.embed(query)?;
    let dense = snapshot
        .index
        .dense
        .top_k(&query_vector, cfg.k_sem, &BTreeSet::new())?;
    let lexical = snapshot.index.lexical.top_k(&tokenize(query), cfg.k_lex);

    let rank = |hits: Vec<(EntryId, f64)>, source: RetrievalSource| -> Vec<Terminal> {
        let mut terminals: Vec<Terminal> = hits
            .into_iter()
            .map(|(id, score)| Terminal {
                id,
                score,
                source,
                entity_aligned: aligned(id),
            })
            .collect();
        terminals.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.entity_aligned.cmp(&a.entity_aligned))
                .then(a.id.cmp(&b.id))
        });
        terminals
    };

    let mut seen = BTreeSet::new();
    let mut result = Vec::new();
    for terminal in rank(dense, RetrievalSource::Dense)
        .into_iter()
        .chain(rank(lexical, RetrievalSource::Lexical))
    {
        if seen.insert(terminal.id) {
            result.push(terminal);
        }
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// Base graph
// ---------------------------------------------------------------------------

/// Direction helper: earlier timestamp first, ascending id on ties.
fn orient(a: EntryId, ta: Timestamp, b: EntryId, tb: Timestamp) -> (EntryId, EntryId) {
    if (ta, a) <= (tb, b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Connect terminals that share entities or sit close in time, and carry
/// over any temporal-update edges the memory graph already holds between
/// them.
pub fn build_base_graph(
    terminals: &[Terminal],
    snapshot: &MemorySnapshot,
    cfg: &RetrievalConfig,
) -> EvidenceGraph {
    let mut graph = EvidenceGraph::default();
    for terminal in terminals {
        if let Some(entry) = snapshot.graph.entry(terminal.id) {
            graph.add_node(entry.clone(), NodeRole::Terminal);
            graph.terminal_order.push(terminal.id);
        }
    }
    let ids: Vec<EntryId> = graph.ids().collect();
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let (ea, eb) = (&graph.nodes[&a].entry, &graph.nodes[&b].entry);
            let (ta, tb) = (ea.timestamp, eb.timestamp);
            let shared_entity = !entities_lower(ea).is_disjoint(&entities_lower(eb));
            let (src, dst) = orient(a, ta, b, tb);
            let created = ta.max(tb);
            if shared_entity {
                graph.add_edge(src, dst, EdgeKind::EntityShared, created);
            }
            if ta.gap_secs(tb) < cfg.delta_time_secs {
                graph.add_edge(src, dst, EdgeKind::TemporalProximity, created);
            }
            for (x, y) in [(a, b), (b, a)] {
                if snapshot.graph.has_edge(x, y, EdgeKind::TemporalUpdate) {
                    graph.add_edge(x, y, EdgeKind::TemporalUpdate, created);
                }
            }
        }
    }
    graph
}

// ---------------------------------------------------------------------------
// Bridge discovery
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BridgeTrace {
    pub pair: (EntryId, EntryId),
    pub bridge: EntryId,
    pub score: f64,
}

/// Bridge query text: entities and keywords of both endpoints, set-unioned
/// and joined in sorted order.
pub fn bridge_query_text(a: &AtomicEntry, b: &AtomicEntry) -> String {
    let mut terms: BTreeSet<String> = BTreeSet::new();
    terms.extend(a.entities.iter().cloned());
    terms.extend(b.entities.iter().cloned());
    terms.extend(a.keywords.iter().cloned());
    terms.extend(b.keywords.iter().cloned());
    terms.into_iter().collect::<Vec<_>>().join(" ")
}

/// Approximate Steiner completion: for each disconnected terminal pair
/// within the moderate time band, pull the best non-terminal memory entry
/// whose timestamp lies between the endpoints and wire it in as
/// `earlier -> bridge -> later`. Components are recomputed after every
/// accepted bridge so already-connected pairs are skipped.
pub fn discover_bridges(
    graph: &mut EvidenceGraph,
    snapshot: &MemorySnapshot,
    embedder: &dyn Embedder,
    cfg: &RetrievalConfig,
) -> Result<Vec<BridgeTrace>> {
    let terminal_ids: Vec<EntryId> = graph
        .nodes()
        .filter(|(_, node)| node.role == NodeRole::Terminal)
        .map(|(id, _)| *id)
        .collect();
    let exclude: BTreeSet<EntryId> = terminal_ids.iter().copied().collect();
    let mut traces = Vec::new();

    for (i, &a) in terminal_ids.iter().enumerate() {
        for &b in &terminal_ids[i + 1..] {
            let components = graph.components();
            if components[&a] == components[&b] {
                continue;
            }
            let (ta, tb) = (graph.timestamp(a), graph.timestamp(b));
            let gap = ta.gap_secs(tb);
            if gap < cfg.bridge_gap_min_secs || gap > cfg.bridge_gap_max_secs {
                continue;
            }
            let text = bridge_query_text(&graph.nodes[&a].entry, &graph.nodes[&b].entry);
            let query_vector = embedder.embed(&text)?;
            let candidates =
                snapshot
                    .index
                    .dense
                    .top_k(&query_vector, cfg.bridge_candidates, &exclude)?;
            let (lo, hi) = (ta.min(tb), ta.max(tb));
            let best = candidates.into_iter().find(|(id, _)| {
                let t = snapshot.graph.entry(*id).expect("index aligned").timestamp;
                lo <= t && t <= hi
            });
            let Some((bridge_id, score)) = best else {
                continue;
            };
            let bridge_entry = snapshot.graph.entry(bridge_id).expect("index aligned").clone();
            let bridge_ts = bridge_entry.timestamp;
            graph.add_node(bridge_entry, NodeRole::Bridge);
            let (first, second) = orient(a, ta, b, tb);
            graph.add_edge(first, bridge_id, EdgeKind::Bridge, bridge_ts);
            graph.add_edge(bridge_id, second, EdgeKind::Bridge, bridge_ts);
            traces.push(BridgeTrace { pair: (a, b), bridge: bridge_id, score });
        }
    }
    Ok(traces)
}

// ---------------------------------------------------------------------------
// Path mining
// ---------------------------------------------------------------------------

/// Enumerate all simple directed paths with 2..=max_path_nodes nodes and
/// non-decreasing timestamps, by DFS from every node in ascending id
/// order. The output ordering is (start id, then lexicographic id
/// sequence).
pub fn mine_paths(graph: &EvidenceGraph, cfg: &RetrievalConfig) -> Vec<Path> {
    let mut adjacency: BTreeMap<EntryId, BTreeSet<EntryId>> = BTreeMap::new();
    for edge in graph.edges() {
        adjacency.entry(edge.src).or_default().insert(edge.dst);
    }
    let mut paths = Vec::new();
    let mut stack = Vec::new();
    for start in graph.ids() {
        stack.push(start);
        dfs(graph, &adjacency, cfg.max_path_nodes, &mut stack, &mut paths);
        stack.pop();
    }
    paths
}

fn dfs(
    graph: &EvidenceGraph,
    adjacency: &BTreeMap<EntryId, BTreeSet<EntryId>>,
    max_nodes: usize,
    stack: &mut Vec<EntryId>,
    paths: &mut Vec<Path>,
) {
    if stack.len() >= max_nodes {
        return;
    }
    let current = *stack.last().expect("non-empty stack");
    let current_ts = graph.timestamp(current);
    let Some(next_ids) = adjacency.get(&current) else {
        return;
    };
    for &next in next_ids {
        if stack.contains(&next) || graph.timestamp(next) < current_ts {
            continue;
        }
        stack.push(next);
        paths.push(Path { nodes: stack.clone() });
        dfs(graph, adjacency, max_nodes, stack, paths);
        stack.pop();
    }
}

// ---------------------------------------------------------------------------
// Node budget
// ---------------------------------------------------------------------------

/// Priority key: more hops first, tighter time span next, lexicographic id
/// sequence last.
fn path_priority(graph: &EvidenceGraph, path: &Path) -> (usize, i64, Vec<EntryId>) {
    let span = graph
        .timestamp(*path.nodes.last().expect("non-empty path"))
        .gap_secs(graph.timestamp(path.nodes[0]));
    (path.hop_count(), span, path.nodes.clone())
}

/// Prune the graph to the node budget. Paths are kept whole, in priority
/// order, until the next one would overflow `budget_max`; terminals then
/// top the node set back up to `budget_min` when available. Attaches the
/// surviving paths to the graph.
pub fn enforce_budget(graph: &mut EvidenceGraph, paths: Vec<Path>, cfg: &RetrievalConfig) {
    if graph.len() <= cfg.budget_max {
        graph.paths = paths;
        return;
    }
    let mut ranked = paths.clone();
    ranked.sort_by(|a, b| {
        let (ha, sa, na) = path_priority(graph, a);
        let (hb, sb, nb) = path_priority(graph, b);
        hb.cmp(&ha).then(sa.cmp(&sb)).then(na.cmp(&nb))
    });
    let mut keep: BTreeSet<EntryId> = BTreeSet::new();
    for path in &ranked {
        let union: BTreeSet<EntryId> =
            keep.union(&path.nodes.iter().copied().collect()).copied().collect();
        if union.len() > cfg.budget_max {
            break;
        }
        keep = union;
    }
    if keep.len() < cfg.budget_min {
        let order: Vec<EntryId> = graph
            .terminal_order
            .iter()
            .copied()
            .chain(graph.ids())
            .collect();
        for id in order {
            if keep.len() >= cfg.budget_min {
                break;
            }
            keep.insert(id);
        }
    }
    graph.retain_nodes(&keep);
    graph.paths = paths
        .into_iter()
        .filter(|p| p.nodes.iter().all(|id| keep.contains(id)))
        .collect();
}
