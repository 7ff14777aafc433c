//! Pairs the memory graph with its indexes under a single writer.
//!
//! Every mutation flows through here so the upsert hooks keep the dense
//! and lexical views aligned with the graph. Readers take a
//! [`MemorySnapshot`], which is immutable and freely shareable across
//! threads; later writes never disturb an existing snapshot.

use std::path::Path;
use std::sync::Arc;

use crate::error::Result;
use crate::fastpath::FastPathState;
use crate::graph::{AtomicEntry, EntryId, GraphView, MemoryGraph};
use crate::index::MultiViewIndex;

#[derive(Debug, Default)]
pub struct MemoryStore {
    graph: MemoryGraph,
    index: MultiViewIndex,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }

    /// Wrap an existing graph, rebuilding the indexes from its entries.
    pub fn from_graph(graph: MemoryGraph) -> Self {
        let index = MultiViewIndex::rebuild(graph.entries());
        MemoryStore { graph, index }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(MemoryStore::from_graph(MemoryGraph::load(path)?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.graph.save(path)
    }

    pub fn graph(&self) -> &MemoryGraph {
        &self.graph
    }

    pub fn index(&self) -> &MultiViewIndex {
        &self.index
    }

    pub fn add_entry(&mut self, entry: AtomicEntry) -> Result<EntryId> {
        let id = self.graph.add_entry(entry)?;
        self.index.upsert(self.graph.entry(id).expect("just added"));
        Ok(id)
    }

    pub fn merge_entry(&mut self, existing_id: EntryId, candidate: &AtomicEntry) -> Result<()> {
        self.graph.merge_entry(existing_id, candidate)?;
        // Keywords may have grown; refresh the lexical view.
        self.index
            .upsert(self.graph.entry(existing_id).expect("merge target exists"));
        Ok(())
    }

    pub fn link_entries(&mut self, old_id: EntryId, candidate: AtomicEntry) -> Result<EntryId> {
        let new_id = self.graph.link_entries(old_id, candidate)?;
        self.index.upsert(self.graph.entry(new_id).expect("just linked"));
        Ok(new_id)
    }

    /// Immutable state for Phase II readers.
    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            graph: self.graph.snapshot(),
            index: Arc::new(self.index.clone()),
            fast_path: Arc::new(FastPathState::build(&self.graph)),
        }
    }
}

/// Revision-consistent read view: graph, indexes, and fast-path tables.
#[derive(Clone)]
pub struct MemorySnapshot {
    pub graph: GraphView,
    pub index: Arc<MultiViewIndex>,
    pub fast_path: Arc<FastPathState>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, OfflineEmbedder};
    use crate::graph::Timestamp;
    use std::collections::BTreeSet;

    fn entry(id: u64, statement: &str, ts: i64) -> AtomicEntry {
        AtomicEntry {
            id: EntryId(id),
            statement: statement.to_string(),
            keywords: crate::text::content_words(statement).into_iter().collect(),
            entities: BTreeSet::new(),
            record: Default::default(),
            embedding: OfflineEmbedder::default().embed(statement).unwrap(),
            timestamp: Timestamp(ts),
            sources: vec![("s1".to_string(), 0)],
        }
    }

    #[test]
    fn mutations_keep_graph_and_index_aligned() {
        let mut store = MemoryStore::new();
        let a = store.add_entry(entry(1, "meeting at 2pm", 100)).unwrap();
        store.link_entries(a, entry(2, "meeting at 3pm", 200)).unwrap();
        store.merge_entry(a, &entry(9, "meeting at 2pm", 100)).unwrap();
        let graph_ids: BTreeSet<EntryId> = store.graph().ids().collect();
        assert_eq!(graph_ids, store.index().ids());
        assert_eq!(store.index().lexical.len(), 2);
    }

    #[test]
    fn snapshot_survives_later_writes() {
        let mut store = MemoryStore::new();
        store.add_entry(entry(1, "meeting at 2pm", 100)).unwrap();
        let snap = store.snapshot();
        store.add_entry(entry(2, "picnic on Sunday", 200)).unwrap();
        assert_eq!(snap.graph.len(), 1);
        assert_eq!(snap.index.ids().len(), 1);
        assert_eq!(store.graph().len(), 2);
    }

    #[test]
    fn reload_rebuilds_indexes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mem.jsonl");
        let mut store = MemoryStore::new();
        store.add_entry(entry(1, "meeting at 2pm", 100)).unwrap();
        store.add_entry(entry(2, "picnic on Sunday", 200)).unwrap();
        store.save(&path).unwrap();
        let reloaded = MemoryStore::load(&path).unwrap();
        assert_eq!(reloaded.index().ids(), store.index().ids());
        let hits = reloaded.index().lexical.top_k(&["picnic".to_string()], 3);
        assert_eq!(hits[0].0, EntryId(2));
    }
}
