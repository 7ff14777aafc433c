//! Multi-view store: exhaustive dense similarity search plus a BM25
//! inverted index, kept aligned with the memory graph by the store wiring.
//!
//! Dense search is a deliberate brute-force scan. Memories at the scale
//! this engine targets are a few thousand entries, and exactness keeps
//! every downstream check oracle-friendly; an ANN structure would have to
//! pass the same equivalence suite to replace it.

use std::collections::{BTreeMap, BTreeSet};

use crate::embed::{cosine, Vector};
use crate::error::Result;
use crate::graph::{AtomicEntry, EntryId};
use crate::text::tokenize;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

/// id -> embedding map scanned exhaustively per query.
#[derive(Debug, Clone, Default)]
pub struct DenseIndex {
    vectors: BTreeMap<EntryId, Vector>,
}

impl DenseIndex {
    pub fn upsert(&mut self, id: EntryId, vector: Vector) {
        self.vectors.insert(id, vector);
    }

    pub fn remove(&mut self, id: EntryId) -> bool {
        self.vectors.remove(&id).is_some()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.vectors.keys().copied()
    }

    /// Top-k by cosine, non-increasing, ties broken by ascending id.
    /// Entries in `exclude` never appear in the result.
    pub fn top_k(
        &self,
        query: &Vector,
        k: usize,
        exclude: &BTreeSet<EntryId>,
    ) -> Result<Vec<(EntryId, f64)>> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut scored = Vec::with_capacity(self.vectors.len());
        for (id, vector) in &self.vectors {
            if exclude.contains(id) {
                continue;
            }
            scored.push((*id, cosine(query, vector)?));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        Ok(scored)
    }
}

/// Inverted index over statement + keywords with BM25 scoring.
#[derive(Debug, Clone, Default)]
pub struct LexicalIndex {
    postings: BTreeMap<String, BTreeMap<EntryId, u32>>,
    doc_terms: BTreeMap<EntryId, BTreeMap<String, u32>>,
    doc_len: BTreeMap<EntryId, u32>,
    total_len: u64,
}

/// The indexed text of an entry: statement tokens plus keywords.
pub fn entry_terms(entry: &AtomicEntry) -> BTreeMap<String, u32> {
    let mut terms: BTreeMap<String, u32> = BTreeMap::new();
    for token in tokenize(&entry.statement) {
        *terms.entry(token).or_insert(0) += 1;
    }
    for keyword in &entry.keywords {
        for token in tokenize(keyword) {
            *terms.entry(token).or_insert(0) += 1;
        }
    }
    terms
}

impl LexicalIndex {
    pub fn upsert(&mut self, entry: &AtomicEntry) {
        self.remove(entry.id);
        let terms = entry_terms(entry);
        let len: u32 = terms.values().sum();
        for (term, tf) in &terms {
            self.postings.entry(term.clone()).or_default().insert(entry.id, *tf);
        }
        self.total_len += u64::from(len);
        self.doc_len.insert(entry.id, len);
        self.doc_terms.insert(entry.id, terms);
    }

    pub fn remove(&mut self, id: EntryId) -> bool {
        let Some(terms) = self.doc_terms.remove(&id) else {
            return false;
        };
        for term in terms.keys() {
            if let Some(posting) = self.postings.get_mut(term) {
                posting.remove(&id);
                if posting.is_empty() {
                    self.postings.remove(term);
                }
            }
        }
        let len = self.doc_len.remove(&id).unwrap_or(0);
        self.total_len -= u64::from(len);
        true
    }

    pub fn len(&self) -> usize {
        self.doc_terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_terms.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.doc_terms.keys().copied()
    }

    fn avg_doc_len(&self) -> f64 {
        if self.doc_terms.is_empty() {
            0.0
        } else {
            self.total_len as f64 / self.doc_terms.len() as f64
        }
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.doc_terms.len() as f64;
        let df = self.postings.get(term).map_or(0, |p| p.len()) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of one document against a set of query terms.
    pub fn score_doc(&self, id: EntryId, terms: &BTreeSet<String>) -> f64 {
        let Some(doc) = self.doc_terms.get(&id) else {
            return 0.0;
        };
        let dl = f64::from(self.doc_len[&id]);
        let avg = self.avg_doc_len();
        let mut score = 0.0;
        for term in terms {
            let tf = f64::from(doc.get(term).copied().unwrap_or(0));
            if tf == 0.0 {
                continue;
            }
            let norm = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avg);
            score += self.idf(term) * tf * (BM25_K1 + 1.0) / norm;
        }
        score
    }

    /// Top-k matching documents, ranked by BM25, ties by ascending id.
    /// Only documents containing at least one query term are returned.
    pub fn top_k(&self, terms: &[String], k: usize) -> Vec<(EntryId, f64)> {
        if k == 0 || terms.is_empty() {
            return Vec::new();
        }
        let unique: BTreeSet<String> = terms.iter().cloned().collect();
        let mut candidates: BTreeSet<EntryId> = BTreeSet::new();
        for term in &unique {
            if let Some(posting) = self.postings.get(term) {
                candidates.extend(posting.keys().copied());
            }
        }
        let mut scored: Vec<(EntryId, f64)> = candidates
            .into_iter()
            .map(|id| (id, self.score_doc(id, &unique)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// Dense and lexical views updated together.
#[derive(Debug, Clone, Default)]
pub struct MultiViewIndex {
    pub dense: DenseIndex,
    pub lexical: LexicalIndex,
}

impl MultiViewIndex {
    pub fn new() -> Self {
        MultiViewIndex::default()
    }

    pub fn upsert(&mut self, entry: &AtomicEntry) {
        self.dense.upsert(entry.id, entry.embedding.clone());
        self.lexical.upsert(entry);
    }

    pub fn remove(&mut self, id: EntryId) {
        let dense = self.dense.remove(id);
        let lexical = self.lexical.remove(id);
        if !dense && !lexical {
            log::debug!("remove of unknown entry {id} is a no-op");
        }
    }

    pub fn ids(&self) -> BTreeSet<EntryId> {
        self.dense.ids().collect()
    }

    pub fn rebuild<'a>(entries: impl Iterator<Item = &'a AtomicEntry>) -> Self {
        let mut index = MultiViewIndex::new();
        for entry in entries {
            index.upsert(entry);
        }
        index
    }
}
