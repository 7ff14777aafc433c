//! Precomputed lookup state behind the query fast paths: running counters
//! for "how many ..." questions and an attribute table for "what is X's
//! ..." questions.
//!
//! Both views derive entirely from the graph. Counters count ingest
//! events, which survive coarsening because merges extend an entry's
//! source list instead of dropping it, so the state can be rebuilt from a
//! loaded graph at any time.

use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{EntryId, MemoryGraph, Timestamp};

/// Record fields with fixed meaning; everything else is a free attribute.
const RESERVED_RECORD_FIELDS: &[&str] = &["persons", "entities", "location", "time"];

#[derive(Debug, Clone, Default)]
pub struct FastPathState {
    /// (entity, keyword) -> number of ingest events mentioning both.
    counters: BTreeMap<(String, String), u64>,
    /// (entity, keyword) -> entries supporting the counter.
    support: BTreeMap<(String, String), BTreeSet<EntryId>>,
    /// (entity, attribute) -> contributions ordered by (timestamp, id);
    /// the newest contribution wins.
    attributes: BTreeMap<(String, String), BTreeMap<(Timestamp, EntryId), String>>,
}

impl FastPathState {
    /// Derive the full state from a graph.
    pub fn build(graph: &MemoryGraph) -> Self {
        let mut state = FastPathState::default();
        for entry in graph.entries() {
            let events = entry.sources.len().max(1) as u64;
            for entity in &entry.entities {
                let entity_key = entity.to_lowercase();
                for keyword in &entry.keywords {
                    let key = (entity_key.clone(), keyword.clone());
                    *state.counters.entry(key.clone()).or_insert(0) += events;
                    state.support.entry(key).or_default().insert(entry.id);
                }
            }
            let holders: Vec<String> = entry
                .record
                .get("persons")
                .map(|p| {
                    p.split(end_of_name)
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_lowercase)
                        .collect()
                })
                .unwrap_or_default();
            for (field, value) in &entry.record {
                if RESERVED_RECORD_FIELDS.contains(&field.as_str()) {
                    continue;
                }
                for holder in &holders {
                    state
                        .attributes
                        .entry((holder.clone(), field.to_lowercase()))
                        .or_default()
                        .insert((entry.timestamp, entry.id), value.clone());
                }
            }
        }
        state
    }

    /// Counter lookup with light plural normalization of the noun.
    pub fn count(&self, entity: &str, noun: &str) -> Option<(u64, &BTreeSet<EntryId>)> {
        let entity = entity.to_lowercase();
        let noun = noun.to_lowercase();
        for form in noun_forms(&noun) {
            let key = (entity.clone(), form);
            if let Some(count) = self.counters.get(&key) {
                return Some((*count, &self.support[&key]));
            }
        }
        None
    }

    /// Latest attribute value for an entity, with its supporting entry.
    pub fn attribute(&self, entity: &str, attribute: &str) -> Option<(&str, EntryId)> {
        let key = (entity.to_lowercase(), attribute.trim().to_lowercase());
        self.attributes
            .get(&key)
            .and_then(|contributions| contributions.last_key_value())
            .map(|((_, id), value)| (value.as_str(), *id))
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty() && self.attributes.is_empty()
    }
}

fn end_of_name(c: char) -> bool {
    c == ',' || c == ';'
}

fn noun_forms(noun: &str) -> Vec<String> {
    let mut forms = vec![noun.to_string()];
    if let Some(stripped) = noun.strip_suffix("es") {
        forms.push(stripped.to_string());
    }
    if let Some(stripped) = noun.strip_suffix('s') {
        forms.push(stripped.to_string());
    }
    forms.push(format!("{noun}s"));
    forms
}
