//! End-to-end query answering: fast paths, hybrid retrieval, bridge
//! discovery, path mining, budget enforcement, serialization, and the
//! single synthesis call, with stage toggles for ablations and a stable
//! line-oriented trace.

use serde::Serialize;

use crate::embed::Embedder;
use crate::error::Result;
use crate::retrieve::{
    build_base_graph, discover_bridges, enforce_budget, fast_path, hybrid_retrieve, mine_paths,
    EvidenceGraph, RetrievalConfig,
};
use crate::store::MemorySnapshot;
use crate::synth::{
    classify_query, serialize_with, synthesize, Generator, QueryKind, SerializedContext,
    TokenCounter, WhitespaceTokenizer,
};

/// Stage toggles for the online phase.
#[derive(Debug, Clone, Copy)]
pub struct PhaseTwoToggles {
    pub bridges: bool,
    pub topology: bool,
}

impl Default for PhaseTwoToggles {
    fn default() -> Self {
        PhaseTwoToggles { bridges: true, topology: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryOutcome {
    pub answer: String,
    pub kind: QueryKind,
    pub fast_path_hit: bool,
    #[serde(skip)]
    pub evidence: EvidenceGraph,
    #[serde(skip)]
    pub context: Option<SerializedContext>,
    /// Tokens in the serialized context delivered to the generator
    /// (0 on fast-path hits: no context is built).
    pub token_cost: usize,
    pub generator_calls: u32,
    pub parse_warning: bool,
    /// Wall clock up to context delivery, excluding synthesis.
    pub retrieval_secs: f64,
    pub synthesis_secs: f64,
    pub trace: Vec<String>,
}

/// Answer one query against a snapshot. Exactly one generator invocation
/// for full-pipeline questions, zero for fast-path hits.
pub fn answer_query(
    snapshot: &MemorySnapshot,
    query: &str,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
    cfg: &RetrievalConfig,
    toggles: PhaseTwoToggles,
) -> Result<QueryOutcome> {
    answer_query_with(snapshot, query, embedder, generator, cfg, toggles, &WhitespaceTokenizer)
}

pub fn answer_query_with(
    snapshot: &MemorySnapshot,
    query: &str,
    embedder: &dyn Embedder,
    generator: &dyn Generator,
    cfg: &RetrievalConfig,
    toggles: PhaseTwoToggles,
    tokenizer: &dyn TokenCounter,
) -> Result<QueryOutcome> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let kind = classify_query(query);
    let mut trace = vec![format!("kind: {kind:?}").to_lowercase()];

    if let Some(graph) = fast_path(query, snapshot) {
        let answer = graph.fast_answer.clone().unwrap_or_default();
        trace.push("fast_path: hit".to_string());
        for id in graph.ids() {
            trace.push(format!("fast_path_node {id}"));
        }
        return Ok(QueryOutcome {
            answer,
            kind,
            fast_path_hit: true,
            evidence: graph,
            context: None,
            token_cost: 0,
            generator_calls: 0,
            parse_warning: false,
            retrieval_secs: started.elapsed().as_secs_f64(),
            synthesis_secs: 0.0,
            trace,
        });
    }
    trace.push("fast_path: miss".to_string());

    let terminals = hybrid_retrieve(query, snapshot, embedder, cfg)?;
    for terminal in &terminals {
        trace.push(format!(
            "terminal {} cos={:.4} source={:?} aligned={}",
            terminal.id,
            terminal.score,
            terminal.source,
            if terminal.entity_aligned { "yes" } else { "no" }
        ));
    }

    let mut graph = build_base_graph(&terminals, snapshot, cfg);
    if toggles.bridges {
        let bridges = discover_bridges(&mut graph, snapshot, embedder, cfg)?;
        for bridge in &bridges {
            trace.push(format!(
                "bridge {} connects ({}, {}) cos={:.4}",
                bridge.bridge, bridge.pair.0, bridge.pair.1, bridge.score
            ));
        }
    } else {
        trace.push("bridges: disabled".to_string());
    }

    let paths = mine_paths(&graph, cfg);
    let before_budget = graph.len();
    enforce_budget(&mut graph, paths, cfg);
    for path in &graph.paths {
        let line = path
            .nodes
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(" → ");
        trace.push(format!("path {line}"));
    }
    if before_budget > cfg.budget_max {
        trace.push(format!("budget: kept {} of {} nodes", graph.len(), before_budget));
    }

    let context = serialize_with(&graph, kind, toggles.topology, tokenizer);
    trace.push(format!("context_tokens: {}", context.token_count));
    let retrieval_secs = started.elapsed().as_secs_f64();

    let top_statement = graph
        .terminal_order
        .first()
        .and_then(|id| graph.node(*id))
        .map(|node| node.entry.statement.clone());
    let synthesis = synthesize(query, &context, top_statement.as_deref(), generator)?;

    Ok(QueryOutcome {
        answer: synthesis.answer,
        kind,
        fast_path_hit: false,
        token_cost: context.token_count,
        generator_calls: synthesis.generator_calls,
        parse_warning: synthesis.parse_warning,
        retrieval_secs,
        synthesis_secs: synthesis.latency_secs,
        evidence: graph,
        context: Some(context),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::OfflineEmbedder;
    use crate::graph::{AtomicEntry, EntryId, Timestamp};
    use crate::store::MemoryStore;
    use crate::synth::ExtractiveGenerator;
    use std::collections::BTreeSet;

    fn entry(id: u64, statement: &str, entities: &[&str], ts_hours: i64) -> AtomicEntry {
        let embedder = OfflineEmbedder::default();
        AtomicEntry {
            id: EntryId(id),
            statement: statement.to_string(),
            keywords: crate::text::content_words(statement)
                .into_iter()
                .filter(|w| !entities.iter().any(|e| e.to_lowercase() == *w))
                .collect(),
            entities: entities.iter().map(|s| s.to_string()).collect(),
            record: Default::default(),
            embedding: embedder.embed(statement).unwrap(),
            timestamp: Timestamp(ts_hours * 3600),
            sources: vec![("s".to_string(), 0)],
        }
    }

    #[test]
    fn full_query_makes_exactly_one_generator_call() {
        let mut store = MemoryStore::new();
        store.add_entry(entry(1, "Melanie saw a concert", &["Melanie"], 0)).unwrap();
        store.add_entry(entry(2, "Melanie plays the clarinet", &["Melanie"], 2)).unwrap();
        let snapshot = store.snapshot();
        let outcome = answer_query(
            &snapshot,
            "What did Melanie see?",
            &OfflineEmbedder::default(),
            &ExtractiveGenerator,
            &RetrievalConfig::default(),
            PhaseTwoToggles::default(),
        )
        .unwrap();
        assert_eq!(outcome.generator_calls, 1);
        assert!(!outcome.fast_path_hit);
        assert!(outcome.token_cost > 0);
        assert!(!outcome.answer.is_empty());
    }

    #[test]
    fn empty_memory_yields_abstention_and_empty_trace_sections() {
        let store = MemoryStore::new();
        let snapshot = store.snapshot();
        let outcome = answer_query(
            &snapshot,
            "What did Melanie see?",
            &OfflineEmbedder::default(),
            &ExtractiveGenerator,
            &RetrievalConfig::default(),
            PhaseTwoToggles::default(),
        )
        .unwrap();
        assert_eq!(outcome.answer, crate::synth::ABSTENTION);
        assert!(outcome.evidence.is_empty());
        assert!(outcome.trace.iter().all(|l| !l.starts_with("terminal ")));
    }

    #[test]
    fn fast_path_hit_makes_zero_generator_calls() {
        let mut store = MemoryStore::new();
        let mut e = entry(1, "Bob's phone number is 555-0199", &["Bob"], 0);
        e.record.insert("persons".into(), "Bob".into());
        e.record.insert("phone number".into(), "555-0199".into());
        store.add_entry(e).unwrap();
        let snapshot = store.snapshot();
        let outcome = answer_query(
            &snapshot,
            "What is Bob's phone number?",
            &OfflineEmbedder::default(),
            &ExtractiveGenerator,
            &RetrievalConfig::default(),
            PhaseTwoToggles::default(),
        )
        .unwrap();
        assert!(outcome.fast_path_hit);
        assert_eq!(outcome.generator_calls, 0);
        assert_eq!(outcome.token_cost, 0);
        assert_eq!(outcome.answer, "555-0199");
        assert!(outcome.trace.contains(&"fast_path: hit".to_string()));
    }

    #[test]
    fn pipeline_is_deterministic() {
        let mut store = MemoryStore::new();
        for (i, s) in [
            "Melanie saw a concert",
            "Melanie plays the clarinet",
            "Bob visited Paris",
            "the garden needs watering",
        ]
        .iter()
        .enumerate()
        {
            store.add_entry(entry(i as u64 + 1, s, &[], i as i64 * 2)).unwrap();
        }
        let snapshot = store.snapshot();
        let run = || {
            answer_query(
                &snapshot,
                "What did Melanie see at the concert?",
                &OfflineEmbedder::default(),
                &ExtractiveGenerator,
                &RetrievalConfig::default(),
                PhaseTwoToggles::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.answer, b.answer);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.token_cost, b.token_cost);
        let ids_a: BTreeSet<EntryId> = a.evidence.ids().collect();
        let ids_b: BTreeSet<EntryId> = b.evidence.ids().collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn ablation_toggles_change_one_stage() {
        let mut store = MemoryStore::new();
        // Disconnected pair plus an in-between bridge candidate.
        store
            .add_entry(entry(1, "Ava planned the Solstice festival", &["Ava", "Solstice"], 0))
            .unwrap();
        store
            .add_entry(entry(
                2,
                "Liam promised Ava to handle the Solstice logistics",
                &["Liam", "Ava", "Solstice"],
                36,
            ))
            .unwrap();
        store.add_entry(entry(3, "Liam rented a smoke machine", &["Liam"], 72)).unwrap();
        let snapshot = store.snapshot();
        let embedder = OfflineEmbedder::default();
        let cfg = RetrievalConfig { k_sem: 2, k_lex: 2, ..Default::default() };

        let query = "Who rented gear for the festival planned by Ava?";
        let with = answer_query(
            &snapshot, query, &embedder, &ExtractiveGenerator, &cfg,
            PhaseTwoToggles::default(),
        )
        .unwrap();
        let without = answer_query(
            &snapshot, query, &embedder, &ExtractiveGenerator, &cfg,
            PhaseTwoToggles { bridges: false, topology: true },
        )
        .unwrap();
        let has_bridge = |o: &QueryOutcome| o.trace.iter().any(|l| l.starts_with("bridge "));
        assert!(has_bridge(&with));
        assert!(!has_bridge(&without));

        let no_topo = answer_query(
            &snapshot, query, &embedder, &ExtractiveGenerator, &cfg,
            PhaseTwoToggles { bridges: true, topology: false },
        )
        .unwrap();
        assert!(no_topo.context.unwrap().path_lines.is_empty());
        // Facts are unchanged by the topology toggle.
        let with_ids: BTreeSet<EntryId> = with.evidence.ids().collect();
        let no_topo_ids: BTreeSet<EntryId> = no_topo.evidence.ids().collect();
        assert_eq!(with_ids, no_topo_ids);
    }
}
