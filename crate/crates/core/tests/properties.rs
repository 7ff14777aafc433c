//! Property tests for the structural invariants: graph integrity under
//! random operation interleavings, the coarsening partition, path-mining
//! completeness, budget safety, and metric bounds.

use std::collections::BTreeSet;

use proptest::prelude::*;

use ariadne_mem::embed::{cosine, Embedder, OfflineEmbedder};
use ariadne_mem::eval::{bleu, token_f1};
use ariadne_mem::graph::{AtomicEntry, EdgeKind, EntryId, MemoryGraph, Timestamp};
use ariadne_mem::ingest::{decide_action, CoarsenAction, CoarsenConfig};
use ariadne_mem::retrieve::{
    enforce_budget, mine_paths, EvidenceGraph, NodeRole, RetrievalConfig,
};
use ariadne_mem::store::MemoryStore;

fn entry(id: u64, statement: &str, ts: i64) -> AtomicEntry {
    AtomicEntry {
        id: EntryId(id),
        statement: statement.to_string(),
        keywords: ariadne_mem::text::content_words(statement).into_iter().collect(),
        entities: BTreeSet::new(),
        record: Default::default(),
        embedding: OfflineEmbedder::default().embed(statement).unwrap(),
        timestamp: Timestamp(ts),
        sources: vec![("p".to_string(), 0)],
    }
}

#[derive(Debug, Clone)]
enum Op {
    Add { statement_seed: u8, ts: i64 },
    Merge { target_seed: u8, statement_seed: u8, ts: i64 },
    Link { target_seed: u8, statement_seed: u8, ts: i64 },
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<u8>(), 0i64..1_000_000).prop_map(|(s, ts)| Op::Add { statement_seed: s, ts }),
        (any::<u8>(), any::<u8>(), 0i64..1_000_000)
            .prop_map(|(t, s, ts)| Op::Merge { target_seed: t, statement_seed: s, ts }),
        (any::<u8>(), any::<u8>(), 0i64..1_000_000)
            .prop_map(|(t, s, ts)| Op::Link { target_seed: t, statement_seed: s, ts }),
    ]
}

fn statement_for(seed: u8) -> String {
    format!("subject{} performed action{} at venue{}", seed % 17, seed % 11, seed % 7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Referential integrity and counting laws hold after any
    /// interleaving of add/merge/link.
    #[test]
    fn graph_integrity_under_random_ops(ops in proptest::collection::vec(op_strategy(), 1..40)) {
        let mut graph = MemoryGraph::new();
        for op in ops {
            let ids: Vec<EntryId> = graph.ids().collect();
            let nodes_before = graph.len();
            let edges_before = graph.edge_count();
            match op {
                Op::Add { statement_seed, ts } => {
                    let id = graph.next_id();
                    let _ = graph.add_entry(entry(id.0, &statement_for(statement_seed), ts));
                }
                Op::Merge { target_seed, statement_seed, ts } => {
                    if ids.is_empty() { continue; }
                    let target = ids[target_seed as usize % ids.len()];
                    let candidate = entry(graph.next_id().0, &statement_for(statement_seed), ts);
                    graph.merge_entry(target, &candidate).unwrap();
                    // Merge never increases node count, and can only
                    // re-orient (never add) update edges.
                    prop_assert_eq!(graph.len(), nodes_before);
                    prop_assert!(graph.edge_count() <= edges_before);
                }
                Op::Link { target_seed, statement_seed, ts } => {
                    if ids.is_empty() { continue; }
                    let target = ids[target_seed as usize % ids.len()];
                    let candidate = entry(graph.next_id().0, &statement_for(statement_seed), ts);
                    graph.link_entries(target, candidate).unwrap();
                    // Link adds exactly one node and one edge.
                    prop_assert_eq!(graph.len(), nodes_before + 1);
                    prop_assert_eq!(graph.edge_count(), edges_before + 1);
                }
            }
            // Every edge endpoint resolves.
            for edge in graph.edges() {
                prop_assert!(graph.entry(edge.src).is_some());
                prop_assert!(graph.entry(edge.dst).is_some());
                if edge.kind == EdgeKind::TemporalUpdate {
                    prop_assert!(
                        graph.entry(edge.src).unwrap().timestamp
                            <= graph.entry(edge.dst).unwrap().timestamp
                    );
                }
            }
        }
        // Following temporal updates terminates from every node.
        for id in graph.ids() {
            let sink = graph.latest_state(id);
            prop_assert!(graph.entry(sink).is_some());
        }
    }

    /// Exactly one coarsening action fires for every (sim, ovlp) pair.
    #[test]
    fn classify_partitions_the_plane(sim in 0.0f64..=1.0, ovlp in 0.0f64..=1.0) {
        let cfg = CoarsenConfig::default();
        let action = decide_action(sim, ovlp, &cfg, EntryId(1));
        let expected = if sim > cfg.lambda_coal && ovlp > cfg.lambda_ovlp {
            CoarsenAction::Merge(EntryId(1))
        } else if sim > cfg.lambda_coal {
            CoarsenAction::Link(EntryId(1))
        } else {
            CoarsenAction::Add
        };
        prop_assert_eq!(action, expected);
    }

    /// Cosine is symmetric and self-similarity is 1.
    #[test]
    fn cosine_symmetry(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}") {
        let embedder = OfflineEmbedder::default();
        let u = embedder.embed(&a).unwrap();
        let v = embedder.embed(&b).unwrap();
        let uv = cosine(&u, &v).unwrap();
        let vu = cosine(&v, &u).unwrap();
        prop_assert!((uv - vu).abs() < 1e-9);
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!((-1.0..=1.0 + 1e-9).contains(&uv));
    }

    /// Snapshot isolation: a view never changes under later writes.
    #[test]
    fn snapshot_isolation(adds in 1usize..20, later in 1usize..10) {
        let mut store = MemoryStore::new();
        for i in 0..adds {
            store.add_entry(entry(i as u64 + 1, &statement_for(i as u8), i as i64)).unwrap();
        }
        let snapshot = store.snapshot();
        let frozen: Vec<EntryId> = snapshot.graph.ids().collect();
        for i in 0..later {
            store
                .add_entry(entry((adds + i) as u64 + 1, &statement_for((adds + i) as u8), i as i64))
                .unwrap();
        }
        let after: Vec<EntryId> = snapshot.graph.ids().collect();
        prop_assert_eq!(frozen, after);
        prop_assert_eq!(snapshot.graph.len(), adds);
    }

    /// Mined paths equal brute-force enumeration on random small DAGs.
    #[test]
    fn path_mining_matches_brute_force(
        n in 2usize..=9,
        edge_bits in any::<u64>(),
        ts_seed in any::<u64>(),
    ) {
        let cfg = RetrievalConfig::default();
        let mut graph = EvidenceGraph::default();
        let timestamps: Vec<i64> =
            (0..n).map(|i| ((ts_seed >> (i * 3)) & 0x7) as i64 * 3600).collect();
        for i in 0..n {
            graph.add_node(
                entry(i as u64 + 1, &format!("node {i}"), timestamps[i]),
                NodeRole::Terminal,
            );
        }
        let mut bit = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if (edge_bits >> (bit % 64)) & 1 == 1 {
                    let (a, b) = (EntryId(i as u64 + 1), EntryId(j as u64 + 1));
                    let (src, dst) = if (timestamps[i], a) <= (timestamps[j], b) {
                        (a, b)
                    } else {
                        (b, a)
                    };
                    graph.add_edge(src, dst, EdgeKind::EntityShared, Timestamp(0));
                }
                bit += 1;
            }
        }
        let mined: BTreeSet<Vec<EntryId>> =
            mine_paths(&graph, &cfg).into_iter().map(|p| p.nodes).collect();

        let ids: Vec<EntryId> = graph.ids().collect();
        let mut expected = BTreeSet::new();
        for len in 2..=cfg.max_path_nodes {
            let total = n.pow(len as u32);
            for code in 0..total {
                let mut rest = code;
                let nodes: Vec<EntryId> = (0..len).map(|_| { let id = ids[rest % n]; rest /= n; id }).collect();
                let distinct: BTreeSet<&EntryId> = nodes.iter().collect();
                if distinct.len() != len { continue; }
                let ok = nodes.windows(2).all(|w| {
                    graph.has_edge(w[0], w[1], EdgeKind::EntityShared)
                        && graph.timestamp(w[0]) <= graph.timestamp(w[1])
                });
                if ok { expected.insert(nodes); }
            }
        }
        prop_assert_eq!(mined, expected);
    }

    /// Budget output never exceeds the cap, reaches the floor when
    /// possible, and only keeps fully-retained paths.
    #[test]
    fn budget_safety(n in 1usize..=60, edge_bits in any::<u64>()) {
        let cfg = RetrievalConfig::default();
        let mut graph = EvidenceGraph::default();
        for i in 0..n {
            let e = entry(i as u64 + 1, &format!("node {i}"), (i as i64 % 7) * 3600);
            graph.terminal_order.push(e.id);
            graph.add_node(e, NodeRole::Terminal);
        }
        let ids: Vec<EntryId> = graph.ids().collect();
        for (k, window) in ids.windows(2).enumerate() {
            if (edge_bits >> (k % 64)) & 1 == 1 {
                let (a, b) = (window[0], window[1]);
                let (src, dst) = if (graph.timestamp(a), a) <= (graph.timestamp(b), b) {
                    (a, b)
                } else {
                    (b, a)
                };
                graph.add_edge(src, dst, EdgeKind::TemporalProximity, Timestamp(0));
            }
        }
        let paths = mine_paths(&graph, &cfg);
        enforce_budget(&mut graph, paths, &cfg);
        prop_assert!(graph.len() <= cfg.budget_max);
        prop_assert!(graph.len() >= cfg.budget_min.min(n));
        for path in &graph.paths {
            for id in &path.nodes {
                prop_assert!(graph.contains(*id));
            }
        }
    }

    /// Metric sanity: bounded, case/punctuation invariant, perfect on
    /// identical strings.
    #[test]
    fn metric_bounds(a in "[A-Za-z ,.!]{0,40}", b in "[A-Za-z ,.!]{0,40}") {
        let f1 = token_f1(&a, &b);
        let bl = bleu(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&bl));
        prop_assert!((token_f1(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((bleu(&a, &a) - 1.0).abs() < 1e-12);
        let shouted = a.to_uppercase();
        prop_assert!((token_f1(&shouted, &a) - 1.0).abs() < 1e-12);
    }
}
