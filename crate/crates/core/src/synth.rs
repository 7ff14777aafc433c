//! Serialization of the evidence graph into a generator context, the
//! explicit answer rules, and the single generator call.
//!
//! The context lists timestamped facts in chronological order with dense
//! local indices, then the mined reasoning paths as arrow lines over those
//! indices, then a rules block tailored to the query kind. Offline
//! generators make the whole pipeline runnable with zero network.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::EntryId;
use crate::retrieve::EvidenceGraph;

pub const NO_EVIDENCE_MARKER: &str = "(no evidence)";
pub const ABSTENTION: &str = "unknown";

// ---------------------------------------------------------------------------
// Token counting
// ---------------------------------------------------------------------------

/// Pluggable token counter; token cost is always reported under a declared
/// tokenizer so runs stay comparable.
pub trait TokenCounter: Send + Sync {
    fn name(&self) -> &str;
    fn count(&self, text: &str) -> usize;
}

/// Default tokenizer: whitespace-separated chunks.
#[derive(Debug, Clone, Default)]
pub struct WhitespaceTokenizer;

impl TokenCounter for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn count_tokens(text: &str) -> usize {
    WhitespaceTokenizer.count(text)
}

// ---------------------------------------------------------------------------
// Query kinds and answer rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Concise,
    List,
    Count,
    Temporal,
    Open,
}

struct KindRegexes {
    count: Regex,
    temporal: Regex,
    list: Regex,
}

fn kind_regexes() -> &'static KindRegexes {
    static REGEXES: OnceLock<KindRegexes> = OnceLock::new();
    REGEXES.get_or_init(|| KindRegexes {
        count: Regex::new(r"(?i)^how many\b").unwrap(),
        temporal: Regex::new(r"(?i)(^when\b|\bwhat (date|day|time|year)\b)").unwrap(),
        list: Regex::new(r"(?i)^what\s+(.+?)\s+(?:has|have)\b").unwrap(),
    })
}

/// Pattern-table classifier; unmatched questions default to concise.
pub fn classify_query(query: &str) -> QueryKind {
    let re = kind_regexes();
    if re.count.is_match(query) {
        return QueryKind::Count;
    }
    if re.temporal.is_match(query) {
        return QueryKind::Temporal;
    }
    if let Some(captures) = re.list.captures(query) {
        let subject = captures[1].to_lowercase();
        let plural = crate::text::tokenize(&subject)
            .last()
            .is_some_and(|w| w.ends_with('s'));
        if plural {
            return QueryKind::List;
        }
    }
    QueryKind::Concise
}

/// The explicit answer rules block: length constraint by kind, temporal
/// fidelity, aggregation logic, and the JSON output requirement.
pub fn assemble_rules(kind: QueryKind) -> String {
    let length_rule = match kind {
        QueryKind::Concise => "Answer with a single short phrase.",
        QueryKind::List => "Answer with a comma-separated list of all matching items.",
        QueryKind::Count => "Answer with a single number written in digits.",
        QueryKind::Temporal => "Answer with the exact date or time taken from the facts.",
        QueryKind::Open => "Answer in at most two short sentences.",
    };
    let mut rules = String::from("Rules:\n");
    rules.push_str(&format!("- {length_rule}\n"));
    rules.push_str(
        "- Copy timestamps exactly as written in the facts; never convert them to relative dates.\n",
    );
    if kind == QueryKind::Count {
        rules.push_str("- Count the distinct matching facts and report the total in digits.\n");
    }
    rules.push_str(
        "- Combine the facts along the reasoning paths before answering; do not answer from a single fact when a path spans several.\n",
    );
    rules.push_str(
        "- Respond with a JSON object of the form {\"answer\": \"...\"} and nothing else.\n",
    );
    rules
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// The textual context handed to the generator.
#[derive(Debug, Clone, Serialize)]
pub struct SerializedContext {
    pub fact_lines: Vec<String>,
    pub path_lines: Vec<String>,
    pub rules: String,
    /// facts + paths sections (everything except the rules block).
    pub body: String,
    /// Full text: facts, paths, rules.
    pub text: String,
    pub token_count: usize,
    /// Local fact index (1-based) per entry.
    #[serde(skip)]
    pub index_of: BTreeMap<EntryId, usize>,
}

/// Serialize the evidence graph: facts in (timestamp, id) order with dense
/// indices from 1, one arrow line per mined path, rules appended. With
/// `include_paths` off the path section is omitted (structure ablation).
pub fn serialize(graph: &EvidenceGraph, kind: QueryKind, include_paths: bool) -> SerializedContext {
    serialize_with(graph, kind, include_paths, &WhitespaceTokenizer)
}

pub fn serialize_with(
    graph: &EvidenceGraph,
    kind: QueryKind,
    include_paths: bool,
    tokenizer: &dyn TokenCounter,
) -> SerializedContext {
    let mut ordered: Vec<(&EntryId, &crate::retrieve::EvidenceNode)> = graph.nodes().collect();
    ordered.sort_by_key(|(id, node)| (node.entry.timestamp, **id));

    let mut index_of = BTreeMap::new();
    let mut fact_lines = Vec::with_capacity(ordered.len());
    for (position, (id, node)) in ordered.iter().enumerate() {
        let index = position + 1;
        index_of.insert(**id, index);
        fact_lines.push(format!(
            "[F{index}] {}: {}",
            node.entry.timestamp.iso_date(),
            node.entry.statement
        ));
    }

    let mut path_lines = Vec::new();
    if include_paths {
        for path in &graph.paths {
            let line = path
                .nodes
                .iter()
                .map(|id| format!("F{}", index_of[id]))
                .collect::<Vec<_>>()
                .join(" → ");
            path_lines.push(line);
        }
    }

    let rules = assemble_rules(kind);
    let mut body = String::from("Facts:\n");
    if fact_lines.is_empty() {
        body.push_str(NO_EVIDENCE_MARKER);
        body.push('\n');
    } else {
        for line in &fact_lines {
            body.push_str(line);
            body.push('\n');
        }
    }
    if include_paths && !path_lines.is_empty() {
        body.push_str("\nReasoning Path:\n");
        for line in &path_lines {
            body.push_str(line);
            body.push('\n');
        }
    }
    let text = format!("{body}\n{rules}");
    let token_count = tokenizer.count(&text);

    SerializedContext { fact_lines, path_lines, rules, body, text, token_count, index_of }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

/// Everything a generator may condition on. Remote generators see only the
/// rules (system) and query + context body (user); the offline generators
/// use the structured fields to stay deterministic.
pub struct GenRequest<'a> {
    pub query: &'a str,
    pub rules: &'a str,
    pub context_body: &'a str,
    pub fact_lines: &'a [String],
    pub path_lines: &'a [String],
    /// Statement of the highest-ranked terminal, when one exists.
    pub top_statement: Option<&'a str>,
}

pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &GenRequest<'_>) -> Result<String>;
}

fn json_answer(answer: &str) -> String {
    serde_json::json!({ "answer": answer }).to_string()
}

fn fact_statement(line: &str) -> &str {
    // "[F3] 2023-08-13: statement" -> "statement"
    line.split_once(": ").map(|(_, rest)| rest).unwrap_or(line)
}

/// Deterministic test generator: answers with the fact at the final
/// position of the first reasoning path.
#[derive(Debug, Clone, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn name(&self) -> &str {
        "echo"
    }

    fn generate(&self, request: &GenRequest<'_>) -> Result<String> {
        let answer = request
            .path_lines
            .first()
            .and_then(|line| line.rsplit_once('F').map(|(_, idx)| idx.trim().to_string()))
            .and_then(|idx| idx.parse::<usize>().ok())
            .and_then(|idx| request.fact_lines.get(idx.wrapping_sub(1)))
            .map(|line| fact_statement(line).to_string())
            .or_else(|| request.top_statement.map(str::to_string))
            .unwrap_or_else(|| ABSTENTION.to_string());
        Ok(json_answer(&answer))
    }
}

/// Offline generator returning the statement of the highest-ranked
/// terminal; enables fully offline end-to-end evaluation.
#[derive(Debug, Clone, Default)]
pub struct ExtractiveGenerator;

impl Generator for ExtractiveGenerator {
    fn name(&self) -> &str {
        "extractive"
    }

    fn generate(&self, request: &GenRequest<'_>) -> Result<String> {
        Ok(json_answer(request.top_statement.unwrap_or(ABSTENTION)))
    }
}

/// Remote chat-endpoint generator: system = rules, user = query + context.
pub struct RemoteGenerator {
    client: crate::provider::ChatClient,
    name: String,
}

impl RemoteGenerator {
    pub fn new(client: crate::provider::ChatClient) -> Self {
        let name = format!("remote:{}", client.model());
        RemoteGenerator { client, name }
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenRequest<'_>) -> Result<String> {
        let user = format!("{}\n\n{}", request.query, request.context_body);
        self.client.complete(request.rules, &user)
    }
}

// ---------------------------------------------------------------------------
// Synthesis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SynthesisOutcome {
    pub answer: String,
    pub raw_response: String,
    pub parse_warning: bool,
    pub generator_calls: u32,
    pub latency_secs: f64,
}

fn extract_answer(raw: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(raw.trim()).ok()?;
    match value.get("answer")? {
        serde_json::Value::String(s) => Some(s.clone()),
        other => Some(other.to_string()),
    }
}

/// One generator call (independent transport retry on failure), answer
/// pulled from the JSON `answer` field. A response that stays unparseable
/// after the retry is returned raw with a warning flag instead of failing
/// the question.
pub fn synthesize(
    query: &str,
    context: &SerializedContext,
    top_statement: Option<&str>,
    generator: &dyn Generator,
) -> Result<SynthesisOutcome> {
    let started = std::time::Instant::now();
    let request = GenRequest {
        query,
        rules: &context.rules,
        context_body: if context.fact_lines.is_empty() {
            NO_EVIDENCE_MARKER
        } else {
            &context.body
        },
        fact_lines: &context.fact_lines,
        path_lines: &context.path_lines,
        top_statement,
    };
    let mut calls = 0u32;
    let mut last_raw: Option<String> = None;
    for _attempt in 0..2 {
        calls += 1;
        match generator.generate(&request) {
            Ok(raw) => {
                if let Some(answer) = extract_answer(&raw) {
                    return Ok(SynthesisOutcome {
                        answer,
                        raw_response: raw,
                        parse_warning: false,
                        generator_calls: calls,
                        latency_secs: started.elapsed().as_secs_f64(),
                    });
                }
                last_raw = Some(raw);
            }
            Err(Error::Transport(message)) => {
                log::warn!("generator transport failure: {message}; retrying");
                if calls == 2 {
                    return Err(Error::Transport(message));
                }
            }
            Err(other) => return Err(other),
        }
    }
    let raw = last_raw.unwrap_or_default();
    Ok(SynthesisOutcome {
        answer: raw.trim().to_string(),
        raw_response: raw,
        parse_warning: true,
        generator_calls: calls,
        latency_secs: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{Embedder, OfflineEmbedder};
    use crate::graph::{AtomicEntry, Timestamp};
    use crate::retrieve::{NodeRole, Path};

    fn entry(id: u64, statement: &str, ts: Timestamp) -> AtomicEntry {
        AtomicEntry {
            id: EntryId(id),
            statement: statement.to_string(),
            keywords: crate::text::content_words(statement).into_iter().collect(),
            entities: Default::default(),
            record: Default::default(),
            embedding: OfflineEmbedder::default().embed(statement).unwrap(),
            timestamp: ts,
            sources: vec![],
        }
    }

    fn graph_with_chain() -> EvidenceGraph {
        let mut graph = EvidenceGraph::default();
        let a = entry(10, "Melanie is a fan of classical music", Timestamp::from_ymd(2023, 8, 28));
        let b = entry(11, "Melanie plays the clarinet", Timestamp::from_ymd(2023, 8, 28));
        let c = entry(
            12,
            "Melanie celebrated her daughter's birthday with a concert by Matt Patterson",
            Timestamp::from_ymd(2023, 8, 13),
        );
        graph.add_node(a, NodeRole::Terminal);
        graph.add_node(b, NodeRole::Terminal);
        graph.add_node(c, NodeRole::Terminal);
        // Chronological order: F1 = id 12 (08-13), F2 = id 10, F3 = id 11.
        graph.paths = vec![Path { nodes: vec![EntryId(12), EntryId(10), EntryId(11)] }];
        graph
    }

    #[test]
    fn serialize_formats_fact_lines() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, true);
        assert_eq!(
            ctx.fact_lines[0],
            "[F1] 2023-08-13: Melanie celebrated her daughter's birthday with a concert by Matt Patterson"
        );
        assert_eq!(ctx.index_of[&EntryId(12)], 1);
        assert_eq!(ctx.index_of[&EntryId(10)], 2);
        assert_eq!(ctx.index_of[&EntryId(11)], 3);
    }

    #[test]
    fn serialize_emits_arrow_path_lines() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, true);
        assert_eq!(ctx.path_lines, vec!["F1 → F2 → F3"]);
        assert!(ctx.text.contains("Reasoning Path:\nF1 → F2 → F3"));
    }

    #[test]
    fn serialize_empty_graph_keeps_rules() {
        let graph = EvidenceGraph::default();
        let ctx = serialize(&graph, QueryKind::Concise, true);
        assert!(ctx.fact_lines.is_empty());
        assert!(ctx.text.contains(NO_EVIDENCE_MARKER));
        assert!(ctx.text.contains("Rules:"));
    }

    #[test]
    fn serialize_no_topology_drops_path_lines() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, false);
        assert!(ctx.path_lines.is_empty());
        assert!(!ctx.text.contains("Reasoning Path:"));
        assert_eq!(ctx.fact_lines.len(), 3);
    }

    #[test]
    fn serialize_is_injective_on_statements() {
        let mut g1 = EvidenceGraph::default();
        g1.add_node(entry(1, "fact one", Timestamp(0)), NodeRole::Terminal);
        let mut g2 = EvidenceGraph::default();
        g2.add_node(entry(1, "fact two", Timestamp(0)), NodeRole::Terminal);
        let c1 = serialize(&g1, QueryKind::Concise, true);
        let c2 = serialize(&g2, QueryKind::Concise, true);
        assert_ne!(c1.text, c2.text);
    }

    #[test]
    fn path_lines_reference_existing_facts() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, true);
        for line in &ctx.path_lines {
            for index in line.split(" → ") {
                let n: usize = index.trim_start_matches('F').parse().unwrap();
                assert!(n >= 1 && n <= ctx.fact_lines.len());
            }
        }
    }

    #[test]
    fn token_count_matches_tokenizer() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a b c"), 3);
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, true);
        assert_eq!(ctx.token_count, count_tokens(&ctx.text));
    }

    #[test]
    fn classify_query_table() {
        assert_eq!(classify_query("How many emails did Alice send?"), QueryKind::Count);
        assert_eq!(classify_query("When did Melanie volunteer?"), QueryKind::Temporal);
        assert_eq!(classify_query("What date is the recital?"), QueryKind::Temporal);
        assert_eq!(
            classify_query("What musical artists/bands has Melanie seen?"),
            QueryKind::List
        );
        assert_eq!(classify_query("What is Bob's phone number?"), QueryKind::Concise);
        assert_eq!(classify_query("Why did Melanie volunteer?"), QueryKind::Concise);
    }

    #[test]
    fn rules_blocks_are_kind_specific() {
        assert!(assemble_rules(QueryKind::List).contains("comma-separated list"));
        assert!(assemble_rules(QueryKind::Temporal).contains("Copy timestamps exactly"));
        assert!(assemble_rules(QueryKind::Count).contains("digits"));
        for kind in [
            QueryKind::Concise,
            QueryKind::List,
            QueryKind::Count,
            QueryKind::Temporal,
            QueryKind::Open,
        ] {
            assert!(assemble_rules(kind).contains("JSON object"));
        }
    }

    #[test]
    fn echo_generator_returns_path_final_fact() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::List, true);
        let outcome = synthesize("What has Melanie seen?", &ctx, None, &EchoGenerator).unwrap();
        assert_eq!(outcome.answer, "Melanie plays the clarinet");
        assert_eq!(outcome.generator_calls, 1);
        assert!(!outcome.parse_warning);
    }

    #[test]
    fn extractive_generator_returns_top_statement() {
        let graph = graph_with_chain();
        let ctx = serialize(&graph, QueryKind::Concise, true);
        let outcome =
            synthesize("anything", &ctx, Some("Melanie plays the clarinet"), &ExtractiveGenerator)
                .unwrap();
        assert_eq!(outcome.answer, "Melanie plays the clarinet");
    }

    #[test]
    fn empty_context_yields_abstention() {
        let ctx = serialize(&EvidenceGraph::default(), QueryKind::Concise, true);
        let outcome = synthesize("anything", &ctx, None, &ExtractiveGenerator).unwrap();
        assert_eq!(outcome.answer, ABSTENTION);
    }

    #[test]
    fn non_json_response_twice_returns_raw_with_warning() {
        struct Rambler;
        impl Generator for Rambler {
            fn name(&self) -> &str {
                "rambler"
            }
            fn generate(&self, _request: &GenRequest<'_>) -> Result<String> {
                Ok("the answer is probably blue".to_string())
            }
        }
        let ctx = serialize(&EvidenceGraph::default(), QueryKind::Concise, true);
        let outcome = synthesize("anything", &ctx, None, &Rambler).unwrap();
        assert!(outcome.parse_warning);
        assert_eq!(outcome.answer, "the answer is probably blue");
        assert_eq!(outcome.generator_calls, 2);
    }

    #[test]
    fn transport_failure_retries_once_then_fails() {
        struct Down(std::sync::atomic::AtomicU32);
        impl Generator for Down {
            fn name(&self) -> &str {
                "down"
            }
            fn generate(&self, _request: &GenRequest<'_>) -> Result<String> {
                self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                Err(Error::Transport("unreachable".into()))
            }
        }
        let generator = Down(Default::default());
        let ctx = serialize(&EvidenceGraph::default(), QueryKind::Concise, true);
        let err = synthesize("anything", &ctx, None, &generator);
        assert!(matches!(err, Err(Error::Transport(_))));
        assert_eq!(generator.0.load(std::sync::atomic::Ordering::SeqCst), 2);
    }
}
