//! Command-line entry point: ingest a dialogue stream, query a memory,
//! run evaluations, inspect graph state, and generate synthetic datasets.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{AblateStage, AppConfig};
use crate::error::{Error, Result};
use crate::eval::{gen_synthetic, load_dataset, run_eval, SyntheticParams};
use crate::graph::EdgeKind;
use crate::ingest::{ingest_records, parse_stream};
use crate::pipeline::answer_query_with;
use crate::store::MemoryStore;

#[derive(Debug, Parser)]
#[command(
    name = "ariadne",
    about = "Evolutionary memory graph for long-horizon dialogue agents",
    version
)]
pub struct Cli {
    /// Path to a TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Memory graph file (created by ingest, read by query/inspect).
    #[arg(long, global = true, default_value = "memory.jsonl")]
    pub memory: PathBuf,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Print retrieval trace lines (terminals, bridges, paths, context).
    #[arg(long, global = true)]
    pub trace: bool,

    /// Disable one pipeline stage; repeatable.
    #[arg(long, global = true, value_enum)]
    pub ablate: Vec<AblateStage>,

    // Numeric overrides, named after their configuration fields.
    #[arg(long, global = true)]
    pub lambda_red: Option<f64>,
    #[arg(long, global = true)]
    pub delta_short_secs: Option<i64>,
    #[arg(long, global = true)]
    pub lambda_coal: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_ovlp: Option<f64>,
    #[arg(long, global = true)]
    pub window_size: Option<usize>,
    #[arg(long, global = true)]
    pub k_sem: Option<usize>,
    #[arg(long, global = true)]
    pub k_lex: Option<usize>,
    #[arg(long, global = true)]
    pub delta_time_secs: Option<i64>,
    #[arg(long, global = true)]
    pub bridge_gap_min_secs: Option<i64>,
    #[arg(long, global = true)]
    pub bridge_gap_max_secs: Option<i64>,
    #[arg(long, global = true)]
    pub bridge_candidates: Option<usize>,
    #[arg(long, global = true)]
    pub max_path_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub budget_min: Option<usize>,
    #[arg(long, global = true)]
    pub budget_max: Option<usize>,
    #[arg(long, global = true)]
    pub embedder_dimension: Option<usize>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Construct or extend a memory graph from a dialogue stream.
    Ingest {
        /// Line-delimited stream of session headers and turns.
        stream: PathBuf,
    },
    /// Answer one question against a persisted memory.
    Query { question: String },
    /// Run the evaluation harness over a dataset file.
    Eval {
        dataset: PathBuf,
        /// Where to write the machine-readable report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print node/edge statistics and temporal-update chains.
    Inspect {
        /// Export the graph in DOT format to this path.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Generate a seeded synthetic dataset with known gold evidence.
    GenSynthetic {
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n_multihop: usize,
        #[arg(long, default_value_t = 3)]
        chain_length: usize,
        #[arg(long, default_value_t = 4)]
        n_temporal: usize,
        #[arg(long, default_value_t = 3)]
        n_attribute: usize,
        #[arg(long, default_value_t = 2)]
        n_count: usize,
        #[arg(long, default_value_t = 0)]
        n_sessions: usize,
        #[arg(long, default_value_t = 4)]
        turns_per_session: usize,
    },
}

/// Effective configuration: file (or defaults) overridden by flags.
pub fn effective_config(cli: &Cli) -> Result<AppConfig> {
    let mut config = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(v) = cli.lambda_red {
        config.gate.lambda_red = v;
    }
    if let Some(v) = cli.delta_short_secs {
        config.gate.delta_short_secs = v;
    }
    if let Some(v) = cli.lambda_coal {
        config.coarsen.lambda_coal = v;
    }
    if let Some(v) = cli.lambda_ovlp {
        config.coarsen.lambda_ovlp = v;
    }
    if let Some(v) = cli.window_size {
        config.window_size = v;
    }
    if let Some(v) = cli.k_sem {
        config.retrieval.k_sem = v;
    }
    if let Some(v) = cli.k_lex {
        config.retrieval.k_lex = v;
    }
    if let Some(v) = cli.delta_time_secs {
        config.retrieval.delta_time_secs = v;
    }
    if let Some(v) = cli.bridge_gap_min_secs {
        config.retrieval.bridge_gap_min_secs = v;
    }
    if let Some(v) = cli.bridge_gap_max_secs {
        config.retrieval.bridge_gap_max_secs = v;
    }
    if let Some(v) = cli.bridge_candidates {
        config.retrieval.bridge_candidates = v;
    }
    if let Some(v) = cli.max_path_nodes {
        config.retrieval.max_path_nodes = v;
    }
    if let Some(v) = cli.budget_min {
        config.retrieval.budget_min = v;
    }
    if let Some(v) = cli.budget_max {
        config.retrieval.budget_max = v;
    }
    if let Some(v) = cli.embedder_dimension {
        config.embedder.dimension = v;
    }
    config.validate()?;
    Ok(config)
}

/// Run the CLI; returns the process exit code.
pub fn run(cli: &Cli) -> Result<i32> {
    let config = effective_config(cli)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(0);
    }
    let Some(command) = &cli.command else {
        return Err(Error::Config("no command given (try --help)".into()));
    };
    match command {
        Command::Ingest { stream } => cmd_ingest(stream, &cli.memory, &config, &cli.ablate),
        Command::Query { question } => {
            cmd_query(question, &cli.memory, &config, &cli.ablate, cli.trace)
        }
        Command::Eval { dataset, report } => {
            cmd_eval(dataset, report.as_deref(), &config, &cli.ablate)
        }
        Command::Inspect { export } => cmd_inspect(&cli.memory, export.as_deref()),
        Command::GenSynthetic {
            out,
            seed,
            n_multihop,
            chain_length,
            n_temporal,
            n_attribute,
            n_count,
            n_sessions,
            turns_per_session,
        } => {
            let params = SyntheticParams {
                n_sessions: *n_sessions,
                turns_per_session: *turns_per_session,
                n_multihop: *n_multihop,
                chain_length: *chain_length,
                n_temporal: *n_temporal,
                n_attribute: *n_attribute,
                n_count: *n_count,
            };
            let dataset = gen_synthetic(*seed, &params);
            std::fs::write(out, serde_json::to_string_pretty(&dataset)?)?;
            println!(
                "wrote {} sessions, {} questions to {}",
                dataset.sessions.len(),
                dataset.qa.len(),
                out.display()
            );
            Ok(0)
        }
    }
}

pub fn cmd_ingest(
    stream: &Path,
    memory: &Path,
    config: &AppConfig,
    ablations: &[AblateStage],
) -> Result<i32> {
    let records = parse_stream(BufReader::new(std::fs::File::open(stream)?))?;
    let mut store = if memory.exists() {
        MemoryStore::load(memory)?
    } else {
        MemoryStore::new()
    };
    let embedder = config.build_embedder()?;
    let extractor = config.build_extractor()?;
    let (phase_one, _) = AppConfig::toggles(ablations);
    let report = ingest_records(
        &mut store,
        records,
        embedder.as_ref(),
        extractor.as_ref(),
        config.gate.clone(),
        config.coarsen.clone(),
        config.window_size,
        phase_one,
    )?;
    store.save(memory)?;
    println!(
        "turns {} | gated_out {} | windows {} | extracted {} | merged {} | linked {} | added {} | skipped_windows {}",
        report.turns,
        report.gated_out,
        report.windows,
        report.extracted,
        report.merged,
        report.linked,
        report.added,
        report.skipped_windows,
    );
    println!(
        "construction time {:.3}s | graph: {} entries, {} edges -> {}",
        report.construction_secs,
        store.graph().len(),
        store.graph().edge_count(),
        memory.display()
    );
    Ok(0)
}

pub fn cmd_query(
    question: &str,
    memory: &Path,
    config: &AppConfig,
    ablations: &[AblateStage],
    trace: bool,
) -> Result<i32> {
    let store = MemoryStore::load(memory)?;
    let snapshot = store.snapshot();
    let embedder = config.build_embedder()?;
    let generator = config.build_generator()?;
    let tokenizer = config.build_tokenizer();
    let (_, phase_two) = AppConfig::toggles(ablations);
    let outcome = answer_query_with(
        &snapshot,
        question,
        embedder.as_ref(),
        generator.as_ref(),
        &config.retrieval,
        phase_two,
        tokenizer.as_ref(),
    )?;
    println!("{}", outcome.answer);
    if trace {
        for line in &outcome.trace {
            eprintln!("# {line}");
        }
        if let Some(context) = &outcome.context {
            eprintln!("# --- serialized context ({} tokens) ---", context.token_count);
            for line in context.text.lines() {
                eprintln!("# {line}");
            }
        }
        eprintln!(
            "# retrieval {:.4}s | synthesis {:.4}s | generator calls {}",
            outcome.retrieval_secs, outcome.synthesis_secs, outcome.generator_calls
        );
    }
    Ok(0)
}

pub fn cmd_eval(
    dataset_path: &Path,
    report_path: Option<&Path>,
    config: &AppConfig,
    ablations: &[AblateStage],
) -> Result<i32> {
    let dataset = load_dataset(dataset_path)?;
    let embedder = config.build_embedder()?;
    let extractor = config.build_extractor()?;
    let generator = config.build_generator()?;
    let options = config.eval_options(ablations);
    let report = run_eval(
        &dataset,
        &options,
        embedder.as_ref(),
        extractor.as_ref(),
        generator.as_ref(),
    )?;
    print!("{}", report.table());
    let out = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dataset_path.with_extension("report.json"));
    std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
    println!("report written to {}", out.display());

    let mut failed = false;
    if let Some(min) = config.thresholds.min_average_f1 {
        if report.average_f1 < min {
            eprintln!("threshold missed: average F1 {:.4} < {min}", report.average_f1);
            failed = true;
        }
    }
    if let Some(min) = config.thresholds.min_evidence_recall {
        let recall = report.evidence_recall.unwrap_or(0.0);
        if recall < min {
            eprintln!("threshold missed: evidence recall {recall:.4} < {min}");
            failed = true;
        }
    }
    Ok(if failed { 1 } else { 0 })
}

pub fn cmd_inspect(memory: &Path, export: Option<&Path>) -> Result<i32> {
    let store = MemoryStore::load(memory)?;
    let graph = store.graph();
    println!("entries: {}", graph.len());
    let mut by_kind = std::collections::BTreeMap::new();
    for edge in graph.edges() {
        *by_kind.entry(format!("{:?}", edge.kind)).or_insert(0usize) += 1;
    }
    println!("edges: {}", graph.edge_count());
    for (kind, count) in &by_kind {
        println!("  {kind}: {count}");
    }

    // Temporal-update chains, printed from their roots.
    let mut has_incoming = std::collections::BTreeSet::new();
    let mut has_outgoing = std::collections::BTreeSet::new();
    for edge in graph.edges().filter(|e| e.kind == EdgeKind::TemporalUpdate) {
        has_incoming.insert(edge.dst);
        has_outgoing.insert(edge.src);
    }
    let mut chains = 0;
    for id in graph.ids() {
        if has_outgoing.contains(&id) && !has_incoming.contains(&id) {
            let mut chain = vec![id];
            let mut current = id;
            loop {
                let next = graph
                    .outgoing(current)
                    .filter(|e| e.kind == EdgeKind::TemporalUpdate)
                    .map(|e| e.dst)
                    .max_by_key(|dst| (graph.entry(*dst).unwrap().timestamp, *dst));
                match next {
                    Some(dst) if !chain.contains(&dst) => {
                        chain.push(dst);
                        current = dst;
                    }
                    _ => break,
                }
            }
            chains += 1;
            let rendering: Vec<String> = chain
                .iter()
                .map(|id| {
                    format!("{id} ({})", graph.entry(*id).map(|e| e.statement.as_str()).unwrap_or("?"))
                })
                .collect();
            println!("chain: {}", rendering.join(" -> "));
        }
    }
    println!("temporal-update chains: {chains}");

    if let Some(path) = export {
        let mut dot = String::from("digraph memory {\n");
        for entry in graph.entries() {
            let label = entry.statement.replace('"', "'");
            dot.push_str(&format!("  n{} [label=\"{}\"];\n", entry.id.0, label));
        }
        for edge in graph.edges() {
            dot.push_str(&format!(
                "  n{} -> n{} [label=\"{:?}\"];\n",
                edge.src.0, edge.dst.0, edge.kind
            ));
        }
        dot.push_str("}\n");
        std::fs::write(path, dot)?;
        println!("exported DOT graph to {}", path.display());
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn flags_override_config_fields() {
        let cli = parse(&[
            "ariadne",
            "--lambda-red",
            "0.55",
            "--k-sem",
            "11",
            "--budget-max",
            "30",
            "--window-size",
            "6",
            "query",
            "who?",
        ]);
        let config = effective_config(&cli).unwrap();
        assert!((config.gate.lambda_red - 0.55).abs() < 1e-12);
        assert_eq!(config.retrieval.k_sem, 11);
        assert_eq!(config.retrieval.budget_max, 30);
        assert_eq!(config.window_size, 6);
    }

    #[test]
    fn print_config_round_trips_through_file() {
        let cli = parse(&["ariadne", "--k-lex", "9", "query", "who?"]);
        let printed = effective_config(&cli).unwrap().to_toml();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, &printed).unwrap();
        let reloaded = AppConfig::load(&path).unwrap();
        assert_eq!(reloaded.to_toml(), printed);
        assert_eq!(reloaded.retrieval.k_lex, 9);
    }

    #[test]
    fn invalid_override_is_rejected() {
        let cli = parse(&["ariadne", "--budget-min", "99", "query", "who?"]);
        assert!(effective_config(&cli).is_err());
    }

    #[test]
    fn ablate_accepts_all_stages() {
        let cli = parse(&[
            "ariadne",
            "--ablate",
            "no-gating",
            "--ablate",
            "no-bridges",
            "eval",
            "x.json",
        ]);
        assert_eq!(cli.ablate.len(), 2);
    }
}
