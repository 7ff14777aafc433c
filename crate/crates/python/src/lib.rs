//! Python bindings: an in-process `MemoryEngine` plus the evaluation
//! metrics, so agent frameworks can drive the memory graph without a
//! server or subprocess.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;

use ariadne_mem::config::AppConfig;
use ariadne_mem::embed::OfflineEmbedder;
use ariadne_mem::error::Error;
use ariadne_mem::eval::{gen_synthetic, SyntheticParams};
use ariadne_mem::ingest::{ingest_records, parse_stream, RuleExtractor};
use ariadne_mem::pipeline::{answer_query, PhaseTwoToggles};
use ariadne_mem::store::MemoryStore;
use ariadne_mem::synth::{EchoGenerator, ExtractiveGenerator, Generator};

fn to_py_err(error: Error) -> PyErr {
    match &error {
        Error::Io(_) => PyIOError::new_err(error.to_string()),
        _ => PyValueError::new_err(error.to_string()),
    }
}

/// A self-contained dialogue memory engine with offline providers.
///
/// Usage from Python:
///
///     from ariadne_py import MemoryEngine
///     engine = MemoryEngine()
///     engine.ingest_jsonl(open("stream.jsonl").read())
///     result = engine.query("What is Bob's phone number?")
///     print(result["answer"])
#[pyclass]
struct MemoryEngine {
    store: MemoryStore,
    config: AppConfig,
    embedder: OfflineEmbedder,
    generator_kind: String,
}

impl MemoryEngine {
    fn generator(&self) -> Box<dyn Generator> {
        match self.generator_kind.as_str() {
            "echo" => Box::new(EchoGenerator),
            _ => Box::new(ExtractiveGenerator),
        }
    }

    fn run_ingest(&mut self, records: Vec<ariadne_mem::ingest::StreamRecord>) -> PyResult<Py<PyDict>> {
        let report = ingest_records(
            &mut self.store,
            records,
            &self.embedder,
            &RuleExtractor,
            self.config.gate.clone(),
            self.config.coarsen.clone(),
            self.config.window_size,
            Default::default(),
        )
        .map_err(to_py_err)?;
        Python::attach(|py| {
            let dict = PyDict::new(py);
            dict.set_item("turns", report.turns)?;
            dict.set_item("gated_out", report.gated_out)?;
            dict.set_item("windows", report.windows)?;
            dict.set_item("extracted", report.extracted)?;
            dict.set_item("merged", report.merged)?;
            dict.set_item("linked", report.linked)?;
            dict.set_item("added", report.added)?;
            dict.set_item("construction_secs", report.construction_secs)?;
            Ok(dict.unbind())
        })
    }
}

#[pymethods]
impl MemoryEngine {
    /// Create an engine with offline providers.
    ///
    /// Args:
    ///     dimension: embedding dimension (default 256).
    ///     window_size: extraction window capacity (default 20).
    ///     k_sem / k_lex: hybrid retrieval depths.
    ///     generator: "extractive" (default) or "echo".
    #[new]
    #[pyo3(signature = (dimension=256, window_size=20, k_sem=20, k_lex=5, generator="extractive"))]
    fn new(
        dimension: usize,
        window_size: usize,
        k_sem: usize,
        k_lex: usize,
        generator: &str,
    ) -> PyResult<Self> {
        if !matches!(generator, "extractive" | "echo") {
            return Err(PyValueError::new_err(format!(
                "unknown generator {generator:?} (expected \"extractive\" or \"echo\")"
            )));
        }
        let mut config = AppConfig::default();
        config.embedder.dimension = dimension;
        config.window_size = window_size;
        config.retrieval.k_sem = k_sem;
        config.retrieval.k_lex = k_lex;
        config.validate().map_err(to_py_err)?;
        Ok(MemoryEngine {
            store: MemoryStore::new(),
            embedder: OfflineEmbedder::new(dimension),
            config,
            generator_kind: generator.to_string(),
        })
    }

    /// Ingest a line-delimited stream of session headers and turns.
    fn ingest_jsonl(&mut self, text: &str) -> PyResult<Py<PyDict>> {
        let records = parse_stream(std::io::BufReader::new(text.as_bytes())).map_err(to_py_err)?;
        self.run_ingest(records)
    }

    /// Ingest a stream file from disk.
    fn ingest_file(&mut self, path: PathBuf) -> PyResult<Py<PyDict>> {
        let file = std::fs::File::open(&path)
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let records = parse_stream(std::io::BufReader::new(file)).map_err(to_py_err)?;
        self.run_ingest(records)
    }

    /// Answer a question against the current memory.
    ///
    /// Returns a dict with answer, kind, fast_path, token_cost,
    /// generator_calls, retrieval_secs, synthesis_secs, evidence
    /// (statements), and the trace lines.
    fn query(&self, question: &str) -> PyResult<Py<PyDict>> {
        let snapshot = self.store.snapshot();
        let generator = self.generator();
        let outcome = answer_query(
            &snapshot,
            question,
            &self.embedder,
            generator.as_ref(),
            &self.config.retrieval,
            PhaseTwoToggles::default(),
        )
        .map_err(to_py_err)?;
        Python::attach(|py| {
            let dict = PyDict::new(py);
            dict.set_item("answer", &outcome.answer)?;
            dict.set_item("kind", format!("{:?}", outcome.kind).to_lowercase())?;
            dict.set_item("fast_path", outcome.fast_path_hit)?;
            dict.set_item("token_cost", outcome.token_cost)?;
            dict.set_item("generator_calls", outcome.generator_calls)?;
            dict.set_item("retrieval_secs", outcome.retrieval_secs)?;
            dict.set_item("synthesis_secs", outcome.synthesis_secs)?;
            let evidence = PyList::new(
                py,
                outcome
                    .evidence
                    .nodes()
                    .map(|(_, node)| node.entry.statement.clone())
                    .collect::<Vec<_>>(),
            )?;
            dict.set_item("evidence", evidence)?;
            if let Some(context) = &outcome.context {
                dict.set_item("context", &context.text)?;
            }
            dict.set_item("trace", PyList::new(py, outcome.trace.clone())?)?;
            Ok(dict.unbind())
        })
    }

    /// Persist the memory graph.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.store.save(&path).map_err(to_py_err)
    }

    /// Load a persisted memory graph with this engine's configuration.
    #[staticmethod]
    #[pyo3(signature = (path, k_sem=20, k_lex=5, generator="extractive"))]
    fn load(path: PathBuf, k_sem: usize, k_lex: usize, generator: &str) -> PyResult<Self> {
        let store = MemoryStore::load(&path).map_err(to_py_err)?;
        let dimension = store.graph().dimension().unwrap_or(256);
        let mut engine = MemoryEngine::new(dimension, 20, k_sem, k_lex, generator)?;
        engine.store = store;
        Ok(engine)
    }

    fn entry_count(&self) -> usize {
        self.store.graph().len()
    }

    fn edge_count(&self) -> usize {
        self.store.graph().edge_count()
    }

    /// All stored statements in id order (mainly for debugging).
    fn statements(&self) -> Vec<String> {
        self.store.graph().entries().map(|e| e.statement.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "MemoryEngine(entries={}, edges={}, generator={:?})",
            self.store.graph().len(),
            self.store.graph().edge_count(),
            self.generator_kind,
        )
    }
}

/// Token-level F1 between a prediction and a gold answer.
#[pyfunction]
fn token_f1(prediction: &str, gold: &str) -> f64 {
    ariadne_mem::eval::token_f1(prediction, gold)
}

/// Smoothed sentence BLEU between a prediction and a gold answer.
#[pyfunction]
fn bleu(prediction: &str, gold: &str) -> f64 {
    ariadne_mem::eval::bleu(prediction, gold)
}

/// Generate a seeded synthetic dataset as a JSON string.
#[pyfunction]
#[pyo3(signature = (seed=7, n_multihop=8, n_temporal=4, n_attribute=3, n_count=2, chain_length=3, turns_per_session=4))]
fn synthetic_dataset_json(
    seed: u64,
    n_multihop: usize,
    n_temporal: usize,
    n_attribute: usize,
    n_count: usize,
    chain_length: usize,
    turns_per_session: usize,
) -> PyResult<String> {
    let dataset = gen_synthetic(
        seed,
        &SyntheticParams {
            n_sessions: 0,
            turns_per_session,
            n_multihop,
            chain_length,
            n_temporal,
            n_attribute,
            n_count,
        },
    );
    serde_json::to_string_pretty(&dataset).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn ariadne_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<MemoryEngine>()?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(bleu, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset_json, m)?)?;
    Ok(())
}
