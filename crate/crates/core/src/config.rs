//! Application configuration: one TOML document covering both pipeline
//! phases, provider selection, and evaluation thresholds. Defaults match
//! the reference hyperparameters (window 20, lambda_red 0.6, lambda_coal
//! 0.7, k_sem 20, k_lex 5).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{Embedder, OfflineEmbedder, RemoteEmbedder, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::ingest::{
    CoarsenConfig, Extractor, GateConfig, PhaseOneToggles, RemoteExtractor, RuleExtractor,
    DEFAULT_WINDOW_CAPACITY,
};
use crate::pipeline::PhaseTwoToggles;
use crate::provider::ChatClient;
use crate::retrieve::RetrievalConfig;
use crate::synth::{
    EchoGenerator, ExtractiveGenerator, Generator, RemoteGenerator, TokenCounter,
    WhitespaceTokenizer,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    /// "offline" or "remote".
    pub kind: String,
    pub dimension: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { kind: "offline".to_string(), dimension: DEFAULT_DIMENSION }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractorConfig {
    /// "rule" or "remote".
    pub kind: String,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig { kind: "rule".to_string() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// "extractive", "echo", or "remote".
    pub kind: String,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { kind: "extractive".to_string() }
    }
}

/// Remote provider endpoint shared by the embedding, extraction, and
/// generation clients. The credential is read from the environment
/// variable named here, never stored in the file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://localhost:8080/v1/chat/completions".to_string(),
            model: "local-model".to_string(),
            api_key_env: "ARIADNE_API_KEY".to_string(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalThresholds {
    /// Exit nonzero when the question-weighted average F1 falls below.
    pub min_average_f1: Option<f64>,
    /// Exit nonzero when mean evidence recall falls below.
    pub min_evidence_recall: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub gate: GateConfig,
    pub coarsen: CoarsenConfig,
    pub retrieval: RetrievalConfig,
    pub window_size: usize,
    pub embedder: EmbedderConfig,
    pub extractor: ExtractorConfig,
    pub generator: GeneratorConfig,
    pub remote: RemoteConfig,
    /// "whitespace" (the default deterministic tokenizer).
    pub tokenizer: String,
    pub thresholds: EvalThresholds,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            gate: GateConfig::default(),
            coarsen: CoarsenConfig::default(),
            retrieval: RetrievalConfig::default(),
            window_size: DEFAULT_WINDOW_CAPACITY,
            embedder: EmbedderConfig::default(),
            extractor: ExtractorConfig::default(),
            generator: GeneratorConfig::default(),
            remote: RemoteConfig::default(),
            tokenizer: "whitespace".to_string(),
            thresholds: EvalThresholds::default(),
        }
    }
}

/// Ablation switches, one per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AblateStage {
    NoGating,
    NoCoarsening,
    NoBridges,
    NoTopology,
}

impl AblateStage {
    pub fn label(&self) -> &'static str {
        match self {
            AblateStage::NoGating => "no-gating",
            AblateStage::NoCoarsening => "no-coarsening",
            AblateStage::NoBridges => "no-bridges",
            AblateStage::NoTopology => "no-topology",
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let raw = std::fs::read_to_string(path)?;
        let config: AppConfig = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        if !(0.0..=1.0).contains(&self.gate.lambda_red) {
            return Err(Error::Config("gate.lambda_red must be in [0, 1]".into()));
        }
        if self.gate.delta_short_secs <= 0 {
            return Err(Error::Config("gate.delta_short_secs must be positive".into()));
        }
        for (name, value) in [
            ("coarsen.lambda_coal", self.coarsen.lambda_coal),
            ("coarsen.lambda_ovlp", self.coarsen.lambda_ovlp),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be positive".into()));
        }
        match self.embedder.kind.as_str() {
            "offline" | "remote" => {}
            other => return Err(Error::Config(format!("unknown embedder kind {other:?}"))),
        }
        match self.extractor.kind.as_str() {
            "rule" | "remote" => {}
            other => return Err(Error::Config(format!("unknown extractor kind {other:?}"))),
        }
        match self.generator.kind.as_str() {
            "extractive" | "echo" | "remote" => {}
            other => return Err(Error::Config(format!("unknown generator kind {other:?}"))),
        }
        if self.tokenizer != "whitespace" {
            return Err(Error::Config(format!("unknown tokenizer {:?}", self.tokenizer)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn api_key(&self) -> Option<String> {
        std::env::var(&self.remote.api_key_env).ok()
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        match self.embedder.kind.as_str() {
            "offline" => Ok(Box::new(OfflineEmbedder::new(self.embedder.dimension))),
            "remote" => Ok(Box::new(RemoteEmbedder::new(
                &self.remote.base_url,
                &self.remote.model,
                self.embedder.dimension,
                self.api_key(),
                self.remote.max_in_flight,
            )?)),
            other => Err(Error::Config(format!("unknown embedder kind {other:?}"))),
        }
    }

    pub fn build_extractor(&self) -> Result<Box<dyn Extractor>> {
        match self.extractor.kind.as_str() {
            "rule" => Ok(Box::new(RuleExtractor)),
            "remote" => {
                let client = ChatClient::new(
                    &self.remote.base_url,
                    &self.remote.model,
                    self.api_key(),
                    self.remote.max_in_flight,
                )?;
                Ok(Box::new(RemoteExtractor::new(client)))
            }
            other => Err(Error::Config(format!("unknown extractor kind {other:?}"))),
        }
    }

    pub fn build_generator(&self) -> Result<Box<dyn Generator>> {
        match self.generator.kind.as_str() {
            "extractive" => Ok(Box::new(ExtractiveGenerator)),
            "echo" => Ok(Box::new(EchoGenerator)),
            "remote" => {
                let client = ChatClient::new(
                    &self.remote.base_url,
                    &self.remote.model,
                    self.api_key(),
                    self.remote.max_in_flight,
                )?;
                Ok(Box::new(RemoteGenerator::new(client)))
            }
            other => Err(Error::Config(format!("unknown generator kind {other:?}"))),
        }
    }

    pub fn build_tokenizer(&self) -> Box<dyn TokenCounter> {
        Box::new(WhitespaceTokenizer)
    }

    /// Stage toggles for a set of ablations.
    pub fn toggles(ablations: &[AblateStage]) -> (PhaseOneToggles, PhaseTwoToggles) {
        let phase_one = PhaseOneToggles {
            gating: !ablations.contains(&AblateStage::NoGating),
            coarsening: !ablations.contains(&AblateStage::NoCoarsening),
        };
        let phase_two = PhaseTwoToggles {
            bridges: !ablations.contains(&AblateStage::NoBridges),
            topology: !ablations.contains(&AblateStage::NoTopology),
        };
        (phase_one, phase_two)
    }

    pub fn eval_options(&self, ablations: &[AblateStage]) -> EvalOptions {
        let (phase_one, phase_two) = AppConfig::toggles(ablations);
        let label = if ablations.is_empty() {
            "full".to_string()
        } else {
            ablations.iter().map(|a| a.label()).collect::<Vec<_>>().join("+")
        };
        EvalOptions {
            label,
            gate: self.gate.clone(),
            coarsen: self.coarsen.clone(),
            retrieval: self.retrieval.clone(),
            window_capacity: self.window_size,
            phase_one,
            phase_two,
        }
    }
}
