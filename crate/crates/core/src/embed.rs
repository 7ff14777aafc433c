//! Embedding function E(·) and cosine similarity.
//!
//! Two implementations sit behind the [`Embedder`] contract: a deterministic
//! offline hashed bag-of-words embedder (no network, no randomness) and a
//! remote client speaking a generic vector-embedding endpoint. Every vector
//! in the system is L2-normalized; texts with no tokens map to a fixed
//! canonical unit vector so cosine stays defined everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-norm dense vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// First basis vector of dimension `d`, the canonical embedding for
    /// texts that produce no tokens.
    pub fn canonical(d: usize) -> Self {
        let mut components = vec![0.0; d];
        components[0] = 1.0;
        Vector(components)
    }

    /// Validate finiteness and unit norm.
    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteEmbedding);
        }
        let norm = self.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::NotUnitNorm(norm));
        }
        Ok(())
    }
}

/// Cosine similarity of two equal-dimension vectors.
///
/// Computed in the fully normalized form, so `cosine(u, u)` is 1.0 up to
/// f64 rounding even when the stored norm carries small error.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::DimensionMismatch {
            expected: u.dimension(),
            got: v.dimension(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (a, b) in u.0.iter().zip(v.0.iter()) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// The embedding contract. Implementations must be deterministic within a
/// process configuration and safe to call from concurrent readers.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vector>;
}

/// Deterministic offline embedder: hashed bag of words.
///
/// Lowercases, splits on non-alphanumerics, hashes each term into one of
/// `dimension` buckets (FNV-1a, fixed keys), accumulates counts, and
/// L2-normalizes. Shared terms dominate the geometry, which is what the
/// gating and coarsening thresholds rely on.
#[derive(Debug, Clone)]
pub struct OfflineEmbedder {
    dimension: usize,
}

pub const DEFAULT_DIMENSION: usize = 256;

impl OfflineEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        OfflineEmbedder { dimension }
    }
}

impl Default for OfflineEmbedder {
    fn default() -> Self {
        OfflineEmbedder::new(DEFAULT_DIMENSION)
    }
}

/// FNV-1a, 64-bit. The std hasher is randomized per process; this one is
/// stable across runs so persisted graphs replay bit-identically.
fn fnv1a(term: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in term.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

impl Embedder for OfflineEmbedder {
    fn name(&self) -> &str {
        "offline"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        let mut components = vec![0.0; self.dimension];
        let mut any = false;
        for token in tokenize(text) {
            let bucket = (fnv1a(&token) % self.dimension as u64) as usize;
            components[bucket] += 1.0;
            any = true;
        }
        if !any {
            return Ok(Vector::canonical(self.dimension));
        }
        let norm = components.iter().map(|x| x * x).sum::<f64>().sqrt();
        for c in &mut components {
            *c /= norm;
        }
        Ok(Vector(components))
    }
}

/// Client for a remote embedding endpoint.
///
/// Wire format: POST `base_url` with `{"model": ..., "input": [texts]}`,
/// response `{"vectors": [[floats]]}`. The credential is read from the
/// environment variable named in the configuration. In-flight requests are
/// bounded by `max_in_flight`.
pub struct RemoteEmbedder {
    name: String,
    dimension: usize,
    base_url: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: crate::provider::InFlightGate,
}

impl RemoteEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        dimension: usize,
        api_key: Option<String>,
        max_in_flight: usize,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(RemoteEmbedder {
            name: format!("remote:{model}"),
            dimension,
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key,
            client,
            gate: crate::provider::InFlightGate::new(max_in_flight),
        })
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: Vec<&'a str>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

impl Embedder for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vector> {
        let _slot = self.gate.acquire();
        let mut request = self.client.post(&self.base_url).json(&EmbedRequest {
            model: &self.model,
            input: vec![text],
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| Error::Transport(e.to_string()))?;
        if !response.status().is_success() {
            return Err(Error::Transport(format!(
                "embedding endpoint returned {}",
                response.status()
            )));
        }
        let body: EmbedResponse = response
            .json()
            .map_err(|e| Error::ProviderParse(e.to_string()))?;
        let raw = body
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| Error::ProviderParse("empty vectors array".into()))?;
        if raw.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                got: raw.len(),
            });
        }
        // Providers do not all normalize; enforce the contract here.
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(Vector::canonical(self.dimension));
        }
        Ok(Vector(raw.into_iter().map(|x| x / norm).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_is_deterministic() {
        let e = OfflineEmbedder::default();
        assert_eq!(e.embed("alice met bob").unwrap(), e.embed("alice met bob").unwrap());
    }

    #[test]
    fn embed_empty_is_canonical_basis_vector() {
        let e = OfflineEmbedder::default();
        let v = e.embed("").unwrap();
        assert_eq!(v, Vector::canonical(256));
        v.validate().unwrap();
    }

    #[test]
    fn embed_output_is_unit_norm() {
        let e = OfflineEmbedder::default();
        for text in ["alice met bob", "x", "the the the", "!!!"] {
            let v = e.embed(text).unwrap();
            assert!((v.norm() - 1.0).abs() < NORM_TOLERANCE, "norm off for {text:?}");
        }
    }

    #[test]
    fn shared_terms_dominate_similarity() {
        // Bag-of-words: word order is irrelevant, so the reordered pair is
        // maximally similar while the unrelated pair shares nothing.
        let e = OfflineEmbedder::default();
        let a = e.embed("alice met bob").unwrap();
        let b = e.embed("bob met alice").unwrap();
        let c = e.embed("quarterly tax filing").unwrap();
        let same = cosine(&a, &b).unwrap();
        let diff = cosine(&a, &c).unwrap();
        assert!((same - 1.0).abs() < 1e-9);
        assert!(same > diff);
    }

    #[test]
    fn cosine_identity_and_orthogonality() {
        let e1 = Vector::canonical(4);
        let mut e2 = Vector(vec![0.0; 4]);
        e2.0[1] = 1.0;
        assert!((cosine(&e1, &e1).unwrap() - 1.0).abs() < 1e-9);
        assert!(cosine(&e1, &e2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cosine_known_value() {
        // (0.6, 0.8) · (1, 0) = 0.6 with both vectors unit-norm.
        let u = Vector(vec![0.6, 0.8]);
        let v = Vector(vec![1.0, 0.0]);
        assert!((cosine(&u, &v).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let u = Vector(vec![1.0]);
        let v = Vector(vec![1.0, 0.0]);
        assert!(matches!(
            cosine(&u, &v),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_is_symmetric() {
        let e = OfflineEmbedder::default();
        let pairs = [
            ("alice met bob", "bob met alice"),
            ("the meeting moved to 3pm", "meeting at 2pm"),
            ("", "quarterly tax filing"),
        ];
        for (x, y) in pairs {
            let u = e.embed(x).unwrap();
            let v = e.embed(y).unwrap();
            let uv = cosine(&u, &v).unwrap();
            let vu = cosine(&v, &u).unwrap();
            assert!((uv - vu).abs() < 1e-9);
        }
    }
}
