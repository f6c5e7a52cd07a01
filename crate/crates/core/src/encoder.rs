//! Text embeddings for sentences and triplets.
//!
//! Two providers sit behind [`Encoder`]: a deterministic hashed character
//! n-gram encoder that needs nothing beyond this crate, and a client for an
//! external embeddings endpoint. Every vector leaves `encode` with unit L2
//! norm, so ranking by dot product is ranking by cosine similarity.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::Triplet;
use crate::error::{Error, Result};
use crate::http::{
    excerpt, HttpTransport, InFlightLimit, RetryPolicy, UreqTransport, API_KEY_ENV,
};

pub const DEFAULT_DIMENSION: usize = 384;
pub const DEFAULT_NGRAM_RANGE: (usize, usize) = (3, 5);

/// Allowed deviation of a stored vector's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// String form of a triplet fed to the encoder: `(subject, predicate, object)`.
pub fn triplet_to_string(t: &Triplet) -> String {
    t.to_string()
}

/// A unit-norm embedding.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// L2-normalizes `raw`. Zero and non-finite vectors are rejected.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::InvalidArgument(
                "cannot normalize a zero or non-finite vector".into(),
            ));
        }
        Ok(EmbeddingVector(
            raw.iter().map(|v| (v / norm) as f32).collect(),
        ))
    }

    /// Accepts stored values as-is when already unit norm, re-normalizing otherwise.
    pub fn from_stored(values: Vec<f32>) -> Result<Self> {
        let norm = values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if (norm - 1.0).abs() <= UNIT_NORM_TOLERANCE {
            Ok(EmbeddingVector(values))
        } else {
            let raw: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
            Self::normalized(&raw)
        }
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Dot product accumulated in `f64`, coordinate 0 upward. Both operands are
/// unit vectors, so this is their cosine similarity.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::DimensionMismatch {
            expected: a.dimension(),
            actual: b.dimension(),
        });
    }
    Ok(dot(a.as_slice(), b.as_slice()))
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |acc, (&x, &y)| acc + f64::from(x) * f64::from(y))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "provider", rename_all = "kebab-case")]
pub enum EncoderProvider {
    HashedNgram { ngram_min: usize, ngram_max: usize },
    External { endpoint: String, model: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    #[serde(flatten)]
    pub provider: EncoderProvider,
    pub dimension: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            provider: EncoderProvider::HashedNgram {
                ngram_min: DEFAULT_NGRAM_RANGE.0,
                ngram_max: DEFAULT_NGRAM_RANGE.1,
            },
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EncoderConfig {
    pub fn hashed(dimension: usize, ngram_min: usize, ngram_max: usize) -> Self {
        EncoderConfig {
            provider: EncoderProvider::HashedNgram {
                ngram_min,
                ngram_max,
            },
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(Error::InvalidArgument("encoder dimension must be > 0".into()));
        }
        if let EncoderProvider::HashedNgram {
            ngram_min,
            ngram_max,
        } = self.provider
        {
            if ngram_min == 0 || ngram_min > ngram_max {
                return Err(Error::InvalidArgument(format!(
                    "invalid n-gram range {ngram_min}..={ngram_max}"
                )));
            }
        }
        Ok(())
    }

    /// Identifies everything that affects the produced vectors. Stored in index files.
    pub fn fingerprint(&self) -> String {
        match &self.provider {
            EncoderProvider::HashedNgram {
                ngram_min,
                ngram_max,
            } => format!(
                "hashed-ngram/fnv1a64/d{}/n{}-{}",
                self.dimension, ngram_min, ngram_max
            ),
            EncoderProvider::External { model, .. } => {
                format!("external/{}/d{}", model, self.dimension)
            }
        }
    }
}

pub trait Encoder: Send + Sync {
    fn config(&self) -> &EncoderConfig;

    fn encode(&self, text: &str) -> Result<EmbeddingVector>;

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.encode(t)).collect()
    }

    fn dimension(&self) -> usize {
        self.config().dimension
    }

    fn fingerprint(&self) -> String {
        self.config().fingerprint()
    }
}

/// Builds the encoder described by `config`. The external provider reads its
/// credential from `KGTE_API_KEY`.
pub fn encoder_from_config(config: &EncoderConfig) -> Result<Box<dyn Encoder>> {
    config.validate()?;
    match &config.provider {
        EncoderProvider::HashedNgram { .. } => Ok(Box::new(HashedNgramEncoder::new(config.clone())?)),
        EncoderProvider::External { .. } => Ok(Box::new(ExternalEncoder::new(
            config.clone(),
            Arc::new(UreqTransport::new()),
            std::env::var(API_KEY_ENV).ok(),
        )?)),
    }
}

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Feature-hashing encoder over lowercased character n-grams.
#[derive(Debug, Clone)]
pub struct HashedNgramEncoder {
    config: EncoderConfig,
    ngram_min: usize,
    ngram_max: usize,
}

impl HashedNgramEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let EncoderProvider::HashedNgram {
            ngram_min,
            ngram_max,
        } = config.provider
        else {
            return Err(Error::InvalidArgument(
                "hashed n-gram encoder needs a hashed-ngram config".into(),
            ));
        };
        Ok(HashedNgramEncoder {
            config,
            ngram_min,
            ngram_max,
        })
    }

    /// Unnormalized bucket counts. A text shorter than the smallest n-gram
    /// contributes itself as a single gram.
    pub fn bucket_counts(&self, text: &str) -> Vec<f64> {
        let lowered = text.to_lowercase();
        let chars: Vec<char> = lowered.chars().collect();
        let d = self.config.dimension as u64;
        let mut counts = vec![0.0; self.config.dimension];
        let mut gram = String::new();
        let mut any = false;
        for n in self.ngram_min..=self.ngram_max {
            if n > chars.len() {
                break;
            }
            for window in chars.windows(n) {
                gram.clear();
                gram.extend(window);
                counts[(fnv1a64(gram.as_bytes()) % d) as usize] += 1.0;
                any = true;
            }
        }
        if !any {
            counts[(fnv1a64(lowered.as_bytes()) % d) as usize] += 1.0;
        }
        counts
    }
}

impl Encoder for HashedNgramEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        EmbeddingVector::normalized(&self.bucket_counts(text))
    }
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Client for an embeddings endpoint taking `{"model", "input": [...]}` and
/// answering `{"data": [{"embedding": [...]}, ...]}`.
pub struct ExternalEncoder {
    config: EncoderConfig,
    endpoint: String,
    model: String,
    transport: Arc<dyn HttpTransport>,
    api_key: Option<String>,
    pub retry: RetryPolicy,
    pub timeout: Duration,
    pub batch_size: usize,
    limit: InFlightLimit,
}

impl ExternalEncoder {
    pub fn new(
        config: EncoderConfig,
        transport: Arc<dyn HttpTransport>,
        api_key: Option<String>,
    ) -> Result<Self> {
        config.validate()?;
        let EncoderProvider::External { endpoint, model } = &config.provider else {
            return Err(Error::InvalidArgument(
                "external encoder needs an external config".into(),
            ));
        };
        Ok(ExternalEncoder {
            endpoint: endpoint.clone(),
            model: model.clone(),
            config,
            transport,
            api_key,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
            batch_size: 64,
            limit: InFlightLimit::new(4),
        })
    }

    pub fn with_max_in_flight(mut self, bound: usize) -> Self {
        self.limit = InFlightLimit::new(bound);
        self
    }

    fn request(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = serde_json::to_value(EmbeddingRequest {
            model: &self.model,
            input: texts,
        })?;
        let response = self.retry.run(|_| {
            let _permit = self.limit.acquire();
            let resp = self
                .transport
                .post_json(&self.endpoint, self.api_key.as_deref(), &body, self.timeout)
                .map_err(|f| Error::Transport {
                    attempts: 1,
                    message: f.0,
                })?;
            if !(200..300).contains(&resp.status) {
                return Err(Error::Api {
                    status: resp.status,
                    body: excerpt(&resp.body),
                });
            }
            Ok(resp.body)
        })?;
        let parsed: EmbeddingResponse = serde_json::from_str(&response)
            .map_err(|e| Error::InvalidResponse(format!("embeddings: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(Error::InvalidResponse(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed
            .data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.config.dimension {
                    return Err(Error::DimensionMismatch {
                        expected: self.config.dimension,
                        actual: d.embedding.len(),
                    });
                }
                EmbeddingVector::normalized(&d.embedding)
            })
            .collect()
    }
}

impl Encoder for ExternalEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn encode(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self.encode_batch(&[text.to_string()])?;
        Ok(out.remove(0))
    }

    fn encode_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(Error::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size.max(1)) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
