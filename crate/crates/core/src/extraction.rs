//! Triplet generation: the remote chat-completions client, oracle extractors
//! used as deterministic test doubles, and the random baseline together with
//! its exact, Monte Carlo and closed-form performance estimates.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Triplet;
use crate::error::{Error, Result};
use crate::http::{excerpt, HttpTransport, InFlightLimit, RetryPolicy, UreqTransport, API_KEY_ENV};
use crate::prompting::PromptInstance;

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            model: "llama-65b".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: 256,
            timeout_secs: 120,
            max_retries: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidArgument("max_in_flight must be >= 1".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base_ms: self.backoff_base_ms,
            backoff_max_ms: self.backoff_base_ms.saturating_mul(16),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtractorKind {
    #[serde(rename = "llm")]
    RemoteLlm,
    #[serde(rename = "oracle-gold")]
    OracleGold,
    #[serde(rename = "oracle-prefix")]
    OracleContextPrefix,
    #[serde(rename = "random")]
    RandomBaseline,
}

impl ExtractorKind {
    /// Pure extractors are deterministic functions of their inputs and seed.
    pub fn is_pure(self) -> bool {
        !matches!(self, ExtractorKind::RemoteLlm)
    }
}

impl std::str::FromStr for ExtractorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "llm" | "remote" => Ok(ExtractorKind::RemoteLlm),
            "oracle-gold" => Ok(ExtractorKind::OracleGold),
            "oracle-prefix" => Ok(ExtractorKind::OracleContextPrefix),
            "random" => Ok(ExtractorKind::RandomBaseline),
            other => Err(Error::InvalidArgument(format!("unknown extractor `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelMeta {
    pub id: &'static str,
    /// Parameter count in billions.
    pub parameters_b: f64,
    /// Context window in tokens.
    pub context_window: usize,
}

/// Sizes and context windows of the reference models. GPT-3.5 and GPT-4
/// sizes are unofficial estimates.
pub const MODELS: &[ModelMeta] = &[
    ModelMeta { id: "gpt2-base", parameters_b: 0.1, context_window: 1024 },
    ModelMeta { id: "gpt2-xl", parameters_b: 1.5, context_window: 1024 },
    ModelMeta { id: "falcon-7b", parameters_b: 7.0, context_window: 2048 },
    ModelMeta { id: "falcon-40b", parameters_b: 40.0, context_window: 2048 },
    ModelMeta { id: "llama-13b", parameters_b: 13.0, context_window: 2048 },
    ModelMeta { id: "llama-65b", parameters_b: 65.0, context_window: 2048 },
    ModelMeta { id: "gpt-3.5", parameters_b: 175.0, context_window: 4096 },
    ModelMeta { id: "gpt-4", parameters_b: 1760.0, context_window: 8192 },
];

/// Context window assumed for models missing from [`MODELS`].
pub const FALLBACK_CONTEXT_WINDOW: usize = 4096;

pub fn model_meta(id: &str) -> Option<&'static ModelMeta> {
    MODELS.iter().find(|m| m.id.eq_ignore_ascii_case(id))
}

/// Produces a raw completion for a rendered prompt.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &PromptInstance, config: &GenerationConfig) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub run_id: String,
    pub seq: usize,
    pub model: String,
    pub attempts: u32,
    pub status: Option<u16>,
    pub prompt: String,
    pub response: Option<String>,
    pub error: Option<String>,
}

/// Client for an OpenAI-compatible `POST {base_url}/chat/completions` endpoint.
pub struct ChatClient {
    base_url: String,
    api_key: Option<String>,
    run_id: String,
    transport: Arc<dyn HttpTransport>,
    limit: InFlightLimit,
    log: Mutex<Vec<RequestRecord>>,
}

impl ChatClient {
    pub fn new(
        base_url: impl Into<String>,
        api_key: Option<String>,
        run_id: impl Into<String>,
        transport: Arc<dyn HttpTransport>,
        max_in_flight: usize,
    ) -> Self {
        ChatClient {
            base_url: base_url.into(),
            api_key,
            run_id: run_id.into(),
            transport,
            limit: InFlightLimit::new(max_in_flight),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Real HTTP transport, credential from `KGTE_API_KEY`.
    pub fn from_env(base_url: impl Into<String>, run_id: impl Into<String>, max_in_flight: usize) -> Self {
        Self::new(
            base_url,
            std::env::var(API_KEY_ENV).ok(),
            run_id,
            Arc::new(UreqTransport::new()),
            max_in_flight,
        )
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    /// Snapshot of the append-only request log.
    pub fn request_log(&self) -> Vec<RequestRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn append(&self, mut record: RequestRecord) {
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        record.seq = log.len();
        log.push(record);
    }

    pub fn request_body(prompt: &str, config: &GenerationConfig) -> serde_json::Value {
        serde_json::json!({
            "model": config.model,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
            "messages": [{"role": "user", "content": prompt}],
        })
    }

    fn attempt(&self, body: &serde_json::Value, config: &GenerationConfig) -> Result<(u16, String)> {
        let _permit = self.limit.acquire();
        let resp = self
            .transport
            .post_json(
                &self.endpoint(),
                self.api_key.as_deref(),
                body,
                Duration::from_secs(config.timeout_secs),
            )
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
        Ok((resp.status, resp.body))
    }
}

fn first_choice_content(body: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(body)
        .map_err(|e| Error::InvalidResponse(format!("chat completion: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| Error::InvalidResponse("missing choices[0].message.content".into()))
}

impl Generator for ChatClient {
    fn generate(&self, prompt: &PromptInstance, config: &GenerationConfig) -> Result<String> {
        config.validate()?;
        let body = Self::request_body(&prompt.rendered, config);
        let mut attempts = 0;
        let outcome = config.retry_policy().run(|_| {
            attempts += 1;
            self.attempt(&body, config)
        });
        let result = outcome.and_then(|(status, raw)| Ok((status, first_choice_content(&raw)?)));
        let record = RequestRecord {
            run_id: self.run_id.clone(),
            seq: 0,
            model: config.model.clone(),
            attempts,
            status: match &result {
                Ok((s, _)) => Some(*s),
                Err(Error::Api { status, .. }) => Some(*status),
                Err(_) => None,
            },
            prompt: prompt.rendered.clone(),
            response: result.as_ref().ok().map(|(_, c)| c.clone()),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        log::debug!(
            "run {} model {} attempts {} status {:?}",
            self.run_id,
            record.model,
            record.attempts,
            record.status
        );
        self.append(record);
        result.map(|(_, content)| content)
    }
}

/// Per-sentence generator: independent of scheduling, derived only from the
/// master seed, a stream label (e.g. trial number) and the sentence index.
pub fn sentence_rng(master_seed: u64, stream: u64, sentence_index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(sentence_index);
    rng
}

/// The random baseline: draw `n` uniformly from `1..=max_triplets`, then
/// `min(n, |context|)` distinct context triplets uniformly.
pub fn random_extract<R: Rng + ?Sized>(context: &[Triplet], max_triplets: usize, rng: &mut R) -> Vec<Triplet> {
    if context.is_empty() || max_triplets == 0 {
        return Vec::new();
    }
    let n = rng.gen_range(1..=max_triplets);
    let m = n.min(context.len());
    index::sample(rng, context.len(), m)
        .into_iter()
        .map(|i| context[i].clone())
        .collect()
}

/// Empirical approximation `(p / n_kb)^n` of the random baseline's F1.
pub fn random_f1_closed_form(p: f64, n_kb: usize, n: usize) -> f64 {
    (p / n_kb as f64).powi(n as i32)
}

/// `oracle_gold` returns the gold set; `oracle_context_prefix` the first
/// `min(max_triplets, |context|)` context triplets.
pub fn oracle_extract(kind: ExtractorKind, gold: &[Triplet], context: &[Triplet], max_triplets: usize) -> Result<Vec<Triplet>> {
    match kind {
        ExtractorKind::OracleGold => Ok(gold.to_vec()),
        ExtractorKind::OracleContextPrefix => Ok(context.iter().take(max_triplets).cloned().collect()),
        other => Err(Error::InvalidArgument(format!("{other:?} is not an oracle extractor"))),
    }
}

/// Single-sentence F1 from set sizes: `2·tp / (|pred| + |gold|)`, 0 when both are empty.
pub fn set_f1(tp: usize, n_pred: usize, n_gold: usize) -> f64 {
    if n_pred + n_gold == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (n_pred + n_gold) as f64
    }
}

/// Largest context for which [`exhaustive_expected_f1`] enumerates outcomes.
pub const EXHAUSTIVE_MAX_CONTEXT: usize = 12;

/// Exact expected per-sentence F1 of [`random_extract`], by enumerating every
/// subset of the context. `None` when the context exceeds
/// [`EXHAUSTIVE_MAX_CONTEXT`] or holds duplicates.
pub fn exhaustive_expected_f1(context: &[Triplet], gold: &[Triplet], max_triplets: usize) -> Option<f64> {
    if context.len() > EXHAUSTIVE_MAX_CONTEXT || max_triplets == 0 {
        return None;
    }
    let distinct: HashSet<&Triplet> = context.iter().collect();
    if distinct.len() != context.len() {
        return None;
    }
    let gold_set: HashSet<&Triplet> = gold.iter().collect();
    if context.is_empty() {
        return Some(0.0);
    }
    let c = context.len();
    let gold_mask: u32 = context
        .iter()
        .enumerate()
        .filter(|(_, t)| gold_set.contains(t))
        .fold(0, |m, (i, _)| m | (1 << i));

    // Sum of per-subset F1 and subset count, grouped by subset size.
    let mut sum_by_size = vec![0.0f64; c + 1];
    let mut count_by_size = vec![0u64; c + 1];
    for mask in 0u32..(1 << c) {
        let size = mask.count_ones() as usize;
        let tp = (mask & gold_mask).count_ones() as usize;
        sum_by_size[size] += set_f1(tp, size, gold_set.len());
        count_by_size[size] += 1;
    }
    let total: f64 = (1..=max_triplets)
        .map(|n| {
            let m = n.min(c);
            sum_by_size[m] / count_by_size[m] as f64
        })
        .sum();
    Some(total / max_triplets as f64)
}

/// Mean per-sentence F1 of [`random_extract`] over `trials` seeded draws.
pub fn monte_carlo_expected_f1(context: &[Triplet], gold: &[Triplet], max_triplets: usize, trials: u64, seed: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let gold_set: HashSet<&Triplet> = gold.iter().collect();
    let mut rng = sentence_rng(seed, 0, 0);
    let mut total = 0.0;
    for _ in 0..trials {
        let pred = random_extract(context, max_triplets, &mut rng);
        let tp = pred.iter().filter(|t| gold_set.contains(t)).count();
        total += set_f1(tp, pred.len(), gold_set.len());
    }
    total / trials as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpResponse, TransportFailure};
    use crate::prompting::{render, template, PromptKind, ShotMode};

    fn t(s: &str) -> Triplet {
        Triplet::new(s, "r", "o").unwrap()
    }

    fn ctx(n: usize) -> Vec<Triplet> {
        (0..n).map(|i| t(&format!("c{i}"))).collect()
    }

    #[test]
    fn default_temperature() {
        assert_eq!(GenerationConfig::default().temperature, 0.1);
        let bad = GenerationConfig {
            temperature: -0.5,
            ..GenerationConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn model_table() {
        assert_eq!(MODELS.len(), 8);
        let llama = model_meta("LLaMA-65b").unwrap();
        assert_eq!(llama.parameters_b, 65.0);
        assert_eq!(llama.context_window, 2048);
        assert_eq!(model_meta("gpt-4").unwrap().context_window, 8192);
        assert!(MODELS.iter().all(|m| m.parameters_b > 0.0));
    }

    #[test]
    fn closed_form_values() {
        assert_eq!(random_f1_closed_form(1.0, 1, 1), 1.0);
        assert_eq!(random_f1_closed_form(0.0, 5, 3), 0.0);
        assert!((random_f1_closed_form(0.8, 5, 2) - 0.0256).abs() < 1e-15);
    }

    #[test]
    fn random_extract_forced_perfect() {
        // With max_triplets = 1 and a single-item context, the draw is forced.
        let gold = ctx(1);
        let mut rng = sentence_rng(1, 0, 0);
        assert_eq!(random_extract(&gold, 1, &mut rng), gold);
    }

    #[test]
    fn random_extract_subset_and_bounded() {
        let context = ctx(8);
        for i in 0..500 {
            let mut rng = sentence_rng(42, 0, i);
            let out = random_extract(&context, 3, &mut rng);
            assert!(!out.is_empty() && out.len() <= 3);
            let distinct: HashSet<_> = out.iter().collect();
            assert_eq!(distinct.len(), out.len());
            assert!(out.iter().all(|x| context.contains(x)));
        }
        let mut rng = sentence_rng(42, 0, 0);
        assert!(random_extract(&[], 3, &mut rng).is_empty());
    }

    #[test]
    fn sentence_rng_is_reproducible() {
        let context = ctx(10);
        let a: Vec<_> = (0..20).map(|i| random_extract(&context, 4, &mut sentence_rng(9, 1, i))).collect();
        let b: Vec<_> = (0..20).rev().map(|i| random_extract(&context, 4, &mut sentence_rng(9, 1, i))).collect();
        let b: Vec<_> = b.into_iter().rev().collect();
        assert_eq!(a, b);
        assert_ne!(
            random_extract(&context, 4, &mut sentence_rng(9, 1, 0)),
            random_extract(&context, 4, &mut sentence_rng(9, 2, 0))
        );
    }

    #[test]
    fn exhaustive_one_gold_in_five() {
        // Five equiprobable single-triplet draws, one of them correct: F1 = 1/5.
        let context = ctx(5);
        let gold = vec![context[2].clone()];
        let e = exhaustive_expected_f1(&context, &gold, 1).unwrap();
        assert!((e - 0.2).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_refuses_large_or_duplicate_context() {
        assert!(exhaustive_expected_f1(&ctx(13), &ctx(1), 2).is_none());
        let dup = vec![t("a"), t("a")];
        assert!(exhaustive_expected_f1(&dup, &ctx(1), 2).is_none());
        assert_eq!(exhaustive_expected_f1(&[], &ctx(1), 2), Some(0.0));
    }

    #[test]
    fn oracles() {
        let gold = ctx(2);
        let context = ctx(4);
        assert_eq!(oracle_extract(ExtractorKind::OracleGold, &gold, &context, 1).unwrap(), gold);
        assert_eq!(
            oracle_extract(ExtractorKind::OracleContextPrefix, &gold, &context, 3).unwrap(),
            context[..3].to_vec()
        );
        assert!(oracle_extract(ExtractorKind::RandomBaseline, &gold, &context, 3).is_err());
    }

    struct Scripted {
        replies: Mutex<Vec<std::result::Result<HttpResponse, TransportFailure>>>,
        seen: Mutex<Vec<(String, Option<String>, serde_json::Value)>>,
    }

    impl Scripted {
        fn new(replies: Vec<std::result::Result<HttpResponse, TransportFailure>>) -> Arc<Self> {
            Arc::new(Scripted {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(
            &self,
            url: &str,
            bearer: Option<&str>,
            body: &serde_json::Value,
            _timeout: Duration,
        ) -> std::result::Result<HttpResponse, TransportFailure> {
            self.seen
                .lock()
                .unwrap()
                .push((url.to_string(), bearer.map(str::to_string), body.clone()));
            self.replies.lock().unwrap().remove(0)
        }
    }

    fn ok(content: &str) -> std::result::Result<HttpResponse, TransportFailure> {
        Ok(HttpResponse {
            status: 200,
            body: serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string(),
        })
    }

    fn prompt() -> PromptInstance {
        render(&template(PromptKind::Base, ShotMode::Zero), "Alan Bean is American.", 7, None, 100_000).unwrap()
    }

    fn fast_config(max_retries: u32) -> GenerationConfig {
        GenerationConfig {
            max_retries,
            backoff_base_ms: 0,
            ..GenerationConfig::default()
        }
    }

    #[test]
    fn generate_passes_content_through() {
        let transport = Scripted::new(vec![ok("(alan bean, nationality, united states)")]);
        let client = ChatClient::new("http://llm.local/v1/", Some("k".into()), "run-1", transport.clone(), 2);
        let out = client.generate(&prompt(), &fast_config(0)).unwrap();
        assert_eq!(out, "(alan bean, nationality, united states)");

        let seen = transport.seen.lock().unwrap();
        let (url, bearer, body) = &seen[0];
        assert_eq!(url, "http://llm.local/v1/chat/completions");
        assert_eq!(bearer.as_deref(), Some("k"));
        assert_eq!(body["temperature"], 0.1);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], prompt().rendered.as_str());

        let log = client.request_log();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].run_id, "run-1");
        assert_eq!(log[0].status, Some(200));
    }

    #[test]
    fn timeout_retried_once_then_error() {
        let transport = Scripted::new(vec![
            Err(TransportFailure("timed out".into())),
            Err(TransportFailure("timed out".into())),
        ]);
        let client = ChatClient::new("http://x", None, "r", transport.clone(), 1);
        let err = client.generate(&prompt(), &fast_config(1)).unwrap_err();
        assert!(matches!(err, Error::Transport { attempts: 2, .. }));
        assert_eq!(transport.seen.lock().unwrap().len(), 2);
        assert_eq!(client.request_log()[0].attempts, 2);
    }

    #[test]
    fn api_error_carries_status_and_excerpt() {
        let transport = Scripted::new(vec![Ok(HttpResponse {
            status: 401,
            body: "unauthorized".into(),
        })]);
        let client = ChatClient::new("http://x", None, "r", transport, 1);
        match client.generate(&prompt(), &fast_config(3)) {
            Err(Error::Api { status, body }) => {
                assert_eq!(status, 401);
                assert_eq!(body, "unauthorized");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rate_limit_then_success() {
        let transport = Scripted::new(vec![
            Ok(HttpResponse {
                status: 429,
                body: "slow down".into(),
            }),
            ok("(a, r, b)"),
        ]);
        let client = ChatClient::new("http://x", None, "r", transport, 1);
        assert_eq!(client.generate(&prompt(), &fast_config(2)).unwrap(), "(a, r, b)");
    }

    #[test]
    fn malformed_response_is_reported() {
        let transport = Scripted::new(vec![Ok(HttpResponse {
            status: 200,
            body: "{\"choices\": []}".into(),
        })]);
        let client = ChatClient::new("http://x", None, "r", transport, 1);
        assert!(matches!(
            client.generate(&prompt(), &fast_config(0)),
            Err(Error::InvalidResponse(_))
        ));
    }
}
