//! End-to-end runs: retrieve → render → extract → parse → score.
//!
//! A run is fully described by an [`ExperimentRunSpec`]. With a pure extractor
//! (oracles or the random baseline) the report is a deterministic function of
//! the spec, independent of thread scheduling.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_kb, downscale_kb, load_dataset, AnnotatedSentence, Dataset, DatasetFormat, KnowledgeBase, Split, Triplet};
use crate::encoder::{encoder_from_config, fnv1a64, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::evaluation::{context_hit_probability, micro_f1, EvalReport};
use crate::extraction::{
    model_meta, oracle_extract, random_extract, sentence_rng, ExtractorKind, GenerationConfig, Generator,
    FALLBACK_CONTEXT_WINDOW,
};
use crate::parsing::parse_triplets;
use crate::prompting::{budget_for_context_window, render, template, PromptKind, ShotMode};
use crate::retriever::{ContextMode, RetrievedContext, Retriever, DEFAULT_N_KB};
use crate::vector_index::{build_index, ExampleEmbedMode, VectorIndex};

/// Prompting setting of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// Base prompt, no examples, no KB.
    Zero,
    /// Base prompt with the two fixed examples.
    Static2,
    /// Retrieved context triplets, no example sentences.
    Triplets,
    /// Retrieved (sentence, triplets) examples.
    Examples,
}

impl RunMode {
    pub fn shot_mode(self) -> ShotMode {
        match self {
            RunMode::Zero => ShotMode::Zero,
            RunMode::Static2 => ShotMode::StaticTwoShot,
            RunMode::Triplets => ShotMode::ContextTriplets,
            RunMode::Examples => ShotMode::Examples,
        }
    }

    pub fn context_mode(self) -> Option<ContextMode> {
        self.shot_mode().context_mode()
    }
}

impl std::str::FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(RunMode::Zero),
            "static2" => Ok(RunMode::Static2),
            "triplets" | "triplets-0.5shot" => Ok(RunMode::Triplets),
            "examples" | "examples-fewshot" => Ok(RunMode::Examples),
            other => Err(Error::InvalidArgument(format!("unknown run mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRunSpec {
    pub dataset_manifest: PathBuf,
    #[serde(default = "default_split")]
    pub split: Split,
    pub mode: RunMode,
    #[serde(default = "default_prompt")]
    pub prompt: PromptKind,
    #[serde(default = "default_n_kb")]
    pub n_kb: usize,
    #[serde(default = "default_scale")]
    pub kb_scale: f64,
    #[serde(default)]
    pub seed: u64,
    pub extractor: ExtractorKind,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub example_embed_mode: ExampleEmbedMode,
    /// Chat-completions base URL for the remote extractor.
    #[serde(default)]
    pub llm_url: Option<String>,
    /// Prompt character budget; derived from the model's context window when absent.
    #[serde(default)]
    pub prompt_budget: Option<usize>,
    /// Evaluate only the first `limit` sentences of the split.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_split() -> Split {
    Split::Test
}
fn default_prompt() -> PromptKind {
    PromptKind::Base
}
fn default_n_kb() -> usize {
    DEFAULT_N_KB
}
fn default_scale() -> f64 {
    1.0
}

impl ExperimentRunSpec {
    pub fn new(dataset_manifest: impl Into<PathBuf>, mode: RunMode, extractor: ExtractorKind) -> Self {
        ExperimentRunSpec {
            dataset_manifest: dataset_manifest.into(),
            split: default_split(),
            mode,
            prompt: default_prompt(),
            n_kb: default_n_kb(),
            kb_scale: default_scale(),
            seed: 0,
            extractor,
            generation: GenerationConfig::default(),
            encoder: EncoderConfig::default(),
            example_embed_mode: ExampleEmbedMode::default(),
            llm_url: None,
            prompt_budget: None,
            limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_kb == 0 {
            return Err(Error::InvalidArgument("N_KB must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.kb_scale) {
            return Err(Error::InvalidArgument(format!("KB scale {} outside [0, 1]", self.kb_scale)));
        }
        self.generation.validate()?;
        self.encoder.validate()
    }

    pub fn budget(&self) -> usize {
        self.prompt_budget.unwrap_or_else(|| {
            let window = model_meta(&self.generation.model)
                .map(|m| m.context_window)
                .unwrap_or(FALLBACK_CONTEXT_WINDOW);
            budget_for_context_window(window, self.generation.max_output_tokens as usize)
        })
    }

    /// Stable identifier derived from the spec contents.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a64(json.as_bytes()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

/// Everything recorded about one evaluated sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceLog {
    pub index: usize,
    pub text: String,
    pub context: Vec<Triplet>,
    pub prompt: String,
    pub prompt_truncated: bool,
    pub raw_output: Option<String>,
    pub malformed_lines: usize,
    pub predicted: Vec<Triplet>,
    /// Set when the generator failed; the sentence is scored as an empty prediction.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub sentences: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Context hit probability of the contexts shown to the extractor.
    pub context_hit_p: f64,
    pub kb_examples: usize,
    pub kb_triplets: usize,
    pub failed_sentences: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub spec: ExperimentRunSpec,
    pub report: EvalReport,
    pub summary: RunSummary,
    pub sentences: Vec<SentenceLog>,
}

impl RunOutput {
    /// Writes `report.json`, `summary.json`, `sentences.jsonl` and `spec.json` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        write("report.json", self.report.to_json()?)?;
        write("summary.json", serde_json::to_string_pretty(&self.summary)?)?;
        write("spec.json", serde_json::to_string_pretty(&self.spec)?)?;
        let path = dir.join("sentences.jsonl");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for s in &self.sentences {
            serde_json::to_writer(&mut out, s)?;
            out.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Loads the dataset named in the spec and runs it.
pub fn run_experiment(spec: &ExperimentRunSpec, generator: Option<&dyn Generator>) -> Result<RunOutput> {
    let dataset = load_dataset(&spec.dataset_manifest, DatasetFormat::Jsonl)?;
    run_on_dataset(spec, &dataset, generator)
}

/// Builds the KB from train + validation, downscales it to `spec.kb_scale`, and runs.
pub fn run_on_dataset(spec: &ExperimentRunSpec, dataset: &Dataset, generator: Option<&dyn Generator>) -> Result<RunOutput> {
    let full = build_kb(&dataset.train, &dataset.validation)?;
    let kb = if spec.kb_scale < 1.0 {
        downscale_kb(&full, spec.kb_scale, spec.seed)?
    } else {
        full
    };
    run_with_kb(spec, dataset, &kb, generator)
}

/// Runs against an already prepared KB.
pub fn run_with_kb(
    spec: &ExperimentRunSpec,
    dataset: &Dataset,
    kb: &KnowledgeBase,
    generator: Option<&dyn Generator>,
) -> Result<RunOutput> {
    let encoder = encoder_from_config(&spec.encoder)?;
    run_with_encoder(spec, dataset, kb, encoder.as_ref(), generator)
}

/// Like [`run_with_kb`] with a caller-supplied encoder; `spec.encoder` is not consulted.
pub fn run_with_encoder(
    spec: &ExperimentRunSpec,
    dataset: &Dataset,
    kb: &KnowledgeBase,
    encoder: &dyn Encoder,
    generator: Option<&dyn Generator>,
) -> Result<RunOutput> {
    spec.validate()?;
    let generator = match (spec.extractor, generator) {
        (ExtractorKind::RemoteLlm, None) => {
            return Err(Error::InvalidArgument("the llm extractor needs a generator".into()))
        }
        (ExtractorKind::RemoteLlm, Some(g)) => Some(g),
        _ => None,
    };
    let index = match spec.mode.context_mode() {
        Some(mode) if !kb.is_empty() => Some(build_index(kb, mode.node_kind(), spec.example_embed_mode, encoder)?),
        _ => None,
    };
    run_prepared(spec, dataset, kb, index.as_ref(), encoder, generator)
}

fn run_prepared(
    spec: &ExperimentRunSpec,
    dataset: &Dataset,
    kb: &KnowledgeBase,
    index: Option<&VectorIndex>,
    encoder: &dyn Encoder,
    generator: Option<&dyn Generator>,
) -> Result<RunOutput> {
    let retriever = index.map(|idx| Retriever::new(idx, encoder)).transpose()?;
    let split = dataset.split(spec.split);
    let sentences = &split[..spec.limit.unwrap_or(split.len()).min(split.len())];
    let tpl = template(spec.prompt, spec.mode.shot_mode());
    let budget = spec.budget();
    let max_triplets = dataset.max_triplets;

    let process = |(i, sentence): (usize, &AnnotatedSentence)| -> Result<SentenceLog> {
        let context: Option<RetrievedContext> = match (spec.mode.context_mode(), &retriever) {
            (Some(_), Some(r)) => Some(r.retrieve(&sentence.text, spec.n_kb)?),
            (Some(mode), None) => Some(RetrievedContext::empty(mode, spec.n_kb)),
            (None, _) => None,
        };
        let prompt = render(&tpl, &sentence.text, max_triplets, context.as_ref(), budget)?;
        let shown: Vec<Triplet> = context
            .as_ref()
            .map(|c| c.truncated(prompt.context_items_included).triplets())
            .unwrap_or_default();

        let mut log = SentenceLog {
            index: i,
            text: sentence.text.clone(),
            context: shown.clone(),
            prompt: prompt.rendered.clone(),
            prompt_truncated: prompt.truncated,
            raw_output: None,
            malformed_lines: 0,
            predicted: Vec::new(),
            error: None,
        };
        match spec.extractor {
            ExtractorKind::RemoteLlm => {
                let g = generator.expect("checked above");
                match g.generate(&prompt, &spec.generation) {
                    Ok(raw) => {
                        let parsed = parse_triplets(&raw, max_triplets);
                        log.malformed_lines = parsed.malformed_lines;
                        log.predicted = parsed.triplets;
                        log.raw_output = Some(raw);
                    }
                    Err(e) => {
                        log::warn!("sentence {i}: generation failed: {e}");
                        log.error = Some(e.to_string());
                    }
                }
            }
            ExtractorKind::RandomBaseline => {
                let mut rng = sentence_rng(spec.seed, 0, i as u64);
                log.predicted = random_extract(&shown, max_triplets, &mut rng);
            }
            oracle => {
                log.predicted = oracle_extract(oracle, &sentence.gold, &shown, max_triplets)?;
            }
        }
        Ok(log)
    };

    let threads = if spec.extractor.is_pure() { 0 } else { spec.generation.max_in_flight };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let logs: Vec<SentenceLog> = pool.install(|| {
        sentences
            .par_iter()
            .enumerate()
            .map(process)
            .collect::<Result<Vec<_>>>()
    })?;

    let predictions: Vec<&[Triplet]> = logs.iter().map(|l| l.predicted.as_slice()).collect();
    let gold: Vec<&[Triplet]> = sentences.iter().map(|s| s.gold.as_slice()).collect();
    let report = micro_f1(&predictions, &gold)?;
    let contexts: Vec<&[Triplet]> = logs.iter().map(|l| l.context.as_slice()).collect();
    let summary = RunSummary {
        run_id: spec.run_id(),
        sentences: sentences.len(),
        f1: report.f1,
        precision: report.precision,
        recall: report.recall,
        context_hit_p: context_hit_probability(&contexts, &gold)?,
        kb_examples: kb.examples.len(),
        kb_triplets: kb.triplets.len(),
        failed_sentences: logs.iter().filter(|l| l.error.is_some()).map(|l| l.index).collect(),
    };
    Ok(RunOutput {
        spec: spec.clone(),
        report,
        summary,
        sentences: logs,
    })
}
