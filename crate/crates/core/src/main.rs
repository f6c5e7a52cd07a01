use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use kgte::analysis::{
    linear_fit, log_param_fit, random_model_study, read_xy_csv, run_ablation, write_random_study_csv, AblationSetup,
    RandomStudyConfig, DEFAULT_SCALES,
};
use kgte::corpus::{build_kb, downscale_kb, load_dataset, load_split, DatasetFormat, KnowledgeBase, Split};
use kgte::encoder::{encoder_from_config, EncoderConfig, EncoderProvider, DEFAULT_DIMENSION};
use kgte::evaluation::{micro_f1, sweep_context_quality};
use kgte::experiment::{run_experiment, run_with_kb, ExperimentRunSpec, RunMode};
use kgte::extraction::{ChatClient, ExtractorKind, Generator};
use kgte::prompting::{catalog_markdown, export_catalog, PromptKind};
use kgte::retriever::{ContextMode, Retriever, DEFAULT_N_KB};
use kgte::vector_index::{build_index, load_index_for, save_index, ExampleEmbedMode, NodeKind};
use kgte::{Error, Result, Triplet};

/// Knowledge-base augmented triplet extraction toolkit.
#[derive(Parser)]
#[command(name = "kgte", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset and print its statistics.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: DatasetFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a vector index over the (optionally downscaled) KB.
    Index {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "triplet")]
        kind: NodeKind,
        #[arg(long, default_value = "sentence")]
        embed_mode: ExampleEmbedMode,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve context for each sentence of a split (JSONL output).
    Retrieve {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_N_KB)]
        nkb: usize,
        #[arg(long)]
        mode: Option<ContextMode>,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run retrieval, prompting, extraction and scoring end to end.
    Extract(ExtractArgs),
    /// Score a prediction file against a gold file.
    Eval {
        /// JSONL, one record per sentence with a `triplets` (or `predicted`) array.
        #[arg(long)]
        pred: PathBuf,
        /// Dataset-format JSONL aligned line by line with `--pred`.
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Context hit probability P(N_KB) over a list of N_KB values (CSV).
    SweepP {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "triplets")]
        mode: ContextMode,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        nkb_list: Vec<usize>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value = "sentence")]
        embed_mode: ExampleEmbedMode,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KB downscaling ablation: P_S and F1 per scale, then a linear fit.
    Ablate {
        #[command(flatten)]
        run: ExtractArgs,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALES.to_vec())]
        scales: Vec<f64>,
    },
    /// Least-squares fit of a two-column CSV with header.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Fit against the natural log of x.
        #[arg(long)]
        log_x: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random baseline: Monte Carlo, closed-form and exhaustive F1 per N_KB (CSV).
    RandomStudy {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "triplets")]
        mode: ContextMode,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8,9,10")]
        nkb_list: Vec<usize>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        encoder: EncoderArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the prompt catalog.
    Prompts {
        /// Directory for one `.txt` file per template.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the catalog as a markdown document.
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct EncoderArgs {
    #[arg(long, default_value_t = DEFAULT_DIMENSION)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    ngram_min: usize,
    #[arg(long, default_value_t = 5)]
    ngram_max: usize,
    /// Use an external embeddings endpoint instead of the hashed encoder.
    #[arg(long, requires = "embed_model")]
    embed_url: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
}

impl EncoderArgs {
    fn config(&self) -> EncoderConfig {
        match (&self.embed_url, &self.embed_model) {
            (Some(endpoint), Some(model)) => EncoderConfig {
                provider: EncoderProvider::External {
                    endpoint: endpoint.clone(),
                    model: model.clone(),
                },
                dimension: self.dim,
            },
            _ => EncoderConfig::hashed(self.dim, self.ngram_min, self.ngram_max),
        }
    }
}

#[derive(Args, Clone)]
struct ExtractArgs {
    /// Replay a stored run spec; other run flags are ignored.
    #[arg(long, conflicts_with = "manifest")]
    spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "spec")]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "zero")]
    mode: RunMode,
    #[arg(long, default_value = "base")]
    prompt: PromptKind,
    #[arg(long, default_value_t = DEFAULT_N_KB)]
    nkb: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "llm")]
    extractor: ExtractorKind,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long, default_value = "sentence")]
    embed_mode: ExampleEmbedMode,
    /// Chat-completions base URL; the key is read from KGTE_API_KEY.
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    /// Prompt character budget (defaults to the model's context window).
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[command(flatten)]
    encoder: EncoderArgs,
    #[arg(long)]
    out: PathBuf,
}

impl ExtractArgs {
    fn spec(&self) -> Result<ExperimentRunSpec> {
        if let Some(path) = &self.spec {
            return ExperimentRunSpec::load(path);
        }
        let manifest = self.manifest.clone().expect("enforced by clap");
        let mut spec = ExperimentRunSpec::new(manifest, self.mode, self.extractor);
        spec.prompt = self.prompt;
        spec.n_kb = self.nkb;
        spec.kb_scale = self.scale;
        spec.seed = self.seed;
        spec.split = self.split;
        spec.encoder = self.encoder.config();
        spec.example_embed_mode = self.embed_mode;
        spec.llm_url = self.llm_url.clone();
        spec.prompt_budget = self.budget;
        spec.limit = self.limit;
        if let Some(m) = &self.model {
            spec.generation.model = m.clone();
        }
        if let Some(t) = self.temperature {
            spec.generation.temperature = t;
        }
        if let Some(n) = self.max_in_flight {
            spec.generation.max_in_flight = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn client_for(spec: &ExperimentRunSpec) -> Result<Option<ChatClient>> {
    if spec.extractor != ExtractorKind::RemoteLlm {
        return Ok(None);
    }
    let url = spec
        .llm_url
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--llm-url is required for the llm extractor".into()))?;
    Ok(Some(ChatClient::from_env(url, spec.run_id(), spec.generation.max_in_flight)))
}

fn write_request_log(client: &ChatClient, dir: &Path) -> Result<()> {
    let path = dir.join("requests.jsonl");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut out = BufWriter::new(file);
    for record in client.request_log() {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| io_err(&path, e))?;
    }
    out.flush().map_err(|e| io_err(&path, e))
}

fn io_err(path: &Path, source: io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `body` to `out`, or stdout when absent.
fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::write(path, body).map_err(|e| io_err(path, e))
        }
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(body.as_bytes())
                .and_then(|_| if body.ends_with('\n') { Ok(()) } else { stdout.write_all(b"\n") })
                .map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn full_kb(manifest: &Path, scale: f64, seed: u64) -> Result<(kgte::Dataset, KnowledgeBase)> {
    let dataset = load_dataset(manifest, DatasetFormat::Jsonl)?;
    let kb = build_kb(&dataset.train, &dataset.validation)?;
    let kb = if scale < 1.0 { downscale_kb(&kb, scale, seed)? } else { kb };
    Ok((dataset, kb))
}

#[derive(Deserialize)]
struct PredictionRecord {
    #[serde(alias = "predicted")]
    triplets: Vec<Triplet>,
}

#[derive(Serialize)]
struct RetrievalRecord<'a> {
    index: usize,
    text: &'a str,
    #[serde(flatten)]
    context: kgte::RetrievedContext,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { manifest, format, out } => {
            let dataset = load_dataset(&manifest, format)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&dataset.stats())?)
        }
        Command::Index {
            manifest,
            kind,
            embed_mode,
            scale,
            seed,
            encoder,
            out,
        } => {
            let (_, kb) = full_kb(&manifest, scale, seed)?;
            let enc = encoder_from_config(&encoder.config())?;
            let index = build_index(&kb, kind, embed_mode, enc.as_ref())?;
            save_index(&index, &out)?;
            log::info!("wrote {} {} nodes to {}", index.len(), kind.name(), out.display());
            Ok(())
        }
        Command::Retrieve {
            index,
            manifest,
            split,
            nkb,
            mode,
            encoder,
            out,
        } => {
            let config = encoder.config();
            let index = load_index_for(&index, &config)?;
            if let Some(mode) = mode {
                index.ensure_kind(mode.node_kind())?;
            }
            let enc = encoder_from_config(&config)?;
            let retriever = Retriever::new(&index, enc.as_ref())?;
            let dataset = load_dataset(&manifest, DatasetFormat::Jsonl)?;
            let mut body = String::new();
            for (i, s) in dataset.split(split).iter().enumerate() {
                let record = RetrievalRecord {
                    index: i,
                    text: &s.text,
                    context: retriever.retrieve(&s.text, nkb)?,
                };
                body.push_str(&serde_json::to_string(&record)?);
                body.push('\n');
            }
            emit(out.as_deref(), &body)
        }
        Command::Extract(args) => {
            let spec = args.spec()?;
            let client = client_for(&spec)?;
            let output = run_experiment(&spec, client.as_ref().map(|c| c as &dyn Generator))?;
            output.write_artifacts(&args.out)?;
            if let Some(c) = &client {
                write_request_log(c, &args.out)?;
            }
            if !output.summary.failed_sentences.is_empty() {
                log::warn!("{} sentences failed generation", output.summary.failed_sentences.len());
            }
            emit(None, &serde_json::to_string_pretty(&output.summary)?)
        }
        Command::Eval { pred, gold, out } => {
            let gold = load_split(&gold)?;
            let raw = fs::read_to_string(&pred).map_err(|e| io_err(&pred, e))?;
            let mut predictions = Vec::new();
            for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                    path: pred.clone(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
                predictions.push(rec.triplets);
            }
            let gold: Vec<Vec<Triplet>> = gold.into_iter().map(|s| s.gold).collect();
            let report = micro_f1(&predictions, &gold)?;
            emit(out.as_deref(), &report.to_json()?)
        }
        Command::SweepP {
            manifest,
            mode,
            nkb_list,
            split,
            embed_mode,
            scale,
            seed,
            encoder,
            out,
        } => {
            let (dataset, kb) = full_kb(&manifest, scale, seed)?;
            let enc = encoder_from_config(&encoder.config())?;
            let sentences = dataset.split(split);
            let curve = if kb.is_empty() {
                sweep_context_quality(sentences, None, mode, &nkb_list, scale)?
            } else {
                let index = build_index(&kb, mode.node_kind(), embed_mode, enc.as_ref())?;
                let retriever = Retriever::new(&index, enc.as_ref())?;
                sweep_context_quality(sentences, Some(&retriever), mode, &nkb_list, scale)?
            };
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Ablate { run, scales } => {
            let base = run.spec()?;
            let mode = base
                .mode
                .context_mode()
                .ok_or_else(|| Error::InvalidArgument("ablation needs --mode triplets or examples".into()))?;
            let dataset = load_dataset(&base.dataset_manifest, DatasetFormat::Jsonl)?;
            let kb = build_kb(&dataset.train, &dataset.validation)?;
            let enc = encoder_from_config(&base.encoder)?;
            let client = client_for(&base)?;
            let split = dataset.split(base.split);
            let sentences = &split[..base.limit.unwrap_or(split.len()).min(split.len())];
            let setup = AblationSetup {
                kb: &kb,
                sentences,
                encoder: enc.as_ref(),
                mode,
                embed_mode: base.example_embed_mode,
                n_kb: base.n_kb,
                seed: base.seed,
            };
            let result = run_ablation(&setup, &scales, |sub_kb, scale, _p| {
                let mut spec = base.clone();
                spec.kb_scale = scale;
                let output = run_with_kb(&spec, &dataset, sub_kb, client.as_ref().map(|c| c as &dyn Generator))?;
                output.write_artifacts(&run.out.join(format!("scale-{scale}")))?;
                Ok(output.report.f1)
            })?;
            if let Some(c) = &client {
                write_request_log(c, &run.out)?;
            }
            let body = serde_json::to_string_pretty(&result)?;
            emit(Some(&run.out.join("ablation.json")), &body)?;
            emit(None, &body)
        }
        Command::Fit { input, log_x, out } => {
            let points = read_xy_csv(&input)?;
            let fit = if log_x { log_param_fit(&points)? } else { linear_fit(&points)? };
            emit(out.as_deref(), &serde_json::to_string_pretty(&fit)?)
        }
        Command::RandomStudy {
            manifest,
            mode,
            nkb_list,
            split,
            trials,
            seed,
            encoder,
            out,
        } => {
            let (dataset, kb) = full_kb(&manifest, 1.0, seed)?;
            let enc = encoder_from_config(&encoder.config())?;
            let index = build_index(&kb, mode.node_kind(), ExampleEmbedMode::SentenceOnly, enc.as_ref())?;
            let retriever = Retriever::new(&index, enc.as_ref())?;
            let config = RandomStudyConfig {
                n_kb_values: nkb_list,
                max_triplets: dataset.max_triplets,
                seed,
                trials,
            };
            let rows = random_model_study(dataset.split(split), &retriever, &config)?;
            let mut buf = Vec::new();
            write_random_study_csv(&rows, &mut buf)?;
            emit(out.as_deref(), &String::from_utf8_lossy(&buf))
        }
        Command::Prompts { out, markdown } => {
            if out.is_none() && markdown.is_none() {
                return emit(None, &catalog_markdown());
            }
            if let Some(dir) = out {
                export_catalog(&dir)?;
            }
            if let Some(path) = markdown {
                emit(Some(&path), &catalog_markdown())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({"error": {"kind": e.kind(), "message": e.to_string()}});
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
