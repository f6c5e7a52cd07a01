//! Sentences, triplets, datasets and the knowledge base built from them.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Canonical surface form used for matching: trimmed, lowercased,
/// underscores read as spaces, whitespace runs collapsed.
pub fn normalize_surface(raw: &str) -> String {
    let lowered = raw.to_lowercase().replace('_', " ");
    let mut out = String::with_capacity(lowered.len());
    for word in lowered.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// A directed `(subject, predicate, object)` fact with normalized fields.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triplet {
    subject: String,
    predicate: String,
    object: String,
}

impl Triplet {
    /// Normalizes the three fields; fails if any of them ends up empty.
    pub fn new(subject: &str, predicate: &str, object: &str) -> Result<Self> {
        let t = Triplet {
            subject: normalize_surface(subject),
            predicate: normalize_surface(predicate),
            object: normalize_surface(object),
        };
        if t.subject.is_empty() || t.predicate.is_empty() || t.object.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "triplet ({subject:?}, {predicate:?}, {object:?}) has an empty field"
            )));
        }
        Ok(t)
    }

    pub fn subject(&self) -> &str {
        &self.subject
    }

    pub fn predicate(&self) -> &str {
        &self.predicate
    }

    pub fn object(&self) -> &str {
        &self.object
    }
}

/// `(subject, predicate, object)` with single `", "` separators.
impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

impl Serialize for Triplet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.subject, &self.predicate, &self.object].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Triplet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [s, p, o] = <[String; 3]>::deserialize(deserializer)?;
        Triplet::new(&s, &p, &o).map_err(D::Error::custom)
    }
}

/// Removes repeated triplets, keeping first occurrences in order.
pub fn dedup_triplets<I>(triplets: I) -> Vec<Triplet>
where
    I: IntoIterator<Item = Triplet>,
{
    let mut seen = HashSet::new();
    triplets
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

/// A sentence with its gold triplets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    #[serde(rename = "triplets")]
    pub gold: Vec<Triplet>,
}

impl AnnotatedSentence {
    /// Gold duplicates are dropped.
    pub fn new(text: impl Into<String>, gold: Vec<Triplet>) -> Self {
        AnnotatedSentence {
            text: text.into(),
            gold: dedup_triplets(gold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One JSON object per line: `{"text": ..., "triplets": [[s, p, o], ...]}`.
    Jsonl,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(DatasetFormat::Jsonl),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format `{other}`"
            ))),
        }
    }
}

/// Split file locations. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub test: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: Manifest =
            serde_json::from_str(&raw).map_err(|e| Error::Manifest {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [
            &mut manifest.train,
            &mut manifest.validation,
            &mut manifest.test,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<AnnotatedSentence>,
    pub validation: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
    pub relation_vocab: BTreeSet<String>,
    /// Largest gold set over all splits.
    pub max_triplets: usize,
    /// Mean gold set size over all splits.
    pub avg_triplets: f64,
}

impl Dataset {
    /// Assembles a dataset and computes its derived fields. Every split must be non-empty.
    pub fn from_splits(
        train: Vec<AnnotatedSentence>,
        validation: Vec<AnnotatedSentence>,
        test: Vec<AnnotatedSentence>,
    ) -> Result<Self> {
        for (split, records) in [
            (Split::Train, &train),
            (Split::Validation, &validation),
            (Split::Test, &test),
        ] {
            if records.is_empty() {
                return Err(Error::EmptySplit {
                    split: split.name().to_string(),
                });
            }
        }

        let all = train.iter().chain(&validation).chain(&test);
        let mut relation_vocab = BTreeSet::new();
        let mut max_triplets = 0;
        let mut total = 0usize;
        let mut count = 0usize;
        for record in all {
            for t in &record.gold {
                relation_vocab.insert(t.predicate().to_string());
            }
            max_triplets = max_triplets.max(record.gold.len());
            total += record.gold.len();
            count += 1;
        }

        Ok(Dataset {
            train,
            validation,
            test,
            relation_vocab,
            max_triplets,
            avg_triplets: total as f64 / count as f64,
        })
    }

    pub fn split(&self, split: Split) -> &[AnnotatedSentence] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            train: self.train.len(),
            validation: self.validation.len(),
            test: self.test.len(),
            relations: self.relation_vocab.len(),
            max_triplets: self.max_triplets,
            avg_triplets: self.avg_triplets,
        }
    }

    /// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, records) in [
            ("train.jsonl", &self.train),
            ("valid.jsonl", &self.validation),
            ("test.jsonl", &self.test),
        ] {
            save_split(&dir.join(name), records)?;
        }
        let manifest = Manifest {
            train: "train.jsonl".into(),
            validation: "valid.jsonl".into(),
            test: "test.jsonl".into(),
        };
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub relations: usize,
    pub max_triplets: usize,
    pub avg_triplets: f64,
}

#[derive(Deserialize)]
struct RawRecord {
    text: String,
    triplets: Vec<Vec<String>>,
}

fn parse_record(line: &str) -> std::result::Result<AnnotatedSentence, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.text.trim().is_empty() {
        return Err("empty text".into());
    }
    if raw.triplets.is_empty() {
        return Err("no gold triplets".into());
    }
    let mut gold = Vec::with_capacity(raw.triplets.len());
    for (i, fields) in raw.triplets.iter().enumerate() {
        let [s, p, o] = fields.as_slice() else {
            return Err(format!(
                "triplet {i} has {} fields, expected 3",
                fields.len()
            ));
        };
        gold.push(Triplet::new(s, p, o).map_err(|e| format!("triplet {i}: {e}"))?);
    }
    Ok(AnnotatedSentence::new(raw.text, gold))
}

/// Reads one split file. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_split(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record(line).map_err(|message| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn save_split(path: &Path, records: &[AnnotatedSentence]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Loads the three splits named by the manifest at `path`.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset> {
    match format {
        DatasetFormat::Jsonl => {
            let manifest = Manifest::load(path)?;
            let train = load_split(&manifest.train)?;
            let validation = load_split(&manifest.validation)?;
            let test = load_split(&manifest.test)?;
            Dataset::from_splits(train, validation, test)
        }
    }
}

/// KB triplets plus the examples they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub triplets: Vec<Triplet>,
    pub examples: Vec<AnnotatedSentence>,
    /// Fraction of the full KB retained; 1 when not downscaled.
    pub source_scale: f64,
}

impl KnowledgeBase {
    pub fn from_examples(examples: Vec<AnnotatedSentence>, source_scale: f64) -> Self {
        let triplets = dedup_triplets(examples.iter().flat_map(|e| e.gold.iter().cloned()));
        KnowledgeBase {
            triplets,
            examples,
            source_scale,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// KB over `train` followed by `validation`.
pub fn build_kb(
    train: &[AnnotatedSentence],
    validation: &[AnnotatedSentence],
) -> Result<KnowledgeBase> {
    if train.is_empty() && validation.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let examples = train.iter().chain(validation).cloned().collect();
    Ok(KnowledgeBase::from_examples(examples, 1.0))
}

/// Number of examples kept at `scale`. The epsilon absorbs products such as
/// `0.29 * 100 = 28.999999999999996`.
pub fn retained_count(scale: f64, total: usize) -> usize {
    let exact = scale * total as f64;
    ((exact + 1e-9).floor() as usize).min(total)
}

/// Keeps `floor(scale * |examples|)` examples chosen uniformly without
/// replacement, in their original order.
///
/// The retained set is the prefix of a seeded permutation, so for a fixed seed
/// a smaller scale always yields a subset of a larger one.
pub fn downscale_kb(kb: &KnowledgeBase, scale: f64, seed: u64) -> Result<KnowledgeBase> {
    if !(0.0..=1.0).contains(&scale) {
        return Err(Error::InvalidArgument(format!(
            "scale {scale} outside [0, 1]"
        )));
    }
    let n = kb.examples.len();
    let keep = retained_count(scale, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut kept = order[..keep].to_vec();
    kept.sort_unstable();
    let examples = kept.into_iter().map(|i| kb.examples[i].clone()).collect();
    Ok(KnowledgeBase::from_examples(examples, scale))
}
