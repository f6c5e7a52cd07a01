//! Exact cosine nearest-neighbour store over KB triplets or KB examples.

use std::cmp::Ordering;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, KnowledgeBase, Triplet};
use crate::encoder::{dot, triplet_to_string, EmbeddingVector, Encoder, EncoderConfig};
use crate::error::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Triplet,
    Example,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Triplet => "triplet",
            NodeKind::Example => "example",
        }
    }
}

impl std::str::FromStr for NodeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplet" | "triplets" => Ok(NodeKind::Triplet),
            "example" | "examples" => Ok(NodeKind::Example),
            other => Err(Error::InvalidArgument(format!("unknown node kind `{other}`"))),
        }
    }
}

/// What text an example node is embedded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleEmbedMode {
    #[default]
    SentenceOnly,
    /// The sentence followed by one `(s, p, o)` line per gold triplet.
    SentenceTriplets,
}

impl std::str::FromStr for ExampleEmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" | "sentence-only" => Ok(ExampleEmbedMode::SentenceOnly),
            "sentence+triplets" | "sentence-triplets" => Ok(ExampleEmbedMode::SentenceTriplets),
            other => Err(Error::InvalidArgument(format!(
                "unknown example embed mode `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodePayload {
    Triplet(Triplet),
    Example(AnnotatedSentence),
}

impl NodePayload {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodePayload::Triplet(_) => NodeKind::Triplet,
            NodePayload::Example(_) => NodeKind::Example,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexNode {
    pub id: usize,
    pub payload: NodePayload,
    pub vector: EmbeddingVector,
}

/// A frozen index. Nodes are added only through [`IndexBuilder`].
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    kind: NodeKind,
    encoder: String,
    nodes: Vec<IndexNode>,
}

/// A retrieval result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<'a> {
    pub node: &'a IndexNode,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a_score: f64, a_id: usize, b_score: f64, b_id: usize) -> Ordering {
    b_score.total_cmp(&a_score).then(a_id.cmp(&b_id))
}

impl VectorIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn encoder_fingerprint(&self) -> &str {
        &self.encoder
    }

    pub fn nodes(&self) -> &[IndexNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The `min(k, len)` best nodes by cosine similarity to `query`, scanning
    /// every node. Ties go to the lower id.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<Hit<'_>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: query.dimension(),
            });
        }
        let q = query.as_slice();
        let mut scored: Vec<(f64, usize)> = self
            .nodes
            .iter()
            .map(|n| (dot(q, n.vector.as_slice()), n.id))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| rank_order(a.0, a.1, b.0, b.1);
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(score, id)| Hit {
                node: &self.nodes[id],
                score,
            })
            .collect())
    }

    /// Fails unless `encoder` produces vectors this index can be queried with.
    pub fn ensure_encoder(&self, config: &EncoderConfig) -> Result<()> {
        if config.dimension != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: config.dimension,
            });
        }
        let configured = config.fingerprint();
        if configured != self.encoder {
            return Err(Error::EncoderMismatch {
                index: self.encoder.clone(),
                configured,
            });
        }
        Ok(())
    }

    pub fn ensure_kind(&self, kind: NodeKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::IndexKind {
                expected: kind.name().into(),
                actual: self.kind.name().into(),
            });
        }
        Ok(())
    }
}

/// Append-only construction of a [`VectorIndex`].
pub struct IndexBuilder {
    dimension: usize,
    kind: NodeKind,
    encoder: String,
    nodes: Vec<IndexNode>,
}

impl IndexBuilder {
    pub fn new(kind: NodeKind, dimension: usize, encoder_fingerprint: impl Into<String>) -> Self {
        IndexBuilder {
            dimension,
            kind,
            encoder: encoder_fingerprint.into(),
            nodes: Vec::new(),
        }
    }

    /// Appends a node and returns its id.
    pub fn push(&mut self, payload: NodePayload, vector: EmbeddingVector) -> Result<usize> {
        if payload.kind() != self.kind {
            return Err(Error::IndexKind {
                expected: self.kind.name().into(),
                actual: payload.kind().name().into(),
            });
        }
        if vector.dimension() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: vector.dimension(),
            });
        }
        let id = self.nodes.len();
        self.nodes.push(IndexNode {
            id,
            payload,
            vector,
        });
        Ok(id)
    }

    pub fn finish(self) -> VectorIndex {
        VectorIndex {
            dimension: self.dimension,
            kind: self.kind,
            encoder: self.encoder,
            nodes: self.nodes,
        }
    }
}

/// Text an example node is embedded from.
pub fn example_embedding_text(example: &AnnotatedSentence, mode: ExampleEmbedMode) -> String {
    match mode {
        ExampleEmbedMode::SentenceOnly => example.text.clone(),
        ExampleEmbedMode::SentenceTriplets => {
            let mut text = example.text.clone();
            for t in &example.gold {
                text.push('\n');
                text.push_str(&triplet_to_string(t));
            }
            text
        }
    }
}

/// One node per KB triplet (kind `Triplet`) or per KB example (kind `Example`), in KB order.
pub fn build_index(
    kb: &KnowledgeBase,
    kind: NodeKind,
    embed_mode: ExampleEmbedMode,
    encoder: &dyn Encoder,
) -> Result<VectorIndex> {
    let (payloads, texts): (Vec<NodePayload>, Vec<String>) = match kind {
        NodeKind::Triplet => kb
            .triplets
            .iter()
            .map(|t| (NodePayload::Triplet(t.clone()), triplet_to_string(t)))
            .unzip(),
        NodeKind::Example => kb
            .examples
            .iter()
            .map(|e| {
                (
                    NodePayload::Example(e.clone()),
                    example_embedding_text(e, embed_mode),
                )
            })
            .unzip(),
    };
    if payloads.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let vectors = encoder.encode_batch(&texts)?;
    let mut builder = IndexBuilder::new(kind, encoder.dimension(), encoder.fingerprint());
    for (payload, vector) in payloads.into_iter().zip(vectors) {
        builder.push(payload, vector)?;
    }
    Ok(builder.finish())
}

#[derive(Serialize, Deserialize)]
struct IndexDocument {
    version: u32,
    dimension: usize,
    metric: String,
    kind: NodeKind,
    encoder: String,
    nodes: Vec<NodeDocument>,
}

#[derive(Serialize, Deserialize)]
struct NodeDocument {
    id: usize,
    payload: NodePayload,
    vector: Vec<f32>,
}

#[derive(Serialize)]
struct IndexDocumentRef<'a> {
    version: u32,
    dimension: usize,
    metric: &'static str,
    kind: NodeKind,
    encoder: &'a str,
    nodes: Vec<NodeDocumentRef<'a>>,
}

#[derive(Serialize)]
struct NodeDocumentRef<'a> {
    id: usize,
    payload: &'a NodePayload,
    vector: &'a EmbeddingVector,
}

/// Writes the index as a single JSON document. `f32` components are printed in
/// their shortest round-tripping decimal form (at most 9 significant digits).
pub fn save_index(index: &VectorIndex, path: &Path) -> Result<()> {
    let doc = IndexDocumentRef {
        version: INDEX_FORMAT_VERSION,
        dimension: index.dimension,
        metric: "cosine",
        kind: index.kind,
        encoder: &index.encoder,
        nodes: index
            .nodes
            .iter()
            .map(|n| NodeDocumentRef {
                id: n.id,
                payload: &n.payload,
                vector: &n.vector,
            })
            .collect(),
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, &doc)?;
    out.flush().map_err(|e| Error::io(path, e))
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

fn parse_error(offset: usize, message: impl Into<String>) -> Error {
    Error::IndexParse {
        offset,
        message: message.into(),
    }
}

/// Parses an index document produced by [`save_index`].
pub fn index_from_str(text: &str) -> Result<VectorIndex> {
    let probe: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| parse_error(byte_offset(text, e.line(), e.column()), e.to_string()))?;
    if let Some(version) = probe.get("version").and_then(|v| v.as_u64()) {
        if version != u64::from(INDEX_FORMAT_VERSION) {
            return Err(Error::IndexVersion {
                found: version as u32,
                expected: INDEX_FORMAT_VERSION,
            });
        }
    }
    let doc: IndexDocument = serde_json::from_value(probe).map_err(|e| parse_error(0, e.to_string()))?;
    if doc.metric != "cosine" {
        return Err(parse_error(0, format!("unsupported metric `{}`", doc.metric)));
    }
    let mut builder = IndexBuilder::new(doc.kind, doc.dimension, doc.encoder);
    for (expected_id, node) in doc.nodes.into_iter().enumerate() {
        if node.id != expected_id {
            return Err(parse_error(
                0,
                format!("node ids must be contiguous: expected {expected_id}, found {}", node.id),
            ));
        }
        if node.vector.len() != doc.dimension {
            return Err(Error::DimensionMismatch {
                expected: doc.dimension,
                actual: node.vector.len(),
            });
        }
        let vector = EmbeddingVector::from_stored(node.vector)?;
        builder.push(node.payload, vector)?;
    }
    Ok(builder.finish())
}

pub fn load_index(path: &Path) -> Result<VectorIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    index_from_str(&text)
}

/// Loads an index and checks it against the encoder that will produce queries.
pub fn load_index_for(path: &Path, config: &EncoderConfig) -> Result<VectorIndex> {
    let index = load_index(path)?;
    index.ensure_encoder(config)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, HashedNgramEncoder};

    fn t(s: &str, p: &str, o: &str) -> Triplet {
        Triplet::new(s, p, o).unwrap()
    }

    fn encoder() -> HashedNgramEncoder {
        HashedNgramEncoder::new(EncoderConfig::hashed(64, 3, 5)).unwrap()
    }

    fn small_kb() -> KnowledgeBase {
        KnowledgeBase::from_examples(
            vec![
                AnnotatedSentence::new("Alan Bean is American.", vec![t("alan bean", "nationality", "united states")]),
                AnnotatedSentence::new(
                    "Alan Bean flew on Apollo 12.",
                    vec![t("alan bean", "mission", "apollo 12"), t("alan bean", "nationality", "united states")],
                ),
                AnnotatedSentence::new("Apollo 12 was run by NASA.", vec![t("apollo 12", "operator", "nasa")]),
            ],
            1.0,
        )
    }

    #[test]
    fn triplet_index_one_node_per_distinct_triplet() {
        let idx = build_index(&small_kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &encoder()).unwrap();
        assert_eq!(idx.len(), 3);
        let ids: Vec<_> = idx.nodes().iter().map(|n| n.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(idx.kind(), NodeKind::Triplet);
    }

    #[test]
    fn sentence_only_ignores_gold() {
        let kb = KnowledgeBase::from_examples(
            vec![
                AnnotatedSentence::new("same words", vec![t("a", "r", "b")]),
                AnnotatedSentence::new("same words", vec![t("c", "q", "d")]),
            ],
            1.0,
        );
        let enc = encoder();
        let idx = build_index(&kb, NodeKind::Example, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        assert_eq!(idx.nodes()[0].vector, idx.nodes()[1].vector);
        assert_ne!(idx.nodes()[0].payload, idx.nodes()[1].payload);

        let joint = build_index(&kb, NodeKind::Example, ExampleEmbedMode::SentenceTriplets, &enc).unwrap();
        assert_ne!(joint.nodes()[0].vector, joint.nodes()[1].vector);
        assert_eq!(
            joint.nodes()[0].vector,
            enc.encode("same words\n(a, r, b)").unwrap()
        );
    }

    #[test]
    fn empty_kb_rejected() {
        let kb = KnowledgeBase::from_examples(vec![], 0.0);
        assert!(matches!(
            build_index(&kb, NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &encoder()),
            Err(Error::EmptyKnowledgeBase)
        ));
    }

    #[test]
    fn self_query_ranks_first() {
        let enc = encoder();
        let idx = build_index(&small_kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        for node in idx.nodes() {
            let hits = idx.top_k(&node.vector, 1).unwrap();
            assert_eq!(hits[0].node.id, node.id);
            assert!((hits[0].score - 1.0).abs() < 1e-6);
        }
        let all = idx.top_k(&idx.nodes()[0].vector, 50).unwrap();
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn ties_break_by_id() {
        let mut b = IndexBuilder::new(NodeKind::Triplet, 2, "test");
        let v = EmbeddingVector::normalized(&[1.0, 1.0]).unwrap();
        for i in 0..4 {
            b.push(NodePayload::Triplet(t(&format!("e{i}"), "r", "x")), v.clone()).unwrap();
        }
        let idx = b.finish();
        let hits = idx.top_k(&v, 3).unwrap();
        let ids: Vec<_> = hits.iter().map(|h| h.node.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn top_k_errors() {
        let idx = build_index(&small_kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &encoder()).unwrap();
        let q = EmbeddingVector::normalized(&[1.0, 0.0]).unwrap();
        assert!(matches!(idx.top_k(&q, 1), Err(Error::DimensionMismatch { .. })));
        assert!(idx.top_k(&idx.nodes()[0].vector, 0).is_err());
    }

    #[test]
    fn builder_rejects_wrong_kind() {
        let mut b = IndexBuilder::new(NodeKind::Example, 2, "test");
        let v = EmbeddingVector::normalized(&[1.0, 0.0]).unwrap();
        assert!(b.push(NodePayload::Triplet(t("a", "r", "b")), v).is_err());
    }

    #[test]
    fn truncated_file_reports_offset() {
        let enc = encoder();
        let idx = build_index(&small_kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        save_index(&idx, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = &text[..text.len() / 2];
        match index_from_str(cut) {
            Err(Error::IndexParse { offset, .. }) => assert!(offset > 0 && offset <= cut.len()),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_and_encoder_checks() {
        let enc = encoder();
        let idx = build_index(&small_kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.json");
        save_index(&idx, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(index_from_str(&text), Err(Error::IndexVersion { found: 2, .. })));

        assert!(load_index_for(&path, &EncoderConfig::hashed(64, 3, 5)).is_ok());
        assert!(matches!(
            load_index_for(&path, &EncoderConfig::hashed(32, 3, 5)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            load_index_for(&path, &EncoderConfig::hashed(64, 2, 4)),
            Err(Error::EncoderMismatch { .. })
        ));
    }

    #[test]
    fn byte_offset_counts_lines() {
        let text = "ab\ncde\nf";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 7);
    }
}
