//! Input sentence → KB context, either as context triplets or as
//! (sentence, triplets) examples.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::corpus::{dedup_triplets, AnnotatedSentence, Triplet};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::vector_index::{Hit, NodeKind, NodePayload, VectorIndex};

/// Retrieved candidates kept per predicate in triplets mode.
pub const MAX_PER_RELATION: usize = 2;

pub const DEFAULT_N_KB: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Triplets,
    Examples,
}

impl ContextMode {
    pub fn node_kind(self) -> NodeKind {
        match self {
            ContextMode::Triplets => NodeKind::Triplet,
            ContextMode::Examples => NodeKind::Example,
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triplets" | "triplet" => Ok(ContextMode::Triplets),
            "examples" | "example" => Ok(ContextMode::Examples),
            other => Err(Error::InvalidArgument(format!("unknown context mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored<T> {
    pub node_id: usize,
    pub score: f64,
    pub item: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", content = "items", rename_all = "lowercase")]
pub enum ContextItems {
    Triplets(Vec<Scored<Triplet>>),
    Examples(Vec<Scored<AnnotatedSentence>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievedContext {
    /// `N_KB`: candidates fetched before any filtering.
    pub n_kb_requested: usize,
    #[serde(flatten)]
    pub items: ContextItems,
}

impl RetrievedContext {
    pub fn empty(mode: ContextMode, n_kb_requested: usize) -> Self {
        let items = match mode {
            ContextMode::Triplets => ContextItems::Triplets(Vec::new()),
            ContextMode::Examples => ContextItems::Examples(Vec::new()),
        };
        RetrievedContext {
            n_kb_requested,
            items,
        }
    }

    pub fn mode(&self) -> ContextMode {
        match self.items {
            ContextItems::Triplets(_) => ContextMode::Triplets,
            ContextItems::Examples(_) => ContextMode::Examples,
        }
    }

    pub fn len(&self) -> usize {
        match &self.items {
            ContextItems::Triplets(v) => v.len(),
            ContextItems::Examples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Triplets available in the context, in rank order: the items themselves,
    /// or the deduplicated union of the examples' gold sets.
    pub fn triplets(&self) -> Vec<Triplet> {
        match &self.items {
            ContextItems::Triplets(v) => v.iter().map(|s| s.item.clone()).collect(),
            ContextItems::Examples(v) => {
                dedup_triplets(v.iter().flat_map(|s| s.item.gold.iter().cloned()))
            }
        }
    }

    /// Keeps only the `n` highest-ranked items.
    pub fn truncated(&self, n: usize) -> Self {
        let items = match &self.items {
            ContextItems::Triplets(v) => ContextItems::Triplets(v.iter().take(n).cloned().collect()),
            ContextItems::Examples(v) => ContextItems::Examples(v.iter().take(n).cloned().collect()),
        };
        RetrievedContext {
            n_kb_requested: self.n_kb_requested,
            items,
        }
    }
}

/// Keeps at most [`MAX_PER_RELATION`] items per key, in input order.
pub fn diversity_filter_by<T, K, F>(ranked: impl IntoIterator<Item = T>, mut key: F) -> Vec<T>
where
    K: Eq + Hash,
    F: FnMut(&T) -> K,
{
    let mut seen: HashMap<K, usize> = HashMap::new();
    ranked
        .into_iter()
        .filter(|item| {
            let count = seen.entry(key(item)).or_insert(0);
            *count += 1;
            *count <= MAX_PER_RELATION
        })
        .collect()
}

/// First two triplets per predicate, rank order preserved.
pub fn diversity_filter(ranked: Vec<Scored<Triplet>>) -> Vec<Scored<Triplet>> {
    diversity_filter_by(ranked, |s| s.item.predicate().to_string())
}

fn scored_triplets(hits: &[Hit<'_>]) -> Vec<Scored<Triplet>> {
    hits.iter()
        .filter_map(|h| match &h.node.payload {
            NodePayload::Triplet(t) => Some(Scored {
                node_id: h.node.id,
                score: h.score,
                item: t.clone(),
            }),
            NodePayload::Example(_) => None,
        })
        .collect()
}

fn scored_examples(hits: &[Hit<'_>]) -> Vec<Scored<AnnotatedSentence>> {
    hits.iter()
        .filter_map(|h| match &h.node.payload {
            NodePayload::Example(e) => Some(Scored {
                node_id: h.node.id,
                score: h.score,
                item: e.clone(),
            }),
            NodePayload::Triplet(_) => None,
        })
        .collect()
}

/// Builds the context for `N_KB = n_kb` from a ranked hit list holding at least
/// `n_kb` entries (or all nodes).
pub fn context_from_hits(mode: ContextMode, hits: &[Hit<'_>], n_kb: usize) -> RetrievedContext {
    let hits = &hits[..n_kb.min(hits.len())];
    let items = match mode {
        ContextMode::Triplets => ContextItems::Triplets(diversity_filter(scored_triplets(hits))),
        ContextMode::Examples => ContextItems::Examples(scored_examples(hits)),
    };
    RetrievedContext {
        n_kb_requested: n_kb,
        items,
    }
}

/// Pairs a frozen index with the encoder that built it.
pub struct Retriever<'a> {
    index: &'a VectorIndex,
    encoder: &'a dyn Encoder,
}

impl<'a> Retriever<'a> {
    pub fn new(index: &'a VectorIndex, encoder: &'a dyn Encoder) -> Result<Self> {
        index.ensure_encoder(encoder.config())?;
        Ok(Retriever { index, encoder })
    }

    pub fn index(&self) -> &'a VectorIndex {
        self.index
    }

    pub fn mode(&self) -> ContextMode {
        match self.index.kind() {
            NodeKind::Triplet => ContextMode::Triplets,
            NodeKind::Example => ContextMode::Examples,
        }
    }

    /// Raw ranked hits for `sentence`.
    pub fn hits(&self, sentence: &str, k: usize) -> Result<Vec<Hit<'a>>> {
        if k == 0 {
            return Err(Error::InvalidArgument("N_KB must be at least 1".into()));
        }
        let query = self.encoder.encode(sentence)?;
        self.index.top_k(&query, k)
    }

    /// Top `n_kb` triplets, then at most two per predicate. No top-up after filtering.
    pub fn retrieve_triplets(&self, sentence: &str, n_kb: usize) -> Result<RetrievedContext> {
        self.index.ensure_kind(NodeKind::Triplet)?;
        let hits = self.hits(sentence, n_kb)?;
        Ok(context_from_hits(ContextMode::Triplets, &hits, n_kb))
    }

    /// Top `n_kb` (sentence, triplets) examples, unfiltered.
    pub fn retrieve_examples(&self, sentence: &str, n_kb: usize) -> Result<RetrievedContext> {
        self.index.ensure_kind(NodeKind::Example)?;
        let hits = self.hits(sentence, n_kb)?;
        Ok(context_from_hits(ContextMode::Examples, &hits, n_kb))
    }

    pub fn retrieve(&self, sentence: &str, n_kb: usize) -> Result<RetrievedContext> {
        match self.mode() {
            ContextMode::Triplets => self.retrieve_triplets(sentence, n_kb),
            ContextMode::Examples => self.retrieve_examples(sentence, n_kb),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KnowledgeBase;
    use crate::encoder::{EncoderConfig, HashedNgramEncoder};
    use crate::vector_index::{build_index, ExampleEmbedMode};

    fn t(s: &str, p: &str, o: &str) -> Triplet {
        Triplet::new(s, p, o).unwrap()
    }

    fn ranked(preds: &[&str]) -> Vec<Scored<Triplet>> {
        preds
            .iter()
            .enumerate()
            .map(|(i, p)| Scored {
                node_id: i,
                score: 1.0 - i as f64 * 0.01,
                item: t(&format!("s{i}"), p, "o"),
            })
            .collect()
    }

    fn ids(v: &[Scored<Triplet>]) -> Vec<usize> {
        v.iter().map(|s| s.node_id).collect()
    }

    #[test]
    fn first_two_per_relation() {
        assert_eq!(ids(&diversity_filter(ranked(&["r1", "r1", "r1", "r2", "r1"]))), vec![0, 1, 3]);
        assert_eq!(ids(&diversity_filter(ranked(&["a", "b", "c", "d", "e"]))), vec![0, 1, 2, 3, 4]);
        assert_eq!(ids(&diversity_filter(ranked(&["r1", "r2", "r1", "r2", "r1", "r2"]))), vec![0, 1, 2, 3]);
        assert_eq!(ids(&diversity_filter(ranked(&["solo", "r", "r", "r"]))), vec![0, 1, 2]);
        assert!(diversity_filter(Vec::new()).is_empty());
    }

    fn kb() -> KnowledgeBase {
        KnowledgeBase::from_examples(
            vec![
                AnnotatedSentence::new("Alan Bean was born in Wheeler.", vec![t("alan bean", "birth place", "wheeler")]),
                AnnotatedSentence::new("Alan Bean flew on Apollo 12.", vec![t("alan bean", "mission", "apollo 12")]),
                AnnotatedSentence::new("Apollo 12 was operated by NASA.", vec![t("apollo 12", "operator", "nasa")]),
                AnnotatedSentence::new("Aarhus Airport serves Aarhus.", vec![t("aarhus airport", "city served", "aarhus")]),
            ],
            1.0,
        )
    }

    #[test]
    fn example_self_query_ranks_first() {
        let enc = HashedNgramEncoder::new(EncoderConfig::hashed(128, 3, 5)).unwrap();
        let kb = kb();
        let idx = build_index(&kb, NodeKind::Example, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        let r = Retriever::new(&idx, &enc).unwrap();
        for (i, e) in kb.examples.iter().enumerate() {
            let ctx = r.retrieve_examples(&e.text, 2).unwrap();
            match &ctx.items {
                ContextItems::Examples(v) => assert_eq!(v[0].node_id, i),
                _ => panic!("wrong mode"),
            }
        }
        assert!(matches!(r.retrieve_triplets("x", 2), Err(Error::IndexKind { .. })));
    }

    #[test]
    fn retriever_rejects_foreign_encoder() {
        let enc = HashedNgramEncoder::new(EncoderConfig::hashed(128, 3, 5)).unwrap();
        let other = HashedNgramEncoder::new(EncoderConfig::hashed(128, 2, 4)).unwrap();
        let idx = build_index(&kb(), NodeKind::Triplet, ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        assert!(Retriever::new(&idx, &other).is_err());
    }

    #[test]
    fn examples_context_triplets_union() {
        let ex = |i: usize, gold: Vec<Triplet>| Scored {
            node_id: i,
            score: 0.0,
            item: AnnotatedSentence::new(format!("s{i}"), gold),
        };
        let ctx = RetrievedContext {
            n_kb_requested: 2,
            items: ContextItems::Examples(vec![
                ex(0, vec![t("a", "r", "b"), t("c", "r", "d")]),
                ex(1, vec![t("c", "r", "d"), t("e", "q", "f")]),
            ]),
        };
        assert_eq!(ctx.triplets(), vec![t("a", "r", "b"), t("c", "r", "d"), t("e", "q", "f")]);
    }

    #[test]
    fn context_serializes_with_mode_tag() {
        let ctx = RetrievedContext {
            n_kb_requested: 5,
            items: ContextItems::Triplets(ranked(&["r"])),
        };
        let json = serde_json::to_value(&ctx).unwrap();
        assert_eq!(json["mode"], "triplets");
        assert_eq!(json["n_kb_requested"], 5);
        assert_eq!(json["items"][0]["item"], serde_json::json!(["s0", "r", "o"]));
    }
}
