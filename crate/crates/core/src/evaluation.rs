//! Micro-averaged scoring and the context hit probability `P(N_KB)`.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, Triplet};
use crate::error::{Error, Result};
use crate::retriever::{context_from_hits, ContextMode, Retriever};

/// Raw counters plus the scores derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub n_pred: usize,
    pub n_gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Counts {
    pub fn from_counters(tp: usize, n_pred: usize, n_gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Counts {
            tp,
            n_pred,
            n_gold,
            precision: ratio(tp, n_pred),
            recall: ratio(tp, n_gold),
            // Equal to 2PR/(P+R) whenever tp > 0, and exact in floating point.
            f1: ratio(2 * tp, n_pred + n_gold),
        }
    }

    fn add(&mut self, tp: usize, n_pred: usize, n_gold: usize) {
        *self = Counts::from_counters(self.tp + tp, self.n_pred + n_pred, self.n_gold + n_gold);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: usize,
    pub predicted: Vec<Triplet>,
    pub gold: Vec<Triplet>,
    pub tp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub n_pred: usize,
    pub n_gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Keyed by gold set size.
    pub per_count: BTreeMap<usize, Counts>,
    pub per_sentence: Vec<SentenceRecord>,
}

impl EvalReport {
    pub fn counts(&self) -> Counts {
        Counts::from_counters(self.tp, self.n_pred, self.n_gold)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn as_set(triplets: &[Triplet]) -> Vec<Triplet> {
    let mut seen = HashSet::new();
    triplets.iter().filter(|t| seen.insert(*t)).cloned().collect()
}

/// Exact-match micro precision, recall and F1 over aligned sentences.
/// Predictions and gold are treated as sets.
pub fn micro_f1<P, G>(predictions: &[P], gold: &[G]) -> Result<EvalReport>
where
    P: AsRef<[Triplet]>,
    G: AsRef<[Triplet]>,
{
    if predictions.len() != gold.len() {
        return Err(Error::Misaligned {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut total = Counts::from_counters(0, 0, 0);
    let mut per_count: BTreeMap<usize, Counts> = BTreeMap::new();
    let mut per_sentence = Vec::with_capacity(gold.len());
    for (id, (pred, gold)) in predictions.iter().zip(gold).enumerate() {
        let pred = as_set(pred.as_ref());
        let gold = as_set(gold.as_ref());
        let gold_lookup: HashSet<&Triplet> = gold.iter().collect();
        let tp = pred.iter().filter(|t| gold_lookup.contains(t)).count();
        total.add(tp, pred.len(), gold.len());
        per_count
            .entry(gold.len())
            .or_insert_with(|| Counts::from_counters(0, 0, 0))
            .add(tp, pred.len(), gold.len());
        per_sentence.push(SentenceRecord {
            id,
            predicted: pred,
            gold,
            tp,
        });
    }
    Ok(EvalReport {
        tp: total.tp,
        n_pred: total.n_pred,
        n_gold: total.n_gold,
        precision: total.precision,
        recall: total.recall,
        f1: total.f1,
        per_count,
        per_sentence,
    })
}

/// Fraction of gold triplets found in their own sentence's context. 0 when
/// there are no gold triplets.
pub fn context_hit_probability<C, G>(contexts: &[C], gold: &[G]) -> Result<f64>
where
    C: AsRef<[Triplet]>,
    G: AsRef<[Triplet]>,
{
    let (hits, total) = context_hit_counts(contexts, gold)?;
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// `(gold triplets present in context, total gold triplets)`.
pub fn context_hit_counts<C, G>(contexts: &[C], gold: &[G]) -> Result<(usize, usize)>
where
    C: AsRef<[Triplet]>,
    G: AsRef<[Triplet]>,
{
    if contexts.len() != gold.len() {
        return Err(Error::Misaligned {
            predictions: contexts.len(),
            gold: gold.len(),
        });
    }
    let mut hits = 0;
    let mut total = 0;
    for (ctx, gold) in contexts.iter().zip(gold) {
        let ctx: HashSet<&Triplet> = ctx.as_ref().iter().collect();
        for g in as_set(gold.as_ref()) {
            total += 1;
            if ctx.contains(&g) {
                hits += 1;
            }
        }
    }
    Ok((hits, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_kb: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextQualityCurve {
    pub mode: ContextMode,
    pub kb_scale: f64,
    pub points: Vec<CurvePoint>,
}

impl ContextQualityCurve {
    pub fn p_at(&self, n_kb: usize) -> Option<f64> {
        self.points.iter().find(|pt| pt.n_kb == n_kb).map(|pt| pt.p)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[0].p <= w[1].p)
    }

    /// CSV with header `n_kb,p`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n_kb", "p"])?;
        for pt in &self.points {
            w.write_record([pt.n_kb.to_string(), pt.p.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// `P(N_KB)` for each requested `N_KB` over `sentences`, through the same
/// retrieval pipeline used for prompting (including the diversity filter in
/// triplets mode). `retriever = None` stands for an empty KB.
pub fn sweep_context_quality(
    sentences: &[AnnotatedSentence],
    retriever: Option<&Retriever<'_>>,
    mode: ContextMode,
    n_kb_values: &[usize],
    kb_scale: f64,
) -> Result<ContextQualityCurve> {
    if n_kb_values.is_empty() || n_kb_values[0] == 0 || n_kb_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "N_KB values must be positive and strictly increasing".into(),
        ));
    }
    if let Some(r) = retriever {
        if r.mode() != mode {
            return Err(Error::IndexKind {
                expected: mode.node_kind().name().into(),
                actual: r.index().kind().name().into(),
            });
        }
    }
    let largest = *n_kb_values.last().expect("non-empty");
    let mut hits = vec![0usize; n_kb_values.len()];
    let mut total = 0usize;
    for sentence in sentences {
        let gold = as_set(&sentence.gold);
        total += gold.len();
        let Some(r) = retriever else { continue };
        let ranked = r.hits(&sentence.text, largest)?;
        for (slot, &n_kb) in n_kb_values.iter().enumerate() {
            let ctx = context_from_hits(mode, &ranked, n_kb).triplets();
            let ctx: HashSet<&Triplet> = ctx.iter().collect();
            hits[slot] += gold.iter().filter(|g| ctx.contains(g)).count();
        }
    }
    let points = n_kb_values
        .iter()
        .zip(hits)
        .map(|(&n_kb, h)| CurvePoint {
            n_kb,
            p: if total == 0 { 0.0 } else { h as f64 / total as f64 },
        })
        .collect();
    Ok(ContextQualityCurve {
        mode,
        kb_scale,
        points,
    })
}
