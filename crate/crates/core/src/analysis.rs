//! Least-squares trend fits, the random-baseline study and the KB downscaling
//! ablation driver.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{downscale_kb, AnnotatedSentence, KnowledgeBase, Triplet};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::evaluation::{context_hit_probability, micro_f1, sweep_context_quality};
use crate::extraction::{
    exhaustive_expected_f1, random_extract, random_f1_closed_form, sentence_rng, set_f1,
};
use crate::retriever::{context_from_hits, ContextMode, Retriever};
use crate::vector_index::{build_index, ExampleEmbedMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    /// `1 - SS_res / SS_tot`, clamped at 0; 0 when `y` is constant.
    pub r2: f64,
    pub n_points: usize,
}

/// Ordinary least squares `y = slope * x + intercept`.
///
/// Points are sorted before summation so the result does not depend on input order.
pub fn linear_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    if points.len() < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {}", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("non-finite coordinate".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |(sxx, sxy), &(x, y)| {
        let dx = x - mean_x;
        (sxx + dx * dx, sxy + dx * (y - mean_y))
    });
    if sxx == 0.0 {
        return Err(Error::Fit("all x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let ss_tot: f64 = pts.iter().map(|&(_, y)| (y - mean_y).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|&(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 {
        0.0
    } else {
        (1.0 - ss_res / ss_tot).max(0.0)
    };
    Ok(FitResult {
        slope,
        intercept,
        r2,
        n_points: pts.len(),
    })
}

/// Fits `F1 ~ slope * ln(N_par) + intercept`.
pub fn log_param_fit(points: &[(f64, f64)]) -> Result<FitResult> {
    let logged = points
        .iter()
        .map(|&(n_par, f1)| {
            if n_par > 0.0 {
                Ok((n_par.ln(), f1))
            } else {
                Err(Error::Fit(format!("parameter count must be > 0, got {n_par}")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    linear_fit(&logged)
}

/// Reads `x,y` rows (header required) for fitting.
pub fn read_xy_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let field = |k: usize| -> Result<f64> {
            row.get(k)
                .ok_or_else(|| Error::Fit(format!("row {}: missing column {k}", i + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Fit(format!("row {}: {e}", i + 1)))
        };
        out.push((field(0)?, field(1)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStudyRow {
    pub n_kb: usize,
    /// Context hit probability at this `N_KB`.
    pub p: f64,
    /// Mean over trials of the corpus micro-F1.
    pub monte_carlo_micro_f1: f64,
    /// Mean over trials and sentences of the per-sentence F1.
    pub monte_carlo_f1: f64,
    /// Mean over sentences of `(P / N_KB)^n`, `n` the sentence's gold count.
    pub closed_form_f1: f64,
    /// Exact mean per-sentence F1, when every context is small enough to enumerate.
    pub exhaustive_f1: Option<f64>,
    /// `closed_form_f1 - exhaustive_f1`.
    pub closed_form_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomStudyConfig {
    pub n_kb_values: Vec<usize>,
    pub max_triplets: usize,
    pub seed: u64,
    pub trials: u64,
}

/// Random baseline on the given per-sentence contexts.
pub fn random_study_row(
    n_kb: usize,
    contexts: &[Vec<Triplet>],
    gold: &[Vec<Triplet>],
    max_triplets: usize,
    seed: u64,
    trials: u64,
) -> Result<RandomStudyRow> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let p = context_hit_probability(contexts, gold)?;
    let gold_sets: Vec<HashSet<&Triplet>> = gold.iter().map(|g| g.iter().collect()).collect();
    let n_sent = gold.len().max(1) as f64;

    let mut micro_sum = 0.0;
    let mut sentence_sum = 0.0;
    for trial in 0..trials {
        let preds: Vec<Vec<Triplet>> = contexts
            .iter()
            .enumerate()
            .map(|(i, ctx)| random_extract(ctx, max_triplets, &mut sentence_rng(seed, trial, i as u64)))
            .collect();
        for (pred, g) in preds.iter().zip(&gold_sets) {
            let tp = pred.iter().filter(|t| g.contains(t)).count();
            sentence_sum += set_f1(tp, pred.len(), g.len());
        }
        micro_sum += micro_f1(&preds, gold)?.f1;
    }

    let closed_form_f1 = gold
        .iter()
        .map(|g| random_f1_closed_form(p, n_kb, g.len()))
        .sum::<f64>()
        / n_sent;
    let exhaustive_f1 = contexts
        .iter()
        .zip(gold)
        .map(|(ctx, g)| exhaustive_expected_f1(ctx, g, max_triplets))
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n_sent);

    Ok(RandomStudyRow {
        n_kb,
        p,
        monte_carlo_micro_f1: micro_sum / trials as f64,
        monte_carlo_f1: sentence_sum / (trials as f64 * n_sent),
        closed_form_f1,
        exhaustive_f1,
        closed_form_deviation: exhaustive_f1.map(|e| closed_form_f1 - e),
    })
}

/// Runs the random baseline over `sentences` for every `N_KB`, using the
/// retriever's contexts (diversity filter included in triplets mode).
pub fn random_model_study(
    sentences: &[AnnotatedSentence],
    retriever: &Retriever<'_>,
    config: &RandomStudyConfig,
) -> Result<Vec<RandomStudyRow>> {
    let largest = config.n_kb_values.iter().copied().max().unwrap_or(0);
    if largest == 0 {
        return Err(Error::InvalidArgument("N_KB values must be positive".into()));
    }
    let ranked = sentences
        .iter()
        .map(|s| retriever.hits(&s.text, largest))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<Vec<Triplet>> = sentences.iter().map(|s| s.gold.clone()).collect();
    config
        .n_kb_values
        .iter()
        .map(|&n_kb| {
            let contexts: Vec<Vec<Triplet>> = ranked
                .iter()
                .map(|hits| context_from_hits(retriever.mode(), hits, n_kb).triplets())
                .collect();
            random_study_row(n_kb, &contexts, &gold, config.max_triplets, config.seed, config.trials)
        })
        .collect()
}

pub fn write_random_study_csv<W: Write>(rows: &[RandomStudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n_kb",
        "p",
        "monte_carlo_f1",
        "monte_carlo_micro_f1",
        "closed_form_f1",
        "exhaustive_f1",
        "closed_form_deviation",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.n_kb.to_string(),
            r.p.to_string(),
            r.monte_carlo_f1.to_string(),
            r.monte_carlo_micro_f1.to_string(),
            r.closed_form_f1.to_string(),
            opt(r.exhaustive_f1),
            opt(r.closed_form_deviation),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Default KB scales for the downscaling ablation.
pub const DEFAULT_SCALES: [f64; 5] = [0.0, 0.1, 0.25, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub scale: f64,
    /// `P_S(N_KB)` of the downscaled KB on the evaluation sentences.
    pub p: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub mode: ContextMode,
    pub n_kb: usize,
    pub seed: u64,
    pub points: Vec<AblationPoint>,
    /// `F1 ~ slope * P_S + intercept`; absent when fewer than two distinct `P_S`.
    pub fit: Option<FitResult>,
}

pub struct AblationSetup<'a> {
    pub kb: &'a KnowledgeBase,
    pub sentences: &'a [AnnotatedSentence],
    pub encoder: &'a dyn Encoder,
    pub mode: ContextMode,
    pub embed_mode: ExampleEmbedMode,
    pub n_kb: usize,
    pub seed: u64,
}

/// For every scale: downscale the KB, measure `P_S(N_KB)`, obtain F1 from
/// `f1_for(downscaled_kb, scale, p)`, then fit F1 against `P_S`.
pub fn run_ablation<F>(setup: &AblationSetup<'_>, scales: &[f64], mut f1_for: F) -> Result<AblationResult>
where
    F: FnMut(&KnowledgeBase, f64, f64) -> Result<f64>,
{
    let mut points = Vec::with_capacity(scales.len());
    for &scale in scales {
        let kb = downscale_kb(setup.kb, scale, setup.seed)?;
        let p = if kb.is_empty() {
            0.0
        } else {
            let index = build_index(&kb, setup.mode.node_kind(), setup.embed_mode, setup.encoder)?;
            let retriever = Retriever::new(&index, setup.encoder)?;
            sweep_context_quality(setup.sentences, Some(&retriever), setup.mode, &[setup.n_kb], scale)?
                .points[0]
                .p
        };
        let f1 = f1_for(&kb, scale, p)?;
        log::info!("scale {scale}: P = {p:.4}, F1 = {f1:.4}");
        points.push(AblationPoint { scale, p, f1 });
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|pt| (pt.p, pt.f1)).collect();
    let fit = match linear_fit(&xy) {
        Ok(fit) => Some(fit),
        Err(Error::Fit(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(AblationResult {
        mode: setup.mode,
        n_kb: setup.n_kb,
        seed: setup.seed,
        points,
        fit,
    })
}
