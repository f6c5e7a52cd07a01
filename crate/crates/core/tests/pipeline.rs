use proptest::prelude::*;

use kgte::analysis::{random_model_study, RandomStudyConfig};
use kgte::corpus::{build_kb, downscale_kb, AnnotatedSentence, Dataset};
use kgte::encoder::{EncoderConfig, HashedNgramEncoder};
use kgte::experiment::{run_on_dataset, ExperimentRunSpec, RunMode};
use kgte::extraction::ExtractorKind;
use kgte::retriever::{ContextMode, Retriever};
use kgte::vector_index::{build_index, ExampleEmbedMode};
use kgte::Triplet;

fn t(s: &str, p: &str, o: &str) -> Triplet {
    Triplet::new(s, p, o).unwrap()
}

fn dataset(words: &[(u8, u8, u8)]) -> Dataset {
    let sentence = |&(a, b, c): &(u8, u8, u8)| {
        let g = vec![t(&format!("ent {a}"), &format!("rel {}", b % 4), &format!("ent {c}")), t(&format!("ent {c}"), "type", "thing")];
        AnnotatedSentence::new(format!("ent {a} is rel {} to ent {c}", b % 4), g)
    };
    let all: Vec<AnnotatedSentence> = words.iter().map(sentence).collect();
    let cut = (all.len() * 2 / 3).max(1);
    Dataset::from_splits(all[..cut].to_vec(), all[..1].to_vec(), all[cut..].to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pure_runs_are_repeatable(
        words in prop::collection::vec((0u8..20, 0u8..20, 0u8..20), 4..30),
        seed in any::<u64>(),
        threads in 1usize..6,
        examples in any::<bool>(),
    ) {
        let ds = dataset(&words);
        let mode = if examples { RunMode::Examples } else { RunMode::Triplets };
        let mut spec = ExperimentRunSpec::new("p", mode, ExtractorKind::RandomBaseline);
        spec.seed = seed;
        spec.encoder = EncoderConfig::hashed(96, 3, 4);
        let base = run_on_dataset(&spec, &ds, None).unwrap();
        spec.generation.max_in_flight = threads;
        let other = run_on_dataset(&spec, &ds, None).unwrap();
        prop_assert_eq!(base.report.to_json().unwrap(), other.report.to_json().unwrap());
    }

    #[test]
    fn downscaled_kbs_nest(
        words in prop::collection::vec((0u8..50, 0u8..50, 0u8..50), 5..40),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&words);
        let kb = build_kb(&ds.train, &ds.validation).unwrap();
        let mut prev: Vec<AnnotatedSentence> = Vec::new();
        for scale in [0.0, 0.1, 0.25, 0.5, 1.0] {
            let sub = downscale_kb(&kb, scale, seed).unwrap();
            prop_assert!(prev.iter().all(|e| sub.examples.contains(e)));
            prev = sub.examples;
        }
        prop_assert_eq!(prev.len(), kb.examples.len());
    }

    #[test]
    fn study_exhaustive_column_is_analytic(
        words in prop::collection::vec((0u8..12, 0u8..12, 0u8..12), 6..24),
        seed in any::<u64>(),
    ) {
        let ds = dataset(&words);
        let kb = build_kb(&ds.train, &ds.validation).unwrap();
        let enc = HashedNgramEncoder::new(EncoderConfig::hashed(64, 3, 5)).unwrap();
        let index = build_index(&kb, ContextMode::Triplets.node_kind(), ExampleEmbedMode::SentenceOnly, &enc).unwrap();
        let retriever = Retriever::new(&index, &enc).unwrap();
        let config = RandomStudyConfig { n_kb_values: vec![1, 3, 6], max_triplets: ds.max_triplets, seed, trials: 20 };
        let rows = random_model_study(&ds.test, &retriever, &config).unwrap();
        for (row, &n_kb) in rows.iter().zip(&config.n_kb_values) {
            // mean over sentences of (1/max) Σ_n 2·m·K/N/(m+g), m = min(n, N)
            let mut expected = 0.0;
            for s in &ds.test {
                let ctx = retriever.retrieve(&s.text, n_kb).unwrap().triplets();
                let n = ctx.len();
                if n == 0 { continue; }
                let k = ctx.iter().filter(|c| s.gold.contains(c)).count() as f64;
                let g = s.gold.len() as f64;
                let mut acc = 0.0;
                for draw in 1..=ds.max_triplets {
                    let m = draw.min(n) as f64;
                    acc += 2.0 * m * k / n as f64 / (m + g);
                }
                expected += acc / ds.max_triplets as f64;
            }
            expected /= ds.test.len() as f64;
            let got = row.exhaustive_f1.unwrap();
            prop_assert!((got - expected).abs() < 1e-12, "N_KB {}: {} vs {}", n_kb, got, expected);
        }
    }
}
