//! Prompt catalog and rendering.
//!
//! Every template is assembled from the same blocks: an instruction block
//! that depends on the [`PromptKind`], a shared output-format block carrying
//! `{max_triplets}`, an optional shot block, and the query block carrying
//! `{text}`. Templates that need retrieved context fall back to the zero-shot
//! template of the same kind when no context item is left to show, so an
//! empty KB reproduces the plain prompt exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retriever::{ContextItems, ContextMode, RetrievedContext};

pub const CATALOG_VERSION: &str = "kgte-prompts/1";

/// Characters per token used to turn a context window into a character budget.
pub const CHARS_PER_TOKEN: usize = 4;

pub const PH_TEXT: &str = "text";
pub const PH_MAX_TRIPLETS: &str = "max_triplets";
pub const PH_CONTEXT_TRIPLETS: &str = "context_triplets";
pub const PH_EXAMPLES: &str = "examples";

const PLACEHOLDERS: [&str; 4] = [PH_TEXT, PH_MAX_TRIPLETS, PH_CONTEXT_TRIPLETS, PH_EXAMPLES];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Base,
    ChainOfThought,
    Documented,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [PromptKind::Base, PromptKind::ChainOfThought, PromptKind::Documented];

    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Base => "base",
            PromptKind::ChainOfThought => "chain_of_thought",
            PromptKind::Documented => "documented",
        }
    }
}

impl std::str::FromStr for PromptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(PromptKind::Base),
            "cot" | "chain_of_thought" | "chain-of-thought" => Ok(PromptKind::ChainOfThought),
            "documented" | "doc" => Ok(PromptKind::Documented),
            other => Err(Error::InvalidArgument(format!("unknown prompt kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    Zero,
    StaticTwoShot,
    ContextTriplets,
    Examples,
}

impl ShotMode {
    pub const ALL: [ShotMode; 4] = [
        ShotMode::Zero,
        ShotMode::StaticTwoShot,
        ShotMode::ContextTriplets,
        ShotMode::Examples,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShotMode::Zero => "zero",
            ShotMode::StaticTwoShot => "static_two_shot",
            ShotMode::ContextTriplets => "context_triplets",
            ShotMode::Examples => "examples",
        }
    }

    /// Context mode this shot mode consumes, if any.
    pub fn context_mode(self) -> Option<ContextMode> {
        match self {
            ShotMode::ContextTriplets => Some(ContextMode::Triplets),
            ShotMode::Examples => Some(ContextMode::Examples),
            ShotMode::Zero | ShotMode::StaticTwoShot => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    pub kind: PromptKind,
    pub shot_mode: ShotMode,
    pub version: &'static str,
    pub body: String,
}

impl PromptTemplate {
    pub fn name(&self) -> String {
        format!("{}__{}", self.kind.name(), self.shot_mode.name())
    }

    /// Checks placeholder multiplicities against the shot mode.
    pub fn validate(&self) -> Result<()> {
        let count = |name: &str| self.body.matches(&format!("{{{name}}}")).count();
        for required in [PH_TEXT, PH_MAX_TRIPLETS] {
            if count(required) != 1 {
                return Err(Error::Template(format!(
                    "{}: `{{{required}}}` must appear exactly once",
                    self.name()
                )));
            }
        }
        let want_context = usize::from(self.shot_mode == ShotMode::ContextTriplets);
        let want_examples = usize::from(self.shot_mode == ShotMode::Examples);
        if count(PH_CONTEXT_TRIPLETS) != want_context || count(PH_EXAMPLES) != want_examples {
            return Err(Error::Template(format!(
                "{}: context placeholders do not match shot mode",
                self.name()
            )));
        }
        Ok(())
    }
}

const INSTRUCTIONS_BASE: &str = "\
Some text is provided below. Extract all the knowledge triplets expressed in the text. \
A knowledge triplet is made of a subject, a predicate and an object, and it is written as \
(subject, predicate, object).
";

const INSTRUCTIONS_DOCUMENTED: &str = "\
Some text is provided below. Extract all the knowledge triplets expressed in the text.
The core components of the task are defined as follows.
- Subject: the entity a fact is about, named as it appears in the text.
- Object: the entity or value the subject is related to, named as it appears in the text.
- Predicate: the type of relation that links the subject to the object.
- Triplet: one fact written as (subject, predicate, object). The relation is directed from \
the subject to the object, so swapping subject and object changes the fact.
";

const INSTRUCTIONS_CHAIN_OF_THOUGHT: &str = "\
Some text is provided below. Extract all the knowledge triplets expressed in the text, \
written as (subject, predicate, object).
Solve the task in steps and write down each step before giving the answer.
Step 1: list every entity mentioned in the text.
Step 2: for each pair of entities, state which relation, if any, the text expresses between them.
Step 3: turn every relation found in Step 2 into a triplet.
After the steps, write the line \"Triplets:\" followed by the final triplets.
";

const OUTPUT_FORMAT: &str = "\
Write one triplet per line in the form (subject, predicate, object) and nothing else on that line. \
Extract at most {max_triplets} triplets.
";

const STATIC_TWO_SHOT: &str = "
Examples:
Sentence: Alan Bean was a crew member of Apollo 12, which was operated by NASA.
Triplets:
(Alan Bean, mission, Apollo 12)
(Apollo 12, operator, NASA)

Sentence: Aarhus Airport serves the city of Aarhus in Denmark.
Triplets:
(Aarhus Airport, cityServed, Aarhus)
(Aarhus, country, Denmark)
";

const CONTEXT_TRIPLETS_BLOCK: &str = "
The following context triplets were retrieved from a knowledge base. They hint at entities and \
relations that may be expressed in the text.
Context Triplets:
{context_triplets}
";

const EXAMPLES_BLOCK: &str = "
Examples:
{examples}
";

const QUERY_DIRECT: &str = "
Sentence: {text}
Triplets:
";

const QUERY_STEPS: &str = "
Sentence: {text}
Step 1:
";

fn compose(kind: PromptKind, shot_mode: ShotMode) -> String {
    let instructions = match kind {
        PromptKind::Base => INSTRUCTIONS_BASE,
        PromptKind::Documented => INSTRUCTIONS_DOCUMENTED,
        PromptKind::ChainOfThought => INSTRUCTIONS_CHAIN_OF_THOUGHT,
    };
    let shots = match shot_mode {
        ShotMode::Zero => "",
        ShotMode::StaticTwoShot => STATIC_TWO_SHOT,
        ShotMode::ContextTriplets => CONTEXT_TRIPLETS_BLOCK,
        ShotMode::Examples => EXAMPLES_BLOCK,
    };
    let query = match kind {
        PromptKind::ChainOfThought => QUERY_STEPS,
        _ => QUERY_DIRECT,
    };
    [instructions, OUTPUT_FORMAT, shots, query].concat()
}

pub fn template(kind: PromptKind, shot_mode: ShotMode) -> PromptTemplate {
    PromptTemplate {
        kind,
        shot_mode,
        version: CATALOG_VERSION,
        body: compose(kind, shot_mode),
    }
}

/// All built-in templates: every prompt kind in every shot mode.
pub fn catalog() -> Vec<PromptTemplate> {
    PromptKind::ALL
        .iter()
        .flat_map(|&k| ShotMode::ALL.iter().map(move |&s| template(k, s)))
        .collect()
}

/// Writes one `<kind>__<shot_mode>.txt` file per template.
pub fn export_catalog(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    catalog()
        .into_iter()
        .map(|t| {
            let path = dir.join(format!("{}.txt", t.name()));
            fs::write(&path, &t.body).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// Markdown listing of the catalog, verbatim.
pub fn catalog_markdown() -> String {
    let mut out = format!("# Prompt catalog\n\nVersion: `{CATALOG_VERSION}`\n\n");
    out.push_str(
        "Generated by `kgte prompts --markdown`. Placeholders in braces are substituted at render time.\n",
    );
    for t in catalog() {
        let _ = write!(out, "\n## {}\n\n```text\n{}```\n", t.name(), t.body);
    }
    out
}

/// Replaces known `{placeholder}` tokens in one pass; substituted text is not rescanned.
fn fill(body: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(body.len() + 256);
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = PLACEHOLDERS.iter().find_map(|name| {
            after
                .strip_prefix(name)
                .and_then(|r| r.strip_prefix('}'))
                .map(|r| (*name, r))
        });
        match hit {
            Some((name, remainder)) => {
                let value = values
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .unwrap_or("");
                out.push_str(value);
                rest = remainder;
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn render_context_items(context: &RetrievedContext, n: usize) -> String {
    match &context.items {
        ContextItems::Triplets(items) => items
            .iter()
            .take(n)
            .map(|s| s.item.to_string())
            .collect::<Vec<_>>()
            .join("\n"),
        ContextItems::Examples(items) => items
            .iter()
            .take(n)
            .map(|s| {
                let mut block = format!("Sentence: {}\nTriplets:", s.item.text);
                for t in &s.item.gold {
                    block.push('\n');
                    block.push_str(&t.to_string());
                }
                block
            })
            .collect::<Vec<_>>()
            .join("\n\n"),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptInstance {
    pub rendered: String,
    pub kind: PromptKind,
    pub shot_mode: ShotMode,
    pub catalog_version: &'static str,
    pub context_items_available: usize,
    pub context_items_included: usize,
    /// Context items were dropped to fit the budget.
    pub truncated: bool,
}

/// Character budget for a model context window, keeping room for the answer.
pub fn budget_for_context_window(context_tokens: usize, reserved_output_tokens: usize) -> usize {
    context_tokens.saturating_sub(reserved_output_tokens) * CHARS_PER_TOKEN
}

/// Substitutes the sentence, the triplet cap and the context into `template`.
///
/// When the prompt exceeds `budget` characters, the lowest-ranked context
/// items are dropped until it fits. With no context item left, the zero-shot
/// template of the same kind is rendered instead.
pub fn render(
    template: &PromptTemplate,
    sentence: &str,
    max_triplets: usize,
    context: Option<&RetrievedContext>,
    budget: usize,
) -> Result<PromptInstance> {
    template.validate()?;
    let max = max_triplets.to_string();
    let available = match (template.shot_mode.context_mode(), context) {
        (None, None) => 0,
        (None, Some(_)) => {
            return Err(Error::Template(format!(
                "{} takes no retrieved context",
                template.name()
            )))
        }
        (Some(_), None) => 0,
        (Some(mode), Some(ctx)) => {
            if ctx.mode() != mode {
                return Err(Error::Template(format!(
                    "{} needs {:?} context, got {:?}",
                    template.name(),
                    mode,
                    ctx.mode()
                )));
            }
            ctx.len()
        }
    };

    let fallback = template_for_zero_context(template);
    let render_with = |n: usize| -> String {
        if n == 0 {
            return fill(&fallback.body, &[(PH_TEXT, sentence), (PH_MAX_TRIPLETS, &max)]);
        }
        let ctx = render_context_items(context.expect("context present when n > 0"), n);
        fill(
            &template.body,
            &[
                (PH_TEXT, sentence),
                (PH_MAX_TRIPLETS, &max),
                (PH_CONTEXT_TRIPLETS, &ctx),
                (PH_EXAMPLES, &ctx),
            ],
        )
    };

    let mut n = available;
    loop {
        let rendered = render_with(n);
        let size = rendered.chars().count();
        if size <= budget {
            return Ok(PromptInstance {
                rendered,
                kind: template.kind,
                shot_mode: template.shot_mode,
                catalog_version: template.version,
                context_items_available: available,
                context_items_included: n,
                truncated: n < available,
            });
        }
        if n == 0 {
            return Err(Error::BudgetTooSmall {
                budget,
                needed: size,
            });
        }
        n -= 1;
    }
}

fn template_for_zero_context(t: &PromptTemplate) -> PromptTemplate {
    match t.shot_mode {
        ShotMode::ContextTriplets | ShotMode::Examples => template(t.kind, ShotMode::Zero),
        _ => t.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatedSentence, Triplet};
    use crate::retriever::Scored;

    const BIG: usize = 100_000;

    fn t(s: &str, p: &str, o: &str) -> Triplet {
        Triplet::new(s, p, o).unwrap()
    }

    fn triplet_ctx(n: usize) -> RetrievedContext {
        RetrievedContext {
            n_kb_requested: n,
            items: ContextItems::Triplets(
                (0..n)
                    .map(|i| Scored {
                        node_id: i,
                        score: 1.0,
                        item: t(&format!("entity {i}"), &format!("rel{i}"), "x"),
                    })
                    .collect(),
            ),
        }
    }

    fn example_ctx(n: usize) -> RetrievedContext {
        RetrievedContext {
            n_kb_requested: n,
            items: ContextItems::Examples(
                (0..n)
                    .map(|i| Scored {
                        node_id: i,
                        score: 1.0,
                        item: AnnotatedSentence::new(
                            format!("Example sentence number {i}."),
                            vec![t(&format!("e{i}"), "r", "x")],
                        ),
                    })
                    .collect(),
            ),
        }
    }

    #[test]
    fn catalog_is_complete_and_valid() {
        let cat = catalog();
        assert_eq!(cat.len(), 12);
        for tpl in &cat {
            tpl.validate().unwrap();
            assert!(tpl.body.contains("(subject, predicate, object)"));
            assert_eq!(tpl.version, CATALOG_VERSION);
        }
        let names: std::collections::HashSet<_> = cat.iter().map(|t| t.name()).collect();
        assert_eq!(names.len(), 12);
    }

    #[test]
    fn zero_shot_substitution() {
        let p = render(&template(PromptKind::Base, ShotMode::Zero), "X", 7, None, BIG).unwrap();
        assert!(p.rendered.contains("Sentence: X\n"));
        assert!(p.rendered.contains("at most 7 triplets"));
        assert!(!p.rendered.contains("Context Triplets:"));
        assert!(!p.rendered.contains("Examples:"));
        for ph in PLACEHOLDERS {
            assert!(!p.rendered.contains(&format!("{{{ph}}}")));
        }
    }

    #[test]
    fn sentence_text_is_not_rescanned() {
        let p = render(&template(PromptKind::Base, ShotMode::Zero), "literal {max_triplets}", 3, None, BIG).unwrap();
        assert!(p.rendered.contains("Sentence: literal {max_triplets}\n"));
    }

    #[test]
    fn static_two_shot_is_input_independent() {
        let tpl = template(PromptKind::Base, ShotMode::StaticTwoShot);
        let a = render(&tpl, "first", 7, None, BIG).unwrap().rendered;
        let b = render(&tpl, "second", 7, None, BIG).unwrap().rendered;
        assert!(a.contains("(Apollo 12, operator, NASA)"));
        assert_eq!(a.replace("first", ""), b.replace("second", ""));
    }

    #[test]
    fn zero_shot_renders_differ_only_in_text() {
        let tpl = template(PromptKind::Documented, ShotMode::Zero);
        let a = render(&tpl, "AAAA", 4, None, BIG).unwrap().rendered;
        let b = render(&tpl, "BBBB", 4, None, BIG).unwrap().rendered;
        assert_eq!(a.replace("AAAA", "@"), b.replace("BBBB", "@"));
    }

    #[test]
    fn context_triplets_block() {
        let tpl = template(PromptKind::Base, ShotMode::ContextTriplets);
        let p = render(&tpl, "S", 3, Some(&triplet_ctx(2)), BIG).unwrap();
        assert!(p
            .rendered
            .contains("Context Triplets:\n(entity 0, rel0, x)\n(entity 1, rel1, x)\n"));
        assert_eq!(p.context_items_included, 2);
        assert!(!p.truncated);
    }

    #[test]
    fn empty_context_degenerates_to_zero_shot() {
        for kind in PromptKind::ALL {
            let zero = render(&template(kind, ShotMode::Zero), "S", 3, None, BIG).unwrap();
            for shot in [ShotMode::ContextTriplets, ShotMode::Examples] {
                let mode = shot.context_mode().unwrap();
                let empty = RetrievedContext::empty(mode, 5);
                let p = render(&template(kind, shot), "S", 3, Some(&empty), BIG).unwrap();
                assert_eq!(p.rendered, zero.rendered);
                assert_eq!(p.context_items_included, 0);
                assert!(!p.truncated);
                let none = render(&template(kind, shot), "S", 3, None, BIG).unwrap();
                assert_eq!(none.rendered, zero.rendered);
            }
        }
    }

    #[test]
    fn budget_drops_lowest_ranked() {
        let tpl = template(PromptKind::Base, ShotMode::Examples);
        let ctx = example_ctx(5);
        let three = render(&tpl, "S", 3, Some(&ctx.truncated(3)), BIG).unwrap();
        let budget = three.rendered.chars().count();
        let p = render(&tpl, "S", 3, Some(&ctx), budget).unwrap();
        assert!(p.truncated);
        assert_eq!(p.context_items_included, 3);
        assert_eq!(p.rendered, three.rendered);
        assert!(p.rendered.contains("Example sentence number 2."));
        assert!(!p.rendered.contains("Example sentence number 3."));
    }

    #[test]
    fn budget_too_small() {
        let tpl = template(PromptKind::Base, ShotMode::ContextTriplets);
        let err = render(&tpl, "S", 3, Some(&triplet_ctx(3)), 10).unwrap_err();
        assert!(matches!(err, Error::BudgetTooSmall { budget: 10, .. }));
    }

    #[test]
    fn mode_mismatch_rejected() {
        let tpl = template(PromptKind::Base, ShotMode::ContextTriplets);
        assert!(render(&tpl, "S", 3, Some(&example_ctx(1)), BIG).is_err());
        let zero = template(PromptKind::Base, ShotMode::Zero);
        assert!(render(&zero, "S", 3, Some(&triplet_ctx(1)), BIG).is_err());
    }

    #[test]
    fn chain_of_thought_asks_for_steps() {
        let body = template(PromptKind::ChainOfThought, ShotMode::Zero).body;
        let s1 = body.find("Step 1").unwrap();
        let s3 = body.find("Step 3").unwrap();
        let answer = body.find("\"Triplets:\"").unwrap();
        assert!(s1 < s3 && s3 < answer);
    }

    #[test]
    fn validate_catches_bad_body() {
        let mut tpl = template(PromptKind::Base, ShotMode::Zero);
        tpl.body.push_str("{text}");
        assert!(tpl.validate().is_err());
        let mut tpl = template(PromptKind::Base, ShotMode::Zero);
        tpl.body.push_str("{examples}");
        assert!(tpl.validate().is_err());
    }

    #[test]
    fn budget_from_window() {
        assert_eq!(budget_for_context_window(2048, 256), (2048 - 256) * 4);
        assert_eq!(budget_for_context_window(100, 256), 0);
    }
}
