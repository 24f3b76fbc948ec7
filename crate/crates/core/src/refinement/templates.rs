//! Rule-based QA template instantiation.
//!
//! A template's text may use the placeholders `{image}`, `{image_a}`,
//! `{image_b}`, `{emotion}`, `{dimension}`, `{level}` and `{options}`; each
//! answer rule binds a fixed subset of them.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotationRecord, Level, RefineError, Result};
use crate::taxonomy::{EmotionSet, VadDimension};

pub const INSTRUCTION_SCHEMA: &str = "instruction/1";

/// Normalized values at or below this are "low".
pub const LOW_LEVEL_MAX: f64 = 0.4;
/// Normalized values at or above this are "high".
pub const HIGH_LEVEL_MIN: f64 = 0.6;

const CHOICE_LETTERS: [&str; 4] = ["A", "B", "C", "D"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    PerceptionSingle,
    PerceptionPair,
    Ranking,
    Description,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelDimension {
    Dec,
    Ranking,
    Valence,
    Arousal,
    Dominance,
}

impl LabelDimension {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelDimension::Dec => "dec",
            LabelDimension::Ranking => "ranking",
            LabelDimension::Valence => "valence",
            LabelDimension::Arousal => "arousal",
            LabelDimension::Dominance => "dominance",
        }
    }

    fn vad(self) -> Option<VadDimension> {
        match self {
            LabelDimension::Valence => Some(VadDimension::Valence),
            LabelDimension::Arousal => Some(VadDimension::Arousal),
            LabelDimension::Dominance => Some(VadDimension::Dominance),
            _ => None,
        }
    }

    fn present_in(self, r: &AnnotationRecord) -> bool {
        match self {
            LabelDimension::Dec => r.dec.is_some(),
            LabelDimension::Ranking => r.ranking.is_some(),
            _ => r.vad.is_some(),
        }
    }
}

/// How the answer is derived, which placeholders are bound and which
/// records (or record pairs) qualify.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerRule {
    /// Yes for the dominant emotion, no for a sampled distractor.
    DecYesNo,
    /// Four options, the dominant emotion placed round-robin.
    DecChoice,
    /// Yes for the record's level on a round-robin dimension, no for another level.
    LevelYesNo,
    /// Which of two images is higher on a round-robin dimension; pairs whose
    /// levels coincide are skipped.
    PairHigher,
    /// The top-3 ranking, comma separated.
    RankingList,
    /// Free-form answer produced by a later generation step.
    Open,
}

impl AnswerRule {
    fn binds(self) -> &'static [&'static str] {
        match self {
            AnswerRule::DecYesNo => &["image", "emotion"],
            AnswerRule::DecChoice => &["image", "options"],
            AnswerRule::LevelYesNo => &["image", "dimension", "level"],
            AnswerRule::PairHigher => &["image_a", "image_b", "dimension"],
            AnswerRule::RankingList | AnswerRule::Open => &["image"],
        }
    }

    fn kind(self) -> TemplateKind {
        match self {
            AnswerRule::DecYesNo | AnswerRule::DecChoice | AnswerRule::LevelYesNo => {
                TemplateKind::PerceptionSingle
            }
            AnswerRule::PairHigher => TemplateKind::PerceptionPair,
            AnswerRule::RankingList => TemplateKind::Ranking,
            AnswerRule::Open => TemplateKind::Description,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaTemplate {
    pub id: String,
    pub kind: TemplateKind,
    pub text: String,
    /// Label dimensions a record must carry.
    pub requires: Vec<LabelDimension>,
    pub answer: AnswerRule,
}

impl QaTemplate {
    fn invalid(&self, reason: impl Into<String>) -> RefineError {
        RefineError::InvalidTemplate {
            template: self.id.clone(),
            reason: reason.into(),
        }
    }

    fn vad_dims(&self) -> Vec<VadDimension> {
        self.requires.iter().filter_map(|d| d.vad()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(self.invalid("empty id"));
        }
        if self.answer.kind() != self.kind {
            return Err(self.invalid(format!(
                "answer rule {:?} does not fit kind {:?}",
                self.answer, self.kind
            )));
        }
        for name in placeholders(&self.text).map_err(|e| self.invalid(e))? {
            if !self.answer.binds().contains(&name) {
                return Err(self.invalid(format!("placeholder `{{{name}}}` has no binding")));
            }
        }
        let needs = |d: LabelDimension| self.requires.contains(&d);
        let ok = match self.answer {
            AnswerRule::DecYesNo | AnswerRule::DecChoice => needs(LabelDimension::Dec),
            AnswerRule::RankingList => needs(LabelDimension::Ranking),
            AnswerRule::LevelYesNo | AnswerRule::PairHigher => !self.vad_dims().is_empty(),
            AnswerRule::Open => true,
        };
        if !ok {
            return Err(self.invalid("requires does not cover the answer rule"));
        }
        Ok(())
    }
}

fn placeholders(text: &str) -> std::result::Result<Vec<&str>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| "unclosed placeholder".to_string())?;
        let name = &after[..close];
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
            return Err(format!("bad placeholder `{{{name}}}`"));
        }
        out.push(name);
        rest = &after[close + 1..];
    }
    if rest.contains('}') {
        return Err("unmatched `}`".into());
    }
    Ok(out)
}

fn fill(text: &str, bindings: &[(&str, &str)]) -> String {
    let mut out = text.to_string();
    for (k, v) in bindings {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Qualitative level of a normalized VAD value.
pub fn qualitative_level(v: f64) -> Level {
    if v <= LOW_LEVEL_MAX {
        Level::Low
    } else if v >= HIGH_LEVEL_MIN {
        Level::High
    } else {
        Level::Medium
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub schema: String,
    pub id: String,
    pub template_id: String,
    pub kind: TemplateKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dimension: Option<LabelDimension>,
    pub images: Vec<String>,
    pub question: String,
    /// `None` when the answer still has to be generated.
    pub answer: Option<String>,
}

fn vad_of(r: &AnnotationRecord, d: VadDimension) -> f64 {
    r.vad.expect("checked before use")[d.index()]
}

fn label_dim(d: VadDimension) -> LabelDimension {
    match d {
        VadDimension::Valence => LabelDimension::Valence,
        VadDimension::Arousal => LabelDimension::Arousal,
        VadDimension::Dominance => LabelDimension::Dominance,
    }
}

/// Instantiates every template over every record (pairs for pair templates).
///
/// Templates are processed in order; records keep input order except for
/// pair formation, which pairs consecutive records of a seeded shuffle.
pub fn instantiate_templates(
    records: &[AnnotationRecord],
    templates: &[QaTemplate],
    set: &EmotionSet,
    seed: u64,
) -> Result<Vec<InstructionRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in templates {
        t.validate()?;
        for r in records {
            if let Some(d) = t.requires.iter().find(|d| !d.present_in(r)) {
                return Err(RefineError::MissingDimension {
                    template: t.id.clone(),
                    dimension: d.as_str().to_string(),
                    image_id: r.image_id.clone(),
                });
            }
        }
        let emit = |out: &mut Vec<InstructionRecord>,
                    suffix: String,
                    dimension: Option<LabelDimension>,
                    images: Vec<String>,
                    question: String,
                    answer: Option<String>| {
            out.push(InstructionRecord {
                schema: INSTRUCTION_SCHEMA.to_string(),
                id: format!("{}/{}", t.id, suffix),
                template_id: t.id.clone(),
                kind: t.kind,
                dimension,
                images,
                question,
                answer,
            })
        };
        let dims = t.vad_dims();
        match t.answer {
            AnswerRule::PairHigher => {
                let mut order: Vec<usize> = (0..records.len()).collect();
                order.shuffle(&mut rng);
                let mut emitted = 0usize;
                for pair in order.chunks_exact(2) {
                    let (x, y) = (&records[pair[0]], &records[pair[1]]);
                    let d = dims[emitted % dims.len()];
                    let (vx, vy) = (vad_of(x, d), vad_of(y, d));
                    if qualitative_level(vx) == qualitative_level(vy) {
                        continue;
                    }
                    let (hi, lo) = if vx > vy { (x, y) } else { (y, x) };
                    let (a, b, answer) = if emitted.is_multiple_of(2) {
                        (hi, lo, "A")
                    } else {
                        (lo, hi, "B")
                    };
                    let question = fill(
                        &t.text,
                        &[
                            ("image_a", &a.image_id),
                            ("image_b", &b.image_id),
                            ("dimension", d.as_str()),
                        ],
                    );
                    emit(
                        &mut out,
                        format!("{}+{}", a.image_id, b.image_id),
                        Some(label_dim(d)),
                        vec![a.image_id.clone(), b.image_id.clone()],
                        question,
                        Some(answer.to_string()),
                    );
                    emitted += 1;
                }
            }
            _ => {
                for (i, r) in records.iter().enumerate() {
                    let img = r.image_id.as_str();
                    match t.answer {
                        AnswerRule::DecYesNo => {
                            let dec = r.dec.as_deref().expect("checked");
                            let others: Vec<&str> = set.ids().filter(|l| *l != dec).collect();
                            let distractor = *others
                                .choose(&mut rng)
                                .ok_or_else(|| t.invalid("emotion set has no distractor label"))?;
                            for (emotion, answer) in [(dec, "yes"), (distractor, "no")] {
                                emit(
                                    &mut out,
                                    format!("{img}/{answer}"),
                                    Some(LabelDimension::Dec),
                                    vec![img.to_string()],
                                    fill(&t.text, &[("image", img), ("emotion", emotion)]),
                                    Some(answer.to_string()),
                                );
                            }
                        }
                        AnswerRule::DecChoice => {
                            let dec = r.dec.as_deref().expect("checked");
                            let mut others: Vec<&str> = set.ids().filter(|l| *l != dec).collect();
                            if others.len() < CHOICE_LETTERS.len() - 1 {
                                return Err(t.invalid("emotion set too small for four options"));
                            }
                            others.shuffle(&mut rng);
                            let slot = i % CHOICE_LETTERS.len();
                            let mut options: Vec<&str> =
                                others[..CHOICE_LETTERS.len() - 1].to_vec();
                            options.insert(slot, dec);
                            let listed = options
                                .iter()
                                .zip(CHOICE_LETTERS)
                                .map(|(o, l)| format!("({l}) {o}"))
                                .collect::<Vec<_>>()
                                .join(" ");
                            emit(
                                &mut out,
                                img.to_string(),
                                Some(LabelDimension::Dec),
                                vec![img.to_string()],
                                fill(&t.text, &[("image", img), ("options", &listed)]),
                                Some(CHOICE_LETTERS[slot].to_string()),
                            );
                        }
                        AnswerRule::LevelYesNo => {
                            let d = dims[i % dims.len()];
                            let actual = qualitative_level(vad_of(r, d));
                            let wrong: Vec<Level> = [Level::Low, Level::Medium, Level::High]
                                .into_iter()
                                .filter(|l| *l != actual)
                                .collect();
                            let distractor = *wrong.choose(&mut rng).expect("two other levels");
                            for (level, answer) in [(actual, "yes"), (distractor, "no")] {
                                emit(
                                    &mut out,
                                    format!("{img}/{}/{answer}", d.as_str()),
                                    Some(label_dim(d)),
                                    vec![img.to_string()],
                                    fill(
                                        &t.text,
                                        &[
                                            ("image", img),
                                            ("dimension", d.as_str()),
                                            ("level", level.as_str()),
                                        ],
                                    ),
                                    Some(answer.to_string()),
                                );
                            }
                        }
                        AnswerRule::RankingList => {
                            let ranking = r.ranking.as_ref().expect("checked");
                            emit(
                                &mut out,
                                img.to_string(),
                                Some(LabelDimension::Ranking),
                                vec![img.to_string()],
                                fill(&t.text, &[("image", img)]),
                                Some(ranking.join(", ")),
                            );
                        }
                        AnswerRule::Open => emit(
                            &mut out,
                            img.to_string(),
                            None,
                            vec![img.to_string()],
                            fill(&t.text, &[("image", img)]),
                            None,
                        ),
                        AnswerRule::PairHigher => unreachable!(),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// A small built-in template set covering every answer rule.
pub fn default_templates() -> Vec<QaTemplate> {
    let t = |id: &str, kind, text: &str, requires: &[LabelDimension], answer| QaTemplate {
        id: id.to_string(),
        kind,
        text: text.to_string(),
        requires: requires.to_vec(),
        answer,
    };
    use LabelDimension::{Arousal, Dec, Dominance, Valence};
    vec![
        t(
            "dec-yes-no",
            TemplateKind::PerceptionSingle,
            "Is {emotion} the dominant emotion evoked by image {image}? Reply yes or no.",
            &[Dec],
            AnswerRule::DecYesNo,
        ),
        t(
            "dec-choice",
            TemplateKind::PerceptionSingle,
            "Which emotion does image {image} evoke most? {options}",
            &[Dec],
            AnswerRule::DecChoice,
        ),
        t(
            "level-yes-no",
            TemplateKind::PerceptionSingle,
            "Would you rate the {dimension} of image {image} as {level}? Reply yes or no.",
            &[Valence, Arousal, Dominance],
            AnswerRule::LevelYesNo,
        ),
        t(
            "pair-higher",
            TemplateKind::PerceptionPair,
            "Image A is {image_a} and image B is {image_b}. Which one is higher in {dimension}? Reply A or B.",
            &[Valence, Arousal, Dominance],
            AnswerRule::PairHigher,
        ),
        t(
            "ranking-top3",
            TemplateKind::Ranking,
            "List the three emotions image {image} evokes, strongest first.",
            &[LabelDimension::Ranking],
            AnswerRule::RankingList,
        ),
        t(
            "describe",
            TemplateKind::Description,
            "Describe the emotional content of image {image} and what in the scene produces it.",
            &[],
            AnswerRule::Open,
        ),
    ]
}
