//! Response grammar and the binary format reward.
//!
//! ```text
//! <think>BODY</think> WS <answer>task: TAG
//! PAYLOAD</answer>
//! ```
//!
//! Leading and trailing whitespace around the whole response is ignored. The
//! first line of the answer block is the task tag line (`task: ranking`,
//! `task: vad` or `task: dec`); the rest of the block is the payload. BODY and
//! PAYLOAD must be non-empty and neither block may contain nested tags.

use serde::{Deserialize, Serialize};

use super::TaskKind;
use crate::taxonomy::canonical_label;

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const ANSWER_OPEN: &str = "<answer>";
const ANSWER_CLOSE: &str = "</answer>";
const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Most labels a ranking payload may carry after duplicate collapsing.
pub const MAX_RANKING_LABELS: usize = 3;

/// Most fraction digits accepted in a score payload.
pub const MAX_SCORE_FRACTION_DIGITS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Payload {
    /// Distinct labels in predicted order.
    Ranking(Vec<String>),
    Score(f64),
    Label(String),
    Unparsed,
}

/// Structured view of a raw policy output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub format_ok: bool,
    pub task: Option<TaskKind>,
    pub task_tag: String,
    pub thinking: String,
    pub answer: Payload,
}

impl ParsedResponse {
    fn rejected() -> Self {
        Self {
            format_ok: false,
            task: None,
            task_tag: String::new(),
            thinking: String::new(),
            answer: Payload::Unparsed,
        }
    }
}

fn contains_tag(s: &str) -> bool {
    TAGS.iter().any(|t| s.contains(t))
}

/// Collapses duplicates, keeping first occurrences.
pub fn dedupe_first<S: AsRef<str>>(labels: &[S]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::with_capacity(labels.len());
    for l in labels {
        let l = l.as_ref();
        if !out.contains(&l) {
            out.push(l);
        }
    }
    out
}

pub fn parse_ranking_payload(payload: &str) -> Payload {
    let labels: Vec<String> = payload.split(',').map(canonical_label).collect();
    if labels.iter().any(String::is_empty) {
        return Payload::Unparsed;
    }
    let distinct: Vec<String> = dedupe_first(&labels)
        .into_iter()
        .map(str::to_string)
        .collect();
    if distinct.is_empty() || distinct.len() > MAX_RANKING_LABELS {
        return Payload::Unparsed;
    }
    Payload::Ranking(distinct)
}

/// Accepts `0`, `1`, `0.d` .. `0.dddd` and `1.0` .. `1.0000`.
pub fn parse_unit_decimal(s: &str) -> Option<f64> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (s, None),
    };
    if int != "0" && int != "1" {
        return None;
    }
    if let Some(f) = frac {
        if f.is_empty()
            || f.len() > MAX_SCORE_FRACTION_DIGITS
            || !f.bytes().all(|b| b.is_ascii_digit())
        {
            return None;
        }
        if int == "1" && f.bytes().any(|b| b != b'0') {
            return None;
        }
    }
    s.parse().ok()
}

pub fn parse_label_payload(payload: &str) -> Payload {
    if payload.is_empty() || payload.contains(char::is_whitespace) || payload.contains(',') {
        return Payload::Unparsed;
    }
    Payload::Label(canonical_label(payload))
}

/// Parses a raw response; the format reward is 1 iff it is strictly compliant.
pub fn format_reward(raw: &str) -> (ParsedResponse, f64) {
    let parsed = parse_response(raw);
    let reward = if parsed.format_ok { 1.0 } else { 0.0 };
    (parsed, reward)
}

pub fn parse_response(raw: &str) -> ParsedResponse {
    let s = raw.trim();
    let Some(rest) = s.strip_prefix(THINK_OPEN) else {
        return ParsedResponse::rejected();
    };
    let Some((body, rest)) = rest.split_once(THINK_CLOSE) else {
        return ParsedResponse::rejected();
    };
    let Some(inner) = rest
        .trim_start()
        .strip_prefix(ANSWER_OPEN)
        .and_then(|r| r.strip_suffix(ANSWER_CLOSE))
    else {
        return ParsedResponse::rejected();
    };
    if body.trim().is_empty() || contains_tag(body) || contains_tag(inner) {
        return ParsedResponse::rejected();
    }
    let inner = inner.trim_start();
    let (tag_line, payload) = inner.split_once('\n').unwrap_or((inner, ""));
    let Some(tag) = tag_line.trim().strip_prefix("task:") else {
        return ParsedResponse::rejected();
    };
    let tag = tag.trim();
    let payload = payload.trim();
    let task = TaskKind::from_tag(tag);
    let mut parsed = ParsedResponse {
        format_ok: task.is_some() && !payload.is_empty(),
        task,
        task_tag: tag.to_string(),
        thinking: body.trim().to_string(),
        answer: Payload::Unparsed,
    };
    if parsed.format_ok {
        parsed.answer = match task {
            Some(TaskKind::Ranking) => parse_ranking_payload(payload),
            Some(TaskKind::Vad) => parse_unit_decimal(payload)
                .map(Payload::Score)
                .unwrap_or(Payload::Unparsed),
            Some(TaskKind::Dec) => parse_label_payload(payload),
            None => Payload::Unparsed,
        };
    }
    parsed
}

/// Renders a compliant response; the inverse of [`parse_response`] on
/// well-formed payloads.
pub fn render_response(thinking: &str, task: TaskKind, payload: &str) -> String {
    format!(
        "{THINK_OPEN}{thinking}{THINK_CLOSE}\n{ANSWER_OPEN}task: {}\n{payload}{ANSWER_CLOSE}",
        task.tag()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn compliant_ranking_response() {
        let raw = "<think>bright colors and smiles</think>\n<answer>task: ranking\nJoy, surprise, neutral</answer>";
        let (p, r) = format_reward(raw);
        assert_eq!(r, 1.0);
        assert_eq!(p.task, Some(TaskKind::Ranking));
        assert_eq!(
            p.answer,
            Payload::Ranking(vec!["joy".into(), "surprise".into(), "neutral".into()])
        );
        assert_eq!(p.thinking, "bright colors and smiles");
    }

    #[test]
    fn missing_answer_block_scores_zero() {
        let (p, r) = format_reward("<think>hmm</think> task: ranking joy");
        assert_eq!(r, 0.0);
        assert!(!p.format_ok);
        assert_eq!(
            format_reward("<think>x</think><answer>task: vad\n</answer>").1,
            0.0
        );
    }

    #[test]
    fn unknown_task_tag_scores_zero() {
        let (p, r) = format_reward("<think>x</think><answer>task: emotion\njoy</answer>");
        assert_eq!(r, 0.0);
        assert_eq!(p.task_tag, "emotion");
    }

    #[test]
    fn structural_violations() {
        for raw in [
            "",
            "<answer>task: dec\njoy</answer>",
            "<think></think><answer>task: dec\njoy</answer>",
            "<think>a<think>b</think><answer>task: dec\njoy</answer>",
            "<think>a</think><answer>task: dec\njoy</answer> trailing",
            "<think>a</think> junk <answer>task: dec\njoy</answer>",
            "<think>a</think><answer>dec\njoy</answer>",
            "<think>a</think><answer>task: dec\njoy</answer><answer>x</answer>",
        ] {
            assert_eq!(format_reward(raw).1, 0.0, "{raw:?}");
        }
        assert_eq!(
            format_reward("  \n<think>a</think><answer>\ntask:dec\njoy\n</answer>\n").1,
            1.0
        );
    }

    #[test]
    fn payload_shapes() {
        assert_eq!(parse_unit_decimal("0.7250"), Some(0.725));
        assert_eq!(parse_unit_decimal("1"), Some(1.0));
        assert_eq!(parse_unit_decimal("1.00"), Some(1.0));
        assert_eq!(parse_unit_decimal("0"), Some(0.0));
        for bad in ["0.12345", "1.01", "2", ".5", "0.", "-0.1", "0.5x", "00.5"] {
            assert_eq!(parse_unit_decimal(bad), None, "{bad}");
        }
        assert_eq!(
            parse_ranking_payload("joy, joy ,fear"),
            Payload::Ranking(vec!["joy".into(), "fear".into()])
        );
        assert_eq!(parse_ranking_payload("a,b,c,d"), Payload::Unparsed);
        assert_eq!(parse_ranking_payload("a,,b"), Payload::Unparsed);
        assert_eq!(parse_label_payload("Joy"), Payload::Label("joy".into()));
        assert_eq!(parse_label_payload("joy fear"), Payload::Unparsed);
    }

    #[test]
    fn malformed_payload_keeps_format_credit() {
        let (p, r) = format_reward("<think>a</think><answer>task: vad\nabout 0.7</answer>");
        assert_eq!(r, 1.0);
        assert_eq!(p.answer, Payload::Unparsed);
    }

    proptest! {
        #[test]
        fn render_then_parse_roundtrips(thinking in "[a-z ]{1,40}", score in 0u32..=10000) {
            prop_assume!(!thinking.trim().is_empty());
            let s = format!("{:.4}", score as f64 / 10000.0);
            let raw = render_response(&thinking, TaskKind::Vad, &s);
            let (p, r) = format_reward(&raw);
            prop_assert_eq!(r, 1.0);
            prop_assert_eq!(p.answer, Payload::Score(s.parse().unwrap()));
        }

        #[test]
        fn never_panics_on_garbage(raw in ".{0,200}") {
            let (_, r) = format_reward(&raw);
            prop_assert!(r == 0.0 || r == 1.0);
        }
    }
}
