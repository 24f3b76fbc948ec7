//! Tolerant extraction of answers from free-form benchmark responses.
//!
//! | kind        | rule (first match wins)                                                    |
//! |-------------|----------------------------------------------------------------------------|
//! | choice      | `(X)`; else `answer is X` / `answer: X`; else a standalone capital `A`-`F` |
//! | yesno       | first word `yes` or `no`                                                   |
//! | ranking     | vocabulary labels in order of appearance, first 3 distinct                 |
//! | score       | first decimal number                                                       |
//! | label       | first vocabulary label                                                     |
//! | description | the trimmed text                                                           |
//!
//! Without a vocabulary, ranking splits on commas and label takes the first
//! word. Empty or unmatched input yields [`BenchPayload::Unparsed`].

use serde::{Deserialize, Serialize};

use crate::taxonomy::canonical_label;

const CHOICES: &str = "ABCDEF";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Choice,
    YesNo,
    Ranking,
    Score,
    Label,
    Description,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum BenchPayload {
    Choice(char),
    YesNo(bool),
    Ranking(Vec<String>),
    Score(f64),
    Label(String),
    Text(String),
    Unparsed,
}

fn words(text: &str) -> Vec<(usize, String)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push((s, text[s..i].to_lowercase()));
        }
    }
    if let Some(s) = start {
        out.push((s, text[s..].to_lowercase()));
    }
    out
}

fn label_words(label: &str) -> Vec<String> {
    words(&label.replace('_', " "))
        .into_iter()
        .map(|(_, w)| w)
        .collect()
}

/// Vocabulary labels in order of appearance (repeats included).
fn find_labels(text: &str, vocab: &[&str]) -> Vec<String> {
    let tokens: Vec<String> = words(text).into_iter().map(|(_, w)| w).collect();
    let mut patterns: Vec<(Vec<String>, &str)> =
        vocab.iter().map(|l| (label_words(l), *l)).collect();
    patterns.retain(|(p, _)| !p.is_empty());
    patterns.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match patterns.iter().find(|(p, _)| tokens[i..].starts_with(p)) {
            Some((p, label)) => {
                out.push(canonical_label(label));
                i += p.len();
            }
            None => i += 1,
        }
    }
    out
}

fn parse_choice(text: &str) -> Option<char> {
    let chars: Vec<char> = text.chars().collect();
    for w in chars.windows(3) {
        if w[0] == '(' && w[2] == ')' {
            let c = w[1].to_ascii_uppercase();
            if CHOICES.contains(c) {
                return Some(c);
            }
        }
    }
    let lower = text.to_lowercase();
    let mut from = 0;
    while let Some(pos) = lower[from..].find("answer") {
        let rest = lower[from + pos + "answer".len()..].trim_start();
        let rest = rest
            .strip_prefix("is")
            .or_else(|| rest.strip_prefix(':'))
            .map(str::trim_start);
        if let Some(rest) = rest {
            let rest = rest.strip_prefix('(').unwrap_or(rest);
            let mut it = rest.chars();
            if let Some(c) = it.next() {
                let c = c.to_ascii_uppercase();
                if CHOICES.contains(c) && it.next().is_none_or(|n| !n.is_alphanumeric()) {
                    return Some(c);
                }
            }
        }
        from += pos + "answer".len();
    }
    text.split(|c: char| !c.is_alphanumeric())
        .find(|t| t.len() == 1 && CHOICES.contains(*t))
        .and_then(|t| t.chars().next())
}

fn parse_decimal(text: &str) -> Option<f64> {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let starts_number =
            b[i].is_ascii_digit() || (b[i] == b'.' && b.get(i + 1).is_some_and(u8::is_ascii_digit));
        if starts_number {
            let neg = i > 0 && b[i - 1] == b'-';
            let mut j = i;
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            if j < b.len() && b[j] == b'.' && b.get(j + 1).is_some_and(u8::is_ascii_digit) {
                j += 1;
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let v: f64 = text[i..j].parse().ok()?;
            return Some(if neg { -v } else { v });
        }
        i += 1;
    }
    None
}

/// Never fails; unmatched input is [`BenchPayload::Unparsed`].
pub fn parse_benchmark_response(
    raw: &str,
    kind: ResponseKind,
    vocab: Option<&[&str]>,
) -> BenchPayload {
    let text = raw.trim();
    if text.is_empty() {
        return BenchPayload::Unparsed;
    }
    let parsed = match kind {
        ResponseKind::Choice => parse_choice(text).map(BenchPayload::Choice),
        ResponseKind::YesNo => words(text).into_iter().find_map(|(_, w)| match w.as_str() {
            "yes" => Some(BenchPayload::YesNo(true)),
            "no" => Some(BenchPayload::YesNo(false)),
            _ => None,
        }),
        ResponseKind::Ranking => {
            let found = match vocab {
                Some(v) => find_labels(text, v),
                None => text
                    .split(',')
                    .map(canonical_label)
                    .filter(|l| !l.is_empty())
                    .collect(),
            };
            let mut distinct: Vec<String> = Vec::new();
            for l in found {
                if !distinct.contains(&l) {
                    distinct.push(l);
                }
            }
            distinct.truncate(3);
            (!distinct.is_empty()).then_some(BenchPayload::Ranking(distinct))
        }
        ResponseKind::Score => parse_decimal(text).map(BenchPayload::Score),
        ResponseKind::Label => match vocab {
            Some(v) => find_labels(text, v).into_iter().next(),
            None => words(text).into_iter().next().map(|(_, w)| w),
        }
        .map(BenchPayload::Label),
        ResponseKind::Description => Some(BenchPayload::Text(text.to_string())),
    };
    parsed.unwrap_or(BenchPayload::Unparsed)
}
