//! Lexicon-based VAD synthesis from free-text comments.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{RefineError, Result};
use crate::taxonomy::VadVector;

/// Lemma-keyed VAD norms on a declared raw scale.
///
/// File format, tab separated:
///
/// ```text
/// #scale  1  9                  (optional; or six values: min/max per dimension)
/// lemma   valence  arousal  dominance   (optional header)
/// happy   8.47     6.05     7.21
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct VadLexicon {
    entries: HashMap<String, [f64; 3]>,
    scale: [(f64, f64); 3],
}

impl VadLexicon {
    pub fn new(entries: HashMap<String, [f64; 3]>, scale: [(f64, f64); 3]) -> Result<Self> {
        for (lo, hi) in scale {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(RefineError::Lexicon(format!("bad scale ({lo}, {hi})")));
            }
        }
        let mut lower = HashMap::with_capacity(entries.len());
        for (lemma, v) in entries {
            let key = lemma.trim().to_lowercase();
            if key.is_empty() {
                return Err(RefineError::Lexicon("empty lemma".into()));
            }
            for (x, (lo, hi)) in v.iter().zip(scale) {
                if !x.is_finite() || *x < lo || *x > hi {
                    return Err(RefineError::Lexicon(format!(
                        "`{key}` value {x} outside scale [{lo}, {hi}]"
                    )));
                }
            }
            if lower.insert(key.clone(), v).is_some() {
                return Err(RefineError::Lexicon(format!("duplicate lemma `{key}`")));
            }
        }
        Ok(Self {
            entries: lower,
            scale,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut scale = [(0.0, 1.0); 3];
        let mut entries = HashMap::new();
        let num = |s: &str, line: usize| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| RefineError::Lexicon(format!("line {line}: bad number `{s}`")))
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0].trim() == "#scale" {
                let vals = cols[1..]
                    .iter()
                    .map(|c| num(c, lineno))
                    .collect::<Result<Vec<f64>>>()?;
                scale = match vals.as_slice() {
                    [lo, hi] => [(*lo, *hi); 3],
                    [a, b, c, d, e, f] => [(*a, *b), (*c, *d), (*e, *f)],
                    _ => {
                        return Err(RefineError::Lexicon(format!(
                            "line {lineno}: #scale takes 2 or 6 values"
                        )))
                    }
                };
                continue;
            }
            if cols[0].starts_with('#') || cols[0].trim().eq_ignore_ascii_case("lemma") {
                continue;
            }
            if cols.len() != 4 {
                return Err(RefineError::Lexicon(format!(
                    "line {lineno}: expected 4 columns, got {}",
                    cols.len()
                )));
            }
            let v = [
                num(cols[1], lineno)?,
                num(cols[2], lineno)?,
                num(cols[3], lineno)?,
            ];
            let lemma = cols[0].trim().to_lowercase();
            if entries.insert(lemma.clone(), v).is_some() {
                return Err(RefineError::Lexicon(format!(
                    "line {lineno}: duplicate lemma `{lemma}`"
                )));
            }
        }
        Self::new(entries, scale)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scale(&self) -> [(f64, f64); 3] {
        self.scale
    }

    pub fn get(&self, lemma: &str) -> Option<[f64; 3]> {
        self.entries.get(lemma).copied()
    }
}

/// Lowercased word tokens with surrounding punctuation removed.
///
/// Characters other than letters, digits, `-` and `'` separate tokens;
/// leading and trailing `-`/`'` are trimmed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '\''))
        .map(|t| t.trim_matches(|c| c == '-' || c == '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Exact lemma hits in order of appearance, repeats included.
pub fn extract_vad_keywords(comment: &str, lexicon: &VadLexicon) -> Vec<(String, [f64; 3])> {
    tokenize(comment)
        .into_iter()
        .filter_map(|t| lexicon.get(&t).map(|v| (t, v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VadSignal {
    /// Mean raw VAD over all keyword occurrences.
    Signal {
        raw: [f64; 3],
        keyword_count: usize,
    },
    NoSignal,
}

pub fn generate_vad_label<S: AsRef<str>>(comments: &[S], lexicon: &VadLexicon) -> VadSignal {
    let mut sum = [0.0; 3];
    let mut count = 0;
    for c in comments {
        for (_, v) in extract_vad_keywords(c.as_ref(), lexicon) {
            for d in 0..3 {
                sum[d] += v[d];
            }
            count += 1;
        }
    }
    if count == 0 {
        return VadSignal::NoSignal;
    }
    VadSignal::Signal {
        raw: sum.map(|s| s / count as f64),
        keyword_count: count,
    }
}

/// Per-dimension corpus bounds used for min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Per-dimension min-max normalization over the corpus.
pub fn normalize_corpus_vad(raw: &[[f64; 3]]) -> Result<(Vec<VadVector>, CorpusBounds)> {
    if raw.len() < 2 {
        return Err(RefineError::TooFewValues {
            needed: 2,
            got: raw.len(),
        });
    }
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for v in raw {
        for d in 0..3 {
            if !v[d].is_finite() {
                return Err(RefineError::NoSpread("non-finite VAD value".into()));
            }
            min[d] = min[d].min(v[d]);
            max[d] = max[d].max(v[d]);
        }
    }
    for (d, name) in ["valence", "arousal", "dominance"].iter().enumerate() {
        if max[d] <= min[d] {
            return Err(RefineError::NoSpread((*name).to_string()));
        }
    }
    let out = raw
        .iter()
        .map(|v| {
            let n: [f64; 3] =
                std::array::from_fn(|d| ((v[d] - min[d]) / (max[d] - min[d])).clamp(0.0, 1.0));
            VadVector::new(n[0], n[1], n[2]).expect("normalized into [0, 1]")
        })
        .collect();
    Ok((out, CorpusBounds { min, max }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex() -> VadLexicon {
        VadLexicon::parse(
            "#scale\t0\t1\nlemma\tvalence\tarousal\tdominance\nhappy\t0.9\t0.6\t0.7\ncalm\t0.7\t0.2\t0.6\nwell-being\t0.8\t0.3\t0.6\n",
        )
        .unwrap()
    }

    #[test]
    fn keyword_extraction() {
        let l = lex();
        let hits = extract_vad_keywords("a happy, calm scene", &l);
        let lemmas: Vec<&str> = hits.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(lemmas, ["happy", "calm"]);
        assert_eq!(extract_vad_keywords("HAPPY!!!", &l).len(), 1);
        assert!(extract_vad_keywords("nothing here", &l).is_empty());
        assert_eq!(
            extract_vad_keywords("happy happy 'well-being'", &l).len(),
            3
        );
    }

    #[test]
    fn mean_over_occurrences() {
        let l = lex();
        match generate_vad_label(&["so happy", "calm"], &l) {
            VadSignal::Signal { raw, keyword_count } => {
                assert_eq!(keyword_count, 2);
                for (a, b) in raw.iter().zip([0.8, 0.4, 0.65]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
            VadSignal::NoSignal => panic!("expected signal"),
        }
        assert_eq!(
            generate_vad_label(&["happy"], &l),
            VadSignal::Signal {
                raw: [0.9, 0.6, 0.7],
                keyword_count: 1
            }
        );
        assert_eq!(generate_vad_label(&["grey"], &l), VadSignal::NoSignal);
    }

    #[test]
    fn lexicon_validation() {
        assert!(VadLexicon::parse("happy\t0.9\t0.6\n").is_err());
        assert!(VadLexicon::parse("happy\t0.9\t0.6\t0.7\nHappy\t0.1\t0.1\t0.1\n").is_err());
        assert!(VadLexicon::parse("happy\t9\t0.6\t0.7\n").is_err());
        let wide = VadLexicon::parse("#scale\t1\t9\nhappy\t8.5\t6\t7\n").unwrap();
        assert_eq!(wide.scale(), [(1.0, 9.0); 3]);
    }

    #[test]
    fn normalization() {
        let (out, bounds) =
            normalize_corpus_vad(&[[2.0, 0.0, 1.0], [5.0, 1.0, 0.0], [8.0, 0.5, 0.5]]).unwrap();
        let v: Vec<f64> = out.iter().map(|x| x.valence).collect();
        assert_eq!(v, [0.0, 0.5, 1.0]);
        assert_eq!(bounds.min, [2.0, 0.0, 0.0]);
        let (id, _) = normalize_corpus_vad(&[[0.0; 3], [1.0; 3], [0.25; 3]]).unwrap();
        assert_eq!(id[2].as_array(), [0.25; 3]);
        assert!(normalize_corpus_vad(&[[1.0; 3]]).is_err());
        assert!(matches!(
            normalize_corpus_vad(&[[1.0, 0.0, 0.0], [2.0, 0.0, 1.0]]),
            Err(RefineError::NoSpread(_))
        ));
    }

    proptest! {
        #[test]
        fn comment_order_does_not_matter(perm in Just(vec!["happy calm", "calm", "happy happy", "grey"]).prop_shuffle()) {
            let l = lex();
            let base = generate_vad_label(&["happy calm", "calm", "happy happy", "grey"], &l);
            let shuffled = generate_vad_label(&perm, &l);
            match (base, shuffled) {
                (VadSignal::Signal { raw: a, keyword_count: n }, VadSignal::Signal { raw: b, keyword_count: m }) => {
                    prop_assert_eq!(n, m);
                    for d in 0..3 {
                        prop_assert!((a[d] - b[d]).abs() < 1e-12);
                    }
                }
                _ => prop_assert!(false),
            }
        }
    }
}
