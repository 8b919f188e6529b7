//! ROUGE-1/2/L (full-length F1) and QA accuracy.
//!
//! Candidate text for a system summary is its selected source tokens in
//! source order. Scoring is on raw lowercased tokens unless
//! [`RougeOptions`] asks for stopword removal or light stemming.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Model;
use crate::pipeline::{greedy_mask, Example};
use crate::qa_reward::{encode_questions, qa_forward};
use crate::cloze::AnswerVocab;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        let precision = if cand == 0 { 0.0 } else { overlap as f64 / cand as f64 };
        let recall = if reference == 0 { 0.0 } else { overlap as f64 / reference as f64 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    out
}

/// Clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(candidate: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap = r
        .iter()
        .map(|(g, &k)| k.min(c.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        c.values().sum(),
        r.values().sum(),
    )
}

/// Length of the longest common subsequence, by dynamic programming over
/// two rolling rows.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RougeOptions {
    pub remove_stopwords: bool,
    pub stem: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it",
    "its", "of", "on", "that", "the", "to", "was", "were", "will", "with", "this", "but", "or",
];

/// Strips one common English suffix. Deliberately crude; enough to merge
/// plural and tense variants.
pub fn light_stem(tok: &str) -> String {
    for suf in ["ing", "edly", "ed", "ies", "es", "s", "ly"] {
        if tok.len() > suf.len() + 2 && tok.ends_with(suf) {
            let stem = &tok[..tok.len() - suf.len()];
            return if suf == "ies" { format!("{stem}y") } else { stem.to_string() };
        }
    }
    tok.to_string()
}

pub fn preprocess<S: AsRef<str>>(tokens: &[S], opts: RougeOptions) -> Vec<String> {
    tokens
        .iter()
        .map(|t| t.as_ref().to_lowercase())
        .filter(|t| !(opts.remove_stopwords && STOPWORDS.contains(&t.as_str())))
        .map(|t| if opts.stem { light_stem(&t) } else { t })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeTriple {
    pub rouge_1: RougeScore,
    pub rouge_2: RougeScore,
    pub rouge_l: RougeScore,
}

/// ROUGE-1/2/L against each reference; per metric, the reference with the
/// highest F1 is reported.
pub fn rouge_all<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], opts: RougeOptions) -> RougeTriple {
    let cand = preprocess(candidate, opts);
    let best = |f: &dyn Fn(&[String]) -> RougeScore| {
        references
            .iter()
            .map(|r| f(&preprocess(r, opts)))
            .fold(RougeScore::default(), |a, b| if b.f1 > a.f1 { b } else { a })
    };
    RougeTriple {
        rouge_1: best(&|r| rouge_n(&cand, r, 1)),
        rouge_2: best(&|r| rouge_n(&cand, r, 2)),
        rouge_l: best(&|r| rouge_l(&cand, r)),
    }
}

/// Mean of per-document scores, field by field.
pub fn mean_triple(scores: &[RougeTriple]) -> RougeTriple {
    if scores.is_empty() {
        return RougeTriple::default();
    }
    let n = scores.len() as f64;
    let avg = |f: &dyn Fn(&RougeTriple) -> RougeScore| RougeScore {
        precision: scores.iter().map(|s| f(s).precision).sum::<f64>() / n,
        recall: scores.iter().map(|s| f(s).recall).sum::<f64>() / n,
        f1: scores.iter().map(|s| f(s).f1).sum::<f64>() / n,
    };
    RougeTriple {
        rouge_1: avg(&|s| s.rouge_1),
        rouge_2: avg(&|s| s.rouge_2),
        rouge_l: avg(&|s| s.rouge_l),
    }
}

/// Correct / total answers over `examples`, reading greedy summaries.
/// Gold answers outside the training answer space always count as wrong.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QaAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl QaAccuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Scores one summary's predictions against gold indices.
pub fn count_correct(predictions: &[Option<usize>], golds: &[usize]) -> QaAccuracy {
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, &g)| g != AnswerVocab::UNSEEN && **p == Some(g))
        .count();
    QaAccuracy {
        correct,
        total: golds.len(),
    }
}

pub fn qa_accuracy(model: &Model, examples: &[Example]) -> Result<QaAccuracy> {
    let mut acc = QaAccuracy::default();
    for ex in examples {
        let mask = greedy_mask(model, ex)?;
        let summary: Vec<usize> = mask.apply(&ex.doc_tokens).copied().collect();
        let qs = encode_questions(&model.params, &ex.questions)?;
        let fwd = qa_forward(&model.params, &qs, &summary)?;
        let a = count_correct(&fwd.predictions, &qs.golds);
        acc.correct += a.correct;
        acc.total += a.total;
    }
    Ok(acc)
}
