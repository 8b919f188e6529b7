//! Cloze question generation from reference abstracts.
//!
//! Each abstract sentence yields one question: the sentence with its answer
//! token replaced by [`PLACEHOLDER`]. The answer is either a named entity
//! (picked at random when a sentence has several, falling back to the root
//! word when it has none) or the sentence's dependency root. A document
//! always yields exactly `k` pairs: extra sentences are dropped and short
//! abstracts are cycled from the top.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusRecord, Document, EntityKind, EntitySpan, PLACEHOLDER};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaMode {
    Entity,
    Keyword,
}

impl fmt::Display for QaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QaMode::Entity => "entity",
            QaMode::Keyword => "keyword",
        })
    }
}

impl FromStr for QaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(QaMode::Entity),
            "keyword" => Ok(QaMode::Keyword),
            other => Err(Error::Config(format!("unknown QA mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    /// Abstract sentence with exactly one [`PLACEHOLDER`].
    pub question_tokens: Vec<String>,
    /// Multi-token entities are joined with `_`.
    pub answer_token: String,
    /// Index into the [`AnswerVocab`]; [`AnswerVocab::UNSEEN`] until assigned.
    pub answer_index: usize,
    pub origin_sentence: usize,
}

impl QaPair {
    pub fn question_text(&self) -> String {
        self.question_tokens.join(" ")
    }
}

/// Blanks `[start, end)` of `sentence` and returns the pair.
fn blank_span(sentence: &[String], start: usize, end: usize, origin: usize) -> QaPair {
    let mut q = Vec::with_capacity(sentence.len() + 1 - (end - start));
    q.extend_from_slice(&sentence[..start]);
    q.push(PLACEHOLDER.to_string());
    q.extend_from_slice(&sentence[end..]);
    QaPair {
        question_tokens: q,
        answer_token: sentence[start..end].join("_"),
        answer_index: AnswerVocab::UNSEEN,
        origin_sentence: origin,
    }
}

/// Exactly `k` Cloze pairs for `doc`.
///
/// The rng is consumed only to choose among several entities of a sentence,
/// one draw per such sentence in sentence order.
pub fn make_qa_pairs<R: Rng + ?Sized>(doc: &Document, mode: QaMode, k: usize, rng: &mut R) -> Vec<QaPair> {
    let m = doc.abstract_sentences.len().min(k);
    let mut distinct = Vec::with_capacity(m);
    for s in 0..m {
        let sentence = &doc.abstract_sentences[s];
        let root = doc.root_index[s];
        let spans = &doc.entity_spans[s];
        let pair = match mode {
            QaMode::Entity if !spans.is_empty() => {
                let pick = if spans.len() == 1 {
                    0
                } else {
                    rng.gen_range(0..spans.len())
                };
                let span = spans[pick];
                blank_span(sentence, span.start, span.end, s)
            }
            _ => blank_span(sentence, root, root + 1, s),
        };
        distinct.push(pair);
    }
    if distinct.is_empty() {
        return Vec::new();
    }
    (0..k).map(|i| distinct[i % distinct.len()].clone()).collect()
}

/// Per-document generator seed.
pub fn doc_seed(seed: u64, doc_index: usize) -> u64 {
    seed ^ doc_index as u64
}

/// Pairs for every document, each with its own seeded stream.
pub fn make_all_pairs(docs: &[Document], mode: QaMode, k: usize, seed: u64) -> Vec<Vec<QaPair>> {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(doc_seed(seed, i));
            make_qa_pairs(d, mode, k, &mut rng)
        })
        .collect()
}

/// Categorical answer space for the QA reward. Index 0 is reserved for
/// answers never seen in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AnswerVocabRepr", into = "AnswerVocabRepr")]
pub struct AnswerVocab {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct AnswerVocabRepr {
    answers: Vec<String>,
}

impl From<AnswerVocabRepr> for AnswerVocab {
    fn from(r: AnswerVocabRepr) -> Self {
        Self::from_answers(r.answers.into_iter().skip(1))
    }
}

impl From<AnswerVocab> for AnswerVocabRepr {
    fn from(v: AnswerVocab) -> Self {
        AnswerVocabRepr { answers: v.answers }
    }
}

impl AnswerVocab {
    pub const UNSEEN: usize = 0;
    pub const UNSEEN_TOKEN: &'static str = "<unseen>";

    pub fn from_answers<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let sorted: BTreeSet<String> = answers
            .into_iter()
            .map(Into::into)
            .filter(|a| a != Self::UNSEEN_TOKEN)
            .collect();
        let mut list = vec![Self::UNSEEN_TOKEN.to_string()];
        list.extend(sorted);
        let index = list.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Self { answers: list, index }
    }

    /// Size including the reserved entry.
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Number of distinct real answers.
    pub fn unique_answers(&self) -> usize {
        self.answers.len() - 1
    }

    pub fn index(&self, answer: &str) -> usize {
        self.index.get(answer).copied().unwrap_or(Self::UNSEEN)
    }

    pub fn answer(&self, i: usize) -> Option<&str> {
        self.answers.get(i).map(String::as_str)
    }

    /// Fills in `answer_index` for each pair.
    pub fn assign(&self, pairs: &mut [QaPair]) {
        for p in pairs {
            p.answer_index = self.index(&p.answer_token);
        }
    }
}

/// Union of all answers produced over the training split.
pub fn build_answer_vocab(train: &[Document], mode: QaMode, k: usize, seed: u64) -> AnswerVocab {
    AnswerVocab::from_answers(
        make_all_pairs(train, mode, k, seed)
            .into_iter()
            .flatten()
            .map(|p| p.answer_token),
    )
}

const MODALS: &[&str] = &[
    "will", "would", "should", "shall", "can", "could", "may", "might", "must",
];

const COMMON_VERBS: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "has", "have", "had", "said", "says", "say", "do",
    "does", "did", "says", "told", "made", "make", "gets", "got", "took", "take", "gave", "give",
    "went", "goes", "came", "comes", "found", "finds", "left", "won", "lost", "met", "hit",
];

const LEADING_FUNCTION_WORDS: &[&str] = &[
    "the", "a", "an", "in", "on", "at", "for", "but", "and", "or", "it", "he", "she", "they",
    "we", "this", "that", "these", "those", "his", "her", "their", "its", "after", "before",
    "when", "if", "as", "there",
];

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

/// Heuristic entities: maximal runs of capitalized tokens, ignoring a
/// capitalized function word at sentence start.
pub fn heuristic_entities(sentence: &[String]) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut t = 0;
    while t < sentence.len() {
        let skip_initial = t == 0
            && LEADING_FUNCTION_WORDS.contains(&sentence[0].to_lowercase().as_str());
        if is_capitalized(&sentence[t]) && !skip_initial {
            let start = t;
            while t < sentence.len() && is_capitalized(&sentence[t]) {
                t += 1;
            }
            spans.push(EntitySpan {
                start,
                end: t,
                kind: EntityKind::Misc,
            });
        } else {
            t += 1;
        }
    }
    spans
}

/// Heuristic root: the word after a modal, else the first common verb or
/// `-ed` form, else the first token.
pub fn heuristic_root(sentence: &[String]) -> usize {
    for (t, tok) in sentence.iter().enumerate() {
        let lower = tok.to_lowercase();
        if MODALS.contains(&lower.as_str()) && t + 1 < sentence.len() {
            return t + 1;
        }
        if COMMON_VERBS.contains(&lower.as_str()) || (lower.len() > 4 && lower.ends_with("ed")) {
            return t;
        }
    }
    0
}

/// Fills missing `entities` / `roots` of a cased record with the heuristics
/// above. Existing annotations are kept.
pub fn annotate_record(mut rec: CorpusRecord) -> CorpusRecord {
    if rec.entities.is_none() {
        rec.entities = Some(rec.abstract_.iter().map(|s| heuristic_entities(s)).collect());
    }
    if rec.roots.is_none() {
        rec.roots = Some(rec.abstract_.iter().map(|s| heuristic_root(s)).collect());
    }
    rec
}
