//! Annotated documents, the word vocabulary, and pre-trained vectors.
//!
//! Corpus files are JSON Lines. Each line carries a pre-tokenized source
//! article, its reference abstract, and per-abstract-sentence annotations
//! (named-entity spans and the dependency root). Offsets are sentence-local,
//! 0-based and end-exclusive.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DEFAULT_MAX_INPUT_LEN: usize = 100;
pub const UNK_TOKEN: &str = "<unk>";
/// The Cloze blank. Also a reserved vocabulary entry.
pub const PLACEHOLDER: &str = "___";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    #[serde(rename = "PER")]
    Person,
    #[serde(rename = "LOC")]
    Location,
    #[serde(rename = "ORG")]
    Organization,
    #[serde(rename = "MISC")]
    Misc,
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityKind::Person => "PER",
            EntityKind::Location => "LOC",
            EntityKind::Organization => "ORG",
            EntityKind::Misc => "MISC",
        })
    }
}

/// `[start, end)` token offsets inside one abstract sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, EntityKind)", into = "(usize, usize, EntityKind)")]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
}

impl From<(usize, usize, EntityKind)> for EntitySpan {
    fn from((start, end, kind): (usize, usize, EntityKind)) -> Self {
        Self { start, end, kind }
    }
}

impl From<EntitySpan> for (usize, usize, EntityKind) {
    fn from(s: EntitySpan) -> Self {
        (s.start, s.end, s.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    /// Lowercased source tokens, all sentences concatenated.
    pub source_tokens: Vec<String>,
    /// `[start, end)` of each source sentence within `source_tokens`.
    pub sentence_bounds: Vec<(usize, usize)>,
    pub abstract_sentences: Vec<Vec<String>>,
    /// Per abstract sentence.
    pub entity_spans: Vec<Vec<EntitySpan>>,
    /// Per abstract sentence.
    pub root_index: Vec<usize>,
}

/// One line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub source: Vec<Vec<String>>,
    #[serde(rename = "abstract")]
    pub abstract_: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<Vec<EntitySpan>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roots: Option<Vec<usize>>,
}

impl Document {
    /// Validates a record, lowercases it, and truncates the source to
    /// `max_input_len` tokens. Abstracts are never truncated.
    pub fn from_record(rec: CorpusRecord, max_input_len: usize) -> Result<Self> {
        let invalid = |message: String| Error::InvalidDocument {
            id: rec.id.clone(),
            message,
        };
        let roots = rec
            .roots
            .clone()
            .ok_or_else(|| invalid("missing `roots`".into()))?;
        if rec.abstract_.is_empty() {
            return Err(invalid("abstract has no sentences".into()));
        }
        if roots.len() != rec.abstract_.len() {
            return Err(invalid(format!(
                "{} roots for {} abstract sentences",
                roots.len(),
                rec.abstract_.len()
            )));
        }
        let entities = rec
            .entities
            .clone()
            .unwrap_or_else(|| vec![Vec::new(); rec.abstract_.len()]);
        if entities.len() != rec.abstract_.len() {
            return Err(invalid(format!(
                "{} entity lists for {} abstract sentences",
                entities.len(),
                rec.abstract_.len()
            )));
        }
        for (s, sent) in rec.abstract_.iter().enumerate() {
            if sent.is_empty() {
                return Err(invalid(format!("abstract sentence {s} is empty")));
            }
            if roots[s] >= sent.len() {
                return Err(invalid(format!(
                    "root {} out of range for abstract sentence {s} of length {}",
                    roots[s],
                    sent.len()
                )));
            }
            for span in &entities[s] {
                if span.start >= span.end || span.end > sent.len() {
                    return Err(invalid(format!(
                        "entity span [{}, {}) out of range for abstract sentence {s} of length {}",
                        span.start,
                        span.end,
                        sent.len()
                    )));
                }
            }
        }

        let max_input_len = max_input_len.max(1);
        let mut source_tokens = Vec::new();
        let mut sentence_bounds = Vec::new();
        for sent in &rec.source {
            if source_tokens.len() >= max_input_len {
                break;
            }
            let room = max_input_len - source_tokens.len();
            let take = sent.len().min(room);
            if take == 0 {
                continue;
            }
            let start = source_tokens.len();
            source_tokens.extend(sent[..take].iter().map(|t| t.to_lowercase()));
            sentence_bounds.push((start, source_tokens.len()));
        }
        if source_tokens.is_empty() {
            return Err(invalid("source has no tokens".into()));
        }

        Ok(Self {
            abstract_sentences: rec
                .abstract_
                .iter()
                .map(|s| s.iter().map(|t| t.to_lowercase()).collect())
                .collect(),
            id: rec.id,
            source_tokens,
            sentence_bounds,
            entity_spans: entities,
            root_index: roots,
        })
    }

    pub fn to_record(&self) -> CorpusRecord {
        CorpusRecord {
            id: self.id.clone(),
            source: self
                .sentence_bounds
                .iter()
                .map(|&(s, e)| self.source_tokens[s..e].to_vec())
                .collect(),
            abstract_: self.abstract_sentences.clone(),
            entities: Some(self.entity_spans.clone()),
            roots: Some(self.root_index.clone()),
        }
    }

    pub fn len(&self) -> usize {
        self.source_tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_tokens.is_empty()
    }

    /// All abstract tokens, sentence after sentence.
    pub fn abstract_tokens(&self) -> Vec<String> {
        self.abstract_sentences.iter().flatten().cloned().collect()
    }
}

/// Reads JSON Lines records without validating them. Blank lines are
/// skipped.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

/// Reads and validates a JSON Lines corpus.
pub fn load_corpus(path: impl AsRef<Path>, max_input_len: usize) -> Result<Vec<Document>> {
    read_records(path)?
        .into_iter()
        .map(|r| Document::from_record(r, max_input_len))
        .collect()
}

pub fn write_records(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Token ↔ index map with two reserved entries: unknown (0) and the Cloze
/// placeholder (1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Self::from_tokens(r.tokens.into_iter().skip(Self::RESERVED))
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { tokens: v.tokens }
    }
}

impl Vocabulary {
    pub const UNK: usize = 0;
    pub const BLANK: usize = 1;
    pub const RESERVED: usize = 2;

    /// Builds a vocabulary from non-reserved tokens, in the given order.
    /// Duplicates and reserved strings are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: vec![UNK_TOKEN.to_string(), PLACEHOLDER.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(UNK_TOKEN.to_string(), Self::UNK);
        v.index.insert(PLACEHOLDER.to_string(), Self::BLANK);
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t.as_ref())).collect()
    }
}

/// Keeps the `cap - 2` most frequent tokens of sources and abstracts.
/// Ties are broken lexicographically.
pub fn build_vocab(docs: &[Document], cap: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for t in d.source_tokens.iter().chain(d.abstract_sentences.iter().flatten()) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| *t != UNK_TOKEN && *t != PLACEHOLDER)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep = cap.saturating_sub(Vocabulary::RESERVED);
    Vocabulary::from_tokens(ranked.into_iter().take(keep).map(|(t, _)| t))
}

/// Seeded U(-0.05, 0.05) table of shape `vocab_len x dim`.
pub fn random_embeddings(vocab_len: usize, dim: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..vocab_len * dim)
        .map(|_| rng.gen_range(-0.05..0.05))
        .collect();
    Tensor::matrix(vocab_len, dim, data).expect("sized by construction")
}

/// Reads `word v1 .. v_dim` lines. Rows of vocabulary words found in the file
/// are copied; every other row keeps its seeded uniform initialization.
/// Matching is case-insensitive and the first occurrence of a word wins.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Tensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = random_embeddings(vocab.len(), dim, seed);
    let mut seen = vec![false; vocab.len()];
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("bad float for `{word}`: {e}"),
            })?;
        if values.len() != dim {
            return Err(Error::EmbeddingDim {
                token: word.to_string(),
                expected: dim,
                actual: values.len(),
            });
        }
        let word = word.to_lowercase();
        if !vocab.contains(&word) {
            continue;
        }
        let i = vocab.index(&word);
        if !seen[i] {
            seen[i] = true;
            table.row_mut(i).copy_from_slice(&values);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn record(id: &str, source: &[&str], abs: &[&str]) -> CorpusRecord {
        CorpusRecord {
            id: id.into(),
            source: source.iter().map(|s| toks(s)).collect(),
            abstract_: abs.iter().map(|s| toks(s)).collect(),
            entities: Some(vec![Vec::new(); abs.len()]),
            roots: Some(vec![0; abs.len()]),
        }
    }

    fn doc(source: &[&str], abs: &[&str]) -> Document {
        Document::from_record(record("d", source, abs), DEFAULT_MAX_INPUT_LEN).unwrap()
    }

    #[test]
    fn truncates_source_to_max_len() {
        let long: Vec<String> = (0..150).map(|i| format!("w{i}")).collect();
        let rec = CorpusRecord {
            source: vec![long[..70].to_vec(), long[70..].to_vec()],
            ..record("x", &[], &["a b"])
        };
        let d = Document::from_record(rec, 100).unwrap();
        assert_eq!(d.source_tokens.len(), 100);
        assert_eq!(d.sentence_bounds, vec![(0, 70), (70, 100)]);
        assert_eq!(d.abstract_sentences[0].len(), 2);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_corpus(f.path(), 100).unwrap().is_empty());
    }

    #[test]
    fn missing_roots_names_document() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"doc-7","source":[["a","b"]],"abstract":[["a"]],"entities":[[]]}}"#).unwrap();
        let err = load_corpus(f.path(), 100).unwrap_err();
        assert!(err.to_string().contains("doc-7"), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"id":"a","source":[["x"]],"abstract":[["x"]],"roots":[0]}}"#).unwrap();
        writeln!(f, "{{not json").unwrap();
        let err = load_corpus(f.path(), 100).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn span_out_of_range_names_document() {
        let mut rec = record("bad-span", &["a b c"], &["x y"]);
        rec.entities = Some(vec![vec![EntitySpan {
            start: 1,
            end: 3,
            kind: EntityKind::Person,
        }]]);
        let err = Document::from_record(rec, 100).unwrap_err();
        assert!(err.to_string().contains("bad-span"));
    }

    #[test]
    fn lowercases_and_parses_entity_triples() {
        let line = r#"{"id":"e","source":[["The","Ebola","vaccine"]],"abstract":[["Ebola","vaccine","lands"]],"entities":[[[0,1,"MISC"]]],"roots":[2]}"#;
        let rec: CorpusRecord = serde_json::from_str(line).unwrap();
        let d = Document::from_record(rec, 100).unwrap();
        assert_eq!(d.source_tokens, toks("the ebola vaccine"));
        assert_eq!(d.entity_spans[0][0].kind, EntityKind::Misc);
        let back = serde_json::to_string(&d.to_record()).unwrap();
        assert!(back.contains(r#"[0,1,"MISC"]"#));
    }

    #[test]
    fn vocab_keeps_most_frequent() {
        let d = doc(&["a a a b b c"], &["a"]);
        // a×4 counting the abstract, b×2, c×1
        let v = build_vocab(std::slice::from_ref(&d), 2 + 2);
        assert_eq!(v.len(), 4);
        assert!(v.contains("a") && v.contains("b"));
        assert_eq!(v.index("c"), Vocabulary::UNK);
        assert_eq!(v.index("never-seen"), Vocabulary::UNK);
        let all = build_vocab(&[d], 100);
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn vocab_ties_break_lexicographically() {
        let d = doc(&["zeta alpha mid"], &["q"]);
        let v = build_vocab(&[d], 3);
        assert_eq!(v.token(2), Some("alpha"));
    }

    #[test]
    fn vocab_serde_round_trip() {
        let v = Vocabulary::from_tokens(["x", "y"]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn embeddings_copy_and_seeded_fill() {
        let vocab = Vocabulary::from_tokens(["cat", "dog"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "Cat 1.0 2.0 3.0").unwrap();
        writeln!(f, "zebra 9 9 9").unwrap();
        let t1 = load_embeddings(f.path(), &vocab, 3, 11).unwrap();
        let t2 = load_embeddings(f.path(), &vocab, 3, 11).unwrap();
        assert_eq!(t1.row(vocab.index("cat")), &[1.0, 2.0, 3.0]);
        let dog = t1.row(vocab.index("dog"));
        assert!(dog.iter().all(|v| v.abs() < 0.05));
        assert_eq!(t1, t2);
    }

    #[test]
    fn embedding_dim_mismatch_names_token() {
        let vocab = Vocabulary::from_tokens(["cat"]);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        let short: Vec<String> = (0..99).map(|i| format!("{i}.0")).collect();
        writeln!(f, "cat {}", short.join(" ")).unwrap();
        let err = load_embeddings(f.path(), &vocab, 100, 0).unwrap_err();
        assert!(matches!(err, Error::EmbeddingDim { ref token, actual: 99, .. } if token == "cat"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn vocab_round_trip_and_cap(words in prop::collection::vec("[a-e]{1,2}", 1..60), cap in 2usize..30) {
                let d = doc(&[&words.join(" ")], &["a"]);
                let v = build_vocab(std::slice::from_ref(&d), cap);
                prop_assert!(v.len() <= cap.max(Vocabulary::RESERVED));
                for i in 0..v.len() {
                    prop_assert_eq!(v.index(v.token(i).unwrap()), i);
                }
                prop_assert_eq!(build_vocab(&[d], cap), v);
            }
        }
    }
}
