//! Documents prepared for training and inference: token ids, encoded
//! questions, bigram references and pretraining labels, computed once.

use rand::RngCore;

use crate::cloze::{make_all_pairs, AnswerVocab, QaMode, QaPair};
use crate::corpus::{Document, Vocabulary};
use crate::encoders::{encode_seq, BiLstm, EncodedSeq, EncoderTrace};
use crate::error::Result;
use crate::mask::SummaryMask;
use crate::model::Model;
use crate::policy::greedy_decode;
use crate::qa_reward::QuestionSet;
use crate::shaping::{reference_bigrams, BigramOptions, BigramReference};

#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub doc_tokens: Vec<usize>,
    pub source_tokens: Vec<String>,
    pub abstract_sentences: Vec<Vec<String>>,
    pub pairs: Vec<QaPair>,
    pub questions: QuestionSet,
    pub bigrams: BigramReference,
    /// Bigram pretraining targets.
    pub labels: SummaryMask,
}

/// `y*_t = 1` iff `(x_t, x_{t+1})` is a bigram of the abstract; the last
/// word has no successor and is always 0.
pub fn pretrain_labels(doc: &Document) -> SummaryMask {
    let reference = reference_bigrams(&doc.abstract_sentences);
    let n = doc.source_tokens.len();
    let bits = (0..n)
        .map(|t| {
            t + 1 < n
                && reference.contains(&(doc.source_tokens[t].clone(), doc.source_tokens[t + 1].clone()))
        })
        .collect::<Vec<bool>>();
    SummaryMask::from(bits)
}

pub fn prepare_examples(
    docs: &[Document],
    vocab: &Vocabulary,
    answers: &AnswerVocab,
    mode: QaMode,
    k: usize,
    seed: u64,
    bigrams: BigramOptions,
) -> Vec<Example> {
    let all_pairs = make_all_pairs(docs, mode, k, seed);
    docs.iter()
        .zip(all_pairs)
        .map(|(doc, mut pairs)| {
            answers.assign(&mut pairs);
            Example {
                id: doc.id.clone(),
                doc_tokens: vocab.encode(&doc.source_tokens),
                source_tokens: doc.source_tokens.clone(),
                abstract_sentences: doc.abstract_sentences.clone(),
                questions: QuestionSet::from_pairs(&pairs, vocab),
                pairs,
                bigrams: BigramReference::new(&doc.source_tokens, &doc.abstract_sentences, bigrams),
                labels: pretrain_labels(doc),
            }
        })
        .collect()
}

pub fn encode_document(
    model: &Model,
    ex: &Example,
    training: Option<&mut dyn RngCore>,
) -> Result<(EncodedSeq, EncoderTrace)> {
    let enc = BiLstm::from_store(&model.params, model.config.doc_encoder())?;
    let dropout = training.map(|r| (model.config.encoder_dropout, r));
    encode_seq(&enc, &ex.doc_tokens, dropout)
}

/// Test-time summary: greedy decoding with dropout off.
pub fn greedy_mask(model: &Model, ex: &Example) -> Result<SummaryMask> {
    let (states, _) = encode_document(model, ex, None)?;
    greedy_decode(&model.params, &states)
}

/// Selected source words joined by spaces.
pub fn summary_text(ex: &Example, mask: &SummaryMask) -> String {
    mask.apply(&ex.source_tokens)
        .map(String::as_str)
        .collect::<Vec<_>>()
        .join(" ")
}
