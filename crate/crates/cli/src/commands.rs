use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::info;
use serde::Serialize;

use qasum::cloze::{build_answer_vocab, make_all_pairs, AnswerVocab};
use qasum::corpus::{build_vocab, load_corpus, load_embeddings, read_records, write_records, Document, Vocabulary};
use qasum::metrics::{count_correct, mean_triple, rouge_all, QaAccuracy, RougeOptions, RougeTriple};
use qasum::model::Model;
use qasum::pipeline::{greedy_mask, prepare_examples, summary_text, Example};
use qasum::qa_reward::{encode_questions, qa_forward};
use qasum::trainer::{Checkpoint, FitReport, Trainer};
use qasum::SummaryMask;

use crate::config::RunConfig;
use crate::{CliError, Split};

fn runtime(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Stdout or a file, buffered.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| runtime(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_line<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let line = serde_json::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| CliError::Runtime(e.to_string()))
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_seed(seed)?;
    Ok(cfg)
}

pub fn prep(input: &Path, output: &Path) -> Result<(), CliError> {
    if input == output {
        return Err(CliError::Usage("prep never overwrites its input; choose another --output".into()));
    }
    let records: Vec<_> = read_records(input)?
        .into_iter()
        .map(qasum::cloze::annotate_record)
        .collect();
    write_records(output, &records)?;
    info!("annotated {} records into {}", records.len(), output.display());
    Ok(())
}

#[derive(Serialize)]
struct QuestionLine<'a> {
    id: &'a str,
    k: usize,
    question: String,
    answer: &'a str,
    origin_sentence: usize,
}

pub fn genq(config: &Path, split: Split, seed: Option<u64>, output: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let path = match split {
        Split::Train => &cfg.train,
        Split::Valid => &cfg.valid,
        Split::Test => cfg
            .test
            .as_ref()
            .ok_or_else(|| CliError::Usage("the configuration has no `test` split".into()))?,
    };
    let docs = load_corpus(path, cfg.max_input_len)?;
    let t = &cfg.training;
    let pairs = make_all_pairs(&docs, t.mode, t.k, t.seed);
    let mut out = sink(output)?;
    for (doc, pairs) in docs.iter().zip(&pairs) {
        for (k, p) in pairs.iter().enumerate() {
            write_line(
                &mut *out,
                &QuestionLine {
                    id: &doc.id,
                    k,
                    question: p.question_text(),
                    answer: &p.answer_token,
                    origin_sentence: p.origin_sentence,
                },
            )?;
        }
    }
    out.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

struct Splits {
    train: Vec<Document>,
    valid: Vec<Document>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits, CliError> {
    let train = load_corpus(&cfg.train, cfg.max_input_len)?;
    if train.is_empty() {
        return Err(CliError::Runtime(format!("{}: training split is empty", cfg.train.display())));
    }
    let valid = load_corpus(&cfg.valid, cfg.max_input_len)?;
    Ok(Splits { train, valid })
}

fn examples(cfg: &RunConfig, docs: &[Document], vocab: &Vocabulary, answers: &AnswerVocab) -> Vec<Example> {
    let t = &cfg.training;
    prepare_examples(docs, vocab, answers, t.mode, t.k, t.seed, t.bigrams)
}

fn fresh_trainer(cfg: &RunConfig, train: &[Document]) -> Result<(Trainer, Vocabulary, AnswerVocab), CliError> {
    let t = &cfg.training;
    let vocab = build_vocab(train, cfg.vocab_cap);
    let answers = build_answer_vocab(train, t.mode, t.k, t.seed);
    let embeddings = match &cfg.embeddings {
        Some(p) => Some(load_embeddings(p, &vocab, cfg.model.embed_dim, t.seed)?),
        None => None,
    };
    let model = Model::new(cfg.model.clone(), vocab.len(), answers.len(), embeddings, t.seed)?;
    Ok((Trainer::new(model, t.clone())?, vocab, answers))
}

fn save(ck: &Checkpoint, dir: &Path, path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime(dir, e))?;
    ck.save(path)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn pretrain(config: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let splits = load_splits(&cfg)?;
    let (mut trainer, vocab, answers) = fresh_trainer(&cfg, &splits.train)?;
    let train = examples(&cfg, &splits.train, &vocab, &answers);
    let losses = trainer.pretrain(&train)?;
    save(
        &Checkpoint::from_trainer(&trainer, &vocab, &answers),
        &cfg.checkpoint_dir,
        &cfg.pretrained_path(),
    )?;
    let mut out = sink(None)?;
    write_line(&mut *out, &serde_json::json!({ "pretrain_losses": losses }))?;
    out.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

pub fn train(config: &Path, seed: Option<u64>, init: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(config, seed)?;
    let splits = load_splits(&cfg)?;
    let start = match init {
        Some(p) => Some(p.to_path_buf()),
        None => Some(cfg.pretrained_path()).filter(|p| p.exists()),
    };
    let (mut trainer, vocab, answers) = match start {
        Some(p) => {
            info!("starting from {}", p.display());
            let ck = Checkpoint::load_matching(&p, &cfg.model, &cfg.training)?;
            let (vocab, answers) = (ck.vocab.clone(), ck.answers.clone());
            (ck.into_trainer(), vocab, answers)
        }
        None => fresh_trainer(&cfg, &splits.train)?,
    };
    let train = examples(&cfg, &splits.train, &vocab, &answers);
    let valid = examples(&cfg, &splits.valid, &vocab, &answers);
    let report: FitReport = trainer.fit(&train, &valid)?;
    save(
        &Checkpoint::from_trainer(&trainer, &vocab, &answers),
        &cfg.checkpoint_dir,
        &cfg.best_path(),
    )?;
    let mut out = sink(None)?;
    write_line(&mut *out, &report)?;
    out.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

/// Checkpoint plus the documents of `input` prepared with its vocabularies.
fn load_for_inference(checkpoint: &Path, input: &Path, max_input_len: usize) -> Result<(Checkpoint, Vec<Example>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let docs = load_corpus(input, max_input_len)?;
    let t = &ck.train_config;
    let ex = prepare_examples(&docs, &ck.vocab, &ck.answers, t.mode, t.k, t.seed, t.bigrams);
    Ok((ck, ex))
}

/// Source text with every selected span wrapped in `[[ ]]`.
pub fn overlay(tokens: &[String], mask: &SummaryMask) -> String {
    let mut parts = Vec::with_capacity(tokens.len() + 2 * mask.segments().len());
    let bits = mask.bits();
    for (t, tok) in tokens.iter().enumerate() {
        let open = bits[t] && (t == 0 || !bits[t - 1]);
        let close = bits[t] && (t + 1 == bits.len() || !bits[t + 1]);
        parts.push(format!("{}{tok}{}", if open { "[[" } else { "" }, if close { "]]" } else { "" }));
    }
    parts.join(" ")
}

#[derive(Serialize)]
struct SummaryLine<'a> {
    id: &'a str,
    mask: Vec<u8>,
    summary_text: String,
    segments: Vec<(usize, usize)>,
    overlay: String,
}

pub fn summarize(checkpoint: &Path, input: &Path, output: Option<&Path>, max_input_len: usize) -> Result<(), CliError> {
    let (ck, examples) = load_for_inference(checkpoint, input, max_input_len)?;
    let mut out = sink(output)?;
    for ex in &examples {
        let mask = greedy_mask(&ck.model, ex)?;
        write_line(
            &mut *out,
            &SummaryLine {
                id: &ex.id,
                mask: mask.to_u8(),
                summary_text: summary_text(ex, &mask),
                segments: mask.segments(),
                overlay: overlay(&ex.source_tokens, &mask),
            },
        )?;
    }
    out.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

#[derive(Serialize)]
struct DocReport<'a> {
    id: &'a str,
    rouge: RougeTriple,
    qa: QaAccuracy,
    length_ratio: f64,
    segments: usize,
}

#[derive(Serialize)]
struct CorpusReport {
    documents: usize,
    rouge: RougeTriple,
    qa: QaAccuracy,
    qa_accuracy: f64,
    mean_length_ratio: f64,
    mean_segments: f64,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    rouge_options: RougeOptions,
    corpus: CorpusReport,
    per_document: Vec<DocReport<'a>>,
}

pub fn eval(
    checkpoint: &Path,
    input: &Path,
    report: Option<&Path>,
    max_input_len: usize,
    rouge: RougeOptions,
) -> Result<(), CliError> {
    let (ck, examples) = load_for_inference(checkpoint, input, max_input_len)?;
    let mut per_document = Vec::with_capacity(examples.len());
    let mut total = QaAccuracy::default();
    for ex in &examples {
        let mask = greedy_mask(&ck.model, ex)?;
        let candidate: Vec<&String> = mask.apply(&ex.source_tokens).collect();
        let references: Vec<Vec<&String>> = ex.abstract_sentences.iter().map(|s| s.iter().collect()).collect();
        // the whole abstract is one reference
        let reference = vec![references.concat()];
        let summary: Vec<usize> = mask.apply(&ex.doc_tokens).copied().collect();
        let questions = encode_questions(&ck.model.params, &ex.questions)?;
        let fwd = qa_forward(&ck.model.params, &questions, &summary)?;
        let qa = count_correct(&fwd.predictions, &questions.golds);
        total.correct += qa.correct;
        total.total += qa.total;
        per_document.push(DocReport {
            id: &ex.id,
            rouge: rouge_all(&candidate, &reference, rouge),
            qa,
            length_ratio: mask.ratio(),
            segments: mask.segments().len(),
        });
    }
    let n = per_document.len().max(1) as f64;
    let corpus = CorpusReport {
        documents: per_document.len(),
        rouge: mean_triple(&per_document.iter().map(|d| d.rouge).collect::<Vec<_>>()),
        qa: total,
        qa_accuracy: total.fraction(),
        mean_length_ratio: per_document.iter().map(|d| d.length_ratio).sum::<f64>() / n,
        mean_segments: per_document.iter().map(|d| d.segments as f64).sum::<f64>() / n,
    };
    let mut out = sink(report)?;
    let text = serde_json::to_string_pretty(&EvalReport {
        rouge_options: rouge,
        corpus,
        per_document,
    })
    .map_err(|e| CliError::Runtime(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Runtime(e.to_string()))?;
    out.flush().map_err(|e| CliError::Runtime(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_marks_spans() {
        let toks: Vec<String> = "a b c d e".split(' ').map(String::from).collect();
        let mask = SummaryMask::from(vec![false, true, true, false, true]);
        assert_eq!(overlay(&toks, &mask), "a [[b c]] d [[e]]");
        assert_eq!(overlay(&toks, &SummaryMask::zeros(5)), "a b c d e");
    }
}
