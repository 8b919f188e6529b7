//! The question-answering reward.
//!
//! For each Cloze question `k` with vector `q_k` and summary states `h_i`:
//!
//! ```text
//! alpha_{k,i} = softmax_i(q_k · W_a · h_i)
//! c_k         = Σ_i alpha_{k,i} h_i
//! P(e | Y, Q_k) = softmax(W_c c_k)
//! R_a         = (1/K) Σ_k log P(e_k* | Y, Q_k)
//! ```
//!
//! An empty summary has no states to attend over; it scores `-ln V` per
//! question, the log-likelihood of a uniform guess, and contributes no
//! gradient.

use crate::cloze::QaPair;
use crate::corpus::Vocabulary;
use crate::encoders::{encode_backward, encode_question, encode_seq, readout_grad, BiLstm, EncoderTrace};
use crate::error::{Error, Result};
use crate::model::{QA_ATTN, QA_OUT, QS_ENCODER};
use crate::numerics::{
    add_into, add_outer, dot, log_softmax, matvec, matvec_t, softmax, softmax_backward, Gradients,
    ParamStore, Tensor,
};

/// Attention over summary states for one question: `(alpha, c_k)`.
pub fn attend(q: &[f64], states: &[Vec<f64>], w_a: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if states.is_empty() {
        return Err(Error::Empty("summary states"));
    }
    let key = matvec_t(w_a, q)?; // W_a^T q, so score_i = key · h_i
    let scores: Vec<f64> = states.iter().map(|h| dot(&key, h)).collect();
    let alpha = softmax(&scores)?;
    let mut c = vec![0.0; states[0].len()];
    for (a, h) in alpha.iter().zip(states) {
        c.iter_mut().zip(h).for_each(|(ci, hi)| *ci += a * hi);
    }
    Ok((alpha, c))
}

/// `log softmax(W_c c)[gold]`.
pub fn answer_logprob(c: &[f64], w_c: &Tensor, gold: usize) -> Result<f64> {
    if gold >= w_c.rows() {
        return Err(Error::OutOfRange {
            context: "answer vocabulary",
            index: gold,
            len: w_c.rows(),
        });
    }
    Ok(log_softmax(&matvec(w_c, c)?)?[gold])
}

/// Questions of one document, encoded once and shared by every sampled
/// summary of that document.
#[derive(Debug, Clone)]
pub struct EncodedQuestions {
    pub vectors: Vec<Vec<f64>>,
    pub golds: Vec<usize>,
    traces: Vec<EncoderTrace>,
}

impl EncodedQuestions {
    pub fn len(&self) -> usize {
        self.golds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.golds.is_empty()
    }
}

/// Token ids and gold answers of a document's QA pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionSet {
    pub questions: Vec<Vec<usize>>,
    pub golds: Vec<usize>,
}

impl QuestionSet {
    pub fn from_pairs(pairs: &[QaPair], vocab: &Vocabulary) -> Self {
        Self {
            questions: pairs.iter().map(|p| vocab.encode(&p.question_tokens)).collect(),
            golds: pairs.iter().map(|p| p.answer_index).collect(),
        }
    }
}

pub fn encode_questions(store: &ParamStore, set: &QuestionSet) -> Result<EncodedQuestions> {
    if set.questions.is_empty() {
        return Err(Error::Empty("question set"));
    }
    let enc = BiLstm::from_store(store, QS_ENCODER)?;
    let mut vectors = Vec::with_capacity(set.questions.len());
    let mut traces = Vec::with_capacity(set.questions.len());
    for q in &set.questions {
        let (v, t) = encode_question(&enc, q, None)?;
        vectors.push(v);
        traces.push(t);
    }
    Ok(EncodedQuestions {
        vectors,
        golds: set.golds.clone(),
        traces,
    })
}

#[derive(Debug, Clone)]
struct QuestionForward {
    alpha: Vec<f64>,
    context: Vec<f64>,
    probs: Vec<f64>,
}

/// Forward pass of the QA reward for one summary.
#[derive(Debug, Clone)]
pub struct QaForward {
    pub reward: f64,
    /// Per-question log-likelihood of the gold answer.
    pub logprobs: Vec<f64>,
    /// Per-question argmax answer, `None` for an empty summary.
    pub predictions: Vec<Option<usize>>,
    summary: Option<(Vec<Vec<f64>>, EncoderTrace)>,
    per_question: Vec<QuestionForward>,
}

impl QaForward {
    pub fn attention(&self, k: usize) -> Option<&[f64]> {
        self.per_question.get(k).map(|q| q.alpha.as_slice())
    }
}

pub fn qa_forward(store: &ParamStore, questions: &EncodedQuestions, summary_tokens: &[usize]) -> Result<QaForward> {
    let w_a = store.get(QA_ATTN)?;
    let w_c = store.get(QA_OUT)?;
    let v = w_c.rows();
    for &g in &questions.golds {
        if g >= v {
            return Err(Error::OutOfRange {
                context: "answer vocabulary",
                index: g,
                len: v,
            });
        }
    }
    let k = questions.len() as f64;
    if summary_tokens.is_empty() {
        let floor = -(v as f64).ln();
        return Ok(QaForward {
            reward: floor,
            logprobs: vec![floor; questions.len()],
            predictions: vec![None; questions.len()],
            summary: None,
            per_question: Vec::new(),
        });
    }
    let enc = BiLstm::from_store(store, QS_ENCODER)?;
    let (seq, trace) = encode_seq(&enc, summary_tokens, None)?;
    let mut logprobs = Vec::with_capacity(questions.len());
    let mut predictions = Vec::with_capacity(questions.len());
    let mut per_question = Vec::with_capacity(questions.len());
    for (q, &gold) in questions.vectors.iter().zip(&questions.golds) {
        let (alpha, context) = attend(q, &seq.states, w_a)?;
        let logits = matvec(w_c, &context)?;
        let lp = log_softmax(&logits)?;
        logprobs.push(lp[gold]);
        predictions.push(Some(argmax(&logits)));
        per_question.push(QuestionForward {
            alpha,
            context,
            probs: lp.iter().map(|x| x.exp()).collect(),
        });
    }
    Ok(QaForward {
        reward: logprobs.iter().sum::<f64>() / k,
        logprobs,
        predictions,
        summary: Some((seq.states, trace)),
        per_question,
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Accumulates `weight * ∇R_a` into `grads` for the attention/output weights
/// and the summary encoder, and adds the question-vector gradients into
/// `dq` (one per question) for a later [`questions_backward`].
pub fn qa_backward(
    store: &ParamStore,
    questions: &EncodedQuestions,
    fwd: &QaForward,
    weight: f64,
    grads: &mut Gradients,
    dq: &mut [Vec<f64>],
) -> Result<()> {
    let Some((states, trace)) = &fwd.summary else {
        return Ok(());
    };
    let w_a = store.get(QA_ATTN)?;
    let w_c = store.get(QA_OUT)?;
    let scale = weight / questions.len() as f64;
    let d = states[0].len();
    let mut d_states = vec![vec![0.0; d]; states.len()];
    let mut g_wa = std::mem::replace(grads.get_mut(QA_ATTN)?, Tensor::zeros(&[0]));
    let mut g_wc = std::mem::replace(grads.get_mut(QA_OUT)?, Tensor::zeros(&[0]));
    for (k, qf) in fwd.per_question.iter().enumerate() {
        let gold = questions.golds[k];
        let q = &questions.vectors[k];
        let mut dlogits: Vec<f64> = qf.probs.iter().map(|p| -scale * p).collect();
        dlogits[gold] += scale;
        add_outer(&mut g_wc, &dlogits, &qf.context);
        let dc = matvec_t(w_c, &dlogits)?;
        let dalpha: Vec<f64> = states.iter().map(|h| dot(&dc, h)).collect();
        for (ds, &a) in d_states.iter_mut().zip(&qf.alpha) {
            ds.iter_mut().zip(&dc).for_each(|(x, y)| *x += a * y);
        }
        let dscores = softmax_backward(&qf.alpha, &dalpha);
        // score_i = q^T W_a h_i
        let key = matvec_t(w_a, q)?;
        let mut hsum = vec![0.0; d];
        for ((ds, h), &s) in d_states.iter_mut().zip(states).zip(&dscores) {
            ds.iter_mut().zip(&key).for_each(|(x, y)| *x += s * y);
            hsum.iter_mut().zip(h).for_each(|(x, y)| *x += s * y);
        }
        add_outer(&mut g_wa, q, &hsum);
        add_into(&mut dq[k], &matvec(w_a, &hsum)?);
    }
    *grads.get_mut(QA_ATTN)? = g_wa;
    *grads.get_mut(QA_OUT)? = g_wc;
    encode_backward(store, QS_ENCODER, trace, &d_states, grads)
}

/// Pushes accumulated question-vector gradients through the question encoder.
pub fn questions_backward(
    store: &ParamStore,
    questions: &EncodedQuestions,
    dq: &[Vec<f64>],
    grads: &mut Gradients,
) -> Result<()> {
    for (trace, (q, g)) in questions.traces.iter().zip(questions.set_lengths().zip(dq)) {
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        encode_backward(store, QS_ENCODER, trace, &readout_grad(q, g), grads)?;
    }
    Ok(())
}

impl EncodedQuestions {
    fn set_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.traces.iter().map(EncoderTrace::len)
    }
}

/// `R_a` of a summary, without gradients.
pub fn qa_reward(store: &ParamStore, summary_tokens: &[usize], set: &QuestionSet) -> Result<f64> {
    let qs = encode_questions(store, set)?;
    Ok(qa_forward(store, &qs, summary_tokens)?.reward)
}

/// `R_a` and its full gradient with respect to every parameter.
pub fn qa_reward_with_grad(store: &ParamStore, summary_tokens: &[usize], set: &QuestionSet) -> Result<(f64, Gradients)> {
    let qs = encode_questions(store, set)?;
    let fwd = qa_forward(store, &qs, summary_tokens)?;
    let mut grads = store.zeros_like();
    let mut dq = vec![vec![0.0; qs.vectors[0].len()]; qs.len()];
    qa_backward(store, &qs, &fwd, 1.0, &mut grads, &mut dq)?;
    questions_backward(store, &qs, &dq, &mut grads)?;
    Ok((fwd.reward, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::numerics::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64, v: usize) -> Model {
        let cfg = ModelConfig {
            embed_dim: 3,
            hidden: 2,
            decision_hidden: 2,
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg, 10, v, None, seed).unwrap();
        // push the output layer away from zero so gradients are not tiny
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for x in m.params.get_mut(QA_OUT).unwrap().data_mut() {
            *x = rng.gen_range(-2.0..2.0);
        }
        m
    }

    fn set(questions: Vec<Vec<usize>>, golds: Vec<usize>) -> QuestionSet {
        QuestionSet { questions, golds }
    }

    #[test]
    fn attend_examples() {
        let w = Tensor::zeros(&[2, 2]);
        let states = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]];
        let (alpha, _) = attend(&[1.0, 0.0], &states, &w).unwrap();
        assert!(alpha.iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));

        let (alpha, c) = attend(&[0.3, 0.1], &states[2..], &w).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(c, vec![2.0, 2.0]);

        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (alpha, c) = attend(&[1.0, 0.0], &states[..2], &eye).unwrap();
        let e = std::f64::consts::E;
        assert!((alpha[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((alpha[0] - 0.73106).abs() < 1e-5);
        assert!((c[0] - 0.73106).abs() < 1e-5 && (c[1] - 0.26894).abs() < 1e-5);
        assert!(attend(&[1.0, 0.0], &[], &eye).is_err());
    }

    #[test]
    fn answer_logprob_examples() {
        let w = Tensor::zeros(&[4, 2]);
        assert!((answer_logprob(&[0.3, 0.4], &w, 2).unwrap() + 4f64.ln()).abs() < 1e-12);
        // gold row = 10 * c direction with |c| = 1
        let w = Tensor::matrix(2, 2, vec![10.0, 0.0, 0.0, 0.0]).unwrap();
        let lp = answer_logprob(&[1.0, 0.0], &w, 0).unwrap();
        assert!(lp < 0.0 && lp > -0.01);
        let w = Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let lp = answer_logprob(&[1.0], &w, 0).unwrap();
        let e = std::f64::consts::E;
        assert!((lp - (e / (e + 2.0)).ln()).abs() < 1e-12);
        assert!((lp + 0.5514).abs() < 1e-4);
        assert!(matches!(answer_logprob(&[1.0], &w, 3), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn zero_params_give_uniform_reward() {
        let mut m = model(1, 5);
        m.zero_all();
        for k in 1..4 {
            let s = set(vec![vec![2, 1, 3]; k], vec![1; k]);
            let r = qa_reward(&m.params, &[4, 5], &s).unwrap();
            assert!((r + 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_summary_scores_floor_without_gradient() {
        let m = model(2, 4);
        let s = set(vec![vec![2, 1]], vec![3]);
        let (r, g) = qa_reward_with_grad(&m.params, &[], &s).unwrap();
        assert!((r + 4f64.ln()).abs() < 1e-12);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn duplicated_pairs_average_to_single() {
        let m = model(3, 4);
        let one = qa_reward(&m.params, &[4, 6, 7], &set(vec![vec![2, 1, 5]], vec![2])).unwrap();
        let three = qa_reward(&m.params, &[4, 6, 7], &set(vec![vec![2, 1, 5]; 3], vec![2; 3])).unwrap();
        assert!((one - three).abs() < 1e-12);
    }

    #[test]
    fn order_of_pairs_does_not_matter() {
        let m = model(4, 4);
        let a = qa_reward(&m.params, &[4, 6, 7], &set(vec![vec![2, 1], vec![1, 8, 9]], vec![2, 3])).unwrap();
        let b = qa_reward(&m.params, &[4, 6, 7], &set(vec![vec![1, 8, 9], vec![2, 1]], vec![3, 2])).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    /// Straight-line recomputation of the reward from raw tensors, sharing no
    /// code with the encoder or attention routines.
    #[allow(clippy::needless_range_loop)]
    fn oracle_reward(store: &ParamStore, summary: &[usize], s: &QuestionSet) -> f64 {
        fn sig(x: f64) -> f64 {
            1.0 / (1.0 + (-x).exp())
        }
        fn run(store: &ParamStore, dir: &str, toks: &[usize]) -> Vec<Vec<f64>> {
            let w = store.get(&format!("qs_enc.{dir}.w")).unwrap();
            let b = store.get(&format!("qs_enc.{dir}.b")).unwrap().data();
            let e = store.get("embed").unwrap();
            let h = b.len() / 4;
            let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
            let mut out = Vec::new();
            for &t in toks {
                let x: Vec<f64> = e.row(t).iter().chain(hs.iter()).copied().collect();
                let mut z = vec![0.0; 4 * h];
                for r in 0..4 * h {
                    z[r] = b[r];
                    for c in 0..x.len() {
                        z[r] += w.data()[r * x.len() + c] * x[c];
                    }
                }
                for j in 0..h {
                    let (i, f, g, o) = (sig(z[j]), sig(z[h + j]), z[2 * h + j].tanh(), sig(z[3 * h + j]));
                    cs[j] = f * cs[j] + i * g;
                    hs[j] = o * cs[j].tanh();
                }
                out.push(hs.clone());
            }
            out
        }
        let bi = |toks: &[usize]| {
            let f = run(store, "fwd", toks);
            let rev: Vec<usize> = toks.iter().rev().copied().collect();
            let mut b = run(store, "bwd", &rev);
            b.reverse();
            f.into_iter().zip(b).map(|(mut x, y)| {
                x.extend(y);
                x
            }).collect::<Vec<_>>()
        };
        let hs = bi(summary);
        let wa = store.get("qa.w_a").unwrap();
        let wc = store.get("qa.w_c").unwrap();
        let d = hs[0].len();
        let mut total = 0.0;
        for (q_toks, &gold) in s.questions.iter().zip(&s.golds) {
            let states = bi(q_toks);
            let mut q = states[states.len() - 1][..d / 2].to_vec();
            q.extend_from_slice(&states[0][d / 2..]);
            let scores: Vec<f64> = hs
                .iter()
                .map(|h| {
                    let mut acc = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            acc += q[i] * wa.data()[i * d + j] * h[j];
                        }
                    }
                    acc
                })
                .collect();
            let z: f64 = scores.iter().map(|x| x.exp()).sum();
            let mut c = vec![0.0; d];
            for (h, sc) in hs.iter().zip(&scores) {
                for j in 0..d {
                    c[j] += sc.exp() / z * h[j];
                }
            }
            let logits: Vec<f64> = (0..wc.rows()).map(|r| (0..d).map(|j| wc.data()[r * d + j] * c[j]).sum()).collect();
            let lz: f64 = logits.iter().map(|x| x.exp()).sum::<f64>().ln();
            total += logits[gold] - lz;
        }
        total / s.golds.len() as f64
    }

    #[test]
    fn matches_straight_line_oracle() {
        let m = model(11, 4);
        let s = set(vec![vec![2, 1, 5], vec![7, 1]], vec![1, 3]);
        let got = qa_reward(&m.params, &[4, 6, 8], &s).unwrap();
        let want = oracle_reward(&m.params, &[4, 6, 8], &s);
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let m = model(12, 3);
        let s = set(vec![vec![2, 1, 5], vec![7, 1, 3]], vec![1, 2]);
        let summary = [4, 6, 8, 9, 3];
        let report = grad_check(&m.params, 1e-5, |p| qa_reward_with_grad(p, &summary, &s)).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn raising_gold_logit_raises_reward() {
        let mut m = model(13, 3);
        let s = set(vec![vec![2, 1]], vec![2]);
        let summary = [4, 5];
        let base = qa_reward(&m.params, &summary, &s).unwrap();
        // adding a multiple of c to the gold row raises only the gold logit
        let qs = encode_questions(&m.params, &s).unwrap();
        let f = qa_forward(&m.params, &qs, &summary).unwrap();
        let c = f.per_question[0].context.clone();
        let row = m.params.get_mut(QA_OUT).unwrap().row_mut(2);
        row.iter_mut().zip(&c).for_each(|(w, ci)| *w += 0.5 * ci);
        let after = qa_reward(&m.params, &summary, &s).unwrap();
        assert!(after > base);
    }
}
