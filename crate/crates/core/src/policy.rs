//! The word-extraction policy.
//!
//! Walking the document left to right, the probability of keeping word `t`
//! is a logistic unit over the document state and the decision tracker:
//!
//! ```text
//! p_t = σ(W_h [h_t ‖ s_{t−1}] + b_h)
//! s_t = LSTM([h_t ‖ y_t], s_{t−1}),   s_0 = 0
//! P(Y | X) = Π_t p_t^{y_t} (1 − p_t)^{1 − y_t}
//! ```
//!
//! The same walk samples summaries, decodes greedily, or scores a given mask
//! (teacher forcing). Greedy decoding keeps a word only when `p_t > 0.5`.

use rand::{Rng, RngCore};

use crate::encoders::EncodedSeq;
use crate::error::{Error, Result};
use crate::mask::SummaryMask;
use crate::model::{DECISION_B, DECISION_W, POLICY_B, POLICY_W};
use crate::numerics::{
    add_into, dot, dropout_mask, log_sigmoid, lstm_step, lstm_step_backward, sigmoid, Gradients,
    LstmStep, LstmWeights, ParamStore, Tensor,
};

/// `σ(W_h [h ‖ s_prev] + b_h)`.
pub fn step_prob(h: &[f64], s_prev: &[f64], w_h: &Tensor, b_h: &Tensor) -> Result<f64> {
    if w_h.len() != h.len() + s_prev.len() {
        return Err(Error::Shape {
            context: "policy input",
            expected: w_h.len(),
            actual: h.len() + s_prev.len(),
        });
    }
    let d = h.len();
    let z = dot(&w_h.data()[..d], h) + dot(&w_h.data()[d..], s_prev) + b_h.data()[0];
    Ok(sigmoid(z))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode<'a> {
    /// Draw `y_t ~ Bernoulli(p_t)`.
    Sample,
    /// `y_t = 1` iff `p_t > 0.5`.
    Greedy,
    /// Score the given mask.
    Forced(&'a SummaryMask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSummary {
    pub mask: SummaryMask,
    pub log_prob: f64,
    pub per_step_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PolicyStep {
    /// Dropout multipliers on `h_t` for the probability; empty when off.
    score_drop: Vec<f64>,
    /// `[h_t ⊙ score_drop ‖ s_{t−1}]`
    input: Vec<f64>,
    /// Dropout multipliers on `[h_t ‖ y_t]` for the tracker; empty when off.
    decision_drop: Vec<f64>,
    tracker: Option<LstmStep>,
}

/// A policy walk with everything needed to differentiate `log P(Y|X)`.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub summary: SampledSummary,
    steps: Vec<PolicyStep>,
}

/// Dropout rates at the two decision-step inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyDropout {
    pub score: f64,
    pub decision: f64,
}

/// Runs the policy over `doc`. `rng` drives sampling and, when `dropout`
/// is given, the dropout masks.
pub fn run_policy(
    store: &ParamStore,
    doc: &EncodedSeq,
    mode: DecodeMode<'_>,
    dropout: Option<PolicyDropout>,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<PolicyTrace> {
    if doc.is_empty() {
        return Err(Error::Empty("document states"));
    }
    if let DecodeMode::Forced(mask) = mode {
        if mask.len() != doc.len() {
            return Err(Error::Shape {
                context: "forced mask",
                expected: doc.len(),
                actual: mask.len(),
            });
        }
    }
    if matches!(mode, DecodeMode::Sample) && rng.is_none() {
        return Err(Error::Config("sampling requires a random generator".into()));
    }
    let tracker = LstmWeights::new(store.get(DECISION_W)?, store.get(DECISION_B)?)?;
    let w_h = store.get(POLICY_W)?;
    let b_h = store.get(POLICY_B)?;
    let d = doc.dim();
    if tracker.input() != d + 1 {
        return Err(Error::Shape {
            context: "decision tracker input",
            expected: tracker.input(),
            actual: d + 1,
        });
    }
    let sh = tracker.hidden();
    let n = doc.len();
    let (mut s, mut c) = (vec![0.0; sh], vec![0.0; sh]);
    let mut bits = Vec::with_capacity(n);
    let mut probs = Vec::with_capacity(n);
    let mut log_prob = 0.0;
    let mut steps = Vec::with_capacity(n);
    for (t, h) in doc.states.iter().enumerate() {
        let (score_drop, decision_drop) = match (dropout, rng.as_deref_mut()) {
            (Some(rates), Some(r)) => (
                if rates.score > 0.0 { dropout_mask(d, rates.score, r) } else { Vec::new() },
                if rates.decision > 0.0 { dropout_mask(d + 1, rates.decision, r) } else { Vec::new() },
            ),
            _ => (Vec::new(), Vec::new()),
        };
        let mut input: Vec<f64> = if score_drop.is_empty() {
            h.clone()
        } else {
            h.iter().zip(&score_drop).map(|(a, b)| a * b).collect()
        };
        input.extend_from_slice(&s);
        let z = dot(w_h.data(), &input) + b_h.data()[0];
        let p = sigmoid(z);
        let y = match mode {
            DecodeMode::Sample => {
                let r = rng.as_deref_mut().expect("checked above");
                r.gen::<f64>() < p
            }
            DecodeMode::Greedy => p > 0.5,
            DecodeMode::Forced(mask) => mask.bits()[t],
        };
        log_prob += if y { log_sigmoid(z) } else { log_sigmoid(-z) };
        bits.push(y);
        probs.push(p);
        // s_{T-1} feeds nothing, so the last tracker step is skipped.
        let tracker_step = if t + 1 < n {
            let mut x = h.clone();
            x.push(if y { 1.0 } else { 0.0 });
            if !decision_drop.is_empty() {
                x.iter_mut().zip(&decision_drop).for_each(|(a, b)| *a *= b);
            }
            let st = lstm_step(&x, &s, &c, tracker)?;
            s.clone_from(&st.h);
            c.clone_from(&st.c);
            Some(st)
        } else {
            None
        };
        steps.push(PolicyStep {
            score_drop,
            input,
            decision_drop,
            tracker: tracker_step,
        });
    }
    Ok(PolicyTrace {
        summary: SampledSummary {
            mask: SummaryMask::from(bits),
            log_prob,
            per_step_probs: probs,
        },
        steps,
    })
}

pub fn sample_summary(
    store: &ParamStore,
    doc: &EncodedSeq,
    dropout: Option<PolicyDropout>,
    rng: &mut dyn RngCore,
) -> Result<SampledSummary> {
    Ok(run_policy(store, doc, DecodeMode::Sample, dropout, Some(rng))?.summary)
}

pub fn greedy_decode(store: &ParamStore, doc: &EncodedSeq) -> Result<SummaryMask> {
    Ok(run_policy(store, doc, DecodeMode::Greedy, None, None)?.summary.mask)
}

/// `log P(mask | X)` with dropout off.
pub fn mask_log_prob(store: &ParamStore, doc: &EncodedSeq, mask: &SummaryMask) -> Result<f64> {
    Ok(run_policy(store, doc, DecodeMode::Forced(mask), None, None)?.summary.log_prob)
}

/// Accumulates `weight * ∇ log P(Y|X)` for the walked mask into the policy
/// and tracker gradients; returns the gradient on each document state.
pub fn policy_backward(
    store: &ParamStore,
    trace: &PolicyTrace,
    weight: f64,
    grads: &mut Gradients,
) -> Result<Vec<Vec<f64>>> {
    let w_tr = store.get(DECISION_W)?;
    let w_h = store.get(POLICY_W)?;
    let n = trace.steps.len();
    let sh = store.get(DECISION_B)?.len() / 4;
    let d = w_h.len() - sh;
    let mut d_doc = vec![vec![0.0; d]; n];
    let mut g_tr = std::mem::replace(grads.get_mut(DECISION_W)?, Tensor::zeros(&[0]));
    let mut g_trb = std::mem::replace(grads.get_mut(DECISION_B)?, Tensor::zeros(&[0]));
    let mut g_wh = std::mem::replace(grads.get_mut(POLICY_W)?, Tensor::zeros(&[0]));
    let mut g_bh = 0.0;
    // gradient on s_t / c_t flowing back from step t+1
    let (mut ds, mut dc) = (vec![0.0; sh], vec![0.0; sh]);
    for t in (0..n).rev() {
        let step = &trace.steps[t];
        if let Some(st) = &step.tracker {
            let g = lstm_step_backward(st, &ds, &dc, w_tr, &mut g_tr, &mut g_trb);
            let mut dx = g.dx;
            if !step.decision_drop.is_empty() {
                dx.iter_mut().zip(&step.decision_drop).for_each(|(a, b)| *a *= b);
            }
            add_into(&mut d_doc[t], &dx[..d]);
            ds = g.dh_prev;
            dc = g.dc_prev;
        } else {
            ds.fill(0.0);
            dc.fill(0.0);
        }
        let y = if trace.summary.mask.bits()[t] { 1.0 } else { 0.0 };
        let dz = weight * (y - trace.summary.per_step_probs[t]);
        g_bh += dz;
        g_wh.data_mut()
            .iter_mut()
            .zip(&step.input)
            .for_each(|(g, x)| *g += dz * x);
        let wd = w_h.data();
        if step.score_drop.is_empty() {
            d_doc[t].iter_mut().zip(&wd[..d]).for_each(|(a, w)| *a += dz * w);
        } else {
            for k in 0..d {
                d_doc[t][k] += dz * wd[k] * step.score_drop[k];
            }
        }
        ds.iter_mut().zip(&wd[d..]).for_each(|(a, w)| *a += dz * w);
    }
    *grads.get_mut(DECISION_W)? = g_tr;
    *grads.get_mut(DECISION_B)? = g_trb;
    *grads.get_mut(POLICY_W)? = g_wh;
    grads.get_mut(POLICY_B)?.data_mut()[0] += g_bh;
    Ok(d_doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_backward, encode_seq, BiLstm};
    use crate::model::{Model, ModelConfig, DOC_ENCODER};
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        let cfg = ModelConfig {
            embed_dim: 3,
            hidden: 2,
            decision_hidden: 3,
            ..ModelConfig::default()
        };
        Model::new(cfg, 12, 3, None, seed).unwrap()
    }

    fn doc_states(m: &Model, toks: &[usize]) -> EncodedSeq {
        let enc = BiLstm::from_store(&m.params, DOC_ENCODER).unwrap();
        encode_seq(&enc, toks, None).unwrap().0
    }

    #[test]
    fn step_prob_examples() {
        let w = Tensor::zeros(&[1, 5]);
        let b = Tensor::vector(vec![0.0]);
        assert_eq!(step_prob(&[0.3, 0.2], &[1.0, 2.0, 3.0], &w, &b).unwrap(), 0.5);
        let b = Tensor::vector(vec![20.0]);
        assert!(step_prob(&[0.3, 0.2], &[1.0, 2.0, 3.0], &w, &b).unwrap() > 0.999999);
        assert!(step_prob(&[0.3], &[1.0, 2.0, 3.0], &w, &b).is_err());
    }

    #[test]
    fn step_prob_matches_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = [0.4, -0.9];
        let s = [0.1, 0.25, -0.6];
        let b = 0.37;
        let z = w[0] * h[0] + w[1] * h[1] + w[2] * s[0] + w[3] * s[1] + w[4] * s[2] + b;
        let want = 1.0 / (1.0 + (-z).exp());
        let got = step_prob(&h, &s, &Tensor::matrix(1, 5, w).unwrap(), &Tensor::vector(vec![b])).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn zero_params_give_half_everywhere() {
        let mut m = model(1);
        m.zero_all();
        let states = doc_states(&m, &[2, 3, 4, 5, 6]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let s = sample_summary(&m.params, &states, None, &mut rng).unwrap();
            assert!((s.log_prob - 5.0 * 0.5f64.ln()).abs() < 1e-12);
        }
        // tie rule: p = 0.5 exactly selects nothing
        assert_eq!(greedy_decode(&m.params, &states).unwrap().count(), 0);
    }

    #[test]
    fn saturated_bias_decodes_all_or_nothing() {
        let mut m = model(2);
        let states = doc_states(&m, &[2, 3, 4, 5]);
        m.params.get_mut(POLICY_W).unwrap().fill(0.0);
        m.params.get_mut(POLICY_B).unwrap().fill(20.0);
        assert_eq!(greedy_decode(&m.params, &states).unwrap().count(), 4);
        m.params.get_mut(POLICY_B).unwrap().fill(-20.0);
        assert_eq!(greedy_decode(&m.params, &states).unwrap().count(), 0);
    }

    #[test]
    fn enumeration_sums_to_one_at_zero() {
        let mut m = model(3);
        m.zero_all();
        let states = doc_states(&m, &[2, 3, 4, 5]);
        let total: f64 = (0..16)
            .map(|c| mask_log_prob(&m.params, &states, &SummaryMask::from_code(c, 4)).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let m = model(4);
        let states = doc_states(&m, &[2, 3, 4, 5, 6, 7]);
        let drop = Some(PolicyDropout { score: 0.2, decision: 0.2 });
        let a = sample_summary(&m.params, &states, drop, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_summary(&m.params, &states, drop, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_log_prob_matches_per_step_bernoulli() {
        let m = model(5);
        let states = doc_states(&m, &[2, 3, 4, 5, 6, 7, 8]);
        let s = sample_summary(&m.params, &states, None, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let manual: f64 = s
            .mask
            .bits()
            .iter()
            .zip(&s.per_step_probs)
            .map(|(&y, &p)| if y { p.ln() } else { (1.0 - p).ln() })
            .sum();
        assert!((s.log_prob - manual).abs() < 1e-9);
        assert!((mask_log_prob(&m.params, &states, &s.mask).unwrap() - s.log_prob).abs() < 1e-12);
    }

    #[test]
    fn greedy_ignores_rng_state() {
        let m = model(6);
        let states = doc_states(&m, &[2, 3, 4, 5]);
        let a = run_policy(&m.params, &states, DecodeMode::Greedy, None, Some(&mut ChaCha8Rng::seed_from_u64(1))).unwrap();
        let b = run_policy(&m.params, &states, DecodeMode::Greedy, None, Some(&mut ChaCha8Rng::seed_from_u64(2))).unwrap();
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn forced_log_prob_gradient_matches_finite_differences() {
        let m = model(7);
        let toks = [2, 5, 3, 9, 4];
        let mask = SummaryMask::from(vec![1u8, 1, 0, 1, 0]);
        let report = grad_check(&m.params, 1e-5, |store| {
            let enc = BiLstm::from_store(store, DOC_ENCODER)?;
            let (states, etrace) = encode_seq(&enc, &toks, None)?;
            let trace = run_policy(store, &states, DecodeMode::Forced(&mask), None, None)?;
            let mut g = store.zeros_like();
            let d_doc = policy_backward(store, &trace, 1.0, &mut g)?;
            encode_backward(store, DOC_ENCODER, &etrace, &d_doc, &mut g)?;
            Ok((trace.summary.log_prob, g))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
