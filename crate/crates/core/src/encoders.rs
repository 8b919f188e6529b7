//! Bidirectional LSTM encoders over embedded token sequences.
//!
//! A forward LSTM reads left to right and a backward LSTM right to left; the
//! state at position `t` is `[fwd_t ‖ bwd_t]`. A question vector is the last
//! output of each pass, `[fwd_{T-1} ‖ bwd_0]`.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::model::{encoder_names, EMBED};
use crate::numerics::{
    add_into, dropout_mask, lstm_step, lstm_step_backward, Gradients, LstmStep, LstmWeights, ParamStore,
    Tensor,
};

/// One `2 * hidden` state per input token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSeq {
    pub states: Vec<Vec<f64>>,
}

impl EncodedSeq {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    /// `[fwd_last ‖ bwd_last]`, the question-vector readout.
    pub fn readout(&self) -> Vec<f64> {
        let d = self.dim();
        let h = d / 2;
        let mut q = self.states[self.len() - 1][..h].to_vec();
        q.extend_from_slice(&self.states[0][h..]);
        q
    }
}

/// Borrowed weights of one bidirectional encoder plus the embedding table.
#[derive(Debug, Clone)]
pub struct BiLstm<'a> {
    prefix: String,
    embed: &'a Tensor,
    fwd: LstmWeights<'a>,
    bwd: LstmWeights<'a>,
}

impl<'a> BiLstm<'a> {
    pub fn from_store(store: &'a ParamStore, prefix: &str) -> Result<Self> {
        let [fw, fb, bw, bb] = encoder_names(prefix);
        let embed = store.get(EMBED)?;
        let fwd = LstmWeights::new(store.get(&fw)?, store.get(&fb)?)?;
        let bwd = LstmWeights::new(store.get(&bw)?, store.get(&bb)?)?;
        if fwd.input() != embed.cols() || bwd.input() != embed.cols() {
            return Err(Error::Shape {
                context: "encoder input width",
                expected: embed.cols(),
                actual: fwd.input(),
            });
        }
        Ok(Self {
            prefix: prefix.to_string(),
            embed,
            fwd,
            bwd,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn state_dim(&self) -> usize {
        self.fwd.hidden() + self.bwd.hidden()
    }
}

/// Saved activations for [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<usize>,
    dropout: Option<Vec<Vec<f64>>>,
    fwd: Vec<LstmStep>,
    /// Indexed by token position, not by processing order.
    bwd: Vec<LstmStep>,
}

impl EncoderTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Encodes `tokens`. Dropout on the embedded inputs applies only when
/// `training` supplies a generator and the rate is positive.
pub fn encode_seq(
    enc: &BiLstm<'_>,
    tokens: &[usize],
    training: Option<(f64, &mut dyn RngCore)>,
) -> Result<(EncodedSeq, EncoderTrace)> {
    if tokens.is_empty() {
        return Err(Error::Empty("token sequence"));
    }
    let n_vocab = enc.embed.rows();
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
    for &t in tokens {
        if t >= n_vocab {
            return Err(Error::OutOfRange {
                context: "embedding table",
                index: t,
                len: n_vocab,
            });
        }
        inputs.push(enc.embed.row(t).to_vec());
    }
    let mut dropout = None;
    if let Some((rate, rng)) = training {
        if rate > 0.0 {
            let masks: Vec<Vec<f64>> = inputs
                .iter_mut()
                .map(|x| {
                    let m = dropout_mask(x.len(), rate, rng);
                    x.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    m
                })
                .collect();
            dropout = Some(masks);
        }
    }

    let h = enc.hidden();
    let n = tokens.len();
    let mut fwd = Vec::with_capacity(n);
    let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
    for x in &inputs {
        let step = lstm_step(x, &hp, &cp, enc.fwd)?;
        hp.clone_from(&step.h);
        cp.clone_from(&step.c);
        fwd.push(step);
    }
    let mut bwd_rev = Vec::with_capacity(n);
    let (mut hp, mut cp) = (vec![0.0; h], vec![0.0; h]);
    for x in inputs.iter().rev() {
        let step = lstm_step(x, &hp, &cp, enc.bwd)?;
        hp.clone_from(&step.h);
        cp.clone_from(&step.c);
        bwd_rev.push(step);
    }
    bwd_rev.reverse();
    let states = fwd
        .iter()
        .zip(&bwd_rev)
        .map(|(f, b)| {
            let mut s = f.h.clone();
            s.extend_from_slice(&b.h);
            s
        })
        .collect();
    Ok((
        EncodedSeq { states },
        EncoderTrace {
            tokens: tokens.to_vec(),
            dropout,
            fwd,
            bwd: bwd_rev,
        },
    ))
}

/// Question vector `[fwd_last ‖ bwd_last]`, computed by [`encode_seq`].
pub fn encode_question(
    enc: &BiLstm<'_>,
    tokens: &[usize],
    training: Option<(f64, &mut dyn RngCore)>,
) -> Result<(Vec<f64>, EncoderTrace)> {
    let (seq, trace) = encode_seq(enc, tokens, training)?;
    Ok((seq.readout(), trace))
}

/// Spreads a gradient on the question readout back onto per-position states.
pub fn readout_grad(len: usize, dq: &[f64]) -> Vec<Vec<f64>> {
    let d = dq.len();
    let h = d / 2;
    let mut ds = vec![vec![0.0; d]; len];
    ds[len - 1][..h].copy_from_slice(&dq[..h]);
    add_into(&mut ds[0][h..], &dq[h..]);
    ds
}

/// Backpropagates `d_states` (one gradient per output state) into the
/// encoder's LSTM weights and the embedding rows of the encoded tokens.
pub fn encode_backward(
    store: &ParamStore,
    prefix: &str,
    trace: &EncoderTrace,
    d_states: &[Vec<f64>],
    grads: &mut Gradients,
) -> Result<()> {
    let n = trace.tokens.len();
    if d_states.len() != n {
        return Err(Error::Shape {
            context: "encoder state gradients",
            expected: n,
            actual: d_states.len(),
        });
    }
    let [fw, fb, bw, bb] = encoder_names(prefix);
    let h = trace.fwd[0].h.len();
    let e = trace.fwd[0].xh.len() - h;
    let mut dx = vec![vec![0.0; e]; n];

    let w = store.get(&fw)?;
    let mut gw = std::mem::replace(grads.get_mut(&fw)?, Tensor::zeros(&[0]));
    let mut gb = std::mem::replace(grads.get_mut(&fb)?, Tensor::zeros(&[0]));
    let (mut dh, mut dc) = (vec![0.0; h], vec![0.0; h]);
    for t in (0..n).rev() {
        add_into(&mut dh, &d_states[t][..h]);
        let g = lstm_step_backward(&trace.fwd[t], &dh, &dc, w, &mut gw, &mut gb);
        add_into(&mut dx[t], &g.dx);
        dh = g.dh_prev;
        dc = g.dc_prev;
    }
    *grads.get_mut(&fw)? = gw;
    *grads.get_mut(&fb)? = gb;

    let w = store.get(&bw)?;
    let mut gw = std::mem::replace(grads.get_mut(&bw)?, Tensor::zeros(&[0]));
    let mut gb = std::mem::replace(grads.get_mut(&bb)?, Tensor::zeros(&[0]));
    let (mut dh, mut dc) = (vec![0.0; h], vec![0.0; h]);
    for t in 0..n {
        add_into(&mut dh, &d_states[t][h..]);
        let g = lstm_step_backward(&trace.bwd[t], &dh, &dc, w, &mut gw, &mut gb);
        add_into(&mut dx[t], &g.dx);
        dh = g.dh_prev;
        dc = g.dc_prev;
    }
    *grads.get_mut(&bw)? = gw;
    *grads.get_mut(&bb)? = gb;

    let ge = grads.get_mut(EMBED)?;
    for (t, &tok) in trace.tokens.iter().enumerate() {
        if let Some(m) = &trace.dropout {
            dx[t].iter_mut().zip(&m[t]).for_each(|(v, k)| *v *= k);
        }
        add_into(ge.row_mut(tok), &dx[t]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig, QS_ENCODER};
    use crate::numerics::{dot, grad_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_model(seed: u64) -> Model {
        let cfg = ModelConfig {
            embed_dim: 3,
            hidden: 3,
            decision_hidden: 2,
            ..ModelConfig::default()
        };
        Model::new(cfg, 8, 3, None, seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut m = small_model(0);
        m.zero_all();
        // embeddings nonzero, recurrent weights zero
        m.params.get_mut(EMBED).unwrap().fill(0.7);
        let enc = BiLstm::from_store(&m.params, QS_ENCODER).unwrap();
        let (seq, _) = encode_seq(&enc, &[2, 3, 4], None).unwrap();
        assert!(seq.states.iter().flatten().all(|v| *v == 0.0));
        let (q, _) = encode_question(&enc, &[4, 3, 2], None).unwrap();
        assert_eq!(q, vec![0.0; 6]);
    }

    #[test]
    fn empty_input_is_error() {
        let m = small_model(0);
        let enc = BiLstm::from_store(&m.params, QS_ENCODER).unwrap();
        assert!(matches!(encode_seq(&enc, &[], None), Err(Error::Empty(_))));
        assert!(encode_question(&enc, &[], None).is_err());
    }

    #[test]
    fn single_token_concatenates_one_step_each() {
        let m = small_model(5);
        let enc = BiLstm::from_store(&m.params, QS_ENCODER).unwrap();
        let (seq, _) = encode_seq(&enc, &[6], None).unwrap();
        let x = m.params.get(EMBED).unwrap().row(6).to_vec();
        let (hf, _) = crate::numerics::lstm_cell(&x, &[0.0; 3], &[0.0; 3], enc.fwd).unwrap();
        let (hb, _) = crate::numerics::lstm_cell(&x, &[0.0; 3], &[0.0; 3], enc.bwd).unwrap();
        assert_eq!(seq.states[0][..3], hf[..]);
        assert_eq!(seq.states[0][3..], hb[..]);
    }

    #[test]
    fn question_vector_is_seq_readout() {
        let m = small_model(9);
        let enc = BiLstm::from_store(&m.params, QS_ENCODER).unwrap();
        let toks = [1, 5, 2, 7];
        let (seq, _) = encode_seq(&enc, &toks, None).unwrap();
        let (q, _) = encode_question(&enc, &toks, None).unwrap();
        let mut expect = seq.states[3][..3].to_vec();
        expect.extend_from_slice(&seq.states[0][3..]);
        assert_eq!(q, expect);
    }

    #[test]
    fn dropout_only_when_training() {
        let m = small_model(2);
        let enc = BiLstm::from_store(&m.params, QS_ENCODER).unwrap();
        let (a, _) = encode_seq(&enc, &[1, 2, 3], None).unwrap();
        let (b, _) = encode_seq(&enc, &[1, 2, 3], None).unwrap();
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, _) = encode_seq(&enc, &[1, 2, 3], Some((0.5, &mut rng))).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_of_projected_states_matches_finite_differences() {
        let m = small_model(21);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let proj: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let toks = [3, 1, 4, 1];
        let report = grad_check(&m.params, 1e-5, |store| {
            let enc = BiLstm::from_store(store, QS_ENCODER)?;
            let (seq, trace) = encode_seq(&enc, &toks, None)?;
            let value: f64 = seq.states.iter().zip(&proj).map(|(s, p)| dot(s, p)).sum();
            let mut g = store.zeros_like();
            encode_backward(store, QS_ENCODER, &trace, &proj, &mut g)?;
            Ok((value, g))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn readout_gradient_matches_finite_differences() {
        let m = small_model(8);
        let toks = [2, 6, 5];
        let u = [0.5, -1.0, 0.25, 0.8, -0.3, 0.6];
        let report = grad_check(&m.params, 1e-5, |store| {
            let enc = BiLstm::from_store(store, QS_ENCODER)?;
            let (q, trace) = encode_question(&enc, &toks, None)?;
            let mut g = store.zeros_like();
            encode_backward(store, QS_ENCODER, &trace, &readout_grad(3, &u), &mut g)?;
            Ok((dot(&q, &u), g))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
