//! Parameter layout shared by the policy and the QA reward model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::random_embeddings;
use crate::error::{Error, Result};
use crate::numerics::{init_lstm, xavier_uniform, ParamStore, Tensor};

pub const EMBED: &str = "embed";
pub const DOC_ENCODER: &str = "doc_enc";
pub const QS_ENCODER: &str = "qs_enc";
pub const DECISION_W: &str = "decision.w";
pub const DECISION_B: &str = "decision.b";
pub const POLICY_W: &str = "policy.w_h";
pub const POLICY_B: &str = "policy.b_h";
pub const QA_ATTN: &str = "qa.w_a";
pub const QA_OUT: &str = "qa.w_c";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Per-direction hidden size of both bidirectional encoders.
    pub hidden: usize,
    /// Hidden size of the decision-tracking LSTM.
    pub decision_hidden: usize,
    /// Use the question/summary encoder for documents too.
    pub share_encoders: bool,
    /// Dropout on `h_t` where it enters the inclusion probability.
    pub score_dropout: f64,
    /// Dropout on `[h_t ‖ y_t]` where it enters the decision LSTM.
    pub decision_dropout: f64,
    /// Dropout on encoder inputs (embeddings); training only.
    pub encoder_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            hidden: 256,
            decision_hidden: 30,
            share_encoders: false,
            score_dropout: 0.2,
            decision_dropout: 0.2,
            encoder_dropout: 0.0,
        }
    }
}

impl ModelConfig {
    /// Width of one bidirectional state.
    pub fn state_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.hidden == 0 || self.decision_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        for (name, r) in [
            ("score_dropout", self.score_dropout),
            ("decision_dropout", self.decision_dropout),
            ("encoder_dropout", self.encoder_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn doc_encoder(&self) -> &'static str {
        if self.share_encoders {
            QS_ENCODER
        } else {
            DOC_ENCODER
        }
    }
}

/// Parameter names of one bidirectional encoder.
pub fn encoder_names(prefix: &str) -> [String; 4] {
    [
        format!("{prefix}.fwd.w"),
        format!("{prefix}.fwd.b"),
        format!("{prefix}.bwd.w"),
        format!("{prefix}.bwd.b"),
    ]
}

/// All learnable tensors plus the configuration that shaped them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    /// Seeded initialization. `embeddings`, when given, must be
    /// `vocab_len x embed_dim`; otherwise rows are drawn from U(-0.05, 0.05).
    pub fn new(
        config: ModelConfig,
        vocab_len: usize,
        answer_len: usize,
        embeddings: Option<Tensor>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.embed_dim;
        let h = config.hidden;
        let d = config.state_dim();
        let s = config.decision_hidden;
        let embed = match embeddings {
            Some(t) => {
                if t.shape() != [vocab_len, e] {
                    return Err(Error::Shape {
                        context: "embedding table",
                        expected: vocab_len * e,
                        actual: t.len(),
                    });
                }
                t
            }
            None => random_embeddings(vocab_len, e, seed ^ 0x5eed),
        };
        let mut params = ParamStore::new();
        params.insert(EMBED, embed);
        let mut prefixes = vec![QS_ENCODER];
        if !config.share_encoders {
            prefixes.push(DOC_ENCODER);
        }
        for prefix in prefixes {
            let [fw, fb, bw, bb] = encoder_names(prefix);
            let (w, b) = init_lstm(e, h, &mut rng);
            params.insert(fw, w);
            params.insert(fb, b);
            let (w, b) = init_lstm(e, h, &mut rng);
            params.insert(bw, w);
            params.insert(bb, b);
        }
        let (w, b) = init_lstm(d + 1, s, &mut rng);
        params.insert(DECISION_W, w);
        params.insert(DECISION_B, b);
        params.insert(POLICY_W, xavier_uniform(1, d + s, &mut rng));
        params.insert(POLICY_B, Tensor::zeros(&[1]));
        params.insert(QA_ATTN, xavier_uniform(d, d, &mut rng));
        params.insert(QA_OUT, xavier_uniform(answer_len.max(1), d, &mut rng));
        Ok(Self { config, params })
    }

    pub fn answer_len(&self) -> usize {
        self.params.get(QA_OUT).map(Tensor::rows).unwrap_or(0)
    }

    pub fn vocab_len(&self) -> usize {
        self.params.get(EMBED).map(Tensor::rows).unwrap_or(0)
    }

    /// Sets every parameter to zero.
    pub fn zero_all(&mut self) {
        for (_, t) in self.params.iter_mut() {
            t.fill(0.0);
        }
    }
}
