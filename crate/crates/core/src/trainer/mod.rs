//! Bigram-supervised pretraining and REINFORCE training.
//!
//! Gradient buffers always hold gradients of a loss to be minimized. For
//! one document with samples `Y_1..Y_N` the REINFORCE loss is
//! `-(1/N) Σ_n [(R_n - b) log P(Y_n|X) + R_a(Y_n)]`, where `b` is zero
//! unless the moving-average baseline is enabled. The `R_a` term carries the
//! reward's own dependence on the QA reader's parameters. A batch gradient is
//! the sum of per-document gradients divided by the configured batch size.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::Adam;
pub use checkpoint::{config_hash, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use schedule::{LrSchedule, ScheduleEvent};

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloze::QaMode;
use crate::encoders::encode_backward;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Gradients;
use crate::pipeline::{encode_document, greedy_mask, Example};
use crate::policy::{policy_backward, run_policy, DecodeMode, PolicyDropout};
use crate::qa_reward::{encode_questions, qa_backward, qa_forward, questions_backward};
use crate::shaping::{score_mask, BigramOptions, RewardBreakdown, RewardWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// QA pairs per document.
    pub k: usize,
    pub mode: QaMode,
    pub gamma: f64,
    pub alpha: f64,
    /// Length-penalty weight; `None` means `2 * alpha`.
    pub beta: Option<f64>,
    pub delta: f64,
    pub lr: f64,
    /// Learning rate for pretraining; `None` reuses `lr`.
    pub pretrain_lr: Option<f64>,
    pub batch: usize,
    pub epochs_max: usize,
    pub pretrain_epochs: usize,
    /// Sampled summaries per document.
    pub n_samples: usize,
    pub seed: u64,
    pub lr_worsen_threshold: f64,
    pub patience: usize,
    /// Subtract a moving average of past rewards.
    pub baseline: bool,
    pub baseline_decay: f64,
    pub bigrams: BigramOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 1,
            mode: QaMode::Entity,
            gamma: 8.0,
            alpha: 10.0,
            beta: None,
            delta: 0.4,
            lr: 1e-4,
            pretrain_lr: None,
            batch: 16,
            epochs_max: 50,
            pretrain_epochs: 5,
            n_samples: 5,
            seed: 0,
            lr_worsen_threshold: 0.10,
            patience: 5,
            baseline: false,
            baseline_decay: 0.9,
            bigrams: BigramOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> RewardWeights {
        RewardWeights {
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta.unwrap_or(2.0 * self.alpha),
            delta: self.delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        let positive = [
            ("gamma", w.gamma),
            ("alpha", w.alpha),
            ("beta", w.beta),
            ("lr", self.lr),
            ("pretrain_lr", self.pretrain_lr.unwrap_or(self.lr)),
            ("lr_worsen_threshold", self.lr_worsen_threshold),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("k", self.k),
            ("batch", self.batch),
            ("epochs_max", self.epochs_max),
            ("n_samples", self.n_samples),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("baseline_decay must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Seed of an independent random stream, from a run seed and two counters.
pub fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(seed) ^ a) ^ b)
}

/// Stable key of a document id, so a document's random stream does not
/// depend on where it sits in a batch.
fn id_key(id: &str) -> u64 {
    id.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

fn policy_dropout(model: &Model) -> PolicyDropout {
    PolicyDropout {
        score: model.config.score_dropout,
        decision: model.config.decision_dropout,
    }
}

/// Mean per-token binary cross-entropy of the teacher-forced policy
/// against the bigram labels, with dropout off.
pub fn pretrain_loss(model: &Model, ex: &Example) -> Result<f64> {
    let (states, _) = encode_document(model, ex, None)?;
    let trace = run_policy(&model.params, &states, DecodeMode::Forced(&ex.labels), None, None)?;
    Ok(-trace.summary.log_prob / ex.labels.len() as f64)
}

/// Pretraining loss of one document and its gradient added into `grads`
/// scaled by `scale`. Dropout is active when `rng` is given.
pub fn pretrain_backward(
    model: &Model,
    ex: &Example,
    scale: f64,
    grads: &mut Gradients,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let (states, enc_trace) = match rng.as_mut() {
        Some(r) => encode_document(model, ex, Some(&mut **r))?,
        None => encode_document(model, ex, None)?,
    };
    let trace = match rng {
        Some(r) => run_policy(
            &model.params,
            &states,
            DecodeMode::Forced(&ex.labels),
            Some(policy_dropout(model)),
            Some(r),
        )?,
        None => run_policy(&model.params, &states, DecodeMode::Forced(&ex.labels), None, None)?,
    };
    let t = ex.labels.len() as f64;
    let d_doc = policy_backward(&model.params, &trace, -scale / t, grads)?;
    encode_backward(&model.params, model.config.doc_encoder(), &enc_trace, &d_doc, grads)?;
    Ok(-trace.summary.log_prob / t)
}

/// One sampled summary and its reward.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub mask: crate::SummaryMask,
    pub log_prob: f64,
    pub reward: RewardBreakdown,
}

/// Sampling and reward settings for one document's REINFORCE gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReinforceOptions {
    pub weights: RewardWeights,
    pub n_samples: usize,
    /// Subtracted from every sampled reward.
    pub baseline: f64,
    /// Policy dropout; `None` samples from the deterministic policy.
    pub dropout: Option<PolicyDropout>,
    /// Include `R_a` in the reward. Off, the reward is the shaping terms
    /// alone and the QA reader receives no gradient.
    pub qa: bool,
}

/// Draws `n_samples` summaries of `ex` and adds the document's REINFORCE
/// loss gradient, scaled by `scale`, into `grads`. Samples with a
/// non-finite reward are logged and left out of the gradient.
pub fn reinforce_backward(
    model: &Model,
    ex: &Example,
    opts: &ReinforceOptions,
    scale: f64,
    grads: &mut Gradients,
    rng: &mut dyn RngCore,
) -> Result<Vec<SampleOutcome>> {
    if opts.n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    let store = &model.params;
    let (states, enc_trace) = if opts.dropout.is_some() {
        encode_document(model, ex, Some(&mut *rng))?
    } else {
        encode_document(model, ex, None)?
    };
    let questions = if opts.qa {
        Some(encode_questions(store, &ex.questions)?)
    } else {
        None
    };
    let mut dq = questions
        .as_ref()
        .map(|q| vec![vec![0.0; q.vectors[0].len()]; q.len()])
        .unwrap_or_default();
    let mut d_doc = vec![vec![0.0; states.dim()]; states.len()];
    let n = opts.n_samples as f64;
    let mut out = Vec::with_capacity(opts.n_samples);
    for i in 0..opts.n_samples {
        let trace = run_policy(store, &states, DecodeMode::Sample, opts.dropout, Some(&mut *rng))?;
        let mask = &trace.summary.mask;
        let qa = match &questions {
            Some(q) => {
                let summary: Vec<usize> = mask.apply(&ex.doc_tokens).copied().collect();
                Some(qa_forward(store, q, &summary)?)
            }
            None => None,
        };
        let r_a = qa.as_ref().map_or(0.0, |f| f.reward);
        let reward = score_mask(mask, r_a, &ex.bigrams, &opts.weights);
        if !reward.total.is_finite() {
            warn!("document {}: sample {i} has non-finite reward {}; skipped", ex.id, reward.total);
            continue;
        }
        let d = policy_backward(store, &trace, -scale * (reward.total - opts.baseline) / n, grads)?;
        for (acc, g) in d_doc.iter_mut().zip(&d) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        if let (Some(q), Some(f)) = (&questions, &qa) {
            qa_backward(store, q, f, -scale / n, grads, &mut dq)?;
        }
        out.push(SampleOutcome {
            mask: trace.summary.mask,
            log_prob: trace.summary.log_prob,
            reward,
        });
    }
    encode_backward(store, model.config.doc_encoder(), &enc_trace, &d_doc, grads)?;
    if let Some(q) = &questions {
        questions_backward(store, q, &dq, grads)?;
    }
    Ok(out)
}

/// Composite reward of the greedy summary, dropout off.
pub fn greedy_reward(model: &Model, ex: &Example, weights: &RewardWeights) -> Result<RewardBreakdown> {
    let mask = greedy_mask(model, ex)?;
    let summary: Vec<usize> = mask.apply(&ex.doc_tokens).copied().collect();
    let questions = encode_questions(&model.params, &ex.questions)?;
    let r_a = qa_forward(&model.params, &questions, &summary)?.reward;
    Ok(score_mask(&mask, r_a, &ex.bigrams, weights))
}

/// Mean composite reward of greedy summaries; the validation objective.
pub fn validation_objective(model: &Model, examples: &[Example], weights: &RewardWeights) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut total = 0.0;
    for ex in examples {
        total += greedy_reward(model, ex, weights)?.total;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    pub mean_r_a: f64,
    pub mean_r_b: f64,
    pub mean_ratio: f64,
    pub samples: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_reward: f64,
    pub valid_objective: f64,
    pub lr: f64,
    pub halved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_objective: f64,
    pub stopped_early: bool,
    pub halvings: usize,
}

/// Model, optimizer and schedule state of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub schedule: LrSchedule,
    /// Moving-average reward, when the baseline is enabled and has data.
    pub baseline: Option<f64>,
    pub step: u64,
    pub pretrain_step: u64,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adam::new(&model.params, config.lr);
        let schedule = LrSchedule::new(config.lr, config.lr_worsen_threshold, config.patience);
        Ok(Self {
            config,
            model,
            optimizer,
            schedule,
            baseline: None,
            step: 0,
            pretrain_step: 0,
            epoch: 0,
            history: Vec::new(),
        })
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Diverged(format!(
                "non-finite gradient at step {}",
                self.step + self.pretrain_step
            )));
        }
        self.optimizer.lr = lr;
        self.optimizer.step(&mut self.model.params, grads)?;
        if !self.model.params.is_finite() {
            return Err(Error::Diverged("parameters became non-finite".into()));
        }
        Ok(())
    }

    /// One Adam update on the pretraining loss of `batch`; returns the
    /// mean training loss (with dropout).
    pub fn pretrain_step(&mut self, batch: &[&Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("pretraining batch"));
        }
        let mut grads = self.model.params.zeros_like();
        let scale = 1.0 / self.config.batch as f64;
        let mut loss = 0.0;
        for ex in batch {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
                self.config.seed ^ 0x7072_6574,
                self.pretrain_step,
                id_key(&ex.id),
            ));
            loss += pretrain_backward(&self.model, ex, scale, &mut grads, Some(&mut rng))?;
        }
        let loss = loss / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("pretraining loss is {loss}")));
        }
        let lr = self.config.pretrain_lr.unwrap_or(self.config.lr);
        self.apply(&grads, lr)?;
        self.pretrain_step += 1;
        Ok(loss)
    }

    fn batches(&self, n: usize, salt: u64, round: u64) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, salt, round));
        idx.shuffle(&mut rng);
        idx.chunks(self.config.batch).map(<[usize]>::to_vec).collect()
    }

    /// `pretrain_epochs` passes over `examples`; returns the mean loss of
    /// each pass, measured with dropout off after the pass.
    pub fn pretrain(&mut self, examples: &[Example]) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut losses = Vec::with_capacity(self.config.pretrain_epochs);
        for e in 0..self.config.pretrain_epochs {
            for b in self.batches(examples.len(), 0x7072, e as u64) {
                let batch: Vec<&Example> = b.iter().map(|&i| &examples[i]).collect();
                self.pretrain_step(&batch)?;
            }
            let mut loss = 0.0;
            for ex in examples {
                loss += pretrain_loss(&self.model, ex)?;
            }
            let loss = loss / examples.len() as f64;
            info!("pretrain epoch {}: loss {loss:.5}", e + 1);
            losses.push(loss);
        }
        Ok(losses)
    }

    /// The batch's REINFORCE loss gradient at the current parameters.
    /// Documents draw from streams keyed by step and id, so a document
    /// repeated in a batch contributes identical samples each time.
    pub fn reinforce_gradient(&self, batch: &[&Example]) -> Result<(Gradients, StepStats)> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        let opts = ReinforceOptions {
            weights: self.config.weights(),
            n_samples: self.config.n_samples,
            baseline: if self.config.baseline { self.baseline.unwrap_or(0.0) } else { 0.0 },
            dropout: Some(policy_dropout(&self.model)),
            qa: true,
        };
        let scale = 1.0 / self.config.batch as f64;
        let mut grads = self.model.params.zeros_like();
        let mut stats = StepStats::default();
        for ex in batch {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, self.step, id_key(&ex.id)));
            let outcomes = reinforce_backward(&self.model, ex, &opts, scale, &mut grads, &mut rng)?;
            stats.skipped += opts.n_samples - outcomes.len();
            for o in &outcomes {
                stats.samples += 1;
                stats.mean_reward += o.reward.total;
                stats.mean_r_a += o.reward.r_a;
                stats.mean_r_b += o.reward.r_b;
                stats.mean_ratio += o.mask.ratio();
            }
        }
        if stats.samples > 0 {
            let n = stats.samples as f64;
            stats.mean_reward /= n;
            stats.mean_r_a /= n;
            stats.mean_r_b /= n;
            stats.mean_ratio /= n;
        }
        Ok((grads, stats))
    }

    /// One REINFORCE update over `batch`.
    pub fn reinforce_step(&mut self, batch: &[&Example]) -> Result<StepStats> {
        let (grads, stats) = self.reinforce_gradient(batch)?;
        if self.config.baseline && stats.samples > 0 {
            let d = self.config.baseline_decay;
            self.baseline = Some(match self.baseline {
                Some(prev) => d * prev + (1.0 - d) * stats.mean_reward,
                None => stats.mean_reward,
            });
        }
        let lr = self.schedule.lr;
        self.apply(&grads, lr)?;
        self.step += 1;
        debug!(
            "step {}: reward {:.4} r_a {:.4} r_b {:.4} ratio {:.3}",
            self.step, stats.mean_reward, stats.mean_r_a, stats.mean_r_b, stats.mean_ratio
        );
        Ok(stats)
    }

    /// One pass of REINFORCE updates over shuffled batches; returns the mean
    /// sampled reward.
    pub fn train_epoch(&mut self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for b in self.batches(examples.len(), 0x7266, self.epoch as u64) {
            let batch: Vec<&Example> = b.iter().map(|&i| &examples[i]).collect();
            let s = self.reinforce_step(&batch)?;
            total += s.mean_reward * s.samples as f64;
            count += s.samples;
        }
        self.epoch += 1;
        Ok(if count == 0 { f64::NAN } else { total / count as f64 })
    }

    /// Epochs of REINFORCE with learning-rate halving and early stopping on
    /// the validation objective. Leaves the trainer at the best epoch's
    /// state (history is kept in full).
    pub fn fit(&mut self, train: &[Example], valid: &[Example]) -> Result<FitReport> {
        if train.is_empty() {
            return Err(Error::Empty("training set"));
        }
        if valid.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let weights = self.config.weights();
        let mut best: Option<(Model, Adam, Option<f64>, u64)> = None;
        let mut stopped_early = false;
        let mut epochs_run = 0;
        while epochs_run < self.config.epochs_max {
            let train_reward = self.train_epoch(train)?;
            epochs_run += 1;
            let objective = validation_objective(&self.model, valid, &weights)?;
            let ev = self.schedule.observe(objective);
            info!(
                "epoch {}: train reward {train_reward:.4}, valid objective {objective:.4}, lr {:.3e}",
                self.epoch, self.schedule.lr
            );
            self.history.push(EpochRecord {
                epoch: self.epoch,
                train_reward,
                valid_objective: objective,
                lr: self.schedule.lr,
                halved: ev.halved,
            });
            if ev.improved {
                best = Some((self.model.clone(), self.optimizer.clone(), self.baseline, self.step));
            }
            if ev.stop {
                stopped_early = true;
                break;
            }
        }
        if let Some((model, opt, baseline, step)) = best {
            self.model = model;
            self.optimizer = opt;
            self.baseline = baseline;
            self.step = step;
        }
        Ok(FitReport {
            epochs_run,
            best_epoch: self.schedule.best_epoch.map_or(0, |e| e + 1),
            best_objective: self.schedule.best.unwrap_or(f64::NAN),
            stopped_early,
            halvings: self.schedule.halvings,
        })
    }
}
