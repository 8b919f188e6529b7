//! Shaping terms and the composite reward.
//!
//! ```text
//! R(Y) = R_a(Y) + γ R_b(Y) − α R_f(Y) − β R_s(Y)
//! ```
//!
//! `R_s` keeps the selected fraction near `δ`, `R_f` counts 0↔1 switches,
//! and `R_b` is the share of reference bigrams the summary covers.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::mask::SummaryMask;

/// `|mean(y) − δ|`.
pub fn length_penalty(mask: &SummaryMask, delta: f64) -> f64 {
    (mask.ratio() - delta).abs()
}

/// Number of adjacent positions whose selection differs.
pub fn fluency_penalty(mask: &SummaryMask) -> f64 {
    mask.bits().windows(2).filter(|w| w[0] != w[1]).count() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BigramOptions {
    /// Pair the last word of one selected run with the first of the next.
    pub cross_gaps: bool,
    /// Count repeated reference bigrams with multiplicity.
    pub multiset: bool,
}

/// Reference bigrams of one document, interned against its source tokens
/// so repeated recall queries are cheap.
#[derive(Debug, Clone)]
pub struct BigramReference {
    source_ids: Vec<u32>,
    reference: HashMap<(u32, u32), usize>,
    total: usize,
    options: BigramOptions,
}

impl BigramReference {
    pub fn new<S: AsRef<str>>(source: &[S], abstract_sentences: &[Vec<S>], options: BigramOptions) -> Self {
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut intern = |t: &S| {
            let n = ids.len() as u32;
            *ids.entry(t.as_ref().to_string()).or_insert(n)
        };
        let mut reference: HashMap<(u32, u32), usize> = HashMap::new();
        for sent in abstract_sentences {
            for w in sent.windows(2) {
                let key = (intern(&w[0]), intern(&w[1]));
                *reference.entry(key).or_default() += 1;
            }
        }
        if !options.multiset {
            reference.values_mut().for_each(|c| *c = 1);
        }
        let total = reference.values().sum();
        let source_ids = source.iter().map(&mut intern).collect();
        Self {
            source_ids,
            reference,
            total,
            options,
        }
    }

    pub fn reference_size(&self) -> usize {
        self.total
    }

    /// Fraction of reference bigrams covered by the selected words.
    pub fn recall(&self, mask: &SummaryMask) -> f64 {
        if self.total == 0 {
            log::warn!("reference has no bigrams; R_b = 0");
            return 0.0;
        }
        let bits = mask.bits();
        let mut candidate: HashMap<(u32, u32), usize> = HashMap::new();
        let mut prev: Option<usize> = None;
        for (t, &on) in bits.iter().enumerate().take(self.source_ids.len()) {
            if !on {
                if !self.options.cross_gaps {
                    prev = None;
                }
                continue;
            }
            if let Some(p) = prev {
                *candidate
                    .entry((self.source_ids[p], self.source_ids[t]))
                    .or_default() += 1;
            }
            prev = Some(t);
        }
        let covered: usize = self
            .reference
            .iter()
            .map(|(k, &n)| n.min(candidate.get(k).copied().unwrap_or(0)))
            .sum();
        covered as f64 / self.total as f64
    }
}

/// Bigram recall with the default options (distinct reference bigrams,
/// no pairing across gaps).
pub fn bigram_recall<S: AsRef<str>>(mask: &SummaryMask, source: &[S], abstract_sentences: &[Vec<S>]) -> f64 {
    BigramReference::new(source, abstract_sentences, BigramOptions::default()).recall(mask)
}

/// Reference bigrams as a plain set, for callers that need membership only.
pub fn reference_bigrams<S: AsRef<str>>(abstract_sentences: &[Vec<S>]) -> HashSet<(String, String)> {
    abstract_sentences
        .iter()
        .flat_map(|s| s.windows(2))
        .map(|w| (w[0].as_ref().to_string(), w[1].as_ref().to_string()))
        .collect()
}

/// Coefficients of the composite reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            gamma: 8.0,
            alpha: 10.0,
            beta: 20.0,
            delta: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_a: f64,
    pub r_b: f64,
    pub r_f: f64,
    pub r_s: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub total: f64,
}

pub fn total_reward(r_a: f64, r_b: f64, r_f: f64, r_s: f64, w: &RewardWeights) -> RewardBreakdown {
    RewardBreakdown {
        r_a,
        r_b,
        r_f,
        r_s,
        gamma: w.gamma,
        alpha: w.alpha,
        beta: w.beta,
        delta: w.delta,
        total: r_a + w.gamma * r_b - w.alpha * r_f - w.beta * r_s,
    }
}

/// All shaping terms for `mask`, combined with a given `R_a`.
pub fn score_mask(mask: &SummaryMask, r_a: f64, reference: &BigramReference, w: &RewardWeights) -> RewardBreakdown {
    total_reward(
        r_a,
        reference.recall(mask),
        fluency_penalty(mask),
        length_penalty(mask, w.delta),
        w,
    )
}
