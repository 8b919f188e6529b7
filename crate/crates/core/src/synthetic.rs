//! Seeded synthetic corpora with a known best extract.
//!
//! Every document is a run of fixed-length sentences. A few of them are
//! "salient": they open with an entity token and draw their remaining words
//! from a lexicon that never appears in the other ("filler") sentences. The
//! abstract is the salient sentences copied verbatim, with the opening
//! entity marked, so the ideal summary is exactly those sentences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusRecord, EntityKind, EntitySpan};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub sentences: usize,
    pub sentence_len: usize,
    /// Salient sentences per document; they form the abstract.
    pub salient: usize,
    pub entities: usize,
    pub salient_words: usize,
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            docs: 50,
            sentences: 5,
            sentence_len: 12,
            salient: 2,
            entities: 30,
            salient_words: 40,
            filler_words: 60,
            seed: 0,
        }
    }
}

const KINDS: [EntityKind; 3] = [EntityKind::Person, EntityKind::Location, EntityKind::Organization];

/// Entity token `i`, e.g. `ent7`.
pub fn entity_token(i: usize) -> String {
    format!("ent{i}")
}

/// Builds the corpus. Salient positions, entities and words are drawn from
/// one ChaCha stream seeded by `config.seed`.
pub fn generate(config: &SyntheticConfig) -> Result<Vec<CorpusRecord>> {
    if config.sentence_len < 2 {
        return Err(Error::Config("sentence_len must be at least 2".into()));
    }
    if config.salient == 0 || config.salient > config.sentences {
        return Err(Error::Config("salient must lie in 1..=sentences".into()));
    }
    if config.entities == 0 || config.salient_words == 0 || config.filler_words == 0 {
        return Err(Error::Config("lexicon sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.docs);
    for d in 0..config.docs {
        let mut positions: Vec<usize> = (0..config.sentences).collect();
        positions.shuffle(&mut rng);
        let mut salient = positions[..config.salient].to_vec();
        salient.sort_unstable();
        let mut source = Vec::with_capacity(config.sentences);
        let mut abstract_ = Vec::with_capacity(config.salient);
        let mut entities = Vec::with_capacity(config.salient);
        for s in 0..config.sentences {
            if salient.contains(&s) {
                let e = rng.gen_range(0..config.entities);
                let mut sent = vec![entity_token(e)];
                sent.extend(
                    (1..config.sentence_len).map(|_| format!("s{}", rng.gen_range(0..config.salient_words))),
                );
                abstract_.push(sent.clone());
                entities.push(vec![EntitySpan {
                    start: 0,
                    end: 1,
                    kind: KINDS[e % KINDS.len()],
                }]);
                source.push(sent);
            } else {
                source.push(
                    (0..config.sentence_len)
                        .map(|_| format!("f{}", rng.gen_range(0..config.filler_words)))
                        .collect(),
                );
            }
        }
        out.push(CorpusRecord {
            id: format!("syn{d:03}"),
            source,
            roots: Some(vec![1; abstract_.len()]),
            abstract_,
            entities: Some(entities),
        });
    }
    Ok(out)
}
