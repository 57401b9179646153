//! Synthetic corpora with controlled, period-dependent entity/label
//! correlations and a period-stable content signal.
//!
//! Labels are drawn first. A primary entity is then drawn given the label
//! with `P(e | fake) ∝ c_e` and `P(e | real) ∝ 1 - c_e`, where `c_e` is the
//! entity's target fake fraction for the period. With the period's fake
//! prior set to the mean of `c_e`, Bayes' rule gives `P(fake | e) = c_e`.
//! Extra entities are drawn uniformly from entities sharing the primary's
//! correlations in both periods, which leaves that identity intact, so the
//! realized fractions track the targets up to sampling noise.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BiasTally, Corpus, EntityBiasRow, EntitySource, Label, NewsPiece, Period};
use crate::error::{Error, Result};

/// 2010-01-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_262_304_000;
const DAY: i64 = 86_400;

fn default_min_tokens() -> usize {
    12
}
fn default_max_tokens() -> usize {
    24
}
fn default_max_entities() -> usize {
    3
}
fn default_start() -> i64 {
    DEFAULT_START
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSpec {
    /// Content vocabulary size. A quarter is fake-leaning, a quarter
    /// real-leaning, the rest neutral.
    pub vocab_size: usize,
    pub n_entities: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Target fake fraction per entity in the training period.
    pub train_corr: Vec<f64>,
    /// Target fake fraction per entity in the later (validation + test)
    /// period.
    pub test_corr: Vec<f64>,
    /// Probability that a content token comes from the label's own pool.
    pub content_signal_strength: f64,
    pub seed: u64,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Entities per piece are uniform in `1..=max_entities`, capped by the
    /// size of the primary entity's correlation group.
    #[serde(default = "default_max_entities")]
    pub max_entities: usize,
    #[serde(default = "default_start")]
    pub start_timestamp: i64,
}

impl BiasSpec {
    /// Half the entities lean real in training (fake fraction `low`) and
    /// fake later (`1 - low_later`); the other half mirror them.
    pub fn flipped(n_entities: usize, low: f64, low_later: f64, seed: u64) -> Self {
        let train_corr = (0..n_entities)
            .map(|i| if i % 2 == 0 { low } else { 1.0 - low })
            .collect();
        let test_corr = (0..n_entities)
            .map(|i| if i % 2 == 0 { 1.0 - low_later } else { low_later })
            .collect();
        BiasSpec {
            vocab_size: 400,
            n_entities,
            n_train: 1800,
            n_val: 600,
            n_test: 600,
            train_corr,
            test_corr,
            content_signal_strength: 0.1,
            seed,
            min_tokens: default_min_tokens(),
            max_tokens: default_max_tokens(),
            max_entities: default_max_entities(),
            start_timestamp: DEFAULT_START,
        }
    }

    /// Same correlations in both periods.
    pub fn unbiased_control(mut self) -> Self {
        self.test_corr = self.train_corr.clone();
        self
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Ratios that make `temporal_split` reproduce the generator's periods.
    pub fn split_ratios(&self) -> (f64, f64) {
        let n = self.total() as f64;
        (self.n_train as f64 / n, self.n_val as f64 / n)
    }

    pub fn entity_name(i: usize) -> String {
        format!("ent{i:03}")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} below 8", self.vocab_size));
        }
        if self.n_entities == 0 || self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("counts must be positive".into());
        }
        if self.train_corr.len() != self.n_entities || self.test_corr.len() != self.n_entities {
            return bad("one correlation per entity and period required".into());
        }
        if self
            .train_corr
            .iter()
            .chain(&self.test_corr)
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return bad("correlations must lie in [0, 1]".into());
        }
        if !(self.content_signal_strength > 0.0 && self.content_signal_strength < 1.0) {
            return bad("content_signal_strength must lie in (0, 1)".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens || self.max_entities == 0 {
            return bad("token and entity ranges must be non-empty".into());
        }
        if self.start_timestamp < 0 {
            return bad("start_timestamp must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Exact per-entity, per-period counts of what was generated.
    pub ledger: Vec<EntityBiasRow>,
    /// First timestamp of the later period.
    pub boundary: i64,
}

pub fn generate(spec: &BiasSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let quarter = spec.vocab_size / 4;
    let boundary = spec.start_timestamp + spec.n_train as i64 * DAY;
    let mut pieces = Vec::with_capacity(spec.total());
    let mut tally = BiasTally::default();
    let groups: Vec<Vec<usize>> = (0..spec.n_entities)
        .map(|e| {
            (0..spec.n_entities)
                .filter(|&o| spec.train_corr[o] == spec.train_corr[e] && spec.test_corr[o] == spec.test_corr[e])
                .collect()
        })
        .collect();

    let periods = [
        (Period::Before, spec.n_train, &spec.train_corr, spec.start_timestamp),
        (Period::After, spec.n_val + spec.n_test, &spec.test_corr, boundary),
    ];
    for (period, count, corr, start) in periods {
        let prior = corr.iter().sum::<f64>() / corr.len() as f64;
        for i in 0..count {
            let label = Label::from(rng.gen_bool(prior));
            let weights = corr.iter().map(|&c| if label.is_fake() { c } else { 1.0 - c });
            let primary = WeightedIndex::new(weights)
                .map_err(|e| Error::InfeasibleSpec(e.to_string()))?
                .sample(&mut rng);
            let k = rng.gen_range(1..=spec.max_entities).min(groups[primary].len());
            let mut chosen = vec![primary];
            let others: Vec<usize> = groups[primary].iter().copied().filter(|&e| e != primary).collect();
            chosen.extend(others.choose_multiple(&mut rng, k - 1));

            let len = rng.gen_range(spec.min_tokens..=spec.max_tokens);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| content_token(&mut rng, label, quarter, spec))
                .collect();
            let mut entities = Vec::with_capacity(chosen.len());
            for &e in &chosen {
                let name = BiasSpec::entity_name(e);
                let at = rng.gen_range(0..=tokens.len());
                tokens.insert(at, name.clone());
                entities.push(name);
            }
            // Occurrence order, as a recognizer would report them.
            entities.sort_by_key(|e| tokens.iter().position(|t| t == e));

            tally.add(entities.iter().map(String::as_str), period, label);
            pieces.push(NewsPiece {
                id: format!("syn-{:06}", pieces.len()),
                tokens,
                entities,
                label,
                timestamp: start + i as i64 * DAY,
                entity_source: EntitySource::External,
            });
        }
    }

    let ledger = tally.rows();
    for e in 0..spec.n_entities {
        let name = BiasSpec::entity_name(e);
        for period in [Period::Before, Period::After] {
            if !ledger.iter().any(|r| r.entity == name && r.period == period) {
                return Err(Error::InfeasibleSpec(format!(
                    "entity {name} never occurs in the {period} period"
                )));
            }
        }
    }

    Ok(SyntheticCorpus {
        corpus: Corpus::new(format!("synthetic-{}", spec.seed), pieces)?,
        ledger,
        boundary,
    })
}

fn content_token<R: Rng>(rng: &mut R, label: Label, quarter: usize, spec: &BiasSpec) -> String {
    let idx = if rng.gen_bool(spec.content_signal_strength) {
        let offset = if label.is_fake() { 0 } else { quarter };
        offset + rng.gen_range(0..quarter)
    } else {
        rng.gen_range(2 * quarter..spec.vocab_size)
    };
    format!("w{idx:04}")
}

/// Entity names, one per line, for use as a gazetteer.
pub fn gazetteer_lines(spec: &BiasSpec) -> String {
    (0..spec.n_entities)
        .map(|e| format!("{}\tSYN\n", BiasSpec::entity_name(e)))
        .collect()
}
