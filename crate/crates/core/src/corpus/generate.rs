use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Corpus;
use crate::error::{Error, Result};

/// Parameters of the class-conditional unigram corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(default)]
pub struct GeneratorConfig {
    pub vocab_size: usize,
    /// Discriminative words per class.
    pub class_word_count: usize,
    /// Inclusive bounds on the number of words per text.
    pub length_range: (usize, usize),
    /// Probability that a word is drawn from the label's own discriminative
    /// list instead of the shared background.
    pub class_skew: f64,
    /// Positive-class rate.
    pub balance: f64,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            vocab_size: 500,
            class_word_count: 20,
            length_range: (10, 40),
            class_skew: 0.3,
            balance: 0.5,
            n_train: 4000,
            n_validation: 300,
            n_test: 300,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_range;
        if lo < 3 || lo > hi {
            return Err(Error::Validation(format!(
                "length range ({lo}, {hi}) must satisfy 3 ≤ min ≤ max"
            )));
        }
        if self.vocab_size <= 2 * self.class_word_count {
            return Err(Error::Validation(
                "vocab_size must exceed twice class_word_count".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.class_skew) || !(0.0..=1.0).contains(&self.balance) {
            return Err(Error::Validation(
                "class_skew and balance must lie in [0, 1]".into(),
            ));
        }
        if self.n_train == 0 {
            return Err(Error::Validation("n_train must be positive".into()));
        }
        Ok(())
    }
}

/// Samples a synthetic labelled corpus. Background words follow a Zipf law
/// over a shuffled vocabulary; each class additionally owns
/// `class_word_count` words that replace a background draw with probability
/// `class_skew`.
pub fn generate_base_corpus(cfg: &GeneratorConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let words: Vec<String> = (0..cfg.vocab_size).map(|i| format!("w{i:04}")).collect();

    let mut order: Vec<usize> = (0..cfg.vocab_size).collect();
    order.shuffle(&mut rng);
    let class_words = [
        order[..cfg.class_word_count].to_vec(),
        order[cfg.class_word_count..2 * cfg.class_word_count].to_vec(),
    ];
    order.shuffle(&mut rng);
    let zipf: Vec<f64> = (1..=cfg.vocab_size).map(|r| 1.0 / r as f64).collect();
    let background = WeightedIndex::new(&zipf).expect("positive weights");

    let mut sample_split = |n: usize| -> Vec<(String, u8)> {
        (0..n)
            .map(|_| {
                let label = u8::from(rng.gen_bool(cfg.balance));
                let len = rng.gen_range(cfg.length_range.0..=cfg.length_range.1);
                let text: Vec<&str> = (0..len)
                    .map(|_| {
                        let w = if cfg.class_skew > 0.0 && rng.gen_bool(cfg.class_skew) {
                            *class_words[label as usize]
                                .choose(&mut rng)
                                .expect("non-empty")
                        } else {
                            order[background.sample(&mut rng)]
                        };
                        words[w].as_str()
                    })
                    .collect();
                (text.join(" "), label)
            })
            .collect()
    };
    let train = sample_split(cfg.n_train);
    let validation = sample_split(cfg.n_validation);
    let test = sample_split(cfg.n_test);
    Corpus::from_texts(&train, &validation, &test)
}
