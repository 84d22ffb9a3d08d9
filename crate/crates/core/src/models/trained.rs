use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::birnn::BiRnnAttn;
use super::config::{Arch, ModelConfig};
use super::params::{uniform, Dropout, Params};
use super::transformer::TransformerEncoder;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::corpus::{Example, TokenId, Vocab};
use crate::error::{Error, Result};
use crate::scalar::{sigmoid, Scalar};

/// Quantity a gradient-based explanation differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Logit,
    Prob,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Logit => "logit",
            Objective::Prob => "prob",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<S> {
    pub logit: S,
    pub prob: S,
    pub class: u8,
}

impl<S: Scalar> Prediction<S> {
    pub fn from_logit(logit: S) -> Self {
        let prob = sigmoid(logit);
        let class = u8::from(prob >= S::lit(0.5));
        Self { logit, prob, class }
    }

    pub fn prob_of(&self, class: u8) -> S {
        if class == 1 {
            self.prob
        } else {
            sigmoid(-self.logit)
        }
    }
}

/// One validation checkpoint of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Net {
    BirnnAttn(BiRnnAttn),
    Transformer(TransformerEncoder),
}

/// A binary classifier with a single logit output. Parameter 0 is the
/// `vocab × d` embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<S: Scalar> {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocab,
    pub(crate) params: Params<S>,
    pub(crate) net: Net,
    pub(crate) history: Vec<TrainRecord>,
}

pub(crate) const EMBED: usize = 0;

fn sign<S: Scalar>(class: u8) -> S {
    if class == 1 {
        S::one()
    } else {
        -S::one()
    }
}

impl<S: Scalar> TrainedModel<S> {
    /// Freshly initialized, untrained model.
    pub fn init(config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::new();
        let embed = params.add(
            "embed",
            uniform(&mut rng, vocab.len(), config.embed_dim, 1.0),
        );
        debug_assert_eq!(embed, EMBED);
        let net = match config.arch {
            Arch::BirnnAttn => Net::BirnnAttn(BiRnnAttn::init(&config, &mut params, &mut rng)),
            Arch::Transformer => {
                Net::Transformer(TransformerEncoder::init(&config, &mut params, &mut rng))
            }
        };
        Ok(Self {
            config,
            vocab,
            params,
            net,
            history: Vec::new(),
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        params: Params<S>,
        net: Net,
        history: Vec<TrainRecord>,
    ) -> Self {
        Self {
            config,
            vocab,
            params,
            net,
            history,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params<S> {
        &self.params
    }

    pub fn history(&self) -> &[TrainRecord] {
        &self.history
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    /// Best validation accuracy seen during training, if trained.
    pub fn best_val_acc(&self) -> Option<f64> {
        self.history.iter().map(|r| r.val_acc).reduce(f64::max)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.max_len {
            return Err(Error::Length {
                len,
                max: self.config.max_len,
            });
        }
        if len == 0 {
            return Err(Error::Contract("empty input".into()));
        }
        Ok(())
    }

    pub(crate) fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        self.check_len(tokens.len())?;
        if let Some(t) = tokens.iter().find(|t| t.index() >= self.vocab.len()) {
            return Err(Error::Vocab(format!(
                "token id {} outside a vocabulary of {}",
                t.0,
                self.vocab.len()
            )));
        }
        Ok(())
    }

    /// Embedding row of one token.
    pub fn embedding_row(&self, token: TokenId) -> Result<&[S]> {
        self.check_tokens(&[token])?;
        Ok(self.params.get(EMBED).row(token.index()))
    }

    /// `n × d` lookup of the embedding rows of `tokens`.
    pub fn embed(&self, tokens: &[TokenId]) -> Result<Tensor<S>> {
        self.check_tokens(tokens)?;
        let table = self.params.get(EMBED);
        let d = self.config.embed_dim;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for t in tokens {
            data.extend_from_slice(table.row(t.index()));
        }
        Tensor::matrix(tokens.len(), d, data)
    }

    /// Rows that take part in the computation; padding is dropped.
    pub fn keep_mask(tokens: &[TokenId]) -> Vec<bool> {
        tokens.iter().map(|&t| t != TokenId::PAD).collect()
    }

    /// Builds the logit node on `g` from an `n × d` embedding node.
    pub(crate) fn logit_node(
        &self,
        g: &mut Graph<'_, S>,
        p: &[NodeId],
        embeds: NodeId,
        keep: &[bool],
        drop: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        let (n, d) = g.value(embeds).dims2();
        if d != self.config.embed_dim || keep.len() != n {
            return Err(Error::shape(
                "forward",
                format!(
                    "embeddings {n}×{d}, mask {}, expected width {}",
                    keep.len(),
                    self.config.embed_dim
                ),
            ));
        }
        self.check_len(n)?;
        let x = if keep.iter().all(|&k| k) {
            embeds
        } else {
            let rows: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
            if rows.is_empty() {
                return Err(Error::Contract("every position is padding".into()));
            }
            g.gather(embeds, &rows)?
        };
        match &self.net {
            Net::BirnnAttn(net) => net.forward(g, p, x, drop),
            Net::Transformer(net) => net.forward(g, p, x, drop),
        }
    }

    /// Eval-mode logit of an embedding sequence with every row kept.
    pub fn forward_from_embeddings(&self, embeds: &Tensor<S>) -> Result<S> {
        self.forward_masked(embeds, &vec![true; embeds.rows()])
    }

    pub fn forward_masked(&self, embeds: &Tensor<S>, keep: &[bool]) -> Result<S> {
        let mut g = Graph::new();
        let p = self.params.register(&mut g, false)?;
        let x = g.constant_ref(embeds)?;
        let out = self.logit_node(&mut g, &p, x, keep, &mut Dropout::eval())?;
        g.scalar(out)
    }

    pub fn predict(&self, tokens: &[TokenId]) -> Result<Prediction<S>> {
        let embeds = self.embed(tokens)?;
        let logit = self.forward_masked(&embeds, &Self::keep_mask(tokens))?;
        Ok(Prediction::from_logit(logit))
    }

    /// Logit and its gradient with respect to every embedding row. Rows
    /// excluded by `keep` get zero gradient.
    pub fn logit_grad(&self, embeds: &Tensor<S>, keep: &[bool]) -> Result<(S, Tensor<S>)> {
        let mut g = Graph::new();
        let p = self.params.register(&mut g, false)?;
        let x = g.leaf_ref(embeds)?;
        let out = self.logit_node(&mut g, &p, x, keep, &mut Dropout::eval())?;
        let z = g.scalar(out)?;
        let mut grads = g.backward(out)?;
        Ok((z, grads.take(x)))
    }

    /// Value and embedding gradient of `f_class` (logit objective, with
    /// `f₀ = −f₁`) or of the probability of `class` (prob objective).
    pub fn objective_grad(
        &self,
        embeds: &Tensor<S>,
        keep: &[bool],
        objective: Objective,
        class: u8,
    ) -> Result<(S, Tensor<S>)> {
        let (z, grad) = self.logit_grad(embeds, keep)?;
        Ok(objective_from_logit(z, grad, objective, class))
    }

    pub fn grad_embeddings(
        &self,
        tokens: &[TokenId],
        objective: Objective,
        class: u8,
    ) -> Result<Tensor<S>> {
        let embeds = self.embed(tokens)?;
        let (_, grad) = self.objective_grad(&embeds, &Self::keep_mask(tokens), objective, class)?;
        Ok(grad)
    }

    /// Fraction of examples whose predicted class equals the label.
    pub fn accuracy(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Contract("accuracy of an empty set".into()));
        }
        let correct = examples
            .par_iter()
            .map(|ex| Ok(usize::from(self.predict(&ex.tokens)?.class == ex.label)))
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum::<usize>();
        Ok(correct as f64 / examples.len() as f64)
    }

    /// Converts examples encoded with `from` into this model's vocabulary;
    /// tokens the model never saw become UNK.
    pub fn translate(&self, from: &Vocab, examples: &[Example]) -> Result<Vec<Example>> {
        examples
            .iter()
            .map(|ex| {
                Ok(Example {
                    tokens: self.vocab.translate(from, &ex.tokens)?,
                    ..ex.clone()
                })
            })
            .collect()
    }

    /// Same model in another precision.
    pub fn cast<T: Scalar>(&self) -> TrainedModel<T> {
        let tensors = self.params.tensors().iter().map(Tensor::cast).collect();
        TrainedModel {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: Params::from_parts(self.params.names().to_vec(), tensors),
            net: self.net.clone(),
            history: self.history.clone(),
        }
    }
}

/// Maps a logit value and gradient to the requested objective for `class`.
pub fn objective_from_logit<S: Scalar>(
    z: S,
    grad: Tensor<S>,
    objective: Objective,
    class: u8,
) -> (S, Tensor<S>) {
    let s = sign::<S>(class);
    match objective {
        Objective::Logit => (s * z, grad.scaled(s)),
        Objective::Prob => {
            let p = sigmoid(s * z);
            (p, grad.scaled(s * p * (S::one() - p)))
        }
    }
}
