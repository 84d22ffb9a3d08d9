use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Optimizer, TrainConfig};
use super::params::Dropout;
use super::trained::{Prediction, TrainRecord, TrainedModel, EMBED};
use crate::autodiff::{Graph, Tensor};
use crate::corpus::{Corpus, Example, TokenId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct OptimState<S: Scalar> {
    first: Vec<Tensor<S>>,
    second: Vec<Tensor<S>>,
    t: i32,
}

impl<S: Scalar> OptimState<S> {
    fn new(params: &[Tensor<S>]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| {
                    let (r, c) = p.dims2();
                    Tensor::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            first: zeros(),
            second: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, params: &mut [Tensor<S>], grads: &[Tensor<S>]) {
        self.t += 1;
        let lr = S::lit(cfg.learning_rate);
        let mu = S::lit(cfg.momentum);
        let wd = S::lit(cfg.weight_decay);
        let b2 = S::lit(ADAM_BETA2);
        let eps = S::lit(ADAM_EPS);
        let c1 = S::one() - mu.powi(self.t);
        let c2 = S::one() - b2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (j, (w, &dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let dw = dw + wd * *w;
                match cfg.optimizer {
                    Optimizer::SgdMomentum => {
                        m[j] = mu * m[j] + dw;
                        *w = *w - lr * m[j];
                    }
                    Optimizer::Adam => {
                        m[j] = mu * m[j] + (S::one() - mu) * dw;
                        v[j] = b2 * v[j] + (S::one() - b2) * dw * dw;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        *w = *w - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn word_dropout(tokens: &[TokenId], rate: f64, rng: &mut ChaCha8Rng) -> Vec<TokenId> {
    tokens
        .iter()
        .map(|&t| {
            if rate > 0.0 && !t.is_framing() && rng.gen_bool(rate) {
                TokenId::UNK
            } else {
                t
            }
        })
        .collect()
}

fn clip(grads: &mut [Tensor<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
}

/// Validation accuracy and mean cross-entropy.
fn validate<S: Scalar>(model: &TrainedModel<S>, examples: &[Example]) -> Result<(f64, f64)> {
    let preds: Vec<Prediction<S>> = examples
        .iter()
        .map(|ex| model.predict(&ex.tokens))
        .collect::<Result<_>>()?;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for (p, ex) in preds.iter().zip(examples) {
        correct += usize::from(p.class == ex.label);
        let z = p.logit.as_f64();
        let y = f64::from(ex.label);
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    let n = examples.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Minibatch training on binary cross-entropy with early stopping on
/// validation accuracy (validation loss breaks ties). Returns the best
/// checkpoint with its history.
pub fn train<S: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
) -> Result<TrainedModel<S>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if corpus.train.is_empty() || corpus.validation.is_empty() {
        return Err(Error::Validation(
            "training needs non-empty train and validation splits".into(),
        ));
    }
    let mut model =
        TrainedModel::<S>::init(model_cfg.clone(), corpus.vocab.clone(), train_cfg.seed)?;
    for ex in corpus.train.iter().chain(&corpus.validation) {
        model.check_tokens(&ex.tokens)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(1);
    let mut optim = OptimState::new(model.params.tensors());
    let mut order: Vec<usize> = (0..corpus.train.len()).collect();
    let mut cursor = order.len();

    let mut best: Option<(f64, f64, usize, Vec<Tensor<S>>)> = None;
    let mut history = Vec::new();
    let mut running = (0.0, 0usize);

    for step in 1..=train_cfg.max_steps {
        let mut acc: Vec<Tensor<f64>> = model
            .params
            .tensors()
            .iter()
            .map(|p| {
                let (r, c) = p.dims2();
                Tensor::zeros(r, c)
            })
            .collect();
        let mut batch_loss = 0.0;
        for _ in 0..train_cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let ex = &corpus.train[order[cursor]];
            cursor += 1;
            let tokens = word_dropout(&ex.tokens, model_cfg.word_dropout, &mut rng);
            let ids: Vec<usize> = tokens.iter().map(|t| t.index()).collect();
            let keep = TrainedModel::<S>::keep_mask(&tokens);

            let mut g = Graph::new();
            let p = model.params.register(&mut g, true)?;
            let x = g.gather(p[EMBED], &ids)?;
            let mut drop = Dropout {
                rate: model_cfg.dropout,
                rng: Some(&mut rng),
            };
            let run = (|| {
                let logit = model.logit_node(&mut g, &p, x, &keep, &mut drop)?;
                g.bce_with_logits(logit, S::lit(f64::from(ex.label)))
            })();
            let loss = match run {
                Ok(node) => node,
                Err(Error::Numeric { op }) => {
                    return Err(Error::Training {
                        step,
                        message: format!("non-finite value in {op}"),
                    })
                }
                Err(e) => return Err(e),
            };
            let value = g.scalar(loss)?.as_f64();
            if !value.is_finite() {
                return Err(Error::Training {
                    step,
                    message: "loss is not finite".into(),
                });
            }
            batch_loss += value;
            let mut grads = g.backward(loss)?;
            for (a, &node) in acc.iter_mut().zip(&p) {
                let gr = grads.take(node);
                for (x, &y) in a.data_mut().iter_mut().zip(gr.data()) {
                    *x += y.as_f64();
                }
            }
        }
        let inv = 1.0 / train_cfg.batch_size as f64;
        for a in &mut acc {
            for x in a.data_mut() {
                *x *= inv;
            }
        }
        clip(&mut acc, train_cfg.clip_norm);
        let grads: Vec<Tensor<S>> = acc.iter().map(Tensor::cast).collect();
        optim.step(train_cfg, model.params.tensors_mut(), &grads);
        if model.params.tensors().iter().any(|t| !t.is_finite()) {
            return Err(Error::Training {
                step,
                message: "parameters diverged".into(),
            });
        }
        running.0 += batch_loss * inv;
        running.1 += 1;

        if step % train_cfg.eval_every == 0 || step == train_cfg.max_steps {
            let (val_acc, val_loss) = validate(&model, &corpus.validation)?;
            history.push(TrainRecord {
                step,
                loss: running.0 / running.1 as f64,
                val_acc,
            });
            running = (0.0, 0);
            let improved = match &best {
                None => true,
                Some((a, l, _, _)) => val_acc > *a || (val_acc == *a && val_loss < *l),
            };
            if improved {
                best = Some((val_acc, val_loss, step, model.params.tensors().to_vec()));
            }
            let best_step = best.as_ref().map_or(step, |b| b.2);
            if step - best_step >= train_cfg.patience {
                break;
            }
        }
    }
    let (_, _, _, tensors) = best.expect("at least one evaluation ran");
    model.params.tensors_mut().clone_from_slice(&tensors);
    model.history = history;
    Ok(model)
}
