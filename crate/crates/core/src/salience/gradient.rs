use super::config::{Baseline, Reduction};
use super::map::{Orientation, SalienceMap};
use super::model::Differentiable;
use crate::autodiff::Tensor;
use crate::corpus::{Example, TokenId};
use crate::error::{Error, Result};
use crate::models::{objective_from_logit, Objective, Prediction, TrainedModel};

/// Embeddings, logit gradient and prediction of one example, shared by all
/// plain-gradient variants.
pub(crate) struct GradContext {
    pub positions: Vec<usize>,
    pub embeds: Tensor<f64>,
    pub prediction: Prediction<f64>,
    pub logit_grad: Tensor<f64>,
}

impl GradContext {
    pub fn new<M: Differentiable + ?Sized>(model: &M, example: &Example) -> Result<Self> {
        let embeds = model.embed_tokens(&example.tokens)?;
        let keep = TrainedModel::<f64>::keep_mask(&example.tokens);
        let (z, logit_grad) = model.logit_and_grad(&embeds, &keep)?;
        Ok(Self {
            positions: example.content_positions(),
            embeds,
            prediction: Prediction::from_logit(z),
            logit_grad,
        })
    }

    fn objective_grad(&self, objective: Objective) -> Tensor<f64> {
        let class = self.prediction.class;
        objective_from_logit(
            self.prediction.logit,
            self.logit_grad.clone(),
            objective,
            class,
        )
        .1
    }

    pub fn grad_map(&self, objective: Objective, reduction: Reduction) -> Result<SalienceMap> {
        let g = self.objective_grad(objective);
        let scores = self
            .positions
            .iter()
            .map(|&i| reduction.apply(g.row(i)))
            .collect();
        let orientation = if reduction.is_signed() {
            Orientation::Toward(self.prediction.class)
        } else {
            Orientation::Unsigned
        };
        SalienceMap::new(self.positions.clone(), scores, orientation)
    }

    pub fn gxi_map(&self, objective: Objective) -> Result<SalienceMap> {
        let g = self.objective_grad(objective);
        let scores = self
            .positions
            .iter()
            .map(|&i| dot(g.row(i), self.embeds.row(i)))
            .collect();
        SalienceMap::new(
            self.positions.clone(),
            scores,
            Orientation::Toward(self.prediction.class),
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of the predicted class's objective, reduced per token.
pub fn grad_salience<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    objective: Objective,
    reduction: Reduction,
) -> Result<SalienceMap> {
    GradContext::new(model, example)?.grad_map(objective, reduction)
}

/// Gradient dotted with the input embedding, per token.
pub fn gxi_salience<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    objective: Objective,
) -> Result<SalienceMap> {
    GradContext::new(model, example)?.gxi_map(objective)
}

/// Reference input for integrated gradients. Content rows become zero or the
/// special token's embedding; BOS, EOS and padding rows are copied.
pub fn build_baseline<M: Differentiable + ?Sized>(
    model: &M,
    tokens: &[TokenId],
    baseline: Baseline,
) -> Result<Tensor<f64>> {
    let mut b = model.embed_tokens(tokens)?;
    let fill = match baseline.special() {
        Some(tok) => model.embed_tokens(&[tok.id()])?.row(0).to_vec(),
        None => vec![0.0; b.cols()],
    };
    for (i, t) in tokens.iter().enumerate() {
        if !t.is_framing() {
            b.row_mut(i).copy_from_slice(&fill);
        }
    }
    Ok(b)
}

/// Integrated gradients for one `(objective, steps)` pair.
pub fn ig_salience<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    objective: Objective,
    baseline: Baseline,
    steps: usize,
) -> Result<SalienceMap> {
    let mut maps = ig_salience_multi(model, example, baseline, &[(objective, steps)])?;
    Ok(maps.remove(0))
}

/// Integrated gradients for several `(objective, steps)` pairs sharing one
/// baseline. Every step count that divides the largest one is served from a
/// single sweep of right-endpoint Riemann points `k/m`, `k = 1..m`; the
/// results are identical to separate runs.
pub fn ig_salience_multi<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    baseline: Baseline,
    requests: &[(Objective, usize)],
) -> Result<Vec<SalienceMap>> {
    if requests.iter().any(|r| r.1 == 0) {
        return Err(Error::Contract(
            "integrated gradients needs at least one step".into(),
        ));
    }
    let Some(max_steps) = requests.iter().map(|r| r.1).max() else {
        return Ok(Vec::new());
    };
    let shared: Vec<usize> = (0..requests.len())
        .filter(|&r| max_steps % requests[r].1 == 0)
        .collect();
    let mut out: Vec<Option<SalienceMap>> = vec![None; requests.len()];
    for r in 0..requests.len() {
        if !shared.contains(&r) {
            let single = ig_salience_multi(model, example, baseline, &requests[r..=r])?;
            out[r] = single.into_iter().next();
        }
    }

    let x = model.embed_tokens(&example.tokens)?;
    let keep = TrainedModel::<f64>::keep_mask(&example.tokens);
    let b = build_baseline(model, &example.tokens, baseline)?;
    let class = Prediction::from_logit(model.logit_at(&x, &keep)?).class;
    let diff: Vec<f64> = x.data().iter().zip(b.data()).map(|(a, c)| a - c).collect();
    let (n, d) = x.dims2();

    let mut sums: Vec<Tensor<f64>> = shared.iter().map(|_| Tensor::zeros(n, d)).collect();
    let mut point = b.clone();
    let mut end_value = vec![0.0; shared.len()];
    for k in 1..=max_steps {
        let alpha = k as f64 / max_steps as f64;
        for ((p, &base), &dx) in point.data_mut().iter_mut().zip(b.data()).zip(&diff) {
            *p = base + alpha * dx;
        }
        let (z, gz) = model.logit_and_grad(&point, &keep)?;
        for (slot, &r) in shared.iter().enumerate() {
            let (objective, m) = requests[r];
            if k % (max_steps / m) != 0 {
                continue;
            }
            let (value, g) = objective_from_logit(z, gz.clone(), objective, class);
            sums[slot].add_assign(&g);
            if k == max_steps {
                end_value[slot] = value;
            }
        }
    }

    let z_base = model.logit_at(&b, &keep)?;
    let positions = example.content_positions();
    for (slot, &r) in shared.iter().enumerate() {
        let (objective, m) = requests[r];
        let inv = 1.0 / m as f64;
        let scores = positions
            .iter()
            .map(|&i| {
                let g = sums[slot].row(i);
                let dx = &diff[i * d..(i + 1) * d];
                g.iter().zip(dx).map(|(a, c)| a * inv * c).sum()
            })
            .collect();
        let mut map = SalienceMap::new(positions.clone(), scores, Orientation::Toward(class))?;
        let base_value = objective_from_logit(z_base, Tensor::zeros(0, 0), objective, class).0;
        map.diagnostics.ig_delta = Some(end_value[slot] - base_value);
        out[r] = Some(map);
    }
    Ok(out
        .into_iter()
        .map(|m| m.expect("every request served"))
        .collect())
}
