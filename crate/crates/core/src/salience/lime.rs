use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use super::config::{LimeConfig, PerturbMode};
use super::map::{Orientation, SalienceMap};
use super::model::Classifier;
use super::random::example_rng;
use crate::corpus::{Example, TokenId};
use crate::error::{Error, Result};

const LIME_STREAM: u64 = 0x4c49_4d45;

/// Solution of a weighted ridge problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: Vec<f64>,
    /// Penalty actually used.
    pub lambda: f64,
    /// Whether `lambda` had to be raised to make the system solvable.
    pub bumped: bool,
}

impl RidgeFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[f64] {
        &self.coefficients[1..]
    }
}

/// Minimizes `Σ wᵢ (yᵢ − β₀ − xᵢ·β)² + λ‖β‖²` with an unpenalized intercept,
/// through a Cholesky factorization of the normal equations. A singular
/// system is retried with a larger penalty.
pub fn weighted_ridge(
    features: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    lambda: f64,
) -> Result<RidgeFit> {
    let n = features.len();
    if targets.len() != n || weights.len() != n || n == 0 {
        return Err(Error::shape(
            "weighted_ridge",
            format!(
                "{n} rows, {} targets, {} weights",
                targets.len(),
                weights.len()
            ),
        ));
    }
    let p = features[0].len();
    if features.iter().any(|r| r.len() != p) {
        return Err(Error::shape("weighted_ridge", "ragged feature rows"));
    }
    let finite = features
        .iter()
        .flatten()
        .chain(targets)
        .chain(weights)
        .all(|v| v.is_finite());
    if !finite || !lambda.is_finite() {
        return Err(Error::Numeric {
            op: "weighted_ridge",
        });
    }
    if lambda < 0.0 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Contract(
            "ridge penalty and weights must be non-negative".into(),
        ));
    }

    let dim = p + 1;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let mut row = vec![1.0; dim];
    for ((x, &y), &w) in features.iter().zip(targets).zip(weights) {
        row[1..].copy_from_slice(x);
        for a in 0..dim {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            rhs[a] += wa * y;
            for b in a..dim {
                gram[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let scale = (1..dim).map(|i| gram[(i, i)]).fold(1.0f64, f64::max);

    let mut lam = lambda;
    let mut bumped = false;
    for _ in 0..40 {
        let mut a = gram.clone();
        for i in 1..dim {
            a[(i, i)] += lam;
        }
        if let Some(chol) = a.cholesky() {
            let beta = chol.solve(&rhs);
            if beta.iter().all(|v| v.is_finite()) {
                return Ok(RidgeFit {
                    coefficients: beta.iter().copied().collect(),
                    lambda: lam,
                    bumped,
                });
            }
        }
        bumped = true;
        lam = if lam == 0.0 {
            1e-10 * scale
        } else {
            lam * 10.0
        };
    }
    Err(Error::Numeric {
        op: "weighted_ridge",
    })
}

/// Keep-masks over the content positions: the number removed is uniform in
/// `1..=n_content`, then that many positions are removed uniformly.
pub fn sample_masks<R: Rng>(n_content: usize, n: usize, rng: &mut R) -> Vec<Vec<bool>> {
    (0..n)
        .map(|_| {
            let removed = rng.gen_range(1..=n_content);
            let mut mask = vec![true; n_content];
            for i in sample(rng, n_content, removed) {
                mask[i] = false;
            }
            mask
        })
        .collect()
}

/// Applies a keep-mask to the content positions of `tokens`; boundary
/// tokens are never touched.
pub fn perturb(
    tokens: &[TokenId],
    positions: &[usize],
    mask: &[bool],
    cfg: &LimeConfig,
) -> Vec<TokenId> {
    let mut out = tokens.to_vec();
    let mut removed = vec![false; tokens.len()];
    for (&pos, &keep) in positions.iter().zip(mask) {
        if !keep {
            out[pos] = cfg.mask_token.id();
            removed[pos] = true;
        }
    }
    if cfg.perturb_mode == PerturbMode::Drop {
        out = tokens
            .iter()
            .zip(&removed)
            .filter(|(_, &r)| !r)
            .map(|(&t, _)| t)
            .collect();
    }
    out
}

/// Exponential kernel on the cosine distance between a keep-mask and the
/// unperturbed all-ones mask.
pub fn kernel_weight(mask: &[bool], width: f64) -> f64 {
    let kept = mask.iter().filter(|&&k| k).count() as f64;
    let d = if kept == 0.0 {
        1.0
    } else {
        1.0 - kept / (kept.sqrt() * (mask.len() as f64).sqrt())
    };
    (-(d * d) / (width * width)).exp()
}

/// LIME on explicitly given keep-masks.
pub fn lime_from_masks<M: Classifier + ?Sized>(
    model: &M,
    example: &Example,
    masks: &[Vec<bool>],
    cfg: &LimeConfig,
) -> Result<SalienceMap> {
    let class = model.predict_tokens(&example.tokens)?.class;
    let positions = example.content_positions();
    let targets = masks
        .iter()
        .map(|m| {
            let tokens = perturb(&example.tokens, &positions, m, cfg);
            Ok(model.predict_tokens(&tokens)?.prob_of(class))
        })
        .collect::<Result<Vec<f64>>>()?;
    fit(&positions, masks, &targets, cfg, class)
}

fn fit(
    positions: &[usize],
    masks: &[Vec<bool>],
    targets: &[f64],
    cfg: &LimeConfig,
    class: u8,
) -> Result<SalienceMap> {
    if masks.iter().any(|m| m.len() != positions.len()) {
        return Err(Error::shape(
            "lime",
            "mask length differs from content length",
        ));
    }
    let features: Vec<Vec<f64>> = masks
        .iter()
        .map(|m| m.iter().map(|&k| f64::from(u8::from(k))).collect())
        .collect();
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| kernel_weight(m, cfg.kernel_width))
        .collect();
    let solution = weighted_ridge(&features, targets, &weights, cfg.ridge_lambda)?;
    let mut map = SalienceMap::new(
        positions.to_vec(),
        solution.slopes().to_vec(),
        Orientation::Toward(class),
    )?;
    map.diagnostics.ridge_lambda = Some(solution.lambda);
    map.diagnostics.ridge_bumped = solution.bumped;
    Ok(map)
}

/// LIME with perturbations drawn from the per-example stream of `seed`.
pub fn lime_salience<M: Classifier + ?Sized>(
    model: &M,
    example: &Example,
    example_id: u64,
    cfg: &LimeConfig,
    seed: u64,
) -> Result<SalienceMap> {
    let mut maps = lime_salience_multi(model, example, example_id, &[*cfg], seed)?;
    Ok(maps.remove(0))
}

/// Several LIME configurations on one example. Configurations with the same
/// mask token and perturbation mode reuse the model queries of the largest
/// one, because smaller sample sets are prefixes of the same stream.
pub fn lime_salience_multi<M: Classifier + ?Sized>(
    model: &M,
    example: &Example,
    example_id: u64,
    cfgs: &[LimeConfig],
    seed: u64,
) -> Result<Vec<SalienceMap>> {
    let positions = example.content_positions();
    if positions.is_empty() {
        return Err(Error::Contract(
            "LIME needs at least one content token".into(),
        ));
    }
    for c in cfgs {
        if c.n_perturbations == 0 {
            return Err(Error::Contract(
                "LIME needs at least one perturbation".into(),
            ));
        }
    }
    let class = model.predict_tokens(&example.tokens)?.class;
    let mut out: Vec<Option<SalienceMap>> = vec![None; cfgs.len()];
    for i in 0..cfgs.len() {
        if out[i].is_some() {
            continue;
        }
        let group: Vec<usize> = (i..cfgs.len())
            .filter(|&j| out[j].is_none() && cfgs[j].shares_samples(&cfgs[i]))
            .collect();
        let n_max = group
            .iter()
            .map(|&j| cfgs[j].n_perturbations)
            .max()
            .expect("non-empty");
        let mut rng = example_rng(seed, example_id, LIME_STREAM);
        let masks = sample_masks(positions.len(), n_max, &mut rng);
        let targets = masks
            .iter()
            .map(|m| {
                let tokens = perturb(&example.tokens, &positions, m, &cfgs[i]);
                Ok(model.predict_tokens(&tokens)?.prob_of(class))
            })
            .collect::<Result<Vec<f64>>>()?;
        for j in group {
            let n = cfgs[j].n_perturbations;
            out[j] = Some(fit(
                &positions,
                &masks[..n],
                &targets[..n],
                &cfgs[j],
                class,
            )?);
        }
    }
    Ok(out
        .into_iter()
        .map(|m| m.expect("every config served"))
        .collect())
}
