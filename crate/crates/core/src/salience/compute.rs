use super::config::{Baseline, LimeConfig, MethodConfig};
use super::gradient::{ig_salience_multi, GradContext};
use super::lime::{lime_salience, lime_salience_multi};
use super::map::SalienceMap;
use super::model::Differentiable;
use super::random::random_salience;
use crate::corpus::Example;
use crate::error::Result;

/// Runs one method configuration on one example.
pub fn compute_salience<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    example_id: u64,
    cfg: &MethodConfig,
    seed: u64,
) -> Result<SalienceMap> {
    cfg.validate()?;
    match *cfg {
        MethodConfig::Grad {
            objective,
            reduction,
        } => GradContext::new(model, example)?.grad_map(objective, reduction),
        MethodConfig::Gxi { objective } => GradContext::new(model, example)?.gxi_map(objective),
        MethodConfig::Ig {
            objective,
            baseline,
            steps,
        } => Ok(ig_salience_multi(model, example, baseline, &[(objective, steps)])?.remove(0)),
        MethodConfig::Lime(c) => lime_salience(model, example, example_id, &c, seed),
        MethodConfig::Random => random_salience(example, example_id, seed),
    }
}

/// Runs a list of configurations on one example, sharing model queries
/// between configurations that allow it. Results are identical to separate
/// [`compute_salience`] calls; a failure only affects its own entry.
pub fn compute_all<M: Differentiable + ?Sized>(
    model: &M,
    example: &Example,
    example_id: u64,
    cfgs: &[MethodConfig],
    seed: u64,
) -> Vec<Result<SalienceMap>> {
    let mut out: Vec<Option<Result<SalienceMap>>> = cfgs.iter().map(|_| None).collect();
    let single = |i: usize| compute_salience(model, example, example_id, &cfgs[i], seed);
    let valid: Vec<bool> = cfgs.iter().map(|c| c.validate().is_ok()).collect();

    let grads: Vec<usize> = (0..cfgs.len())
        .filter(|&i| {
            valid[i]
                && matches!(
                    cfgs[i],
                    MethodConfig::Grad { .. } | MethodConfig::Gxi { .. }
                )
        })
        .collect();
    if !grads.is_empty() {
        if let Ok(ctx) = GradContext::new(model, example) {
            for &i in &grads {
                out[i] = Some(match cfgs[i] {
                    MethodConfig::Grad {
                        objective,
                        reduction,
                    } => ctx.grad_map(objective, reduction),
                    MethodConfig::Gxi { objective } => ctx.gxi_map(objective),
                    _ => unreachable!("filtered to gradient methods"),
                });
            }
        }
    }

    for baseline in [Baseline::Zero, Baseline::Unk, Baseline::Mask] {
        let idx: Vec<usize> = (0..cfgs.len())
            .filter(|&i| {
                valid[i] && matches!(cfgs[i], MethodConfig::Ig { baseline: b, .. } if b == baseline)
            })
            .collect();
        if idx.is_empty() {
            continue;
        }
        let requests: Vec<_> = idx
            .iter()
            .map(|&i| match cfgs[i] {
                MethodConfig::Ig {
                    objective, steps, ..
                } => (objective, steps),
                _ => unreachable!("filtered to integrated gradients"),
            })
            .collect();
        if let Ok(maps) = ig_salience_multi(model, example, baseline, &requests) {
            for (&i, m) in idx.iter().zip(maps) {
                out[i] = Some(Ok(m));
            }
        }
    }

    let limes: Vec<usize> = (0..cfgs.len())
        .filter(|&i| valid[i] && matches!(cfgs[i], MethodConfig::Lime(_)))
        .collect();
    if !limes.is_empty() {
        let lcfgs: Vec<LimeConfig> = limes
            .iter()
            .map(|&i| match cfgs[i] {
                MethodConfig::Lime(c) => c,
                _ => unreachable!("filtered to LIME"),
            })
            .collect();
        if let Ok(maps) = lime_salience_multi(model, example, example_id, &lcfgs, seed) {
            for (&i, m) in limes.iter().zip(maps) {
                out[i] = Some(Ok(m));
            }
        }
    }

    out.into_iter()
        .enumerate()
        .map(|(i, r)| r.unwrap_or_else(|| single(i)))
        .collect()
}
