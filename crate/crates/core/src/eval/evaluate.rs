use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{covering_rank, hits_at_k};
use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::salience::{
    compute_all, rank_tokens, Differentiable, MethodConfig, Ranking, SalienceMap,
};

/// Outcome of one method on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub example_id: u64,
    pub method_id: String,
    pub predicted_class: u8,
    pub ranking: Ranking,
    pub gt_positions: Vec<usize>,
    pub k: usize,
    pub hit_count: usize,
    pub covering_rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

/// Aggregate of one method over the synthetic test set.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: MethodConfig,
    pub precision: f64,
    pub mean_rank: f64,
    pub n_examples: usize,
    /// Largest `|Σ scores − Δf| / |Δf|` over examples, for integrated
    /// gradients.
    pub max_completeness_gap: Option<f64>,
    /// Examples where LIME had to raise its ridge penalty.
    pub ridge_bumped: usize,
    pub records: Vec<EvalRecord>,
}

fn record(
    example_id: u64,
    cfg: &MethodConfig,
    example: &Example,
    class: u8,
    map: &SalienceMap,
    keep_scores: bool,
) -> Result<EvalRecord> {
    let ranking = rank_tokens(map, class);
    let gt = example.gt_positions.clone();
    let k = gt.len();
    if k == 0 {
        return Err(Error::Contract(format!(
            "example {example_id} has no ground-truth positions"
        )));
    }
    Ok(EvalRecord {
        example_id,
        method_id: cfg.id(),
        predicted_class: class,
        hit_count: hits_at_k(&ranking, &gt, k),
        covering_rank: covering_rank(&ranking, &gt)?,
        ranking,
        gt_positions: gt,
        k,
        scores: keep_scores.then(|| map.scores.clone()),
    })
}

fn aggregate(cfg: MethodConfig, rows: Vec<(EvalRecord, SalienceMap)>) -> Result<MethodResult> {
    if rows.is_empty() {
        return Err(Error::Contract("evaluation over an empty test set".into()));
    }
    let n = rows.len();
    let hits: usize = rows.iter().map(|r| r.0.hit_count).sum();
    let slots: usize = rows.iter().map(|r| r.0.k).sum();
    let depth: usize = rows.iter().map(|r| r.0.covering_rank).sum();
    let gap = rows
        .iter()
        .filter_map(|(_, m)| {
            let delta = m.diagnostics.ig_delta?;
            Some((m.sum() - delta).abs() / delta.abs().max(f64::MIN_POSITIVE))
        })
        .reduce(f64::max);
    let bumped = rows
        .iter()
        .filter(|(_, m)| m.diagnostics.ridge_bumped)
        .count();
    Ok(MethodResult {
        method: cfg,
        precision: hits as f64 / slots as f64,
        mean_rank: depth as f64 / n as f64,
        n_examples: n,
        max_completeness_gap: gap,
        ridge_bumped: bumped,
        records: rows.into_iter().map(|r| r.0).collect(),
    })
}

/// Runs every configuration on every example (examples in parallel, merged
/// in example order) and computes both metrics per configuration. A failure
/// only affects its own configuration.
pub fn evaluate_methods<M: Differentiable + ?Sized>(
    model: &M,
    synthetic_test: &[Example],
    cfgs: &[MethodConfig],
    seed: u64,
    keep_scores: bool,
) -> Vec<Result<MethodResult>> {
    let per_example: Vec<Result<Vec<Result<(EvalRecord, SalienceMap)>>>> = synthetic_test
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let id = i as u64;
            let class = model.predict_tokens(&ex.tokens)?.class;
            let maps = compute_all(model, ex, id, cfgs, seed);
            Ok(cfgs
                .iter()
                .zip(maps)
                .map(|(cfg, m)| {
                    let m = m?;
                    Ok((record(id, cfg, ex, class, &m, keep_scores)?, m))
                })
                .collect())
        })
        .collect();

    let mut columns: Vec<Result<Vec<(EvalRecord, SalienceMap)>>> =
        cfgs.iter().map(|_| Ok(Vec::new())).collect();
    for row in per_example {
        match row {
            Ok(cells) => {
                for (col, cell) in columns.iter_mut().zip(cells) {
                    match (col.as_mut(), cell) {
                        (Ok(v), Ok(c)) => v.push(c),
                        (Ok(_), Err(e)) => *col = Err(e),
                        (Err(_), _) => {}
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for col in &mut columns {
                    if col.is_ok() {
                        *col = Err(Error::Contract(format!("prediction failed: {msg}")));
                    }
                }
            }
        }
    }
    cfgs.iter()
        .zip(columns)
        .map(|(cfg, col)| aggregate(*cfg, col?))
        .collect()
}

pub fn evaluate_method<M: Differentiable + ?Sized>(
    model: &M,
    synthetic_test: &[Example],
    cfg: &MethodConfig,
    seed: u64,
) -> Result<MethodResult> {
    evaluate_methods(
        model,
        synthetic_test,
        std::slice::from_ref(cfg),
        seed,
        false,
    )
    .remove(0)
}
