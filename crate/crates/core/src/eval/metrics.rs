use crate::error::{Error, Result};
use crate::salience::Ranking;

/// Number of ground-truth positions among the first `k` ranked positions.
pub fn hits_at_k(ranking: &Ranking, gt: &[usize], k: usize) -> usize {
    ranking
        .positions()
        .iter()
        .take(k)
        .filter(|p| gt.contains(p))
        .count()
}

/// Smallest 1-indexed depth `r` whose top-`r` positions contain every
/// ground-truth position.
pub fn covering_rank(ranking: &Ranking, gt: &[usize]) -> Result<usize> {
    let mut depth = 0;
    for g in gt {
        let at = ranking
            .positions()
            .iter()
            .position(|p| p == g)
            .ok_or_else(|| {
                Error::Coverage(format!("ground-truth position {g} missing from ranking"))
            })?;
        depth = depth.max(at + 1);
    }
    Ok(depth)
}

fn check_lengths(rankings: &[Ranking], gts: &[Vec<usize>]) -> Result<()> {
    if rankings.is_empty() || rankings.len() != gts.len() {
        return Err(Error::Contract(format!(
            "{} rankings for {} ground-truth sets",
            rankings.len(),
            gts.len()
        )));
    }
    Ok(())
}

/// `Σᵢ |top_k(rankingᵢ) ∩ gtᵢ| / (k·|D|)`.
pub fn precision_at_k(rankings: &[Ranking], gts: &[Vec<usize>], k: usize) -> Result<f64> {
    check_lengths(rankings, gts)?;
    if k == 0 {
        return Err(Error::Contract("k must be positive".into()));
    }
    let mut hits = 0;
    for (r, gt) in rankings.iter().zip(gts) {
        if gt.len() != k {
            return Err(Error::Contract(format!(
                "ground truth of size {} with k = {k}",
                gt.len()
            )));
        }
        hits += hits_at_k(r, gt, k);
    }
    Ok(hits as f64 / (k * rankings.len()) as f64)
}

/// Mean over examples of the covering rank.
pub fn mean_rank(rankings: &[Ranking], gts: &[Vec<usize>]) -> Result<f64> {
    check_lengths(rankings, gts)?;
    let mut total = 0;
    for (r, gt) in rankings.iter().zip(gts) {
        total += covering_rank(r, gt)?;
    }
    Ok(total as f64 / rankings.len() as f64)
}
