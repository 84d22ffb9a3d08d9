//! Independent reimplementations checked against the library: brute-force
//! ranking metrics, a dense weighted-ridge solver for exhaustive LIME and an
//! indicator classifier whose explanation is known in advance.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shortcut_probe::corpus::{Example, SpecialToken, TokenId};
use shortcut_probe::eval::{mean_rank, precision_at_k};
use shortcut_probe::models::Prediction;
use shortcut_probe::salience::{
    kernel_weight, lime_from_masks, lime_salience, perturb, rank_tokens, Classifier, LimeConfig,
    PerturbMode, Ranking,
};
use shortcut_probe::Result;

/// Precision by set intersection of the top-k prefix.
fn brute_precision(rankings: &[Vec<usize>], gts: &[Vec<usize>], k: usize) -> f64 {
    let hits: usize = rankings
        .iter()
        .zip(gts)
        .map(|(r, gt)| {
            let top: BTreeSet<usize> = r[..k.min(r.len())].iter().copied().collect();
            let gt: BTreeSet<usize> = gt.iter().copied().collect();
            top.intersection(&gt).count()
        })
        .sum();
    hits as f64 / (k * rankings.len()) as f64
}

/// Mean over examples of the first depth whose prefix is a superset of gt.
fn brute_mean_rank(rankings: &[Vec<usize>], gts: &[Vec<usize>]) -> f64 {
    let total: usize = rankings
        .iter()
        .zip(gts)
        .map(|(r, gt)| {
            let gt: BTreeSet<usize> = gt.iter().copied().collect();
            (1..=r.len())
                .find(|&d| gt.is_subset(&r[..d].iter().copied().collect()))
                .expect("ranking covers gt")
        })
        .sum();
    total as f64 / rankings.len() as f64
}

#[test]
fn metrics_match_brute_force_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for instance in 0..100 {
        let k = rng.gen_range(1..=3);
        let n_examples = rng.gen_range(1..=8);
        let mut rankings = Vec::new();
        let mut gts = Vec::new();
        for _ in 0..n_examples {
            let n = rng.gen_range(k..=30);
            // positions start at 1 like content positions after BOS
            let mut r: Vec<usize> = (1..=n).collect();
            r.shuffle(&mut rng);
            let mut gt: Vec<usize> = r.choose_multiple(&mut rng, k).copied().collect();
            gt.sort_unstable();
            rankings.push(r);
            gts.push(gt);
        }
        let wrapped: Vec<Ranking> = rankings.iter().cloned().map(Ranking).collect();
        let p = precision_at_k(&wrapped, &gts, k).unwrap();
        let m = mean_rank(&wrapped, &gts).unwrap();
        assert_eq!(
            p,
            brute_precision(&rankings, &gts, k),
            "instance {instance}"
        );
        assert_eq!(m, brute_mean_rank(&rankings, &gts), "instance {instance}");
    }
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dense weighted ridge with an unpenalized intercept; returns the slopes.
fn dense_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Vec<f64> {
    let p = x[0].len() + 1;
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        let z: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
        for i in 0..p {
            b[i] += wi * z[i] * yi;
            for j in 0..p {
                a[i][j] += wi * z[i] * z[j];
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        row[i] += lambda;
    }
    gauss_solve(a, b)[1..].to_vec()
}

/// Nonlinear classifier over token ids with interactions between tokens.
struct Bumpy;

impl Classifier for Bumpy {
    fn predict_tokens(&self, tokens: &[TokenId]) -> Result<Prediction<f64>> {
        let mut z = -0.3;
        for (i, t) in tokens.iter().enumerate() {
            let v = f64::from(t.0);
            z += (0.37 * v).sin() * 0.8 + 0.05 * i as f64 * (v - 8.0).signum();
        }
        if tokens.contains(&TokenId(7)) && tokens.contains(&TokenId(11)) {
            z += 1.5;
        }
        Ok(Prediction::from_logit(z))
    }
}

fn framed(ids: &[u32]) -> Example {
    let mut t = vec![TokenId::BOS];
    t.extend(ids.iter().map(|&i| TokenId(i)));
    t.push(TokenId::EOS);
    Example::original(t, 0)
}

fn all_masks(n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .map(|b| (0..n).map(|j| (b >> j) & 1 == 1).collect())
        .collect()
}

#[test]
fn exhaustive_lime_matches_dense_ridge() {
    let inputs: [&[u32]; 4] = [
        &[7, 11],
        &[5, 6, 7, 8, 9],
        &[12, 7, 13, 11, 14, 9, 6],
        &[5, 6, 7, 8, 9, 10, 11, 12, 13, 14],
    ];
    for ids in inputs {
        let ex = framed(ids);
        let masks = all_masks(ids.len());
        for (mode, lambda, width) in [
            (PerturbMode::Replace, 1.0, 25.0),
            (PerturbMode::Drop, 0.1, 0.75),
            (PerturbMode::Replace, 1e-3, 2.0),
        ] {
            let cfg = LimeConfig {
                perturb_mode: mode,
                kernel_width: width,
                ridge_lambda: lambda,
                ..LimeConfig::new(masks.len(), SpecialToken::Unk)
            };
            let map = lime_from_masks(&Bumpy, &ex, &masks, &cfg).unwrap();
            assert!(!map.diagnostics.ridge_bumped);

            let class = Bumpy.predict_tokens(&ex.tokens).unwrap().class;
            let positions = ex.content_positions();
            let x: Vec<Vec<f64>> = masks
                .iter()
                .map(|m| m.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
                .collect();
            let y: Vec<f64> = masks
                .iter()
                .map(|m| {
                    let t = perturb(&ex.tokens, &positions, m, &cfg);
                    Bumpy.predict_tokens(&t).unwrap().prob_of(class)
                })
                .collect();
            let w: Vec<f64> = masks.iter().map(|m| kernel_weight(m, width)).collect();
            let want = dense_ridge(&x, &y, &w, lambda);
            for (got, want) in map.scores.iter().zip(&want) {
                assert!(
                    (got - want).abs() <= 1e-8,
                    "{ids:?} {mode:?} λ={lambda}: {got} vs {want}"
                );
            }
        }
    }
}

/// Positive class exactly when the indicator token is present.
struct Indicator(TokenId);

impl Classifier for Indicator {
    fn predict_tokens(&self, tokens: &[TokenId]) -> Result<Prediction<f64>> {
        let z = if tokens.contains(&self.0) {
            12.0
        } else {
            -12.0
        };
        Ok(Prediction::from_logit(z))
    }
}

#[test]
fn lime_ranks_the_indicator_first_in_99_percent_of_seeds() {
    let indicator = TokenId(4);
    let model = Indicator(indicator);
    let cfg = LimeConfig::new(1000, SpecialToken::Unk);
    let mut layout = ChaCha8Rng::seed_from_u64(99);
    let seeds = 200;
    let mut first = 0;
    for seed in 0..seeds {
        let n = layout.gen_range(10..=40);
        let mut ids: Vec<u32> = (0..n).map(|_| layout.gen_range(5..400)).collect();
        let at = layout.gen_range(0..n);
        ids[at] = indicator.0;
        let ex = framed(&ids);
        let map = lime_salience(&model, &ex, seed, &cfg, seed).unwrap();
        let class = model.predict_tokens(&ex.tokens).unwrap().class;
        if rank_tokens(&map, class).positions()[0] == at + 1 {
            first += 1;
        }
    }
    let rate = first as f64 / seeds as f64;
    assert!(
        rate >= 0.99,
        "indicator ranked first in {first}/{seeds} seeds"
    );
}
