//! Token salience methods: plain gradients, gradient × input, integrated
//! gradients, LIME and a random baseline, plus ranking of their scores.
//!
//! Every method explains the predicted class, so signed maps point toward
//! it; [`rank_tokens`] only flips maps that were computed for the other
//! class.

mod compute;
mod config;
mod gradient;
mod lime;
mod map;
mod model;
mod random;

pub use compute::{compute_all, compute_salience};
pub use config::{standard_matrix, Baseline, LimeConfig, MethodConfig, PerturbMode, Reduction};
pub use gradient::{build_baseline, grad_salience, gxi_salience, ig_salience, ig_salience_multi};
pub use lime::{
    kernel_weight, lime_from_masks, lime_salience, lime_salience_multi, perturb, sample_masks,
    weighted_ridge, RidgeFit,
};
pub use map::{rank_tokens, Diagnostics, Orientation, Ranking, SalienceMap};
pub use model::{Classifier, Differentiable};
pub use random::{example_rng, random_salience};
