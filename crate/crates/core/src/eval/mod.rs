//! Ranking metrics against injected ground truth, the two verification
//! tests and per-method evaluation over a synthetic test set.
//!
//! Ranks are 1-indexed. The mean rank of an example is the depth needed to
//! cover all of its ground-truth positions.

mod evaluate;
mod metrics;
mod verify;

pub use evaluate::{evaluate_method, evaluate_methods, EvalRecord, MethodResult};
pub use metrics::{covering_rank, hits_at_k, mean_rank, precision_at_k};
pub use verify::{verify_models, Thresholds, Verification, VerificationTest};
