//! Faithfulness evaluation of token salience methods against injected
//! lexical shortcuts.
//!
//! The pipeline: build or load a text corpus ([`corpus`]), inject shortcut
//! tokens whose presence, context or order determines the label, train a
//! classifier on the mixed data and a control on the original data
//! ([`models`]), verify the shortcut was learned, then score how highly each
//! salience method ([`salience`]) ranks the injected tokens ([`eval`]).
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); the aliases
//! below fix it to `f64`, which is what the pipeline uses.

pub mod autodiff;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod models;
pub mod salience;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph<'a> = autodiff::Graph<'a, f64>;
pub type TrainedModel = models::TrainedModel<f64>;
