use crate::autodiff::Tensor;
use crate::corpus::TokenId;
use crate::error::Result;
use crate::models::{Prediction, TrainedModel};
use crate::scalar::Scalar;

/// Anything that scores a token sequence; all LIME needs.
pub trait Classifier: Sync {
    fn predict_tokens(&self, tokens: &[TokenId]) -> Result<Prediction<f64>>;
}

/// A classifier that can be evaluated and differentiated at arbitrary
/// embedding inputs; what the gradient-based methods need.
pub trait Differentiable: Classifier {
    fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Tensor<f64>>;

    fn logit_at(&self, embeds: &Tensor<f64>, keep: &[bool]) -> Result<f64>;

    /// Logit and its gradient with respect to every embedding row.
    fn logit_and_grad(&self, embeds: &Tensor<f64>, keep: &[bool]) -> Result<(f64, Tensor<f64>)>;
}

impl<S: Scalar> Classifier for TrainedModel<S> {
    fn predict_tokens(&self, tokens: &[TokenId]) -> Result<Prediction<f64>> {
        let p = self.predict(tokens)?;
        Ok(Prediction::from_logit(p.logit.as_f64()))
    }
}

impl<S: Scalar> Differentiable for TrainedModel<S> {
    fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Tensor<f64>> {
        Ok(self.embed(tokens)?.cast())
    }

    fn logit_at(&self, embeds: &Tensor<f64>, keep: &[bool]) -> Result<f64> {
        Ok(self.forward_masked(&embeds.cast(), keep)?.as_f64())
    }

    fn logit_and_grad(&self, embeds: &Tensor<f64>, keep: &[bool]) -> Result<(f64, Tensor<f64>)> {
        let (z, g) = self.logit_grad(&embeds.cast(), keep)?;
        Ok((z.as_f64(), g.cast()))
    }
}
