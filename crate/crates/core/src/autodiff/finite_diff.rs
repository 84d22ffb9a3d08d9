use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Compares reverse-mode gradients of a scalar function against central
/// differences, coordinate by coordinate, and returns the largest relative
/// error `|a - n| / max(|a|, |n|, 1e-8)`.
///
/// `f` receives a fresh graph and the leaf holding `x`. Functions with a kink
/// at the probe point (e.g. a max at a tie) are outside what this can check.
pub fn finite_diff_check<S, F>(f: F, x: &Tensor<S>, eps: S) -> Result<S>
where
    S: Scalar,
    F: for<'g> Fn(&mut Graph<'g, S>, NodeId) -> Result<NodeId>,
{
    if eps <= S::zero() {
        return Err(Error::Contract(
            "finite difference step must be positive".into(),
        ));
    }
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.leaf(x.clone())?;
        let out = f(&mut g, leaf)?;
        if g.value(out).numel() != 1 {
            return Err(Error::Contract(
                "finite_diff_check needs a scalar function".into(),
            ));
        }
        g.backward(out)?.wrt(leaf)
    };
    let eval = |probe: Tensor<S>| -> Result<S> {
        let mut g = Graph::new();
        let leaf = g.leaf(probe)?;
        let out = f(&mut g, leaf)?;
        g.scalar(out)
    };
    let floor = S::lit(1e-8);
    let two = S::lit(2.0);
    let mut worst = S::zero();
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] = plus.data()[i] + eps;
        let mut minus = x.clone();
        minus.data_mut()[i] = minus.data()[i] - eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(floor);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
