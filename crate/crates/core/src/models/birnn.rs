use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{filled, glorot, Dropout, Params};
use crate::autodiff::{Axis, Graph, NodeId};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct LstmDir {
    w_x: usize,
    w_h: usize,
    b: usize,
}

/// Bidirectional LSTM, keys-only attention pooling, one-hidden-layer MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiRnnAttn {
    hidden: usize,
    fwd: LstmDir,
    bwd: LstmDir,
    att_w: usize,
    att_b: usize,
    att_v: usize,
    mlp_w: usize,
    mlp_b: usize,
    out_w: usize,
    out_b: usize,
}

impl BiRnnAttn {
    pub(crate) fn init<S: Scalar>(
        cfg: &ModelConfig,
        params: &mut Params<S>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (d, h) = (cfg.embed_dim, cfg.hidden_dim);
        let mut dir = |name: &str, params: &mut Params<S>| {
            let w_x = params.add(format!("lstm.{name}.w_x"), glorot(rng, d, 4 * h));
            let w_h = params.add(format!("lstm.{name}.w_h"), glorot(rng, h, 4 * h));
            // gate order i, f, o, g; forget bias starts at 1
            let mut bias = vec![0.0; 4 * h];
            bias[h..2 * h].fill(1.0);
            let b = params.add(
                format!("lstm.{name}.b"),
                crate::autodiff::Tensor::row_vector(bias.into_iter().map(S::lit).collect()),
            );
            LstmDir { w_x, w_h, b }
        };
        let fwd = dir("fwd", params);
        let bwd = dir("bwd", params);
        let a = 2 * h;
        Self {
            hidden: h,
            fwd,
            bwd,
            att_w: params.add("attn.w", glorot(rng, 2 * h, a)),
            att_b: params.add("attn.b", filled(1, a, 0.0)),
            att_v: params.add("attn.v", glorot(rng, a, 1)),
            mlp_w: params.add("mlp.w", glorot(rng, 2 * h, h)),
            mlp_b: params.add("mlp.b", filled(1, h, 0.0)),
            out_w: params.add("out.w", glorot(rng, h, 1)),
            out_b: params.add("out.b", filled(1, 1, 0.0)),
        }
    }

    fn run_dir<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        p: &[NodeId],
        x: NodeId,
        dir: LstmDir,
        reverse: bool,
    ) -> Result<Vec<NodeId>> {
        let h = self.hidden;
        let n = g.value(x).rows();
        let xw = g.matmul(x, p[dir.w_x])?;
        let xw = g.add_bias(xw, p[dir.b])?;
        let mut outputs = vec![None; n];
        let mut state: Option<(NodeId, NodeId)> = None;
        let order: Vec<usize> = if reverse {
            (0..n).rev().collect()
        } else {
            (0..n).collect()
        };
        for t in order {
            let mut z = g.gather(xw, &[t])?;
            if let Some((h_prev, _)) = state {
                let hw = g.matmul(h_prev, p[dir.w_h])?;
                z = g.add(z, hw)?;
            }
            let i = g.slice_cols(z, 0, h)?;
            let i = g.sigmoid(i)?;
            let o = g.slice_cols(z, 2 * h, 3 * h)?;
            let o = g.sigmoid(o)?;
            let c_in = g.slice_cols(z, 3 * h, 4 * h)?;
            let c_in = g.tanh(c_in)?;
            let mut c = g.mul(i, c_in)?;
            if let Some((_, c_prev)) = state {
                let f = g.slice_cols(z, h, 2 * h)?;
                let f = g.sigmoid(f)?;
                let kept = g.mul(f, c_prev)?;
                c = g.add(c, kept)?;
            }
            let tc = g.tanh(c)?;
            let h_t = g.mul(o, tc)?;
            outputs[t] = Some(h_t);
            state = Some((h_t, c));
        }
        Ok(outputs
            .into_iter()
            .map(|o| o.expect("every step ran"))
            .collect())
    }

    /// Logit node for an `n × d` embedding node with no padding rows.
    pub(crate) fn forward<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        p: &[NodeId],
        x: NodeId,
        drop: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        let fwd = self.run_dir(g, p, x, self.fwd, false)?;
        let bwd = self.run_dir(g, p, x, self.bwd, true)?;
        let f = g.concat(&fwd, Axis::Rows)?;
        let b = g.concat(&bwd, Axis::Rows)?;
        let states = g.concat(&[f, b], Axis::Cols)?;
        let states = drop.apply(g, states)?;

        // keys-only attention: scores depend on the states alone
        let u = g.matmul(states, p[self.att_w])?;
        let u = g.add_bias(u, p[self.att_b])?;
        let u = g.tanh(u)?;
        let scores = g.matmul(u, p[self.att_v])?;
        let scores = g.transpose(scores)?;
        let alpha = g.softmax(scores)?;
        let pooled = g.matmul(alpha, states)?;

        let hid = g.matmul(pooled, p[self.mlp_w])?;
        let hid = g.add_bias(hid, p[self.mlp_b])?;
        let hid = g.tanh(hid)?;
        let hid = drop.apply(g, hid)?;
        let out = g.matmul(hid, p[self.out_w])?;
        g.add_bias(out, p[self.out_b])
    }
}
