use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{filled, glorot, Dropout, Params};
use crate::autodiff::Tensor;
use crate::autodiff::{Axis, Graph, NodeId};
use crate::error::Result;
use crate::scalar::Scalar;

/// Sinusoidal position table, the starting point of the learned positions.
fn sinusoid<S: Scalar>(len: usize, width: usize) -> Tensor<S> {
    let mut data = Vec::with_capacity(len * width);
    for pos in 0..len {
        for j in 0..width {
            let rate = 10_000f64.powf(-2.0 * (j / 2) as f64 / width as f64);
            let angle = pos as f64 * rate;
            data.push(S::lit(if j % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Tensor::matrix(len, width, data).expect("sizes agree")
}

const AGAINST: f64 = -4.0;

/// Relative-offset bias start: even heads lean toward earlier keys, odd
/// heads toward later ones.
fn directional<S: Scalar>(max_len: usize, head: usize) -> Tensor<S> {
    let c = max_len as isize - 1;
    let data = (0..2 * max_len - 1)
        .map(|m| {
            let offset = m as isize - c;
            let against = if head % 2 == 0 {
                offset > 0
            } else {
                offset < 0
            };
            S::lit(if against { AGAINST } else { 0.0 })
        })
        .collect();
    Tensor::matrix(1, 2 * max_len - 1, data).expect("sizes agree")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Layer {
    ln1_g: usize,
    ln1_b: usize,
    rel: Vec<usize>,
    qkv_w: usize,
    qkv_b: usize,
    o_w: usize,
    o_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    ff1_w: usize,
    ff1_b: usize,
    ff2_w: usize,
    ff2_b: usize,
}

/// Pre-norm residual encoder over learned absolute positions plus a learned
/// per-head bias on relative offsets, classified from the BOS state through
/// a tanh pooler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerEncoder {
    width: usize,
    heads: usize,
    proj: Option<usize>,
    pos: usize,
    layers: Vec<Layer>,
    lnf_g: usize,
    lnf_b: usize,
    pool_w: usize,
    pool_b: usize,
    out_w: usize,
    out_b: usize,
}

impl TransformerEncoder {
    pub(crate) fn init<S: Scalar>(
        cfg: &ModelConfig,
        params: &mut Params<S>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let (d, w) = (cfg.embed_dim, cfg.hidden_dim);
        let ff = 2 * w;
        let proj = (d != w).then(|| params.add("input.proj", glorot(rng, d, w)));
        let pos = params.add("pos", sinusoid(cfg.max_len, w));
        let layers = (0..cfg.layers)
            .map(|l| Layer {
                ln1_g: params.add(format!("layer{l}.ln1.g"), filled(1, w, 1.0)),
                ln1_b: params.add(format!("layer{l}.ln1.b"), filled(1, w, 0.0)),
                rel: (0..cfg.heads)
                    .map(|h| {
                        let name = format!("layer{l}.rel{h}");
                        params.add(name, directional(cfg.max_len, h))
                    })
                    .collect(),
                qkv_w: params.add(format!("layer{l}.qkv.w"), glorot(rng, w, 3 * w)),
                qkv_b: params.add(format!("layer{l}.qkv.b"), filled(1, 3 * w, 0.0)),
                o_w: params.add(format!("layer{l}.o.w"), glorot(rng, w, w)),
                o_b: params.add(format!("layer{l}.o.b"), filled(1, w, 0.0)),
                ln2_g: params.add(format!("layer{l}.ln2.g"), filled(1, w, 1.0)),
                ln2_b: params.add(format!("layer{l}.ln2.b"), filled(1, w, 0.0)),
                ff1_w: params.add(format!("layer{l}.ff1.w"), glorot(rng, w, ff)),
                ff1_b: params.add(format!("layer{l}.ff1.b"), filled(1, ff, 0.0)),
                ff2_w: params.add(format!("layer{l}.ff2.w"), glorot(rng, ff, w)),
                ff2_b: params.add(format!("layer{l}.ff2.b"), filled(1, w, 0.0)),
            })
            .collect();
        Self {
            width: w,
            heads: cfg.heads,
            proj,
            pos,
            layers,
            lnf_g: params.add("final.ln.g", filled(1, w, 1.0)),
            lnf_b: params.add("final.ln.b", filled(1, w, 0.0)),
            pool_w: params.add("pool.w", glorot(rng, w, w)),
            pool_b: params.add("pool.b", filled(1, w, 0.0)),
            out_w: params.add("out.w", glorot(rng, w, 1)),
            out_b: params.add("out.b", filled(1, 1, 0.0)),
        }
    }

    fn linear<S: Scalar>(g: &mut Graph<'_, S>, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    /// Logit node for an `n × d` embedding node with no padding rows.
    pub(crate) fn forward<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        p: &[NodeId],
        x: NodeId,
        drop: &mut Dropout<'_>,
    ) -> Result<NodeId> {
        let n = g.value(x).rows();
        let w = self.width;
        let dh = w / self.heads;
        let mut h = match self.proj {
            Some(proj) => g.matmul(x, p[proj])?,
            None => x,
        };
        let positions: Vec<usize> = (0..n).collect();
        let pos = g.gather(p[self.pos], &positions)?;
        h = g.add(h, pos)?;
        h = drop.apply(g, h)?;

        for l in &self.layers {
            let a = g.layer_norm(h, p[l.ln1_g], p[l.ln1_b])?;
            let qkv = Self::linear(g, a, p[l.qkv_w], p[l.qkv_b])?;
            let mut heads = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let q = g.slice_cols(qkv, head * dh, (head + 1) * dh)?;
                let k = g.slice_cols(qkv, w + head * dh, w + (head + 1) * dh)?;
                let v = g.slice_cols(qkv, 2 * w + head * dh, 2 * w + (head + 1) * dh)?;
                let kt = g.transpose(k)?;
                let scores = g.matmul(q, kt)?;
                let scores = g.scale(scores, S::one() / S::lit(dh as f64).sqrt())?;
                let bias = g.toeplitz(p[l.rel[head]], n)?;
                let scores = g.add(scores, bias)?;
                let probs = g.softmax(scores)?;
                heads.push(g.matmul(probs, v)?);
            }
            let att = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat(&heads, Axis::Cols)?
            };
            let att = Self::linear(g, att, p[l.o_w], p[l.o_b])?;
            let att = drop.apply(g, att)?;
            h = g.add(h, att)?;

            let b = g.layer_norm(h, p[l.ln2_g], p[l.ln2_b])?;
            let f = Self::linear(g, b, p[l.ff1_w], p[l.ff1_b])?;
            let f = g.tanh(f)?;
            let f = Self::linear(g, f, p[l.ff2_w], p[l.ff2_b])?;
            let f = drop.apply(g, f)?;
            h = g.add(h, f)?;
        }
        let h = g.layer_norm(h, p[self.lnf_g], p[self.lnf_b])?;
        let cls = g.gather(h, &[0])?;
        let pooled = Self::linear(g, cls, p[self.pool_w], p[self.pool_b])?;
        let pooled = g.tanh(pooled)?;
        let pooled = drop.apply(g, pooled)?;
        Self::linear(g, pooled, p[self.out_w], p[self.out_b])
    }
}
