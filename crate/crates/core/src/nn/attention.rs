use super::{Init, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs; self-attention passes the same sequence twice.
/// Query, key and value projections are bias-free matrices.
#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    /// `[N, D]`
    pub out: Var,
    /// `[heads, N, M]`, rows sum to one.
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init<'_>, name: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "{n_heads} heads do not divide model width {d_model}"
            )));
        }
        Ok(init.scope(name, |i| Self {
            q_proj: Linear::without_bias(i, "q", d_model, d_model),
            k_proj: Linear::without_bias(i, "k", d_model, d_model),
            v_proj: Linear::without_bias(i, "v", d_model, d_model),
            out_proj: Linear::new(i, "out", d_model, d_model),
            n_heads,
            d_model,
        }))
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    fn split_heads(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let n = g.shape(x)[0];
        let x = g.reshape(x, &[n, self.n_heads, self.head_dim()])?;
        g.permute(x, &[1, 0, 2])
    }

    /// `q_in: [N, D]`, `kv_in: [M, D]`.
    pub fn forward(&self, g: &mut Graph<'_>, q_in: Var, kv_in: Var) -> Result<AttentionOutput> {
        for (role, v) in [("query", q_in), ("key/value", kv_in)] {
            let s = g.shape(v);
            if s.len() != 2 || s[1] != self.d_model {
                return Err(Error::dim(
                    "attention",
                    format!("{role} input {:?}, expected [_, {}]", s, self.d_model),
                ));
            }
        }
        let n = g.shape(q_in)[0];
        let q = self.q_proj.forward(g, q_in)?;
        let k = self.k_proj.forward(g, kv_in)?;
        let v = self.v_proj.forward(g, kv_in)?;
        let q = self.split_heads(g, q)?;
        let k = self.split_heads(g, k)?;
        let v = self.split_heads(g, v)?;
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (self.head_dim() as f64).sqrt());
        let weights = g.softmax(scores)?;
        let ctx = g.matmul(weights, v)?;
        let ctx = g.permute(ctx, &[1, 0, 2])?;
        let ctx = g.reshape(ctx, &[n, self.d_model])?;
        let out = self.out_proj.forward(g, ctx)?;
        Ok(AttentionOutput { out, weights })
    }
}
