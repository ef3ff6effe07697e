use super::{AttentionOutput, FeedForward, Init, LayerNorm, MultiHeadAttention};
use crate::error::Result;
use crate::tensor::{Graph, Var};

/// Pre-norm block:
/// `x1 = x + MHSA(LN(x))`, `out = x1 + Dropout(FFN(LN(x1)))`.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl TransformerBlock {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        d: usize,
        n_heads: usize,
        ffn_mult: usize,
        dropout: f64,
    ) -> Result<Self> {
        init.scope(name, |i| {
            Ok(Self {
                norm1: LayerNorm::new(i, "norm1", d),
                attn: MultiHeadAttention::new(i, "attn", d, n_heads)?,
                norm2: LayerNorm::new(i, "norm2", d),
                ffn: FeedForward::new(i, "ffn", d, ffn_mult),
                dropout,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        self.forward_with_weights(g, x).map(|(out, _)| out)
    }

    /// Also returns the self-attention weights `[heads, N, N]`.
    pub fn forward_with_weights(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Var)> {
        let h = self.norm1.forward(g, x)?;
        let AttentionOutput { out, weights } = self.attn.forward(g, h, h)?;
        let x1 = g.add(x, out)?;
        let h = self.norm2.forward(g, x1)?;
        let h = self.ffn.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        Ok((g.add(x1, h)?, weights))
    }
}
