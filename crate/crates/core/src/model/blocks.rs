//! Building blocks: square padding, PPEG, Pad-Transformer, cross-attention
//! block and the Conv Processor.

use crate::error::{Error, Result};
use crate::nn::{AttentionOutput, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, TransformerBlock};
use crate::tensor::{Graph, ParamId, Var};

/// Side length of the smallest square grid holding `n` tokens.
pub fn square_side(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

/// Row indices that pad `n` tokens to `side * side` by wrapping around to the
/// start of the sequence.
pub fn square_pad_indices(n: usize) -> Vec<usize> {
    let side = square_side(n);
    (0..side * side).map(|i| i % n).collect()
}

/// Pads `x: [N, D]` to a square grid `[H, W, D]` with `H = W = ceil(sqrt(N))`.
/// Returns the grid and the original length.
pub fn square_pad(g: &mut Graph<'_>, x: Var) -> Result<(Var, usize)> {
    let s = g.shape(x).to_vec();
    if s.len() != 2 {
        return Err(Error::dim("square_pad", format!("expected [N, D], got {s:?}")));
    }
    if s[0] == 0 {
        return Err(Error::Input("cannot square-pad an empty sequence".into()));
    }
    let side = square_side(s[0]);
    let padded = g.gather_rows(x, &square_pad_indices(s[0]))?;
    Ok((g.reshape(padded, &[side, side, s[1]])?, s[0]))
}

/// Same-padded conv kernel with bias, stored as `[c_out, c_in / groups, k, k]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub groups: usize,
}

impl Conv2d {
    pub fn new(init: &mut Init<'_>, name: &str, c_in: usize, c_out: usize, k: usize, groups: usize) -> Self {
        let fan_in = (c_in / groups) * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        init.scope(name, |i| Self {
            weight: i.uniform("weight", &[c_out, c_in / groups, k, k], bound),
            bias: i.constant("bias", &[c_out], 0.0),
            groups,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight)?, g.param(self.bias)?);
        g.conv2d(x, w, b, self.groups)
    }
}

/// Pyramid position encoding: depth-wise 7x7, 5x5 and 3x3 convolutions
/// summed with the identity.
#[derive(Debug, Clone, Copy)]
pub struct Ppeg {
    pub convs: [Conv2d; 3],
}

impl Ppeg {
    pub const KERNELS: [usize; 3] = [7, 5, 3];

    pub fn new(init: &mut Init<'_>, name: &str, d: usize) -> Self {
        init.scope(name, |i| Self {
            convs: Self::KERNELS.map(|k| Conv2d::new(i, &format!("conv{k}"), d, d, k, d)),
        })
    }

    /// `grid: [D, H, W]`.
    pub fn forward(&self, g: &mut Graph<'_>, grid: Var) -> Result<Var> {
        let mut acc = grid;
        for c in &self.convs {
            let y = c.forward(g, grid)?;
            acc = g.add(acc, y)?;
        }
        Ok(acc)
    }
}

/// Transformer block, square padding plus PPEG, second block, truncation.
#[derive(Debug, Clone, Copy)]
pub struct PadTransformer {
    pub block1: TransformerBlock,
    pub ppeg: Ppeg,
    pub block2: TransformerBlock,
}

impl PadTransformer {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, ffn_mult: usize, dropout: f64) -> Result<Self> {
        init.scope(name, |i| {
            Ok(Self {
                block1: TransformerBlock::new(i, "block1", d, heads, ffn_mult, dropout)?,
                ppeg: Ppeg::new(i, "ppeg", d),
                block2: TransformerBlock::new(i, "block2", d, heads, ffn_mult, dropout)?,
            })
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        self.forward_with_weights(g, x).map(|(out, _)| out)
    }

    /// `x: [N, D]` to `[N, D]`; also returns the block-2 attention weights
    /// `[heads, L, L]` over the padded length `L = side^2`.
    pub fn forward_with_weights(&self, g: &mut Graph<'_>, x: Var) -> Result<(Var, Var)> {
        let (grid, n) = square_pad(g, x)?;
        let s = g.shape(grid).to_vec();
        let (side, d) = (s[0], s[2]);
        let seq = g.reshape(grid, &[side * side, d])?;
        let h = self.block1.forward(g, seq)?;
        let h = g.reshape(h, &[side, side, d])?;
        let h = g.permute(h, &[2, 0, 1])?;
        let h = self.ppeg.forward(g, h)?;
        let h = g.permute(h, &[1, 2, 0])?;
        let h = g.reshape(h, &[side * side, d])?;
        let (h, weights) = self.block2.forward_with_weights(g, h)?;
        Ok((g.slice_rows(h, 0, n)?, weights))
    }
}

/// Cross-attention block with a learnable scale embedding added to both the
/// query and the context:
/// `x1 = LN(x + Attn(x + s, ctx + s))`, `out = LN(x1 + FFN(x1))`.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttentionBlock {
    pub scale_embedding: ParamId,
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl CrossAttentionBlock {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, heads: usize, ffn_mult: usize, dropout: f64) -> Result<Self> {
        init.scope(name, |i| {
            Ok(Self {
                scale_embedding: i.normal("scale_embedding", &[1, d], 0.02),
                attn: MultiHeadAttention::new(i, "attn", d, heads)?,
                norm1: LayerNorm::new(i, "norm1", d),
                ffn: FeedForward::new(i, "ffn", d, ffn_mult),
                norm2: LayerNorm::new(i, "norm2", d),
                dropout,
            })
        })
    }

    /// `x: [N, D]` queries, `context: [M, D]`; returns `[N, D]` and the
    /// attention weights `[heads, N, M]`.
    pub fn forward(&self, g: &mut Graph<'_>, x: Var, context: Var) -> Result<(Var, Var)> {
        let s = g.param(self.scale_embedding)?;
        let q = g.add_row(x, s)?;
        let kv = g.add_row(context, s)?;
        let AttentionOutput { out, weights } = self.attn.forward(g, q, kv)?;
        let out = g.dropout(out, self.dropout)?;
        let x1 = g.add(x, out)?;
        let x1 = self.norm1.forward(g, x1)?;
        let h = self.ffn.forward(g, x1)?;
        let h = g.dropout(h, self.dropout)?;
        let x2 = g.add(x1, h)?;
        Ok((self.norm2.forward(g, x2)?, weights))
    }
}

/// Fuses three aligned sequences: square-pad and stack to `[3, D, H, W]`,
/// 3x3x3 convolution to one channel, four grouped convolutions (7, 5, 3, 1)
/// halving the width, flatten, project back to `D`, layer norm.
#[derive(Debug, Clone, Copy)]
pub struct ConvProcessor {
    pub fuse3d_weight: ParamId,
    pub fuse3d_bias: ParamId,
    pub ms_convs: [Conv2d; 4],
    pub out_proj: Linear,
    pub out_norm: LayerNorm,
    pub d: usize,
}

impl ConvProcessor {
    pub const KERNELS: [usize; 4] = [7, 5, 3, 1];

    pub fn new(init: &mut Init<'_>, name: &str, d: usize) -> Result<Self> {
        if !d.is_multiple_of(2) {
            return Err(Error::Config(format!("conv processor width {d} must be even")));
        }
        let half = d / 2;
        init.scope(name, |i| {
            let bound = 1.0 / (3.0f64 * 27.0).sqrt();
            Ok(Self {
                fuse3d_weight: i.uniform("fuse3d.weight", &[1, 3, 3, 3, 3], bound),
                fuse3d_bias: i.constant("fuse3d.bias", &[1], 0.0),
                ms_convs: Self::KERNELS.map(|k| Conv2d::new(i, &format!("ms_conv{k}"), d, half, k, half)),
                out_proj: Linear::new(i, "out_proj", half, d),
                out_norm: LayerNorm::new(i, "out_norm", d),
                d,
            })
        })
    }

    /// Three `[N, D]` inputs to `[side^2, D]`.
    pub fn forward(&self, g: &mut Graph<'_>, x1: Var, x2: Var, x3: Var) -> Result<Var> {
        let n = g.shape(x1)[0];
        for x in [x1, x2, x3] {
            let s = g.shape(x);
            if s.len() != 2 || s[0] != n || s[1] != self.d {
                return Err(Error::Contract(format!(
                    "conv processor inputs must all be [{n}, {}], got {s:?}",
                    self.d
                )));
            }
        }
        let mut grids = Vec::with_capacity(3);
        let mut side = 0;
        for x in [x1, x2, x3] {
            let (grid, _) = square_pad(g, x)?;
            side = g.shape(grid)[0];
            // [H, W, D] -> [D, H, W]
            grids.push(g.permute(grid, &[2, 0, 1])?);
        }
        let (d, hw) = (self.d, side * side);
        let stack = g.concat_rows(&grids)?;
        let stack = g.reshape(stack, &[3, d, side, side])?;
        let (w3, b3) = (g.param(self.fuse3d_weight)?, g.param(self.fuse3d_bias)?);
        let fused = g.conv3d(stack, w3, b3)?;
        let fused = g.reshape(fused, &[d, side, side])?;
        let mut acc: Option<Var> = None;
        for c in &self.ms_convs {
            let y = c.forward(g, fused)?;
            acc = Some(match acc {
                Some(a) => g.add(a, y)?,
                None => y,
            });
        }
        let y = acc.expect("four kernels");
        let y = g.reshape(y, &[d / 2, hw])?;
        let y = g.transpose(y)?;
        let y = self.out_proj.forward(g, y)?;
        self.out_norm.forward(g, y)
    }
}
