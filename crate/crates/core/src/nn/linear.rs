use super::Init;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, Var};

pub const LN_EPS: f64 = 1e-5;

/// Affine map `x · Wᵀ + b` with `W: [d_out, d_in]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Xavier-uniform weight, zero bias.
    pub fn new(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        init.scope(name, |i| Self {
            weight: i.uniform("weight", &[d_out, d_in], bound),
            bias: Some(i.constant("bias", &[d_out], 0.0)),
            d_in,
            d_out,
        })
    }

    /// Weight-only map `x · Wᵀ`.
    pub fn without_bias(init: &mut Init<'_>, name: &str, d_in: usize, d_out: usize) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        init.scope(name, |i| Self {
            weight: i.uniform("weight", &[d_out, d_in], bound),
            bias: None,
            d_in,
            d_out,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let last = g.shape(x).last().copied().unwrap_or(0);
        if last != self.d_in {
            return Err(Error::dim(
                "linear",
                format!("expected last extent {}, got shape {:?}", self.d_in, g.shape(x)),
            ));
        }
        let w = g.param(self.weight)?;
        let b = self.bias.map(|b| g.param(b)).transpose()?;
        g.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize) -> Self {
        init.scope(name, |i| Self {
            gamma: i.constant("gamma", &[d], 1.0),
            beta: i.constant("beta", &[d], 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let (ga, be) = (g.param(self.gamma)?, g.param(self.beta)?);
        g.layer_norm(x, ga, be, LN_EPS)
    }
}

/// Two linear layers with GELU between.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn new(init: &mut Init<'_>, name: &str, d: usize, mult: usize) -> Self {
        init.scope(name, |i| Self {
            fc1: Linear::new(i, "fc1", d, d * mult),
            fc2: Linear::new(i, "fc2", d * mult, d),
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, h)
    }
}
