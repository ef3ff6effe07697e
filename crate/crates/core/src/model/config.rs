use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cross-attention, three Pad-Transformers and the Conv Processor.
    Full,
    /// Conv Processor replaced by token concatenation and a linear map.
    NoCp,
    /// Fine patches only, fed straight into one Pad-Transformer.
    NoFc,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoCp, Variant::NoFc];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCp => "no-cp",
            Variant::NoFc => "no-fc",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "full" => Ok(Variant::Full),
            "no-cp" => Ok(Variant::NoCp),
            "no-fc" => Ok(Variant::NoFc),
            _ => Err(Error::Config(format!("unknown variant {s:?} (expected full, no-cp or no-fc)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Width of the incoming patch embeddings.
    pub d_in: usize,
    /// Width of the shared embedding space.
    pub d_e: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    /// Number of discrete time intervals.
    pub n_bins: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub const DEFAULT_D_E: usize = 32;
    pub const DEFAULT_HEADS: usize = 4;
    pub const DEFAULT_FFN_MULT: usize = 2;
    pub const DEFAULT_DROPOUT: f64 = 0.1;
    pub const DEFAULT_BINS: usize = 4;

    pub fn new(d_in: usize) -> Self {
        Self {
            d_in,
            d_e: Self::DEFAULT_D_E,
            n_heads: Self::DEFAULT_HEADS,
            ffn_mult: Self::DEFAULT_FFN_MULT,
            dropout: Self::DEFAULT_DROPOUT,
            n_bins: Self::DEFAULT_BINS,
            variant: Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_in == 0 {
            return bad("d_in must be positive".into());
        }
        if self.d_e == 0 || !self.d_e.is_multiple_of(2) {
            return bad(format!("d_e must be positive and even, got {}", self.d_e));
        }
        if self.n_heads == 0 || !self.d_e.is_multiple_of(self.n_heads) {
            return bad(format!("{} heads do not divide d_e = {}", self.n_heads, self.d_e));
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.n_bins < 2 {
            return bad(format!("n_bins must be at least 2, got {}", self.n_bins));
        }
        Ok(())
    }
}
