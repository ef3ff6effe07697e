use std::collections::BTreeMap;

use super::blocks::{ConvProcessor, CrossAttentionBlock, PadTransformer};
use super::config::{ModelConfig, Variant};
use crate::data::{FeatureBag, Scale};
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear};
use crate::tensor::{Graph, Mode, ParamId, ParamStore, Tensor, Var};

/// Names of the attention maps, in report order.
pub const MAP_NAMES: [&str; 4] = ["cab_coarse", "cab_fine", "pt_source", "pt_fused"];

#[derive(Debug, Clone, Copy)]
enum Fusion {
    Conv(ConvProcessor),
    Concat(Linear),
}

/// Coarse/fine cross-attention branches, absent in the fine-only variant.
#[derive(Debug, Clone, Copy)]
struct CrossBranches {
    proj_coarse: Linear,
    proj_source: Linear,
    cab_coarse: CrossAttentionBlock,
    cab_fine: CrossAttentionBlock,
    pt_coarse: PadTransformer,
    pt_fine: PadTransformer,
    fusion: Fusion,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    cross: Option<CrossBranches>,
    proj_fine: Linear,
    pt_source: PadTransformer,
    class_token: ParamId,
    pt_final: PadTransformer,
    final_norm: LayerNorm,
    head: Linear,
}

/// Graph handles produced by [`CrossFusion::forward`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `[n_bins]`
    pub logits: Var,
    pub hazards: Var,
    pub survival: Var,
    pub attention: AttentionVars,
}

/// Attention weights recorded during a forward pass.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    /// `[heads, N_S, N_C]`
    pub cab_coarse: Option<Var>,
    /// `[heads, N_S, N_F]`
    pub cab_fine: Option<Var>,
    /// Block-2 weights of the source Pad-Transformer, `[heads, L, L]`.
    pub pt_source: Var,
    /// Block-2 weights of the final Pad-Transformer, `[heads, L', L']`.
    pub pt_final: Var,
    /// Real tokens entering the source Pad-Transformer.
    pub n_source: usize,
    /// Tokens after fusion, before the class token is prepended.
    pub n_fused: usize,
}

/// Predicted discrete-time survival distribution for one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalOutput {
    pub logits: Vec<f64>,
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    /// Per-patch min-max normalized scores keyed by [`MAP_NAMES`].
    pub attention_maps: Option<BTreeMap<String, Vec<f64>>>,
}

/// The full model: configuration, parameters and layer layout.
///
/// Parameters are registered in a fixed order, which is also the checkpoint
/// order: input projections (coarse, source, fine), coarse and fine
/// cross-attention blocks, Pad-Transformers (coarse, source, fine), the fusion
/// stage, class token, final Pad-Transformer, final norm, head. Variants that
/// skip a stage register none of its parameters.
#[derive(Debug, Clone)]
pub struct CrossFusion {
    config: ModelConfig,
    store: ParamStore,
    layers: Layers,
}

impl CrossFusion {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let layers = build(&config, &mut Init::new(&mut store, seed))?;
        Ok(Self { config, store, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// A graph bound to this model's parameters.
    pub fn graph(&self, mode: Mode) -> Graph<'_> {
        Graph::with_params(&self.store, mode)
    }

    /// Records the forward pass on `g`. Only parameter handles are taken from
    /// `self`; values come from whatever store `g` is bound to.
    pub fn forward(&self, g: &mut Graph<'_>, bag: &FeatureBag) -> Result<ForwardOutput> {
        let l = &self.layers;
        if bag.d_in != self.config.d_in {
            return Err(Error::Input(format!(
                "bag feature width {} does not match model d_in {}",
                bag.d_in, self.config.d_in
            )));
        }
        let (fused, att_partial) = match &l.cross {
            None => {
                let xf = self.project(g, bag, Scale::Fine, l.proj_fine)?;
                let (out, w) = l.pt_source.forward_with_weights(g, xf)?;
                let n = g.shape(out)[0];
                (out, (None, None, w, n))
            }
            Some(c) => {
                let xc = self.project(g, bag, Scale::Coarse, c.proj_coarse)?;
                let xs = self.project(g, bag, Scale::Source, c.proj_source)?;
                let xf = self.project(g, bag, Scale::Fine, l.proj_fine)?;
                let (xc, wc) = c.cab_coarse.forward(g, xs, xc)?;
                let (xf, wf) = c.cab_fine.forward(g, xs, xf)?;
                let yc = c.pt_coarse.forward(g, xc)?;
                let (ys, ws) = l.pt_source.forward_with_weights(g, xs)?;
                let yf = c.pt_fine.forward(g, xf)?;
                let fused = match &c.fusion {
                    Fusion::Conv(cp) => cp.forward(g, yc, ys, yf)?,
                    Fusion::Concat(lin) => {
                        let cat = g.concat_rows(&[yc, ys, yf])?;
                        lin.forward(g, cat)?
                    }
                };
                (fused, (Some(wc), Some(wf), ws, g.shape(xs)[0]))
            }
        };
        let n_fused = g.shape(fused)[0];
        let cls = g.param(l.class_token)?;
        let seq = g.concat_rows(&[cls, fused])?;
        let (h, w_final) = l.pt_final.forward_with_weights(g, seq)?;
        let h = l.final_norm.forward(g, h)?;
        let c = g.slice_rows(h, 0, 1)?;
        let logits = l.head.forward(g, c)?;
        let logits = g.reshape(logits, &[self.config.n_bins])?;
        let hazards = g.sigmoid(logits);
        let surv_terms = g.affine(hazards, -1.0, 1.0);
        let survival = g.cumprod(surv_terms)?;
        let (cab_coarse, cab_fine, pt_source, n_source) = att_partial;
        Ok(ForwardOutput {
            logits,
            hazards,
            survival,
            attention: AttentionVars { cab_coarse, cab_fine, pt_source, pt_final: w_final, n_source, n_fused },
        })
    }

    fn project(&self, g: &mut Graph<'_>, bag: &FeatureBag, s: Scale, proj: Linear) -> Result<Var> {
        let sf = bag.scale(s);
        if sf.is_empty() {
            return Err(Error::Input(format!("{s} scale has no patches")));
        }
        if sf.features.len() != sf.len() * bag.d_in {
            return Err(Error::Input(format!(
                "{s} scale holds {} values for {} patches of width {}",
                sf.features.len(),
                sf.len(),
                bag.d_in
            )));
        }
        if sf.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{s} scale has non-finite features")));
        }
        let x = g.input(Tensor::new(vec![sf.len(), bag.d_in], sf.to_f64())?);
        proj.forward(g, x)
    }

    /// Eval-mode prediction without attention maps.
    pub fn predict(&self, bag: &FeatureBag) -> Result<SurvivalOutput> {
        let mut g = self.graph(Mode::Eval);
        let out = self.forward(&mut g, bag)?;
        Ok(SurvivalOutput {
            logits: g.value(out.logits).data().to_vec(),
            hazards: g.value(out.hazards).data().to_vec(),
            survival: g.value(out.survival).data().to_vec(),
            attention_maps: None,
        })
    }

    /// Eval-mode prediction with normalized attention maps attached.
    pub fn predict_with_maps(&self, bag: &FeatureBag) -> Result<SurvivalOutput> {
        let mut g = self.graph(Mode::Eval);
        let out = self.forward(&mut g, bag)?;
        let maps = raw_maps(&g, &out.attention)?
            .into_iter()
            .map(|(k, v)| (k, min_max_normalize(&v)))
            .collect();
        Ok(SurvivalOutput {
            logits: g.value(out.logits).data().to_vec(),
            hazards: g.value(out.hazards).data().to_vec(),
            survival: g.value(out.survival).data().to_vec(),
            attention_maps: Some(maps),
        })
    }

    /// Per-patch attention scores before normalization.
    ///
    /// * `cab_coarse`, `cab_fine`: attention each context patch receives,
    ///   averaged over heads and source queries.
    /// * `pt_source`: attention each source token receives in block 2 of the
    ///   source Pad-Transformer, averaged over heads and all queries of the
    ///   padded grid; padded columns are dropped.
    /// * `pt_fused`: the class-token row of block 2 of the final
    ///   Pad-Transformer, averaged over heads, restricted to the fused tokens
    ///   that stand for source positions. With token concatenation the three
    ///   segments are summed per source patch.
    ///
    /// The fine-only variant has no cross-attention maps and its source is the
    /// fine scale.
    pub fn attention_scores(&self, bag: &FeatureBag) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut g = self.graph(Mode::Eval);
        let out = self.forward(&mut g, bag)?;
        raw_maps(&g, &out.attention)
    }

    /// [`Self::attention_scores`] min-max normalized to `[0, 1]`.
    pub fn attention_maps(&self, bag: &FeatureBag) -> Result<BTreeMap<String, Vec<f64>>> {
        Ok(self
            .attention_scores(bag)?
            .into_iter()
            .map(|(k, v)| (k, min_max_normalize(&v)))
            .collect())
    }
}

fn build(cfg: &ModelConfig, init: &mut Init<'_>) -> Result<Layers> {
    let (d, h, m, p) = (cfg.d_e, cfg.n_heads, cfg.ffn_mult, cfg.dropout);
    let pt = |init: &mut Init<'_>, name: &str| PadTransformer::new(init, name, d, h, m, p);
    let cab = |init: &mut Init<'_>, name: &str| CrossAttentionBlock::new(init, name, d, h, m, p);
    let (cross, proj_fine, pt_source) = match cfg.variant {
        Variant::NoFc => {
            let proj_fine = Linear::new(init, "proj_fine", cfg.d_in, d);
            (None, proj_fine, pt(init, "pt_source")?)
        }
        Variant::Full | Variant::NoCp => {
            let proj_coarse = Linear::new(init, "proj_coarse", cfg.d_in, d);
            let proj_source = Linear::new(init, "proj_source", cfg.d_in, d);
            let proj_fine = Linear::new(init, "proj_fine", cfg.d_in, d);
            let cab_coarse = cab(init, "cab_coarse")?;
            let cab_fine = cab(init, "cab_fine")?;
            let pt_coarse = pt(init, "pt_coarse")?;
            let pt_source = pt(init, "pt_source")?;
            let pt_fine = pt(init, "pt_fine")?;
            let fusion = if cfg.variant == Variant::Full {
                Fusion::Conv(ConvProcessor::new(init, "conv_processor", d)?)
            } else {
                Fusion::Concat(Linear::new(init, "concat_proj", d, d))
            };
            let cross = CrossBranches { proj_coarse, proj_source, cab_coarse, cab_fine, pt_coarse, pt_fine, fusion };
            (Some(cross), proj_fine, pt_source)
        }
    };
    Ok(Layers {
        cross,
        proj_fine,
        pt_source,
        class_token: init.normal("class_token", &[1, d], 0.02),
        pt_final: pt(init, "pt_final")?,
        final_norm: LayerNorm::new(init, "final_norm", d),
        head: Linear::new(init, "head", d, cfg.n_bins),
    })
}

/// Mean over heads of `w: [H, R, C]`, then per column the mean over `rows`.
fn column_means(w: &Tensor, rows: std::ops::Range<usize>) -> Vec<f64> {
    let s = w.shape();
    let (heads, r, c) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; c];
    for hd in 0..heads {
        for i in rows.clone() {
            let row = &w.data()[(hd * r + i) * c..(hd * r + i + 1) * c];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    let denom = (heads * rows.len()) as f64;
    out.iter_mut().for_each(|v| *v /= denom);
    out
}

fn raw_maps(g: &Graph<'_>, att: &AttentionVars) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut maps = BTreeMap::new();
    for (name, w) in [("cab_coarse", att.cab_coarse), ("cab_fine", att.cab_fine)] {
        if let Some(w) = w {
            let t = g.value(w);
            maps.insert(name.to_string(), column_means(t, 0..t.shape()[1]));
        }
    }
    let ws = g.value(att.pt_source);
    let mut src = column_means(ws, 0..ws.shape()[1]);
    src.truncate(att.n_source);
    maps.insert("pt_source".into(), src);

    // class-token query row; column 0 is the class token itself
    let wf = g.value(att.pt_final);
    let cls = column_means(wf, 0..1);
    let fused = &cls[1..1 + att.n_fused];
    let n = att.n_source;
    let mut per_patch = vec![0.0; n];
    let covered = if att.n_fused.is_multiple_of(n) { att.n_fused } else { n };
    for (i, v) in fused.iter().take(covered).enumerate() {
        per_patch[i % n] += v;
    }
    maps.insert("pt_fused".into(), per_patch);
    Ok(maps)
}

/// Rescales to `[0, 1]`; a constant map becomes all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / span).collect()
}
