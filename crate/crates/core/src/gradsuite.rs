//! Finite-difference gradient checks over every layer type and the full model.
//!
//! Inputs are registered as parameters so their gradients are probed too.
//! Every parameter is redrawn uniformly in `[-0.5, 0.5]` before checking, so
//! zero-initialised biases and unit norm gains do not hide errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FeatureBag, ScaleFeatures};
use crate::error::Result;
use crate::model::{ConvProcessor, CrossAttentionBlock, CrossFusion, ModelConfig, PadTransformer, Variant};
use crate::nn::{Init, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{finite_diff_check, GradCheckOptions, Graph, OpKind, ParamId, ParamStore, Tensor, Var};

pub const TOLERANCE: f64 = 1e-4;

/// Input width and per-scale patch counts used for the full-model checks.
pub const MODEL_D_IN: usize = 16;
pub const MODEL_COUNTS: [usize; 3] = [3, 5, 9];

#[derive(Debug, Clone)]
pub struct ComponentCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub d_model: usize,
    pub heads: usize,
    pub seed: u64,
    /// Corrupts the backward rule of one op kind in every check.
    pub fault: Option<OpKind>,
}

impl SuiteOptions {
    pub fn new(d_model: usize, heads: usize, seed: u64) -> Self {
        Self { d_model, heads, seed, fault: None }
    }

    fn model_config(&self, variant: Variant) -> ModelConfig {
        ModelConfig {
            d_in: MODEL_D_IN,
            d_e: self.d_model,
            n_heads: self.heads,
            ffn_mult: 2,
            dropout: 0.0,
            n_bins: 4,
            variant,
        }
    }
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<(ParamId, usize)> = store.iter().map(|(id, _, t)| (id, t.numel())).collect();
    for (id, n) in ids {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        store.set_data(id, &v).expect("same length");
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("consistent shape")
}

/// `sum(y * w)` with fixed random `w`, so every output element contributes.
fn project(g: &mut Graph<'_>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, g.shape(y));
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

struct Check<'o> {
    opts: &'o SuiteOptions,
    out: Vec<ComponentCheck>,
}

impl Check<'_> {
    fn run<F>(&mut self, name: &str, mut store: ParamStore, max_coords: Option<usize>, f: F) -> Result<()>
    where
        F: Fn(&mut Graph<'_>) -> Result<Var>,
    {
        let fault = self.opts.fault;
        let rep = finite_diff_check(
            &mut store,
            |g| {
                if let Some(k) = fault {
                    g.corrupt_backward(k);
                }
                f(g)
            },
            &GradCheckOptions { max_coords_per_param: max_coords, seed: self.opts.seed, ..Default::default() },
        )?;
        self.out.push(ComponentCheck {
            name: name.to_string(),
            max_rel_error: rep.max_rel_error,
            coords_checked: rep.coords_checked,
            worst: rep.worst,
        });
        Ok(())
    }
}

/// Runs all component checks. Fails early only on configuration errors.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<ComponentCheck>> {
    opts.model_config(Variant::Full).validate()?;
    let (d, h, seed) = (opts.d_model, opts.heads, opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = Check { opts, out: Vec::new() };

    // each fixture: fresh store, layer, inputs as parameters, randomized
    let fixture = |build: &mut dyn FnMut(&mut Init<'_>), seed: u64| {
        let mut store = ParamStore::new();
        build(&mut Init::new(&mut store, seed));
        randomize(&mut store, seed ^ 0x5eed);
        store
    };
    let mut add_input = |init: &mut Init<'_>, name: &str, shape: &[usize]| init.add(name, random_tensor(&mut rng, shape));

    let mut layer = None;
    let mut x = None;
    let store = fixture(
        &mut |i| {
            layer = Some(Linear::new(i, "linear", d, 2 * d));
            x = Some(add_input(i, "x", &[5, d]));
        },
        seed,
    );
    let (l, xi) = (layer.unwrap(), x.unwrap());
    check.run("linear", store, None, |g| {
        let x = g.param(xi)?;
        let y = l.forward(g, x)?;
        project(g, y, 1)
    })?;

    let mut layer = None;
    let store = fixture(
        &mut |i| {
            layer = Some(LayerNorm::new(i, "layer_norm", d));
            x = Some(add_input(i, "x", &[4, d]));
        },
        seed + 1,
    );
    let (l, xi) = (layer.unwrap(), x.unwrap());
    check.run("layer_norm", store, None, |g| {
        let x = g.param(xi)?;
        let y = l.forward(g, x)?;
        project(g, y, 2)
    })?;

    let mut layer = None;
    let mut kv = None;
    let mut err = None;
    let store = fixture(
        &mut |i| match MultiHeadAttention::new(i, "attention", d, h) {
            Ok(a) => {
                layer = Some(a);
                x = Some(add_input(i, "q", &[3, d]));
                kv = Some(add_input(i, "kv", &[5, d]));
            }
            Err(e) => err = Some(e),
        },
        seed + 2,
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    let (a, qi, kvi) = (layer.unwrap(), x.unwrap(), kv.unwrap());
    check.run("softmax_attention", store, None, |g| {
        let (q, kv) = (g.param(qi)?, g.param(kvi)?);
        let out = a.forward(g, q, kv)?;
        let y = project(g, out.out, 3)?;
        let w = project(g, out.weights, 4)?;
        g.add(y, w)
    })?;

    let mut conv = None;
    let store = fixture(
        &mut |i| {
            conv = Some(crate::model::blocks::Conv2d::new(i, "grouped_conv2d", d, d / 2, 3, d / 2));
            x = Some(add_input(i, "x", &[d, 3, 4]));
        },
        seed + 3,
    );
    let (c, xi) = (conv.unwrap(), x.unwrap());
    check.run("grouped_conv2d", store, None, |g| {
        let x = g.param(xi)?;
        let y = c.forward(g, x)?;
        project(g, y, 5)
    })?;

    let mut w3 = None;
    let mut b3 = None;
    let store = fixture(
        &mut |i| {
            w3 = Some(i.uniform("conv3d_fuse.weight", &[1, 3, 3, 3, 3], 0.2));
            b3 = Some(i.constant("conv3d_fuse.bias", &[1], 0.0));
            x = Some(add_input(i, "x", &[3, d, 3, 3]));
        },
        seed + 4,
    );
    let (wi, bi, xi) = (w3.unwrap(), b3.unwrap(), x.unwrap());
    check.run("conv3d_fuse", store, None, |g| {
        let (x, w, b) = (g.param(xi)?, g.param(wi)?, g.param(bi)?);
        let y = g.conv3d(x, w, b)?;
        project(g, y, 6)
    })?;

    let mut cab = None;
    let store = fixture(
        &mut |i| match CrossAttentionBlock::new(i, "cab", d, h, 2, 0.0) {
            Ok(c) => {
                cab = Some(c);
                x = Some(add_input(i, "x", &[MODEL_COUNTS[1], d]));
                kv = Some(add_input(i, "ctx", &[MODEL_COUNTS[0], d]));
            }
            Err(e) => err = Some(e),
        },
        seed + 5,
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    let (c, xi, ci) = (cab.unwrap(), x.unwrap(), kv.unwrap());
    check.run("cab", store, Some(12), |g| {
        let (x, ctx) = (g.param(xi)?, g.param(ci)?);
        let (y, _) = c.forward(g, x, ctx)?;
        project(g, y, 7)
    })?;

    let mut pt = None;
    let store = fixture(
        &mut |i| match PadTransformer::new(i, "pad_transformer", d, h, 2, 0.0) {
            Ok(p) => {
                pt = Some(p);
                x = Some(add_input(i, "x", &[MODEL_COUNTS[1], d]));
            }
            Err(e) => err = Some(e),
        },
        seed + 6,
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    let (p, xi) = (pt.unwrap(), x.unwrap());
    check.run("pad_transformer", store, Some(8), |g| {
        let x = g.param(xi)?;
        let y = p.forward(g, x)?;
        project(g, y, 8)
    })?;

    let mut cp = None;
    let mut xs = Vec::new();
    let store = fixture(
        &mut |i| match ConvProcessor::new(i, "conv_processor", d) {
            Ok(c) => {
                cp = Some(c);
                xs = (0..3).map(|k| add_input(i, &format!("x{k}"), &[MODEL_COUNTS[1], d])).collect();
            }
            Err(e) => err = Some(e),
        },
        seed + 7,
    );
    if let Some(e) = err.take() {
        return Err(e);
    }
    let c = cp.unwrap();
    check.run("conv_processor", store, Some(12), |g| {
        let (a, b, e) = (g.param(xs[0])?, g.param(xs[1])?, g.param(xs[2])?);
        let y = c.forward(g, a, b, e)?;
        project(g, y, 9)
    })?;

    let bag = desk_bag(seed);
    for variant in Variant::ALL {
        let model = CrossFusion::new(opts.model_config(variant), seed + 8)?;
        let mut store = model.params().clone();
        randomize(&mut store, seed + 9);
        check.run(&format!("model_{}", variant.name().replace('-', "_")), store, Some(4), |g| {
            let out = model.forward(g, &bag)?;
            let a = project(g, out.hazards, 10)?;
            let b = project(g, out.survival, 11)?;
            g.add(a, b)
        })?;
    }
    Ok(check.out)
}

/// Random bag with [`MODEL_D_IN`] features and [`MODEL_COUNTS`] patches.
pub fn desk_bag(seed: u64) -> FeatureBag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba9);
    let scales = MODEL_COUNTS.map(|n| {
        let side = (1..).find(|s| s * s >= n).unwrap_or(1) as i32;
        ScaleFeatures {
            features: (0..n * MODEL_D_IN).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            coords: (0..n as i32).map(|i| [i % side, i / side]).collect(),
        }
    });
    FeatureBag { d_in: MODEL_D_IN, scales }
}
