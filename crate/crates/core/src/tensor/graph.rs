//! Operation recording and reverse-mode replay.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value; node indices are therefore a topological order
//! and backward simply walks them in reverse.

use super::kernels::{self, Conv2dGeom, Conv3dGeom};
use super::{shape_str, CounterRng, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Discriminant of a recorded op; used to address a backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Linear,
    Permute,
    Reshape,
    Add,
    AddRow,
    Mul,
    Affine,
    Softmax,
    LayerNorm,
    Gelu,
    Sigmoid,
    Log,
    Clamp,
    Sum,
    Gather,
    Concat,
    Conv2d,
    Conv3d,
    Dropout,
    CumProd,
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "matmul" => OpKind::MatMul,
            "linear" => OpKind::Linear,
            "permute" => OpKind::Permute,
            "add" => OpKind::Add,
            "add-row" => OpKind::AddRow,
            "mul" => OpKind::Mul,
            "softmax" => OpKind::Softmax,
            "layer-norm" => OpKind::LayerNorm,
            "gelu" => OpKind::Gelu,
            "sigmoid" => OpKind::Sigmoid,
            "log" => OpKind::Log,
            "gather" => OpKind::Gather,
            "conv2d" => OpKind::Conv2d,
            "conv3d" => OpKind::Conv3d,
            "cumprod" => OpKind::CumProd,
            other => return Err(Error::Config(format!("unknown op kind `{other}`"))),
        })
    }
}

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul { a: Var, b: Var, batch: usize, n: usize, k: usize, m: usize, a_b: bool, b_b: bool },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, din: usize, dout: usize },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Add { a: Var, b: Var },
    AddRow { x: Var, row: Var },
    Mul { a: Var, b: Var },
    Affine { x: Var, scale: f64 },
    Softmax { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Log { x: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Sum { x: Var },
    Gather { x: Var, indices: Vec<usize>, row: usize },
    Concat { parts: Vec<Var> },
    Conv2d { x: Var, w: Var, b: Var, geom: Conv2dGeom },
    Conv3d { x: Var, w: Var, b: Var, geom: Conv3dGeom },
    Dropout { x: Var, mask: Vec<f64> },
    CumProd { x: Var },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf { .. } => OpKind::Leaf,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Linear { .. } => OpKind::Linear,
            Op::Permute { .. } => OpKind::Permute,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Add { .. } => OpKind::Add,
            Op::AddRow { .. } => OpKind::AddRow,
            Op::Mul { .. } => OpKind::Mul,
            Op::Affine { .. } => OpKind::Affine,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu { .. } => OpKind::Gelu,
            Op::Sigmoid { .. } => OpKind::Sigmoid,
            Op::Log { .. } => OpKind::Log,
            Op::Clamp { .. } => OpKind::Clamp,
            Op::Sum { .. } => OpKind::Sum,
            Op::Gather { .. } => OpKind::Gather,
            Op::Concat { .. } => OpKind::Concat,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Conv3d { .. } => OpKind::Conv3d,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::CumProd { .. } => OpKind::CumProd,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward computation.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    bound: Vec<Option<Var>>,
    nodes: Vec<Node>,
    mode: Mode,
    dropout_rng: Option<CounterRng>,
    corrupt: Option<OpKind>,
}

impl Graph<'static> {
    /// A graph without a parameter store; leaves are created with [`Graph::leaf`].
    pub fn new(mode: Mode) -> Self {
        Self {
            store: None,
            bound: Vec::new(),
            nodes: Vec::new(),
            mode,
            dropout_rng: None,
            corrupt: None,
        }
    }
}

impl<'p> Graph<'p> {
    pub fn with_params(store: &'p ParamStore, mode: Mode) -> Self {
        Self {
            store: Some(store),
            bound: vec![None; store.len()],
            nodes: Vec::new(),
            mode,
            dropout_rng: None,
            corrupt: None,
        }
    }

    /// Seeds the dropout stream; without a seed dropout is the identity.
    pub fn with_dropout_seed(mut self, seed: u64) -> Self {
        self.dropout_rng = Some(CounterRng::new(seed));
        self
    }

    /// Test hook: scales the input gradients produced by every `kind` op by 1.5.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.corrupt = Some(kind);
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        if cfg!(debug_assertions) && !value.is_finite() {
            let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].value.is_finite());
            debug_assert!(!inputs_finite, "{:?} produced non-finite output from finite inputs", op.kind());
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(t, false)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let value = t.with_requires_grad(false);
        self.nodes.push(Node { value, op: Op::Leaf { param: None }, needs_grad: requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter onto the graph, once per graph.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::Contract("graph has no parameter store".into()))?;
        if let Some(Some(v)) = self.bound.get(id.0) {
            return Ok(*v);
        }
        if id.0 >= store.len() {
            return Err(Error::Contract(format!("unknown parameter #{}", id.0)));
        }
        let src = store.get(id);
        let value = Tensor::new(src.shape().to_vec(), src.data().to_vec())?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf { param: Some(id) },
            needs_grad: src.requires_grad(),
        });
        let v = Var(self.nodes.len() - 1);
        self.bound[id.0] = Some(v);
        Ok(v)
    }

    // ----- linear algebra -----

    /// Batched matrix product `[.., n, k] · [.., k, m]`; a rank-2 operand
    /// broadcasts over the other operand's leading extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || {
            Error::dim("matmul", format!("cannot multiply {} by {}", shape_str(&sa), shape_str(&sb)))
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (n, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, m) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let batch_shape = match (ba.is_empty(), bb.is_empty()) {
            (_, true) => ba.to_vec(),
            (true, false) => bb.to_vec(),
            (false, false) if ba == bb => ba.to_vec(),
            _ => return Err(err()),
        };
        let batch: usize = batch_shape.iter().product();
        let (a_b, b_b) = (!ba.is_empty(), !bb.is_empty());
        let mut out = vec![0.0; batch * n * m];
        {
            let (da, db) = (self.data(a), self.data(b));
            for i in 0..batch {
                let aoff = if a_b { i * n * k } else { 0 };
                let boff = if b_b { i * k * m } else { 0 };
                kernels::matmul_acc(
                    &da[aoff..aoff + n * k],
                    &db[boff..boff + k * m],
                    &mut out[i * n * m..(i + 1) * n * m],
                    n,
                    k,
                    m,
                );
            }
        }
        let mut shape = batch_shape;
        shape.extend([n, m]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, batch, n, k, m, a_b, b_b }, &[a, b]))
    }

    /// `x · wᵀ + b` over the last extent of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sw.len() != 2 || sx.is_empty() || sx[sx.len() - 1] != sw[1] {
            return Err(Error::dim(
                "linear",
                format!("input {} incompatible with weight {}", shape_str(&sx), shape_str(&sw)),
            ));
        }
        let (dout, din) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.value(b).numel() != dout {
                return Err(Error::dim(
                    "linear",
                    format!("bias {} for {} outputs", shape_str(self.shape(b)), dout),
                ));
            }
        }
        let rows = self.value(x).numel() / din;
        let mut out = vec![0.0; rows * dout];
        kernels::matmul_bt_acc(self.data(x), self.data(w), &mut out, rows, din, dout);
        if let Some(b) = b {
            let bd = self.data(b);
            for r in 0..rows {
                for (o, bv) in out[r * dout..(r + 1) * dout].iter_mut().zip(bd) {
                    *o += bv;
                }
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = dout;
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Linear { x, w, b, rows, din, dout }, &inputs))
    }

    // ----- shape ops -----

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(
                "permute",
                format!("axes {:?} invalid for {}", axes, shape_str(&shape)),
            ));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let out = permute_data(self.data(x), &shape, axes);
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Swaps the last two extents.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::dim("transpose", format!("rank {r} tensor")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value.with_requires_grad(false), Op::Reshape { x }, &[x]))
    }

    /// Selects rows (first-axis slices) by index; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::dim("gather_rows", "rank-0 tensor"));
        }
        let rows = shape[0];
        if let Some(bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::dim("gather_rows", format!("row {bad} out of {rows}")));
        }
        let row: usize = shape[1..].iter().product();
        let src = self.data(x);
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&src[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = indices.len();
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Op::Gather { x, indices: indices.to_vec(), row }, &[x]))
    }

    /// Contiguous row range `[start, start + len)`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather_rows(x, &idx)
    }

    /// Concatenates along the first axis; trailing extents must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let s = self.shape(*p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::dim(
                    "concat_rows",
                    format!("{} vs trailing extents {:?}", shape_str(s), tail),
                ));
            }
            rows += s[0];
            out.extend_from_slice(self.data(*p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec() }, parts))
    }

    // ----- elementwise -----

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                op,
                format!("{} vs {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(x);
        let out: Vec<f64> = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), out).expect("shape preserved");
        self.push(value, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    /// Adds a vector (any shape with `D` elements) to every last-axis row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&0);
        if d == 0 || self.value(row).numel() != d {
            return Err(Error::dim(
                "add_row",
                format!("row {} for input {}", shape_str(self.shape(row)), shape_str(self.shape(x))),
            ));
        }
        let r = self.data(row);
        let out: Vec<f64> = self.data(x).iter().enumerate().map(|(i, v)| v + r[i % d]).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::AddRow { x, row }, &[x, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.map(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.affine(x, c, 0.0)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.map(x, kernels::gelu, Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, kernels::sigmoid, Op::Sigmoid { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.map(x, f64::ln, Op::Log { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.map(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    /// Inverted dropout; the identity in eval mode, at rate 0, or without a seed.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if self.mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let Some(rng) = self.dropout_rng.as_mut() else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - rate);
        let n = self.nodes[x.0].value.numel();
        let mask: Vec<f64> = (0..n).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect();
        let out: Vec<f64> = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { x, mask }, &[x]))
    }

    // ----- reductions and normalizations -----

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Softmax over the last extent with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("softmax", "rank-0 tensor"))?;
        if d == 0 {
            return Err(Error::dim("softmax", "empty last extent"));
        }
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for (row, orow) in src.chunks(d).zip(out.chunks_mut(d)) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, v) in orow.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in orow.iter_mut() {
                *o /= z;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x }, &[x]))
    }

    /// Normalizes each last-axis row to zero mean and unit (population)
    /// variance, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm", "rank-0 tensor"))?;
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gamma {} / beta {} for input {}",
                    shape_str(self.shape(gamma)),
                    shape_str(self.shape(beta)),
                    shape_str(&shape)
                ),
            ));
        }
        let (src, g, b) = (self.data(x), self.data(gamma), self.data(beta));
        let rows = src.len() / d.max(1);
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Running product along the last extent.
    pub fn cumprod(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("cumprod", "rank-0 tensor"))?;
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for (row, orow) in src.chunks(d.max(1)).zip(out.chunks_mut(d.max(1))) {
            let mut acc = 1.0;
            for (o, v) in orow.iter_mut().zip(row) {
                acc *= v;
                *o = acc;
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::CumProd { x }, &[x]))
    }

    // ----- convolutions -----

    /// Same-padded grouped 2D convolution.
    /// x: [c_in, h, w]; weight: [c_out, c_in/groups, k, k]; bias: [c_out].
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, groups: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        if sx.len() != 3 || sw.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("input {} / weight {}", shape_str(&sx), shape_str(&sw)),
            ));
        }
        let (c_in, h, w) = (sx[0], sx[1], sx[2]);
        let (c_out, k) = (sw[0], sw[2]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Config(format!(
                "{groups} groups do not divide {c_in} input / {c_out} output channels"
            )));
        }
        if k % 2 == 0 || sw[3] != k {
            return Err(Error::Config(format!("kernel {}x{} must be square and odd", sw[2], sw[3])));
        }
        if sw[1] != c_in / groups {
            return Err(Error::dim(
                "conv2d",
                format!("weight {} expects {} channels per group", shape_str(&sw), c_in / groups),
            ));
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::dim("conv2d", format!("bias {} for {c_out} outputs", shape_str(self.shape(bias)))));
        }
        let geom = Conv2dGeom { c_in, c_out, groups, h, w, k };
        let out = kernels::conv2d_forward(geom, self.data(x), self.data(weight), self.data(bias));
        let value = Tensor::new(vec![c_out, h, w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w: weight, b: bias, geom }, &[x, weight, bias]))
    }

    /// Same-padded dense 3D convolution.
    /// x: [c_in, d, h, w]; weight: [c_out, c_in, kd, kh, kw]; bias: [c_out].
    pub fn conv3d(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        if sx.len() != 4 || sw.len() != 5 || sw[1] != sx[0] {
            return Err(Error::dim(
                "conv3d",
                format!("input {} / weight {}", shape_str(&sx), shape_str(&sw)),
            ));
        }
        if sw[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("kernel {:?} must be odd", &sw[2..])));
        }
        if self.value(bias).numel() != sw[0] {
            return Err(Error::dim("conv3d", format!("bias {} for {} outputs", shape_str(self.shape(bias)), sw[0])));
        }
        let geom = Conv3dGeom {
            c_in: sx[0],
            c_out: sw[0],
            d: sx[1],
            h: sx[2],
            w: sx[3],
            kd: sw[2],
            kh: sw[3],
            kw: sw[4],
        };
        let out = kernels::conv3d_forward(geom, self.data(x), self.data(weight), self.data(bias));
        let value = Tensor::new(vec![geom.c_out, geom.d, geom.h, geom.w], out)?;
        Ok(self.push(value, Op::Conv3d { x, w: weight, b: bias, geom }, &[x, weight, bias]))
    }

    // ----- backward -----

    /// Replays the recording in reverse from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(lv.shape())
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf { .. } = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut contribs = self.local_grads(node, &g);
            if self.corrupt == Some(node.op.kind()) {
                for (_, d) in &mut contribs {
                    d.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (v, d) in contribs {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, x)| *a += x),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Leaf { param: Some(id) } if n.needs_grad => {
                    let g = grads[i].clone().unwrap_or_else(|| vec![0.0; n.value.numel()]);
                    Some((id, g))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn local_grads(&self, node: &Node, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let y = node.value.data();
        match &node.op {
            Op::Leaf { .. } => vec![],
            &Op::MatMul { a, b, batch, n, k, m, a_b, b_b } => {
                let (da, db) = (self.data(a), self.data(b));
                let mut ga = vec![0.0; da.len()];
                let mut gb = vec![0.0; db.len()];
                for i in 0..batch {
                    let aoff = if a_b { i * n * k } else { 0 };
                    let boff = if b_b { i * k * m } else { 0 };
                    let gs = &g[i * n * m..(i + 1) * n * m];
                    // dA = G · Bᵀ, dB = Aᵀ · G
                    kernels::matmul_bt_acc(gs, &db[boff..boff + k * m], &mut ga[aoff..aoff + n * k], n, m, k);
                    kernels::matmul_at_acc(&da[aoff..aoff + n * k], gs, &mut gb[boff..boff + k * m], n, k, m);
                }
                vec![(a, ga), (b, gb)]
            }
            &Op::Linear { x, w, b, rows, din, dout } => {
                let (dx_, dw_) = (self.data(x), self.data(w));
                let mut gx = vec![0.0; dx_.len()];
                let mut gw = vec![0.0; dw_.len()];
                kernels::matmul_acc(g, dw_, &mut gx, rows, dout, din);
                kernels::matmul_at_acc(g, dx_, &mut gw, rows, dout, din);
                let mut out = vec![(x, gx), (w, gw)];
                if let Some(b) = b {
                    let mut gb = vec![0.0; dout];
                    for r in 0..rows {
                        for (acc, v) in gb.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                            *acc += v;
                        }
                    }
                    out.push((b, gb));
                }
                out
            }
            Op::Permute { x, axes } => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                vec![(*x, permute_data(g, node.value.shape(), &inv))]
            }
            &Op::Reshape { x } => vec![(x, g.to_vec())],
            &Op::Add { a, b } => vec![(a, g.to_vec()), (b, g.to_vec())],
            &Op::AddRow { x, row } => {
                let d = self.value(row).numel();
                let mut gr = vec![0.0; d];
                for (i, v) in g.iter().enumerate() {
                    gr[i % d] += v;
                }
                vec![(x, g.to_vec()), (row, gr)]
            }
            &Op::Mul { a, b } => {
                let (da, db) = (self.data(a), self.data(b));
                let ga = g.iter().zip(db).map(|(g, v)| g * v).collect();
                let gb = g.iter().zip(da).map(|(g, v)| g * v).collect();
                vec![(a, ga), (b, gb)]
            }
            &Op::Affine { x, scale } => vec![(x, g.iter().map(|v| v * scale).collect())],
            &Op::Softmax { x } => {
                let d = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; y.len()];
                for ((yr, gr), or) in y.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yv), gv) in or.iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - dot);
                    }
                }
                vec![(x, gx)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gm = self.data(*gamma);
                let d = gm.len();
                let mut gx = vec![0.0; xhat.len()];
                let mut gg = vec![0.0; d];
                let mut gb = vec![0.0; d];
                for (r, rs) in rstd.iter().enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let mut mean_gy = 0.0;
                    let mut mean_gy_xh = 0.0;
                    for j in 0..d {
                        let gy = gr[j] * gm[j];
                        mean_gy += gy;
                        mean_gy_xh += gy * xh[j];
                        gg[j] += gr[j] * xh[j];
                        gb[j] += gr[j];
                    }
                    mean_gy /= d as f64;
                    mean_gy_xh /= d as f64;
                    for j in 0..d {
                        gx[r * d + j] = rs * (gr[j] * gm[j] - mean_gy - xh[j] * mean_gy_xh);
                    }
                }
                vec![(*x, gx), (*gamma, gg), (*beta, gb)]
            }
            &Op::Gelu { x } => {
                let gx = g.iter().zip(self.data(x)).map(|(g, v)| g * kernels::gelu_grad(*v)).collect();
                vec![(x, gx)]
            }
            &Op::Sigmoid { x } => {
                let gx = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                vec![(x, gx)]
            }
            &Op::Log { x } => {
                let gx = g.iter().zip(self.data(x)).map(|(g, v)| g / v).collect();
                vec![(x, gx)]
            }
            &Op::Clamp { x, lo, hi } => {
                let gx = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(g, v)| if *v >= lo && *v <= hi { *g } else { 0.0 })
                    .collect();
                vec![(x, gx)]
            }
            &Op::Sum { x } => vec![(x, vec![g[0]; self.value(x).numel()])],
            Op::Gather { x, indices, row } => {
                let mut gx = vec![0.0; self.value(*x).numel()];
                for (o, &i) in indices.iter().enumerate() {
                    for j in 0..*row {
                        gx[i * row + j] += g[o * row + j];
                    }
                }
                vec![(*x, gx)]
            }
            Op::Concat { parts } => {
                let mut off = 0;
                parts
                    .iter()
                    .map(|p| {
                        let n = self.value(*p).numel();
                        let s = g[off..off + n].to_vec();
                        off += n;
                        (*p, s)
                    })
                    .collect()
            }
            &Op::Conv2d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(geom, self.data(x), self.data(w), g);
                vec![(x, gx), (w, gw), (b, gb)]
            }
            &Op::Conv3d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv3d_backward(geom, self.data(x), self.data(w), g);
                vec![(x, gx), (w, gw), (b, gb)]
            }
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect())]
            }
            &Op::CumProd { x } => {
                let src = self.data(x);
                let d = *node.value.shape().last().unwrap();
                let mut gx = vec![0.0; src.len()];
                for ((xr, gr), or) in src.chunks(d).zip(g.chunks(d)).zip(gx.chunks_mut(d)) {
                    // d out_k / d x_j = prod_{i<=k, i!=j} x_i, built without division.
                    for j in 0..d {
                        let mut prefix = 1.0;
                        for v in &xr[..j] {
                            prefix *= v;
                        }
                        let mut acc = 0.0;
                        let mut run = prefix;
                        for k in j..d {
                            if k > j {
                                run *= xr[k];
                            }
                            acc += gr[k] * run;
                        }
                        or[j] = acc;
                    }
                }
                vec![(x, gx)]
            }
        }
    }
}

/// Gradients from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of the loss with respect to a recorded leaf, if it needs one.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients for every parameter bound on the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }
}

/// Free-function form of [`Graph::backward`].
pub fn backward(graph: &Graph<'_>, loss: Var) -> Result<Gradients> {
    graph.backward(loss)
}

fn permute_data(src: &[f64], shape: &[usize], axes: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let n = src.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(src[off]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            off += out_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= out_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
