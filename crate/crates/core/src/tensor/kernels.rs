// Raw loops behind the graph ops. All reductions run in ascending index
// order so results are bit-reproducible.

/// `out[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[n×m] += a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            out[i * m + j] += s;
        }
    }
}

/// `out[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let brow = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv2dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub groups: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl Conv2dGeom {
    fn cin_per_group(&self) -> usize {
        self.c_in / self.groups
    }
    fn cout_per_group(&self) -> usize {
        self.c_out / self.groups
    }
}

/// Zero-padded "same" grouped convolution, stride 1.
/// x: [c_in, h, w], weight: [c_out, c_in/groups, k, k], bias: [c_out].
pub(crate) fn conv2d_forward(g: Conv2dGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let Conv2dGeom { h, w, k, .. } = g;
    let pad = (k / 2) as isize;
    let cig = g.cin_per_group();
    let cog = g.cout_per_group();
    let mut out = vec![0.0; g.c_out * h * w];
    for o in 0..g.c_out {
        let grp = o / cog;
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for cl in 0..cig {
                    let ci = grp * cig + cl;
                    for dy in 0..k {
                        let iy = y as isize + dy as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..k {
                            let ix = xx as isize + dx as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += weight[((o * cig + cl) * k + dy) * k + dx]
                                * x[(ci * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc + bias[o];
            }
        }
    }
    out
}

/// Returns (dx, dweight, dbias).
pub(crate) fn conv2d_backward(
    g: Conv2dGeom,
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Conv2dGeom { h, w, k, .. } = g;
    let pad = (k / 2) as isize;
    let cig = g.cin_per_group();
    let cog = g.cout_per_group();
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; g.c_out];
    for o in 0..g.c_out {
        let grp = o / cog;
        for y in 0..h {
            for xx in 0..w {
                let go = gout[(o * h + y) * w + xx];
                db[o] += go;
                for cl in 0..cig {
                    let ci = grp * cig + cl;
                    for dy in 0..k {
                        let iy = y as isize + dy as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dxk in 0..k {
                            let ix = xx as isize + dxk as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let wi = ((o * cig + cl) * k + dy) * k + dxk;
                            let xi = (ci * h + iy as usize) * w + ix as usize;
                            dw[wi] += go * x[xi];
                            dx[xi] += go * weight[wi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv3dGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
}

/// Dense same-padded 3D convolution.
/// x: [c_in, d, h, w], weight: [c_out, c_in, kd, kh, kw], bias: [c_out].
pub(crate) fn conv3d_forward(g: Conv3dGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let Conv3dGeom { c_in, c_out, d, h, w, kd, kh, kw } = g;
    let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = vec![0.0; c_out * d * h * w];
    for o in 0..c_out {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for a in 0..kd {
                            let iz = z as isize + a as isize - pd;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let iy = y as isize + b as isize - ph;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for c in 0..kw {
                                    let ix = xx as isize + c as isize - pw;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wi = (((o * c_in + ci) * kd + a) * kh + b) * kw + c;
                                    let xi = ((ci * d + iz as usize) * h + iy as usize) * w
                                        + ix as usize;
                                    acc += weight[wi] * x[xi];
                                }
                            }
                        }
                    }
                    out[((o * d + z) * h + y) * w + xx] = acc + bias[o];
                }
            }
        }
    }
    out
}

pub(crate) fn conv3d_backward(
    g: Conv3dGeom,
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let Conv3dGeom { c_in, c_out, d, h, w, kd, kh, kw } = g;
    let (pd, ph, pw) = ((kd / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; c_out];
    for o in 0..c_out {
        for z in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let go = gout[((o * d + z) * h + y) * w + xx];
                    db[o] += go;
                    for ci in 0..c_in {
                        for a in 0..kd {
                            let iz = z as isize + a as isize - pd;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for b in 0..kh {
                                let iy = y as isize + b as isize - ph;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for c in 0..kw {
                                    let ix = xx as isize + c as isize - pw;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let wi = (((o * c_in + ci) * kd + a) * kh + b) * kw + c;
                                    let xi = ((ci * d + iz as usize) * h + iy as usize) * w
                                        + ix as usize;
                                    dw[wi] += go * x[xi];
                                    dx[xi] += go * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

pub(crate) const GELU_COEF: f64 = 0.044715;
// sqrt(2/pi)
pub(crate) const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x)).tanh();
    0.5 * (1.0 + t)
        + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
