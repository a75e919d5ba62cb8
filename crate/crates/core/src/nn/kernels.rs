//! Raw forward/backward kernels over row-major NCHW slices.
//!
//! Each kernel computes every output element with a fixed summation order,
//! so results do not depend on how work is split across threads.

use rayon::prelude::*;

/// Geometry of a 2-D convolution over one batch of NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta · c`, all row-major.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the stated layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = ho * wo;
    col.par_chunks_mut(g.k * g.k * cols)
        .enumerate()
        .for_each(|(c, rows)| {
            let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ki in 0..g.k {
                for kj in 0..g.k {
                    let row = &mut rows[(ki * g.k + kj) * cols..(ki * g.k + kj + 1) * cols];
                    for oi in 0..ho {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        for oj in 0..wo {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            row[oi * wo + oj] = if ii >= 0
                                && jj >= 0
                                && (ii as usize) < g.h
                                && (jj as usize) < g.w
                            {
                                plane[ii as usize * g.w + jj as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        });
}

fn col2im(col: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ho, wo) = (g.out_h(), g.out_w());
    let cols = ho * wo;
    dx.par_chunks_mut(g.h * g.w).enumerate().for_each(|(c, plane)| {
        let rows = &col[c * g.k * g.k * cols..(c + 1) * g.k * g.k * cols];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = &rows[(ki * g.k + kj) * cols..(ki * g.k + kj + 1) * cols];
                for oi in 0..ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii as usize >= g.h {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && (jj as usize) < g.w {
                            plane[ii as usize * g.w + jj as usize] += row[oi * wo + oj];
                        }
                    }
                }
            }
        }
    });
}

/// Cross-correlation plus bias. `weight` is `[c_out, c_in, k, k]`.
pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let cols = g.out_h() * g.out_w();
    let kk = g.c_in * g.k * g.k;
    let mut out = vec![0.0; g.n * g.c_out * cols];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * cols] };
    for b in 0..g.n {
        let xb = &x[b * g.c_in * g.h * g.w..(b + 1) * g.c_in * g.h * g.w];
        let ob = &mut out[b * g.c_out * cols..(b + 1) * g.c_out * cols];
        for (o, row) in ob.chunks_mut(cols).enumerate() {
            row.fill(bias[o]);
        }
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut col);
            &col
        };
        gemm(g.c_out, kk, cols, weight, false, src, false, ob, 1.0);
    }
    out
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let cols = g.out_h() * g.out_w();
    let kk = g.c_in * g.k * g.k;
    let in_len = g.c_in * g.h * g.w;
    let mut dx = vec![0.0; g.n * in_len];
    let mut dw = vec![0.0; g.c_out * kk];
    let mut db = vec![0.0; g.c_out];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0; kk * cols] };
    let mut dcol = vec![0.0; if g.is_pointwise() { 0 } else { kk * cols }];
    for b in 0..g.n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let gb = &dout[b * g.c_out * cols..(b + 1) * g.c_out * cols];
        for (o, row) in gb.chunks(cols).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        if g.is_pointwise() {
            gemm(g.c_out, cols, kk, gb, false, xb, true, &mut dw, 1.0);
            gemm(kk, g.c_out, cols, weight, true, gb, false, dxb, 0.0);
        } else {
            im2col(xb, g, &mut col);
            gemm(g.c_out, cols, kk, gb, false, &col, true, &mut dw, 1.0);
            gemm(kk, g.c_out, cols, weight, true, gb, false, &mut dcol, 0.0);
            col2im(&dcol, g, dxb);
        }
    }
    (dx, dw, db)
}

/// Per-channel `k×k` filter, stride 1, zero same-padding. `weight` is `[c, 1, k, k]`.
pub fn depthwise_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![0.0; n * c * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(bc, op)| {
        let ch = bc % c;
        let xp = &x[bc * plane..(bc + 1) * plane];
        let wk = &weight[ch * k * k..(ch + 1) * k * k];
        for i in 0..h {
            for j in 0..w {
                let mut acc = bias[ch];
                for ki in 0..k {
                    let ii = i as isize + ki as isize - pad;
                    if ii < 0 || ii as usize >= h {
                        continue;
                    }
                    let xrow = &xp[ii as usize * w..];
                    for kj in 0..k {
                        let jj = j as isize + kj as isize - pad;
                        if jj >= 0 && (jj as usize) < w {
                            acc += wk[ki * k + kj] * xrow[jj as usize];
                        }
                    }
                }
                op[i * w + j] = acc;
            }
        }
    });
    out
}

pub fn depthwise_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut dx = vec![0.0; n * c * plane];
    dx.par_chunks_mut(plane).enumerate().for_each(|(bc, dxp)| {
        let ch = bc % c;
        let gp = &dout[bc * plane..(bc + 1) * plane];
        let wk = &weight[ch * k * k..(ch + 1) * k * k];
        // dx[i', j'] = sum over taps of w[ki,kj] * g[i' - ki + pad, j' - kj + pad]
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for ki in 0..k {
                    let oi = i as isize - ki as isize + pad;
                    if oi < 0 || oi as usize >= h {
                        continue;
                    }
                    for kj in 0..k {
                        let oj = j as isize - kj as isize + pad;
                        if oj >= 0 && (oj as usize) < w {
                            acc += wk[ki * k + kj] * gp[oi as usize * w + oj as usize];
                        }
                    }
                }
                dxp[i * w + j] = acc;
            }
        }
    });
    let per_channel: Vec<(Vec<f64>, f64)> = (0..c)
        .into_par_iter()
        .map(|ch| {
            let mut dwk = vec![0.0; k * k];
            let mut dbk = 0.0;
            for b in 0..n {
                let bc = b * c + ch;
                let xp = &x[bc * plane..(bc + 1) * plane];
                let gp = &dout[bc * plane..(bc + 1) * plane];
                dbk += gp.iter().sum::<f64>();
                for ki in 0..k {
                    for kj in 0..k {
                        let mut acc = 0.0;
                        for i in 0..h {
                            let ii = i as isize + ki as isize - pad;
                            if ii < 0 || ii as usize >= h {
                                continue;
                            }
                            for j in 0..w {
                                let jj = j as isize + kj as isize - pad;
                                if jj >= 0 && (jj as usize) < w {
                                    acc += gp[i * w + j] * xp[ii as usize * w + jj as usize];
                                }
                            }
                        }
                        dwk[ki * k + kj] += acc;
                    }
                }
            }
            (dwk, dbk)
        })
        .collect();
    let mut dw = Vec::with_capacity(c * k * k);
    let mut db = Vec::with_capacity(c);
    for (dwk, dbk) in per_channel {
        dw.extend(dwk);
        db.push(dbk);
    }
    (dx, dw, db)
}

/// Contiguous `[c_out, c_in]` slice of a `[c_out, c_in, 2, 2]` kernel at tap `(a, b)`.
fn tap_matrix(weight: &[f64], c_out: usize, c_in: usize, a: usize, b: usize) -> Vec<f64> {
    (0..c_out * c_in)
        .map(|oc| weight[oc * 4 + a * 2 + b])
        .collect()
}

/// Transposed 2×2 stride-2 convolution: `y[o, 2i+a, 2j+b] = Σ_c W[o,c,a,b]·x[c,i,j] + bias[o]`.
pub fn upconv_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let cols = h * w;
    let mut out = vec![0.0; n * c_out * ho * wo];
    let mut tmp = vec![0.0; c_out * cols];
    for b in 0..n {
        let xb = &x[b * c_in * cols..(b + 1) * c_in * cols];
        let ob = &mut out[b * c_out * ho * wo..(b + 1) * c_out * ho * wo];
        for a in 0..2 {
            for bb in 0..2 {
                let wab = tap_matrix(weight, c_out, c_in, a, bb);
                gemm(c_out, c_in, cols, &wab, false, xb, false, &mut tmp, 0.0);
                for o in 0..c_out {
                    for i in 0..h {
                        for j in 0..w {
                            ob[(o * ho + 2 * i + a) * wo + 2 * j + bb] =
                                tmp[o * cols + i * w + j] + bias[o];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn upconv_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = (2 * h, 2 * w);
    let cols = h * w;
    let mut dx = vec![0.0; n * c_in * cols];
    let mut dw = vec![0.0; c_out * c_in * 4];
    let mut db = vec![0.0; c_out];
    let mut gab = vec![0.0; c_out * cols];
    let mut dwab = vec![0.0; c_out * c_in];
    for b in 0..n {
        let xb = &x[b * c_in * cols..(b + 1) * c_in * cols];
        let gb = &dout[b * c_out * ho * wo..(b + 1) * c_out * ho * wo];
        for (o, plane) in gb.chunks(ho * wo).enumerate() {
            db[o] += plane.iter().sum::<f64>();
        }
        let dxb = &mut dx[b * c_in * cols..(b + 1) * c_in * cols];
        for a in 0..2 {
            for bb in 0..2 {
                for o in 0..c_out {
                    for i in 0..h {
                        for j in 0..w {
                            gab[o * cols + i * w + j] = gb[(o * ho + 2 * i + a) * wo + 2 * j + bb];
                        }
                    }
                }
                let wab = tap_matrix(weight, c_out, c_in, a, bb);
                gemm(c_in, c_out, cols, &wab, true, &gab, false, dxb, 1.0);
                gemm(c_out, cols, c_in, &gab, false, xb, true, &mut dwab, 0.0);
                for oc in 0..c_out * c_in {
                    dw[oc * 4 + a * 2 + bb] += dwab[oc];
                }
            }
        }
    }
    (dx, dw, db)
}

/// Per-channel transposed 2×2 stride-2 convolution. `weight` is `[c, 1, 2, 2]`.
pub fn depthwise_upconv_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let wo = 2 * w;
    let mut out = vec![0.0; n * c * 4 * h * w];
    out.par_chunks_mut(4 * h * w)
        .enumerate()
        .for_each(|(bc, op)| {
            let ch = bc % c;
            let xp = &x[bc * h * w..(bc + 1) * h * w];
            let wk = &weight[ch * 4..ch * 4 + 4];
            for i in 0..h {
                for j in 0..w {
                    let v = xp[i * w + j];
                    for a in 0..2 {
                        for b in 0..2 {
                            op[(2 * i + a) * wo + 2 * j + b] = wk[a * 2 + b] * v + bias[ch];
                        }
                    }
                }
            }
        });
    out
}

pub fn depthwise_upconv_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let wo = 2 * w;
    let plane_out = 4 * h * w;
    let mut dx = vec![0.0; n * c * h * w];
    dx.par_chunks_mut(h * w).enumerate().for_each(|(bc, dxp)| {
        let ch = bc % c;
        let gp = &dout[bc * plane_out..(bc + 1) * plane_out];
        let wk = &weight[ch * 4..ch * 4 + 4];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        acc += wk[a * 2 + b] * gp[(2 * i + a) * wo + 2 * j + b];
                    }
                }
                dxp[i * w + j] = acc;
            }
        }
    });
    let mut dw = vec![0.0; c * 4];
    let mut db = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let bc = b * c + ch;
            let xp = &x[bc * h * w..(bc + 1) * h * w];
            let gp = &dout[bc * plane_out..(bc + 1) * plane_out];
            db[ch] += gp.iter().sum::<f64>();
            for a in 0..2 {
                for bb in 0..2 {
                    let mut acc = 0.0;
                    for i in 0..h {
                        for j in 0..w {
                            acc += xp[i * w + j] * gp[(2 * i + a) * wo + 2 * j + bb];
                        }
                    }
                    dw[ch * 4 + a * 2 + bb] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

/// 2×2 stride-2 max pooling. Returns the output and, per output element,
/// the flat input index of the winning element (first in row-major window
/// order on ties).
pub fn maxpool_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    let mut arg = vec![0usize; n * c * ho * wo];
    out.par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(bc, (op, ap))| {
            let base = bc * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (a, b) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + a) * w + 2 * j + b;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    op[i * wo + j] = x[best];
                    ap[i * wo + j] = best;
                }
            }
        });
    (out, arg)
}

pub fn maxpool_backward(argmax: &[usize], dout: &[f64], in_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (&idx, &g) in argmax.iter().zip(dout) {
        dx[idx] += g;
    }
    dx
}
