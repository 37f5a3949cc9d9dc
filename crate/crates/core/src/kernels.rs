//! Raw numerical kernels over flat row-major buffers.
//!
//! The autograd graph calls into these; they know nothing about tapes.
//! All reductions run in a fixed sequential order so results are
//! bit-reproducible.

/// `c = a·b + beta·c` for row-major matrices; `a` is `m×k` (or `k×m` when
/// `trans_a`), `b` is `k×n` (or `n×k` when `trans_b`), `c` is `m×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserts above guarantee every index reachable through the
    // given dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution over one image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution; `None` when the kernel does not fit.
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if kernel == 0 || stride == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

pub fn im2col(img: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.col_cols();
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *d = if ix < 0 || ix >= g.width as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds columns back onto an image (adjoint of [`im2col`]).
pub fn col2im(cols: &[f64], g: &ConvGeom, img: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let ncol = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of `n` images with `filters` kernels, plus bias.
pub fn conv2d_forward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    filters: usize,
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_sz = g.channels * g.height * g.width;
    let out_sp = g.col_cols();
    let mut out = vec![0.0; n * filters * out_sp];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; g.col_rows() * out_sp] };
    for i in 0..n {
        let img = &x[i * in_sz..(i + 1) * in_sz];
        let o = &mut out[i * filters * out_sp..(i + 1) * filters * out_sp];
        if let Some(b) = bias {
            for (f, chunk) in o.chunks_mut(out_sp).enumerate() {
                chunk.fill(b[f]);
            }
        }
        let rhs: &[f64] = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut cols);
            &cols
        };
        gemm(filters, g.col_rows(), out_sp, weight, false, rhs, false, 1.0, o);
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    n: usize,
    g: &ConvGeom,
    weight: &[f64],
    filters: usize,
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let in_sz = g.channels * g.height * g.width;
    let out_sp = g.col_cols();
    let rows = g.col_rows();
    let mut dx = need_input.then(|| vec![0.0; n * in_sz]);
    let mut dw = need_weight.then(|| vec![0.0; filters * rows]);
    let mut db = need_bias.then(|| vec![0.0; filters]);
    let mut cols = vec![0.0; rows * out_sp];
    let mut dcols = vec![0.0; rows * out_sp];
    for i in 0..n {
        let gy = &grad_out[i * filters * out_sp..(i + 1) * filters * out_sp];
        if let Some(db) = db.as_mut() {
            for (f, chunk) in gy.chunks(out_sp).enumerate() {
                db[f] += chunk.iter().sum::<f64>();
            }
        }
        let img = &x[i * in_sz..(i + 1) * in_sz];
        if let Some(dw) = dw.as_mut() {
            let rhs: &[f64] = if g.is_pointwise() {
                img
            } else {
                im2col(img, g, &mut cols);
                &cols
            };
            gemm(filters, out_sp, rows, gy, false, rhs, true, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dimg = &mut dx[i * in_sz..(i + 1) * in_sz];
            if g.is_pointwise() {
                gemm(rows, filters, out_sp, weight, true, gy, false, 0.0, dimg);
            } else {
                gemm(rows, filters, out_sp, weight, true, gy, false, 0.0, &mut dcols);
                col2im(&dcols, g, dimg);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Transposed convolution. `g` describes the *adjoint* forward convolution:
/// its `channels/height/width` are this op's output and `out_h/out_w` its
/// input; `weight` is `[in_channels, g.channels, k, k]`.
pub fn conv_transpose2d_forward(
    x: &[f64],
    n: usize,
    in_channels: usize,
    g: &ConvGeom,
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let in_sp = g.col_cols();
    let out_sz = g.channels * g.height * g.width;
    let mut out = vec![0.0; n * out_sz];
    let mut cols = vec![0.0; g.col_rows() * in_sp];
    for i in 0..n {
        let xi = &x[i * in_channels * in_sp..(i + 1) * in_channels * in_sp];
        gemm(g.col_rows(), in_channels, in_sp, weight, true, xi, false, 0.0, &mut cols);
        let o = &mut out[i * out_sz..(i + 1) * out_sz];
        col2im(&cols, g, o);
        if let Some(b) = bias {
            let sp = g.height * g.width;
            for (c, chunk) in o.chunks_mut(sp).enumerate() {
                for v in chunk {
                    *v += b[c];
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    x: &[f64],
    n: usize,
    in_channels: usize,
    g: &ConvGeom,
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> ConvGrads {
    let in_sp = g.col_cols();
    let out_sz = g.channels * g.height * g.width;
    let rows = g.col_rows();
    let mut dx = need_input.then(|| vec![0.0; n * in_channels * in_sp]);
    let mut dw = need_weight.then(|| vec![0.0; in_channels * rows]);
    let mut db = need_bias.then(|| vec![0.0; g.channels]);
    let mut gcols = vec![0.0; rows * in_sp];
    for i in 0..n {
        let gy = &grad_out[i * out_sz..(i + 1) * out_sz];
        if let Some(db) = db.as_mut() {
            for (c, chunk) in gy.chunks(g.height * g.width).enumerate() {
                db[c] += chunk.iter().sum::<f64>();
            }
        }
        im2col(gy, g, &mut gcols);
        if let Some(dx) = dx.as_mut() {
            let d = &mut dx[i * in_channels * in_sp..(i + 1) * in_channels * in_sp];
            gemm(in_channels, rows, in_sp, weight, false, &gcols, false, 0.0, d);
        }
        if let Some(dw) = dw.as_mut() {
            let xi = &x[i * in_channels * in_sp..(i + 1) * in_channels * in_sp];
            gemm(in_channels, in_sp, rows, xi, false, &gcols, true, 1.0, dw);
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// `[N, C·r², H, W] -> [N, C, rH, rW]`; `out[n,c,h·r+i,w·r+j] = in[n,c·r²+i·r+j,h,w]`.
pub fn pixel_shuffle(x: &[f64], n: usize, c_out: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src_c = c * r * r + i * r + j;
                    let src = &x[((b * c_out * r * r) + src_c) * h * w..][..h * w];
                    let dst = &mut out[(b * c_out + c) * oh * ow..][..oh * ow];
                    for y in 0..h {
                        for xx in 0..w {
                            dst[(y * r + i) * ow + xx * r + j] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`pixel_shuffle`]; `h, w` are the large (input) extents.
pub fn pixel_unshuffle(x: &[f64], n: usize, c: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let (sh, sw) = (h / r, w / r);
    for b in 0..n {
        for ch in 0..c {
            let src = &x[(b * c + ch) * h * w..][..h * w];
            for i in 0..r {
                for j in 0..r {
                    let dst_c = ch * r * r + i * r + j;
                    let dst = &mut out[(b * c * r * r + dst_c) * sh * sw..][..sh * sw];
                    for y in 0..sh {
                        for xx in 0..sw {
                            dst[y * sw + xx] = src[(y * r + i) * w + xx * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Non-overlapping `k×k` mean pooling over `planes` planes of `h×w`.
pub fn avg_pool(x: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..k {
                    for dx in 0..k {
                        s += src[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * ow + ox] = s * inv;
            }
        }
    }
    out
}

pub fn avg_pool_backward(gy: &[f64], planes: usize, h: usize, w: usize, k: usize) -> Vec<f64> {
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut dx = vec![0.0; planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                dx[p * h * w + y * w + x] = gy[p * oh * ow + (y / k) * ow + x / k] * inv;
            }
        }
    }
    dx
}

/// Softmax over the middle axis of an `[outer, len, inner]` view, with
/// max-subtraction. Rows are swept whole so strided axes stay cache
/// friendly; each column still reduces in index order.
pub fn softmax(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    let mut m = vec![0.0; inner];
    let mut s = vec![0.0; inner];
    for o in 0..outer {
        let xs = &x[o * len * inner..][..len * inner];
        let ys = &mut out[o * len * inner..][..len * inner];
        m.fill(f64::NEG_INFINITY);
        for row in xs.chunks_exact(inner) {
            for (mi, &v) in m.iter_mut().zip(row) {
                *mi = mi.max(v);
            }
        }
        s.fill(0.0);
        for (yrow, xrow) in ys.chunks_exact_mut(inner).zip(xs.chunks_exact(inner)) {
            for (((y, &v), &mi), si) in yrow.iter_mut().zip(xrow).zip(&m).zip(s.iter_mut()) {
                *y = (v - mi).exp();
                *si += *y;
            }
        }
        for yrow in ys.chunks_exact_mut(inner) {
            for (y, &si) in yrow.iter_mut().zip(&s) {
                *y /= si;
            }
        }
    }
    out
}

pub fn softmax_backward(y: &[f64], gy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    let mut dot = vec![0.0; inner];
    for o in 0..outer {
        let range = o * len * inner..(o + 1) * len * inner;
        let (ys, gs) = (&y[range.clone()], &gy[range.clone()]);
        dot.fill(0.0);
        for (yrow, grow) in ys.chunks_exact(inner).zip(gs.chunks_exact(inner)) {
            for ((d, &a), &b) in dot.iter_mut().zip(yrow).zip(grow) {
                *d += a * b;
            }
        }
        for ((drow, yrow), grow) in dx[range].chunks_exact_mut(inner).zip(ys.chunks_exact(inner)).zip(gs.chunks_exact(inner)) {
            for (((d, &a), &b), &t) in drow.iter_mut().zip(yrow).zip(grow).zip(&dot) {
                *d = a * (b - t);
            }
        }
    }
    dx
}

/// Per-channel batch statistics `(mean, biased variance)` of `[N, C, S]` data.
pub fn channel_stats(x: &[f64], n: usize, c: usize, sp: usize) -> (Vec<f64>, Vec<f64>) {
    let m = (n * sp) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x[(b * c + ch) * sp..][..sp].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for b in 0..n {
            v += x[(b * c + ch) * sp..][..sp].iter().map(|&t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}

/// Copies each `h×w` plane into a zero border of width `r`.
fn pad_planes(x: &[f64], planes: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = vec![0.0; planes * ph * pw];
    for p in 0..planes {
        for y in 0..h {
            let src = &x[(p * h + y) * w..][..w];
            out[(p * ph + y + r) * pw + r..][..w].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`pad_planes`] for gradients: drops the border.
fn crop_planes(x: &[f64], planes: usize, h: usize, w: usize, r: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let mut out = Vec::with_capacity(planes * h * w);
    for p in 0..planes {
        for y in 0..h {
            out.extend_from_slice(&x[(p * ph + y + r) * pw + r..][..w]);
        }
    }
    out
}

/// Relational local attention, one softmax per (sample, channel, target
/// pixel) over its `window×window` neighbourhood. Scores are
/// `-(q[p'] - k[p])²`; neighbours outside the image read `k = v = 0`.
/// Returns the aggregated values and the weights `[N, C, H, W, window²]`.
pub fn local_attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
) -> (Vec<f64>, Vec<f64>) {
    let r = window / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let ww = window * window;
    let kp = pad_planes(k, planes, h, w, r);
    let vp = pad_planes(v, planes, h, w, r);
    let mut out = vec![0.0; planes * h * w];
    let mut weights = vec![0.0; planes * h * w * ww];
    for p in 0..planes {
        let (kp, vp) = (&kp[p * ph * pw..][..ph * pw], &vp[p * ph * pw..][..ph * pw]);
        for y in 0..h {
            for x in 0..w {
                let t = (p * h + y) * w + x;
                let qv = q[t];
                let wrow = &mut weights[t * ww..(t + 1) * ww];
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    let krow = &kp[(y + dy) * pw + x..][..window];
                    for (s, &kv) in wrow[dy * window..][..window].iter_mut().zip(krow) {
                        let d = qv - kv;
                        *s = -d * d;
                        m = m.max(*s);
                    }
                }
                let mut sum = 0.0;
                for s in wrow.iter_mut() {
                    *s = (*s - m).exp();
                    sum += *s;
                }
                let mut acc = 0.0;
                for dy in 0..window {
                    let vrow = &vp[(y + dy) * pw + x..][..window];
                    for (s, &vv) in wrow[dy * window..][..window].iter_mut().zip(vrow) {
                        *s /= sum;
                        acc += *s * vv;
                    }
                }
                out[t] = acc;
            }
        }
    }
    (out, weights)
}

pub struct LocalAttentionGrads {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn local_attention_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    weights: &[f64],
    gy: &[f64],
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
) -> LocalAttentionGrads {
    let r = window / 2;
    let (ph, pw) = (h + 2 * r, w + 2 * r);
    let ww = window * window;
    let kp = pad_planes(k, planes, h, w, r);
    let vp = pad_planes(v, planes, h, w, r);
    let mut dq = vec![0.0; q.len()];
    let mut dkp = vec![0.0; kp.len()];
    let mut dvp = vec![0.0; vp.len()];
    let mut dw = vec![0.0; ww];
    for p in 0..planes {
        let off = p * ph * pw;
        for y in 0..h {
            for x in 0..w {
                let t = (p * h + y) * w + x;
                let g = gy[t];
                let wrow = &weights[t * ww..(t + 1) * ww];
                let mut dot = 0.0;
                for dy in 0..window {
                    let row = off + (y + dy) * pw + x;
                    for dx in 0..window {
                        let j = dy * window + dx;
                        dvp[row + dx] += g * wrow[j];
                        dw[j] = g * vp[row + dx];
                        dot += wrow[j] * dw[j];
                    }
                }
                let qv = q[t];
                let mut gq = 0.0;
                for dy in 0..window {
                    let row = off + (y + dy) * pw + x;
                    for dx in 0..window {
                        let j = dy * window + dx;
                        let ds = wrow[j] * (dw[j] - dot);
                        let diff = qv - kp[row + dx];
                        gq += -2.0 * diff * ds;
                        dkp[row + dx] += 2.0 * diff * ds;
                    }
                }
                dq[t] = gq;
            }
        }
    }
    LocalAttentionGrads {
        q: dq,
        k: crop_planes(&dkp, planes, h, w, r),
        v: crop_planes(&dvp, planes, h, w, r),
    }
}
