//! Global (non-local) attention and local relational attention, plus the
//! residual blocks built on them.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};

/// A 1×1 convolution: `w [out, in, 1, 1]`, `b [out]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv1x1 {
    pub w: Var,
    pub b: Var,
}

impl Conv1x1 {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.w, Some(self.b), 1, 0)
    }
}

/// `f`, `g` project C → C/8, `h` projects C → C/2 and `v` maps C/2 → C.
/// `lambda` is a one-element tensor.
#[derive(Clone, Copy, Debug)]
pub struct GlobalAttentionWeights {
    pub f: Conv1x1,
    pub g: Conv1x1,
    pub h: Conv1x1,
    pub v: Conv1x1,
    pub lambda: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LocalAttentionWeights {
    pub q: Conv1x1,
    pub k: Conv1x1,
    /// Odd side length of the visible window.
    pub window: usize,
}

/// A conv–LeakyReLU–conv body followed by an attention stage.
#[derive(Clone, Copy, Debug)]
pub struct BlockConvs {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub slope: f64,
}

impl BlockConvs {
    fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let k = g.shape(self.w1)[2];
        let a = g.conv2d(x, self.w1, Some(self.b1), 1, k / 2)?;
        let a = g.leaky_relu(a, self.slope)?;
        g.conv2d(a, self.w2, Some(self.b2), 1, k / 2)
    }
}

/// `λ·v(o) + x` where `o_j = Σ_i β_{j,i} h(x_i)` and `β_{j,·}` is the softmax
/// over positions `i` of `f(x_i)ᵀ g(x_j)`.
pub fn global_attention(g: &mut Graph, x: Var, w: &GlobalAttentionWeights) -> Result<Var> {
    global_attention_map(g, x, w).map(|(out, _)| out)
}

/// As [`global_attention`], also returning the attention map `[N, HW, HW]`
/// indexed `[i, j]`; each column `j` sums to one.
pub fn global_attention_map(g: &mut Graph, x: Var, w: &GlobalAttentionWeights) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    let [n, c, h, wd] = shape[..] else {
        return Err(Error::shape("global_attention", format!("expected rank 4, got {shape:?}")));
    };
    if c % 8 != 0 {
        return Err(Error::shape("global_attention", format!("{c} channels not divisible by 8")));
    }
    let hw = h * wd;
    let f = w.f.apply(g, x)?;
    let f = g.reshape(f, &[n, c / 8, hw])?;
    let gx = w.g.apply(g, x)?;
    let gx = g.reshape(gx, &[n, c / 8, hw])?;
    let hx = w.h.apply(g, x)?;
    let hx = g.reshape(hx, &[n, c / 2, hw])?;
    let scores = g.bmm(f, gx, true, false)?;
    let beta = g.softmax(scores, 1)?;
    let o = g.bmm(hx, beta, false, false)?;
    let o = g.reshape(o, &[n, c / 2, h, wd])?;
    let o = w.v.apply(g, o)?;
    if g.shape(o) != shape.as_slice() {
        return Err(Error::shape("global_attention", format!("v maps to {:?}", g.shape(o))));
    }
    let lambda = g.broadcast_to(w.lambda, &shape)?;
    let scaled = g.mul(lambda, o)?;
    let out = g.add(scaled, x)?;
    Ok((out, beta))
}

/// Per channel, each target pixel averages the raw features of its window
/// with weights `softmax(-(q_{p'} - k_p)²)`, where `q`, `k` are 1×1
/// projections of `x`. Pixels outside the image contribute `k = v = 0`.
pub fn local_attention(g: &mut Graph, x: Var, w: &LocalAttentionWeights) -> Result<Var> {
    let q = w.q.apply(g, x)?;
    let k = w.k.apply(g, x)?;
    if g.shape(q) != g.shape(x) || g.shape(k) != g.shape(x) {
        return Err(Error::shape("local_attention", "q/k projections must preserve channels"));
    }
    g.local_attention(q, k, x, w.window)
}

/// Global attention residual block: `x + GA(conv(lrelu(conv(x))))`.
pub fn garb_forward(g: &mut Graph, x: Var, convs: &BlockConvs, att: &GlobalAttentionWeights) -> Result<Var> {
    let body = convs.apply(g, x)?;
    let a = global_attention(g, body, att)?;
    g.add(x, a)
}

/// Local attention residual block: `x + LA(conv(lrelu(conv(x))))`.
pub fn larb_forward(g: &mut Graph, x: Var, convs: &BlockConvs, att: &LocalAttentionWeights) -> Result<Var> {
    let body = convs.apply(g, x)?;
    let a = local_attention(g, body, att)?;
    g.add(x, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    fn conv1x1(g: &mut Graph, out: usize, inp: usize, rng: Rng, scale: f64) -> Conv1x1 {
        Conv1x1 {
            w: g.constant(Tensor::randn(&[out, inp, 1, 1], rng.fork("w")).map(|v| v * scale)),
            b: g.constant(Tensor::randn(&[out], rng.fork("b")).map(|v| v * scale)),
        }
    }

    fn ga_weights(g: &mut Graph, c: usize, lambda: f64, rng: Rng) -> GlobalAttentionWeights {
        GlobalAttentionWeights {
            f: conv1x1(g, c / 8, c, rng.fork("f"), 0.5),
            g: conv1x1(g, c / 8, c, rng.fork("g"), 0.5),
            h: conv1x1(g, c / 2, c, rng.fork("h"), 0.5),
            v: conv1x1(g, c, c / 2, rng.fork("v"), 0.5),
            lambda: g.constant(Tensor::from_vec(vec![lambda])),
        }
    }

    fn project(x: &[f64], c: usize, hw: usize, w: &Tensor, b: &Tensor) -> Vec<Vec<f64>> {
        // Returns [out][pos].
        let out = b.numel();
        (0..out)
            .map(|o| {
                (0..hw)
                    .map(|p| b.data()[o] + (0..c).map(|i| w.data()[o * c + i] * x[i * hw + p]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    /// Direct double loop over positions for one sample.
    fn global_oracle(x: &[f64], c: usize, hw: usize, t: &[Tensor; 8], lambda: f64) -> Vec<f64> {
        let f = project(x, c, hw, &t[0], &t[1]);
        let gg = project(x, c, hw, &t[2], &t[3]);
        let hh = project(x, c, hw, &t[4], &t[5]);
        let mut o = vec![vec![0.0; hw]; c / 2];
        for j in 0..hw {
            let s: Vec<f64> = (0..hw)
                .map(|i| (0..c / 8).map(|k| f[k][i] * gg[k][j]).sum())
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            for i in 0..hw {
                let beta = (s[i] - m).exp() / z;
                for (ch, row) in o.iter_mut().enumerate() {
                    row[j] += beta * hh[ch][i];
                }
            }
        }
        let flat: Vec<f64> = o.into_iter().flatten().collect();
        let v = project(&flat, c / 2, hw, &t[6], &t[7]);
        (0..c * hw).map(|i| lambda * v[i / hw][i % hw] + x[i]).collect()
    }

    fn weight_tensors(g: &Graph, w: &GlobalAttentionWeights) -> [Tensor; 8] {
        [w.f, w.g, w.h, w.v].map(|cv| [g.value(cv.w).clone(), g.value(cv.b).clone()]).concat().try_into().unwrap()
    }

    #[test]
    fn global_matches_double_loop_oracle() {
        for (c, h, wd) in [(8, 4, 4), (16, 8, 8), (8, 3, 5)] {
            let mut g = Graph::new();
            let xt = Tensor::randn(&[2, c, h, wd], Rng::new(c as u64 + h as u64));
            let x = g.constant(xt.clone());
            let w = ga_weights(&mut g, c, 0.7, Rng::new(3));
            let y = global_attention(&mut g, x, &w).unwrap();
            let tensors = weight_tensors(&g, &w);
            let hw = h * wd;
            for n in 0..2 {
                let sample = &xt.data()[n * c * hw..(n + 1) * c * hw];
                let expect = global_oracle(sample, c, hw, &tensors, 0.7);
                let got = &g.value(y).data()[n * c * hw..(n + 1) * c * hw];
                let diff = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-10, "{diff}");
            }
        }
    }

    #[test]
    fn global_columns_normalized_and_uniform_on_constant_map() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 8, 3, 3], 0.4));
        let w = ga_weights(&mut g, 8, 0.0, Rng::new(4));
        let (_, beta) = global_attention_map(&mut g, x, &w).unwrap();
        let b = g.value(beta).data();
        for v in b {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
        let x = g.constant(Tensor::randn(&[2, 16, 4, 4], Rng::new(5)));
        let w = ga_weights(&mut g, 16, 1.0, Rng::new(6));
        let (_, beta) = global_attention_map(&mut g, x, &w).unwrap();
        let b = g.value(beta).data();
        for n in 0..2 {
            for j in 0..16 {
                let s: f64 = (0..16).map(|i| b[n * 256 + i * 16 + j]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_lambda_is_exact_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[1, 8, 5, 5], Rng::new(7)));
        let w = ga_weights(&mut g, 8, 0.0, Rng::new(8));
        let y = global_attention(&mut g, x, &w).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn global_rejects_indivisible_channels() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 12, 2, 2]));
        let w = ga_weights(&mut g, 8, 0.0, Rng::new(9));
        assert!(matches!(global_attention(&mut g, x, &w), Err(Error::Shape { .. })));
    }

    /// Collects every (score, value) pair of a window and normalizes directly.
    fn local_oracle(q: &[f64], k: &[f64], v: &[f64], h: usize, w: usize, window: usize) -> Vec<f64> {
        let r = window as isize / 2;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let qv = q[(y * w as isize + x) as usize];
                let mut pairs = Vec::new();
                for yy in y - r..=y + r {
                    for xx in x - r..=x + r {
                        let inside = (0..h as isize).contains(&yy) && (0..w as isize).contains(&xx);
                        let idx = (yy * w as isize + xx) as usize;
                        let (kv, vv) = if inside { (k[idx], v[idx]) } else { (0.0, 0.0) };
                        pairs.push((-(qv - kv).powi(2), vv));
                    }
                }
                let z: f64 = pairs.iter().map(|(s, _)| s.exp()).sum();
                out.push(pairs.iter().map(|(s, v)| s.exp() / z * v).sum());
            }
        }
        out
    }

    fn la_weights(g: &mut Graph, c: usize, window: usize, rng: Rng) -> LocalAttentionWeights {
        LocalAttentionWeights {
            q: conv1x1(g, c, c, rng.fork("q"), 0.5),
            k: conv1x1(g, c, c, rng.fork("k"), 0.5),
            window,
        }
    }

    #[test]
    fn local_matches_per_pixel_oracle() {
        for (c, h, w, window) in [(1, 3, 3, 3), (2, 8, 8, 7), (3, 5, 6, 5)] {
            let mut g = Graph::new();
            let xt = Tensor::randn(&[1, c, h, w], Rng::new(20 + c as u64));
            let x = g.constant(xt.clone());
            let lw = la_weights(&mut g, c, window, Rng::new(21));
            let q = lw.q.apply(&mut g, x).unwrap();
            let k = lw.k.apply(&mut g, x).unwrap();
            let y = local_attention(&mut g, x, &lw).unwrap();
            assert_eq!(g.shape(y), xt.shape());
            let hw = h * w;
            for ch in 0..c {
                let sl = |t: &Tensor| t.data()[ch * hw..(ch + 1) * hw].to_vec();
                let expect = local_oracle(&sl(g.value(q)), &sl(g.value(k)), &sl(&xt), h, w, window);
                let got = sl(g.value(y));
                let diff = got.iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-10, "{diff}");
            }
        }
    }

    #[test]
    fn local_weights_normalized_and_uniform_for_equal_scores() {
        let q = vec![0.3; 25];
        let (_, wts) = crate::kernels::local_attention_forward(&q, &q, &q, 1, 5, 5, 3);
        for row in wts.chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // Interior target (2, 2): every neighbour lies inside the image.
        for v in &wts[12 * 9..13 * 9] {
            assert!((v - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn local_translation_equivariant_in_interior() {
        let (h, w, window) = (12, 12, 3);
        let base = Tensor::randn(&[1, 1, h, w], Rng::new(30));
        let shifted: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                base.data()[((y + h - 1) % h) * w + (x + w - 2) % w]
            })
            .collect();
        let run = |t: &Tensor| {
            let (o, _) = crate::kernels::local_attention_forward(t.data(), t.data(), t.data(), 1, h, w, window);
            o
        };
        let a = run(&base);
        let b = run(&Tensor::new(vec![1, 1, h, w], shifted).unwrap());
        for y in 3..h - 2 {
            for x in 4..w - 2 {
                assert_eq!(b[y * w + x], a[(y - 1) * w + x - 2]);
            }
        }
    }

    fn block(g: &mut Graph, c: usize, rng: Rng, scale: f64) -> BlockConvs {
        let mut t = |label: &str, shape: &[usize]| g.constant(Tensor::randn(shape, rng.fork(label)).map(|v| v * scale));
        BlockConvs {
            w1: t("w1", &[c, c, 3, 3]),
            b1: t("b1", &[c]),
            w2: t("w2", &[c, c, 3, 3]),
            b2: t("b2", &[c]),
            slope: 0.2,
        }
    }

    #[test]
    fn zero_blocks_are_identity() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[1, 8, 4, 4], Rng::new(40)));
        let convs = block(&mut g, 8, Rng::new(41), 0.0);
        let ga = ga_weights(&mut g, 8, 0.0, Rng::new(42));
        let y = garb_forward(&mut g, x, &convs, &ga).unwrap();
        assert_eq!(g.value(y), g.value(x));
        let la = la_weights(&mut g, 8, 7, Rng::new(43));
        let y = larb_forward(&mut g, x, &convs, &la).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn garb_and_larb_gradcheck() {
        let x = Tensor::randn(&[1, 8, 4, 4], Rng::new(50));
        let r = grad_check(
            |g, x| {
                let convs = block(g, 8, Rng::new(51), 0.2);
                let ga = ga_weights(g, 8, 0.8, Rng::new(52));
                let y = garb_forward(g, x, &convs, &ga)?;
                let y = g.square(y)?;
                g.mean(y)
            },
            &x,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
        let r = grad_check(
            |g, x| {
                let convs = block(g, 8, Rng::new(53), 0.2);
                let la = la_weights(g, 8, 3, Rng::new(54));
                let y = larb_forward(g, x, &convs, &la)?;
                let y = g.square(y)?;
                g.mean(y)
            },
            &x,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }
}
