//! Perceptual content and style losses over a fixed random feature
//! extractor, and the L1 reconstruction loss.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::LRELU_SLOPE;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const EXTRACTOR_CHANNELS: [usize; 4] = [16, 32, 64, 128];

/// Four frozen stages of `conv3×3 → LeakyReLU(0.2)`, separated by 2×2
/// average pooling. Weights are He-normal draws from the seed and never
/// change.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    stages: Vec<(Tensor, Tensor)>,
}

impl FeatureExtractor {
    pub fn new(in_channels: usize, rng: Rng) -> Self {
        let mut cin = in_channels;
        let stages = EXTRACTOR_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let w = Tensor::randn(&[cout, cin, 3, 3], rng.fork_indexed("stage", i as u64)).map(|v| v * std);
                cin = cout;
                (w, Tensor::zeros(&[cout]))
            })
            .collect();
        FeatureExtractor { stages }
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Activations of the first `upto` stages, before pooling.
    pub fn features(&self, g: &mut Graph, x: Var, upto: usize) -> Result<Vec<Var>> {
        if upto == 0 || upto > self.stages.len() {
            return Err(Error::Config(format!("feature stage {upto} outside 1..={}", self.stages.len())));
        }
        let mut out = Vec::with_capacity(upto);
        let mut h = x;
        for (i, (w, b)) in self.stages[..upto].iter().enumerate() {
            if i > 0 {
                h = g.avg_pool2d(h, 2)?;
            }
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            h = g.conv2d(h, wv, Some(bv), 1, 1)?;
            h = g.leaky_relu(h, LRELU_SLOPE)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// `F·Fᵀ / (C·H·W)` per sample, with `F` the `C×HW` unfolding.
pub fn gram_matrix(g: &mut Graph, f: Var) -> Result<Var> {
    let s = g.shape(f).to_vec();
    let [n, c, h, w] = s[..] else {
        return Err(Error::shape("gram_matrix", format!("expected rank 4, got {s:?}")));
    };
    let flat = g.reshape(f, &[n, c, h * w])?;
    let gram = g.bmm(flat, flat, false, true)?;
    g.scale(gram, 1.0 / (c * h * w) as f64)
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

fn mean_sq_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d2 = g.square(d)?;
    g.mean(d2)
}

/// Mean squared distance between stage-`stage` (1-based) features.
pub fn content_loss(g: &mut Graph, y: Var, target: Var, ext: &FeatureExtractor, stage: usize) -> Result<Var> {
    same_shape(g, "content_loss", y, target)?;
    let fy = ext.features(g, y, stage)?[stage - 1];
    let ft = ext.features(g, target, stage)?[stage - 1];
    mean_sq_diff(g, fy, ft)
}

/// `Σ_i w_i · mean((G(φ_i(y)) − G(φ_i(x)))²)` over the stages with a weight.
pub fn style_loss(g: &mut Graph, y: Var, target: Var, ext: &FeatureExtractor, weights: &[f64]) -> Result<Var> {
    same_shape(g, "style_loss", y, target)?;
    let fy = ext.features(g, y, weights.len())?;
    let ft = ext.features(g, target, weights.len())?;
    let mut total: Option<Var> = None;
    for ((&a, &b), &w) in fy.iter().zip(&ft).zip(weights) {
        let ga = gram_matrix(g, a)?;
        let gb = gram_matrix(g, b)?;
        let d = mean_sq_diff(g, ga, gb)?;
        let d = g.scale(d, w)?;
        total = Some(match total {
            Some(t) => g.add(t, d)?,
            None => d,
        });
    }
    total.ok_or_else(|| Error::Config("style loss needs at least one stage weight".into()))
}

/// `α·content + β·style`.
pub fn combined_style_objective(g: &mut Graph, content: Var, style: Var, alpha: f64, beta: f64) -> Result<Var> {
    let c = g.scale(content, alpha)?;
    let s = g.scale(style, beta)?;
    g.add(c, s)
}

/// Mean absolute difference. The subgradient at a zero difference is 0.
pub fn l1_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, "l1_loss", pred, target)?;
    let d = g.sub(pred, target)?;
    let a = g.abs(d)?;
    g.mean(a)
}

/// Area-average downsampling by an integer factor.
pub fn area_resize(g: &mut Graph, x: Var, factor: usize) -> Result<Var> {
    if factor == 1 {
        return Ok(x);
    }
    g.avg_pool2d(x, factor)
}
