//! Builds a [`NetworkSpec`] into registered parameters and runs it.

use crate::attention::{self, Conv1x1, GlobalAttentionWeights, LocalAttentionWeights};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::style::{self, AdaInParams};
use crate::tensor::Tensor;

use super::params::{init_uniform, BufferId, Bound, ParamId, ParamStore};
use super::spec::{LayerSpec, NetworkSpec};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv { w: ParamId, b: ParamId, stride: usize, pad: usize },
    Deconv { w: ParamId, b: ParamId, stride: usize, pad: usize },
    BatchNorm { gamma: ParamId, beta: ParamId, mean: BufferId, var: BufferId },
    LeakyRelu(f64),
    Fc { w: ParamId, b: ParamId },
    PixelShuffle(usize),
    AdaIn { site: usize },
    GlobalAttention { f: (ParamId, ParamId), g: (ParamId, ParamId), h: (ParamId, ParamId), v: (ParamId, ParamId), lambda: ParamId },
    LocalAttention { q: (ParamId, ParamId), k: (ParamId, ParamId), window: usize },
    GlobalPool,
    Residual(Vec<Layer>),
}

/// Feature layout flowing between layers during the build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feat {
    Map(usize),
    Flat(usize),
}

impl Feat {
    fn map(self, what: &str) -> Result<usize> {
        match self {
            Feat::Map(c) => Ok(c),
            Feat::Flat(d) => Err(Error::shape("network", format!("{what} needs a feature map, got a {d}-vector"))),
        }
    }
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: Rng,
    sites: usize,
}

impl Builder<'_> {
    fn param(&mut self, name: String, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let t = init_uniform(shape, fan_in, self.rng.fork(&name));
        self.store.add_param(name, t)
    }

    fn conv(&mut self, path: &str, out: usize, inp: usize, k: usize) -> Result<Conv> {
        let fan_in = inp * k * k;
        Ok(Conv {
            w: self.param(format!("{path}.w"), &[out, inp, k, k], fan_in)?,
            b: self.param(format!("{path}.b"), &[out], fan_in)?,
        })
    }

    fn pair(&mut self, path: &str, out: usize, inp: usize) -> Result<(ParamId, ParamId)> {
        let c = self.conv(path, out, inp, 1)?;
        Ok((c.w, c.b))
    }

    fn layers(&mut self, specs: &[LayerSpec], path: &str, mut feat: Feat, out: &mut Vec<Layer>) -> Result<Feat> {
        for (i, spec) in specs.iter().enumerate() {
            let p = format!("{path}.{i}");
            feat = self.layer(spec, &p, feat, out)?;
        }
        Ok(feat)
    }

    fn layer(&mut self, spec: &LayerSpec, path: &str, feat: Feat, out: &mut Vec<Layer>) -> Result<Feat> {
        Ok(match *spec {
            LayerSpec::Conv { filters, kernel, stride, pad } => {
                let c = self.conv(path, filters, feat.map("conv")?, kernel)?;
                out.push(Layer::Conv { w: c.w, b: c.b, stride, pad });
                Feat::Map(filters)
            }
            LayerSpec::Deconv { filters, kernel, stride, pad } => {
                let inp = feat.map("deconv")?;
                let fan_in = inp * kernel * kernel;
                let w = self.param(format!("{path}.w"), &[inp, filters, kernel, kernel], fan_in)?;
                let b = self.param(format!("{path}.b"), &[filters], fan_in)?;
                out.push(Layer::Deconv { w, b, stride, pad });
                Feat::Map(filters)
            }
            LayerSpec::BatchNorm => {
                let c = feat.map("bn")?;
                let gamma = self.store.add_param(format!("{path}.gamma"), Tensor::ones(&[c]))?;
                let beta = self.store.add_param(format!("{path}.beta"), Tensor::zeros(&[c]))?;
                let mean = self.store.add_buffer(format!("{path}.running_mean"), Tensor::zeros(&[c]))?;
                let var = self.store.add_buffer(format!("{path}.running_var"), Tensor::ones(&[c]))?;
                out.push(Layer::BatchNorm { gamma, beta, mean, var });
                feat
            }
            LayerSpec::LeakyRelu(s) => {
                out.push(Layer::LeakyRelu(s));
                feat
            }
            LayerSpec::Fc(m) => {
                let d = match feat {
                    Feat::Flat(d) => d,
                    Feat::Map(_) => return Err(Error::shape("network", format!("fc at {path} needs a pooled vector"))),
                };
                let w = self.param(format!("{path}.w"), &[d, m], d)?;
                let b = self.param(format!("{path}.b"), &[m], d)?;
                out.push(Layer::Fc { w, b });
                Feat::Flat(m)
            }
            LayerSpec::PixelShuffle(r) => {
                let c = feat.map("pixel_shuffle")?;
                if c % (r * r) != 0 {
                    return Err(Error::shape("network", format!("pixel_shuffle[{r}] on {c} channels at {path}")));
                }
                out.push(Layer::PixelShuffle(r));
                Feat::Map(c / (r * r))
            }
            LayerSpec::AdaIn => {
                feat.map("adain")?;
                out.push(Layer::AdaIn { site: self.sites });
                self.sites += 1;
                feat
            }
            LayerSpec::GlobalAttention => {
                let c = feat.map("ga")?;
                if c % 8 != 0 {
                    return Err(Error::shape("network", format!("ga at {path} needs channels divisible by 8, got {c}")));
                }
                let f = self.pair(&format!("{path}.f"), c / 8, c)?;
                let g = self.pair(&format!("{path}.g"), c / 8, c)?;
                let h = self.pair(&format!("{path}.h"), c / 2, c)?;
                let v = self.pair(&format!("{path}.v"), c, c / 2)?;
                let lambda = self.store.add_param(format!("{path}.lambda"), Tensor::zeros(&[1]))?;
                out.push(Layer::GlobalAttention { f, g, h, v, lambda });
                feat
            }
            LayerSpec::LocalAttention(window) => {
                let c = feat.map("la")?;
                let q = self.pair(&format!("{path}.q"), c, c)?;
                let k = self.pair(&format!("{path}.k"), c, c)?;
                out.push(Layer::LocalAttention { q, k, window });
                feat
            }
            LayerSpec::GlobalPool => {
                out.push(Layer::GlobalPool);
                Feat::Flat(feat.map("gpool")?)
            }
            LayerSpec::Residual { ref body, count } => {
                let mut f = feat;
                for r in 0..count {
                    let mut inner = Vec::new();
                    let after = self.layers(body, &format!("{path}.{r}"), f, &mut inner)?;
                    if after != f {
                        return Err(Error::shape("network", format!("residual body at {path} changes {f:?} to {after:?}")));
                    }
                    out.push(Layer::Residual(inner));
                    f = after;
                }
                f
            }
            LayerSpec::Repeat { ref body, count } => {
                let mut f = feat;
                for r in 0..count {
                    f = self.layers(body, &format!("{path}.{r}"), f, out)?;
                }
                f
            }
        })
    }
}

/// A built layer stack. Parameters live in the [`ParamStore`] it was built
/// into, named `<prefix>.<layer index>[.<repeat>.<index>...].<tensor>`.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
    in_channels: usize,
    out_width: usize,
    adain_sites: usize,
}

impl Network {
    /// Registers the parameters of `spec` under `prefix`. Each tensor's
    /// initial values come from `rng` forked by its full name.
    pub fn build(spec: &NetworkSpec, in_channels: usize, store: &mut ParamStore, prefix: &str, rng: Rng) -> Result<Network> {
        Self::build_from(spec, Feat::Map(in_channels), store, prefix, rng)
    }

    /// As [`Network::build`] for a stack whose input is `[N, in_width]`.
    pub fn build_vector(spec: &NetworkSpec, in_width: usize, store: &mut ParamStore, prefix: &str, rng: Rng) -> Result<Network> {
        Self::build_from(spec, Feat::Flat(in_width), store, prefix, rng)
    }

    fn build_from(spec: &NetworkSpec, input: Feat, store: &mut ParamStore, prefix: &str, rng: Rng) -> Result<Network> {
        let in_channels = match input {
            Feat::Map(c) | Feat::Flat(c) => c,
        };
        let mut b = Builder { store, rng, sites: 0 };
        let mut layers = Vec::new();
        let out = b.layers(&spec.layers, prefix, input, &mut layers)?;
        let out_width = match out {
            Feat::Map(c) | Feat::Flat(c) => c,
        };
        Ok(Network {
            spec: spec.clone(),
            layers,
            in_channels,
            out_width,
            adain_sites: b.sites,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Input channels (feature map) or width (vector).
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Output channels (feature map) or width (vector).
    pub fn out_width(&self) -> usize {
        self.out_width
    }

    pub fn adain_sites(&self) -> usize {
        self.adain_sites
    }

    /// Runs the stack. `styles[i]` modulates the i-th AdaIN site.
    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: Var, styles: &[AdaInParams]) -> Result<Var> {
        if styles.len() != self.adain_sites {
            return Err(Error::shape(
                "network",
                format!("{} style inputs for {} AdaIN sites", styles.len(), self.adain_sites),
            ));
        }
        run(&self.layers, g, bound, x, styles)
    }
}

fn conv1x1(bound: &Bound, (w, b): (ParamId, ParamId)) -> Conv1x1 {
    Conv1x1 {
        w: bound.var(w),
        b: bound.var(b),
    }
}

fn run(layers: &[Layer], g: &mut Graph, bound: &mut Bound, mut x: Var, styles: &[AdaInParams]) -> Result<Var> {
    for layer in layers {
        x = match layer {
            Layer::Conv { w, b, stride, pad } => g.conv2d(x, bound.var(*w), Some(bound.var(*b)), *stride, *pad)?,
            Layer::Deconv { w, b, stride, pad } => {
                g.conv_transpose2d(x, bound.var(*w), Some(bound.var(*b)), *stride, *pad)?
            }
            Layer::BatchNorm { gamma, beta, mean, var } => {
                let (gm, bt) = (bound.var(*gamma), bound.var(*beta));
                if bound.training() {
                    let (y, stats) = g.batch_norm_train(x, gm, bt, BN_EPS)?;
                    let unbias = stats.count as f64 / (stats.count - 1) as f64;
                    let m = BN_MOMENTUM;
                    let new_mean: Vec<f64> = bound
                        .buffer(*mean)
                        .data()
                        .iter()
                        .zip(&stats.mean)
                        .map(|(r, s)| (1.0 - m) * r + m * s)
                        .collect();
                    let new_var: Vec<f64> = bound
                        .buffer(*var)
                        .data()
                        .iter()
                        .zip(&stats.var)
                        .map(|(r, s)| (1.0 - m) * r + m * s * unbias)
                        .collect();
                    bound.set_buffer(*mean, Tensor::from_vec(new_mean));
                    bound.set_buffer(*var, Tensor::from_vec(new_var));
                    y
                } else {
                    let rm = bound.buffer(*mean).data().to_vec();
                    let rv = bound.buffer(*var).data().to_vec();
                    g.batch_norm_eval(x, gm, bt, &rm, &rv, BN_EPS)?
                }
            }
            Layer::LeakyRelu(s) => g.leaky_relu(x, *s)?,
            Layer::Fc { w, b } => g.linear(x, bound.var(*w), Some(bound.var(*b)))?,
            Layer::PixelShuffle(r) => g.pixel_shuffle(x, *r)?,
            Layer::AdaIn { site } => style::adain(g, x, styles[*site])?,
            Layer::GlobalAttention { f, g: gp, h, v, lambda } => {
                let w = GlobalAttentionWeights {
                    f: conv1x1(bound, *f),
                    g: conv1x1(bound, *gp),
                    h: conv1x1(bound, *h),
                    v: conv1x1(bound, *v),
                    lambda: bound.var(*lambda),
                };
                attention::global_attention(g, x, &w)?
            }
            Layer::LocalAttention { q, k, window } => {
                let w = LocalAttentionWeights {
                    q: conv1x1(bound, *q),
                    k: conv1x1(bound, *k),
                    window: *window,
                };
                attention::local_attention(g, x, &w)?
            }
            Layer::GlobalPool => {
                let s = g.shape(x).to_vec();
                let [n, c, h, w] = s[..] else {
                    return Err(Error::shape("gpool", format!("expected rank 4, got {s:?}")));
                };
                let flat = g.reshape(x, &[n, c, h * w])?;
                g.mean_axis(flat, 2)?
            }
            Layer::Residual(body) => {
                let y = run(body, g, bound, x, styles)?;
                g.add(x, y)?
            }
        };
    }
    Ok(x)
}
