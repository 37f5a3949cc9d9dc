//! The styleVAE (two encoders and a style-modulated generator), the
//! attention SR network, and the stage-1 objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::losses::{self, FeatureExtractor};
use crate::mine::{self, Critic};
use crate::nn::{init_uniform, Bound, Network, NetworkSpec, ParamId, ParamStore};
use crate::rng::Rng;
use crate::style::{self, AdaInParams, StyleCode};
use crate::tensor::Tensor;

/// Widths and depths of every network. [`ModelConfig::published`] gives the
/// published sizes; the default is a narrower desk-scale variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub enc_width: usize,
    pub enc_blocks: usize,
    /// Channels of the encoders' last conv (the content code width).
    pub code_channels: usize,
    pub gen_width: usize,
    /// Residual blocks in each of the four AdaIN groups.
    pub gen_blocks: usize,
    pub sr_width: usize,
    pub sr_garbs: usize,
    pub sr_larbs: usize,
    pub critic_fc: usize,
}

impl ModelConfig {
    pub fn published() -> Self {
        ModelConfig {
            enc_width: 64,
            enc_blocks: 8,
            code_channels: 256,
            gen_width: 64,
            gen_blocks: 2,
            sr_width: 64,
            sr_garbs: 8,
            sr_larbs: 8,
            critic_fc: 1024,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_width: 16,
            enc_blocks: 2,
            code_channels: 64,
            gen_width: 32,
            gen_blocks: 1,
            sr_width: 24,
            sr_garbs: 2,
            sr_larbs: 2,
            critic_fc: 1024,
        }
    }
}

pub const ADAIN_GROUPS: usize = 4;
/// Total downsampling of the HR encoder.
pub const CONTENT_STRIDE: usize = 16;

fn parse(text: String) -> NetworkSpec {
    text.parse().expect("generated spec text is well formed")
}

fn log2_exact(v: usize, what: &str) -> Result<usize> {
    if v == 0 || !v.is_power_of_two() {
        return Err(Error::Config(format!("{what} {v} is not a power of two")));
    }
    Ok(v.trailing_zeros() as usize)
}

fn encoder_spec(m: &ModelConfig, downsamples: usize) -> NetworkSpec {
    let w = m.enc_width;
    parse(format!(
        "conv[{w},3,1,1]\n\
         res{{conv[{w},3,1,1]; bn; lrelu[0.2]; conv[{w},3,1,1]; bn}}*{}\n\
         rep{{conv[{w},4,2,1]; bn; lrelu[0.2]}}*{downsamples}\n\
         conv[{},3,1,1]",
        m.enc_blocks, m.code_channels
    ))
}

/// Style encoder body: 4× downsampling.
pub fn e_lr_spec(m: &ModelConfig) -> NetworkSpec {
    encoder_spec(m, 2)
}

/// Content encoder: 16× downsampling.
pub fn e_hr_spec(m: &ModelConfig) -> NetworkSpec {
    encoder_spec(m, 4)
}

fn upsample(width: usize, stages: usize) -> String {
    if stages == 0 {
        return String::new();
    }
    format!("rep{{conv[{},3,1,1]; pixel_shuffle[2]}}*{stages}\n", 4 * width)
}

/// Generator from a content code at HR/16 to an LR image at HR/scale.
pub fn generator_spec(m: &ModelConfig, scale_factor: usize) -> Result<NetworkSpec> {
    let s = log2_exact(scale_factor, "scale factor")?;
    if s > 4 {
        return Err(Error::Config(format!("scale factor {scale_factor} exceeds the content stride")));
    }
    let w = m.gen_width;
    Ok(parse(format!(
        "conv[{w},3,1,1]\n\
         rep{{res{{conv[{w},3,1,1]; bn; lrelu[0.2]; conv[{w},3,1,1]; bn}}*{}; adain}}*{ADAIN_GROUPS}\n\
         conv[{w},3,1,1]\n\
         {}conv[3,3,1,1]",
        m.gen_blocks,
        upsample(w, 4 - s)
    )))
}

/// SR network; `attention = false` drops the GA and LA stages from every
/// block, leaving plain residual blocks.
pub fn sr_spec(m: &ModelConfig, scale_factor: usize, la_window: usize, attention: bool) -> Result<NetworkSpec> {
    if ![2, 4, 8].contains(&scale_factor) {
        return Err(Error::Config(format!("SR scale factor must be 2, 4 or 8, got {scale_factor}")));
    }
    let w = m.sr_width;
    let (ga, la) = if attention {
        ("; ga".to_string(), format!("; la[{la_window}]"))
    } else {
        (String::new(), String::new())
    };
    let block = |tail: &str, n: usize| {
        if n == 0 {
            String::new()
        } else {
            format!("res{{conv[{w},3,1,1]; lrelu[0.2]; conv[{w},3,1,1]{tail}}}*{n}\n")
        }
    };
    Ok(parse(format!(
        "conv[{w},3,1,1]\n{}{}conv[{w},3,1,1]\n{}conv[3,3,1,1]",
        block(&ga, m.sr_garbs),
        block(&la, m.sr_larbs),
        upsample(w, log2_exact(scale_factor, "scale factor")?)
    )))
}

fn head_spec(d_style: usize) -> NetworkSpec {
    parse(format!("gpool\nfc[{d_style}]"))
}

/// Everything that fixes the styleVAE's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleVaeArch {
    pub model: ModelConfig,
    pub scale_factor: usize,
    pub d_style: usize,
}

/// `E_LR` with its pooled latent heads, `E_HR`, the generator and one FC
/// style head per AdaIN site. All parameters share one store.
#[derive(Clone, Debug)]
pub struct StyleVae {
    pub arch: StyleVaeArch,
    pub store: ParamStore,
    pub e_lr: Network,
    pub mu_head: Network,
    pub log_var_head: Network,
    pub e_hr: Network,
    pub generator: Network,
    pub style_heads: Vec<(ParamId, ParamId)>,
}

impl StyleVae {
    pub fn build(arch: &StyleVaeArch, rng: Rng) -> Result<Self> {
        let m = &arch.model;
        let mut store = ParamStore::new();
        let e_lr = Network::build(&e_lr_spec(m), 3, &mut store, "e_lr", rng.fork("e_lr"))?;
        let mu_head = Network::build(&head_spec(arch.d_style), m.code_channels, &mut store, "e_lr_mu", rng.fork("e_lr_mu"))?;
        let log_var_head = Network::build(
            &head_spec(arch.d_style),
            m.code_channels,
            &mut store,
            "e_lr_log_var",
            rng.fork("e_lr_log_var"),
        )?;
        let e_hr = Network::build(&e_hr_spec(m), 3, &mut store, "e_hr", rng.fork("e_hr"))?;
        let generator = Network::build(
            &generator_spec(m, arch.scale_factor)?,
            m.code_channels,
            &mut store,
            "g",
            rng.fork("g"),
        )?;
        let sites = generator.adain_sites();
        let style_heads = (0..sites)
            .map(|i| {
                let name = format!("style_head.{i}");
                let w = store.add_param(
                    format!("{name}.w"),
                    init_uniform(&[arch.d_style, 2 * m.gen_width], arch.d_style, rng.fork(&format!("{name}.w"))),
                )?;
                let b = store.add_param(
                    format!("{name}.b"),
                    init_uniform(&[2 * m.gen_width], arch.d_style, rng.fork(&format!("{name}.b"))),
                )?;
                Ok((w, b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StyleVae {
            arch: arch.clone(),
            store,
            e_lr,
            mu_head,
            log_var_head,
            e_hr,
            generator,
            style_heads,
        })
    }

    /// Named canonical spec text of every sub-network.
    pub fn specs(&self) -> Vec<(String, String)> {
        [
            ("e_lr", &self.e_lr),
            ("e_lr_mu", &self.mu_head),
            ("e_lr_log_var", &self.log_var_head),
            ("e_hr", &self.e_hr),
            ("g", &self.generator),
        ]
        .iter()
        .map(|(n, net)| (n.to_string(), net.spec().to_string()))
        .collect()
    }

    /// `(mu, log_var)` of the style posterior, each `[N, d_style]`.
    pub fn encode_style(&self, g: &mut Graph, bound: &mut Bound, x_lr: Var) -> Result<(Var, Var)> {
        let s = g.shape(x_lr).to_vec();
        if s.len() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::shape("e_lr", format!("input {s:?} needs spatial sizes divisible by 4")));
        }
        let f = self.e_lr.forward(g, bound, x_lr, &[])?;
        let mu = self.mu_head.forward(g, bound, f, &[])?;
        let lv = self.log_var_head.forward(g, bound, f, &[])?;
        Ok((mu, lv))
    }

    pub fn encode_content(&self, g: &mut Graph, bound: &mut Bound, x_hr: Var) -> Result<Var> {
        let s = g.shape(x_hr).to_vec();
        if s.len() != 4 || s[2] % CONTENT_STRIDE != 0 || s[3] % CONTENT_STRIDE != 0 {
            return Err(Error::shape("e_hr", format!("input {s:?} needs spatial sizes divisible by 16")));
        }
        self.e_hr.forward(g, bound, x_hr, &[])
    }

    pub fn style_params(&self, g: &mut Graph, bound: &Bound, z: Var) -> Result<Vec<AdaInParams>> {
        self.style_heads
            .iter()
            .map(|&(w, b)| style::style_params_from_latent(g, z, bound.var(w), bound.var(b)))
            .collect()
    }

    pub fn generate(&self, g: &mut Graph, bound: &mut Bound, content: Var, z: Var) -> Result<Var> {
        let styles = self.style_params(g, bound, z)?;
        self.generator.forward(g, bound, content, &styles)
    }
}

/// Loss weights of the stage-1 objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub beta: f64,
    /// 1-based feature stage for the content term.
    pub content_stage: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3: 0.1,
            alpha: 1.0,
            beta: 0.1,
            content_stage: 3,
        }
    }
}

/// The stage-1 objective and its parts, all scalars on the same graph.
#[derive(Clone, Copy, Debug)]
pub struct StyleVaeLoss {
    pub total: Var,
    pub kl: Var,
    /// `α·content + β·style`.
    pub style: Var,
    /// `−ν`, the term whose minimization raises the MI bound.
    pub mi: Var,
    pub content: Var,
    pub style_gram: Var,
    pub generated: Var,
    pub code: StyleCode,
}

/// `λ1·kl + λ2·style + λ3·mi`.
pub fn combine_stylevae_loss(g: &mut Graph, kl: Var, style: Var, mi: Var, w: &LossWeights) -> Result<Var> {
    let a = g.scale(kl, w.lambda1)?;
    let b = g.scale(style, w.lambda2)?;
    let c = g.scale(mi, w.lambda3)?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

/// Inputs of one stage-1 evaluation.
pub struct StyleVaeBatch<'a> {
    /// Real LR images `[N, 3, h, w]`.
    pub x_lr: &'a Tensor,
    /// Unpaired HR images `[N, 3, s·h, s·w]`.
    pub x_hr: &'a Tensor,
    /// Draws the reparameterization noise.
    pub noise: Rng,
    /// Derangement of `0..N` pairing marginal samples for the MI term.
    pub perm: &'a [usize],
}

/// Forward pass of the stage-1 objective. `critic_bound` should be frozen.
pub fn stylevae_loss(
    g: &mut Graph,
    vae: &StyleVae,
    bound: &mut Bound,
    critic: &dyn Critic,
    critic_bound: &mut Bound,
    extractor: &FeatureExtractor,
    batch: StyleVaeBatch<'_>,
    w: &LossWeights,
) -> Result<StyleVaeLoss> {
    if batch.x_lr.shape()[0] != batch.x_hr.shape()[0] {
        return Err(Error::shape("stylevae_loss", "LR and HR batches differ in size"));
    }
    let x_lr = g.constant(batch.x_lr.clone());
    let x_hr = g.constant(batch.x_hr.clone());
    let (mu, lv) = vae.encode_style(g, bound, x_lr)?;
    let code = style::reparameterize(g, mu, lv, batch.noise)?;
    let content_code = vae.encode_content(g, bound, x_hr)?;
    let y = vae.generate(g, bound, content_code, code.z)?;
    if g.shape(y) != g.shape(x_lr) {
        return Err(Error::shape(
            "stylevae_loss",
            format!("generated {:?} vs real LR {:?}", g.shape(y), g.shape(x_lr)),
        ));
    }
    let kl = style::kl_divergence(g, mu, lv)?;
    let hr_small = losses::area_resize(g, x_hr, vae.arch.scale_factor)?;
    let content = losses::content_loss(g, y, hr_small, extractor, w.content_stage)?;
    let style_gram = losses::style_loss(g, y, x_lr, extractor, &[1.0; 4])?;
    let style = losses::combined_style_objective(g, content, style_gram, w.alpha, w.beta)?;
    let mi = mine::mi_maximization_loss(g, critic, critic_bound, x_lr, y, batch.perm)?;
    let total = combine_stylevae_loss(g, kl, style, mi, w)?;
    Ok(StyleVaeLoss {
        total,
        kl,
        style,
        mi,
        content,
        style_gram,
        generated: y,
        code,
    })
}

/// Architecture of an SR network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrArch {
    pub model: ModelConfig,
    pub scale_factor: usize,
    pub la_window: usize,
    pub attention: bool,
}

#[derive(Clone, Debug)]
pub struct SrNetwork {
    pub arch: SrArch,
    pub store: ParamStore,
    pub net: Network,
}

impl SrNetwork {
    pub fn build(arch: &SrArch, rng: Rng) -> Result<Self> {
        let spec = sr_spec(&arch.model, arch.scale_factor, arch.la_window, arch.attention)?;
        let mut store = ParamStore::new();
        let net = Network::build(&spec, 3, &mut store, "sr", rng.fork("sr"))?;
        Ok(SrNetwork {
            arch: arch.clone(),
            store,
            net,
        })
    }

    pub fn forward(&self, g: &mut Graph, bound: &mut Bound, x: Var) -> Result<Var> {
        self.net.forward(g, bound, x, &[])
    }

    /// Inference on a batch, clamped to `[0, 1]`.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut bound = self.store.bind(&mut g, false, false);
        let xv = g.constant(x.clone());
        let y = self.forward(&mut g, &mut bound, xv)?;
        Ok(g.value(y).map(|v| v.clamp(0.0, 1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn tiny() -> ModelConfig {
        ModelConfig {
            enc_width: 8,
            enc_blocks: 1,
            code_channels: 16,
            gen_width: 8,
            gen_blocks: 1,
            sr_width: 8,
            sr_garbs: 1,
            sr_larbs: 1,
            critic_fc: 16,
        }
    }

    fn run(net: &Network, store: &ParamStore, shape: &[usize]) -> Vec<usize> {
        let mut g = Graph::new();
        let mut b = store.bind(&mut g, false, false);
        let x = g.constant(Tensor::randn(shape, Rng::new(1)));
        let y = net.forward(&mut g, &mut b, x, &[]).unwrap();
        g.shape(y).to_vec()
    }

    #[test]
    fn encoder_shapes_at_full_width() {
        let m = ModelConfig::published();
        let mut store = ParamStore::new();
        let e_lr = Network::build(&e_lr_spec(&m), 3, &mut store, "e_lr", Rng::new(2)).unwrap();
        assert_eq!(run(&e_lr, &store, &[1, 3, 16, 16]), vec![1, 256, 4, 4]);
        let mut store = ParamStore::new();
        let e_hr = Network::build(&e_hr_spec(&m), 3, &mut store, "e_hr", Rng::new(3)).unwrap();
        assert_eq!(run(&e_hr, &store, &[1, 3, 64, 64]), vec![1, 256, 4, 4]);
    }

    #[test]
    fn generator_and_sr_shapes() {
        let m = ModelConfig::published();
        let arch = StyleVaeArch {
            model: m.clone(),
            scale_factor: 4,
            d_style: 128,
        };
        let vae = StyleVae::build(&arch, Rng::new(4)).unwrap();
        assert_eq!(vae.style_heads.len(), 4);
        let mut g = Graph::new();
        let mut b = vae.store.bind(&mut g, false, false);
        let content = g.constant(Tensor::randn(&[1, 256, 4, 4], Rng::new(5)));
        let z = g.constant(Tensor::randn(&[1, 128], Rng::new(6)));
        let y = vae.generate(&mut g, &mut b, content, z).unwrap();
        assert_eq!(g.shape(y), &[1, 3, 16, 16]);

        let sr = SrNetwork::build(
            &SrArch {
                model: tiny(),
                scale_factor: 4,
                la_window: 7,
                attention: true,
            },
            Rng::new(7),
        )
        .unwrap();
        assert_eq!(sr.infer(&Tensor::randn(&[1, 3, 16, 16], Rng::new(8))).unwrap().shape(), &[1, 3, 64, 64]);
        let spec8 = sr_spec(&tiny(), 8, 7, true).unwrap().to_string();
        assert!(spec8.contains("rep{conv[32,3,1,1]; pixel_shuffle[2]}*3"));
        assert!(matches!(sr_spec(&tiny(), 3, 7, true), Err(Error::Config(_))));
    }

    #[test]
    fn parameter_count_is_a_function_of_the_spec() {
        let arch = StyleVaeArch {
            model: tiny(),
            scale_factor: 4,
            d_style: 8,
        };
        let a = StyleVae::build(&arch, Rng::new(9)).unwrap();
        let b = StyleVae::build(&arch, Rng::new(10)).unwrap();
        assert_eq!(a.store.num_scalars(), b.store.num_scalars());
        assert_eq!(a.store.len(), b.store.len());
    }

    #[test]
    fn zero_heads_make_output_independent_of_z() {
        let arch = StyleVaeArch {
            model: tiny(),
            scale_factor: 4,
            d_style: 8,
        };
        let mut vae = StyleVae::build(&arch, Rng::new(11)).unwrap();
        let gen = |vae: &StyleVae, seed| {
            let mut g = Graph::new();
            let mut b = vae.store.bind(&mut g, false, false);
            let c = g.constant(Tensor::randn(&[2, 16, 4, 4], Rng::new(12)));
            let z = g.constant(Tensor::randn(&[2, 8], Rng::new(seed)));
            let y = vae.generate(&mut g, &mut b, c, z).unwrap();
            g.value(y).clone()
        };
        let (a, b) = (gen(&vae, 13), gen(&vae, 14));
        assert!(a.max_abs_diff(&b) > 0.0);
        for &(w, bias) in &vae.style_heads.clone() {
            *vae.store.param_mut(w) = Tensor::zeros(vae.store.param(w).shape());
            *vae.store.param_mut(bias) = Tensor::zeros(vae.store.param(bias).shape());
        }
        assert_eq!(gen(&vae, 13), gen(&vae, 14));
    }

    #[test]
    fn combined_loss_arithmetic() {
        let mut g = Graph::new();
        let kl = g.constant(Tensor::scalar(1.0));
        let st = g.constant(Tensor::scalar(2.0));
        let mi = g.constant(Tensor::scalar(-0.3));
        let t = combine_stylevae_loss(&mut g, kl, st, mi, &LossWeights::default()).unwrap();
        assert!((g.value(t).item() - 1.98).abs() < 1e-12);
    }

    #[test]
    fn miniature_encoder_gradcheck() {
        let mut m = tiny();
        m.enc_width = 8;
        let mut store = ParamStore::new();
        let net = Network::build(&e_lr_spec(&m), 3, &mut store, "e_lr", Rng::new(15)).unwrap();
        let x = Tensor::randn(&[2, 3, 4, 4], Rng::new(16));
        let r = grad_check(
            |g, x| {
                let mut b = store.bind(g, false, true);
                let y = net.forward(g, &mut b, x, &[])?;
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
