//! AdaIN modulation, the reparameterization trick and the KL regularizer.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Added to the spatial variance before the square root. Kept tiny so
/// re-normalized statistics are exact for any channel whose variance is
/// not itself negligible.
pub const INSTANCE_EPS: f64 = 1e-12;

/// Sampled latent together with the distribution it came from.
#[derive(Clone, Copy, Debug)]
pub struct StyleCode {
    pub mu: Var,
    pub log_var: Var,
    pub z: Var,
}

/// Per-sample, per-channel scale and bias for [`adain`], both `[N, C]`.
#[derive(Clone, Copy, Debug)]
pub struct AdaInParams {
    pub scale: Var,
    pub bias: Var,
}

/// Spatial mean and population standard deviation of each `(n, c)` plane,
/// both shaped `[N, C]`.
pub fn instance_stats(g: &mut Graph, x: Var) -> Result<(Var, Var)> {
    instance_stats_eps(g, x, INSTANCE_EPS)
}

pub fn instance_stats_eps(g: &mut Graph, x: Var, eps: f64) -> Result<(Var, Var)> {
    let shape = g.shape(x).to_vec();
    let [n, c, h, w] = shape[..] else {
        return Err(Error::shape("instance_stats", format!("expected rank 4, got {shape:?}")));
    };
    let flat = g.reshape(x, &[n, c, h * w])?;
    let mean = g.mean_axis(flat, 2)?;
    let mean_b = g.reshape(mean, &[n, c, 1])?;
    let mean_b = g.broadcast_to(mean_b, &[n, c, h * w])?;
    let centered = g.sub(flat, mean_b)?;
    let sq = g.square(centered)?;
    let var = g.mean_axis(sq, 2)?;
    let var = g.add_scalar(var, eps)?;
    let std = g.sqrt(var)?;
    Ok((mean, std))
}

fn expand(g: &mut Graph, v: Var, shape: &[usize]) -> Result<Var> {
    let r = g.reshape(v, &[shape[0], shape[1], 1, 1])?;
    g.broadcast_to(r, shape)
}

/// `scale · (x − μ(x)) / σ(x) + bias`, statistics taken per sample and channel.
pub fn adain(g: &mut Graph, x: Var, p: AdaInParams) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [n, c, _, _] = shape[..] else {
        return Err(Error::shape("adain", format!("expected rank 4, got {shape:?}")));
    };
    for v in [p.scale, p.bias] {
        if g.shape(v) != [n, c] {
            return Err(Error::shape(
                "adain",
                format!("style parameters {:?} for features {shape:?}", g.shape(v)),
            ));
        }
    }
    let (mean, std) = instance_stats(g, x)?;
    let mean = expand(g, mean, &shape)?;
    let std = expand(g, std, &shape)?;
    let centered = g.sub(x, mean)?;
    let normed = g.div(centered, std)?;
    let scale = expand(g, p.scale, &shape)?;
    let bias = expand(g, p.bias, &shape)?;
    let scaled = g.mul(normed, scale)?;
    g.add(scaled, bias)
}

/// Maps a style vector `z [N, D]` through an FC head `w [D, 2C]`, `b [2C]`.
/// The first C outputs shift a unit scale, the last C are the bias, so a
/// zeroed head gives identity modulation.
pub fn style_params_from_latent(g: &mut Graph, z: Var, w: Var, b: Var) -> Result<AdaInParams> {
    let out = g.linear(z, w, Some(b))?;
    let width = g.shape(out)[1];
    if width % 2 != 0 {
        return Err(Error::shape("style_params_from_latent", format!("head width {width} is odd")));
    }
    let c = width / 2;
    let raw_scale = g.narrow(out, 1, 0, c)?;
    let scale = g.add_scalar(raw_scale, 1.0)?;
    let bias = g.narrow(out, 1, c, c)?;
    Ok(AdaInParams { scale, bias })
}

/// `z = mu + exp(log_var / 2) · ε` with `ε ~ N(0, I)` drawn from `rng`.
/// `ε` enters as a constant.
pub fn reparameterize(g: &mut Graph, mu: Var, log_var: Var, rng: Rng) -> Result<StyleCode> {
    if g.shape(mu) != g.shape(log_var) {
        return Err(Error::shape(
            "reparameterize",
            format!("{:?} vs {:?}", g.shape(mu), g.shape(log_var)),
        ));
    }
    let eps = g.constant(Tensor::randn(&g.shape(mu).to_vec(), rng));
    let z = reparameterize_with(g, mu, log_var, eps)?;
    Ok(StyleCode { mu, log_var, z })
}

/// The reparameterization with an explicit noise tensor.
pub fn reparameterize_with(g: &mut Graph, mu: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half = g.scale(log_var, 0.5)?;
    let std = g.exp(half)?;
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// KL divergence of `N(mu, exp(log_var))` from `N(0, I)`, summed over the
/// latent axis and averaged over the batch:
/// `(1/2N) Σ (mu² + exp(lv) − 1 − lv)`. Written with `expm1` so each term
/// is non-negative in floating point and exactly zero at `(0, 0)`.
pub fn kl_divergence(g: &mut Graph, mu: Var, log_var: Var) -> Result<Var> {
    let shape = g.shape(mu).to_vec();
    if shape != g.shape(log_var) || shape.len() != 2 {
        return Err(Error::shape(
            "kl_divergence",
            format!("{shape:?} vs {:?}", g.shape(log_var)),
        ));
    }
    let mu2 = g.square(mu)?;
    let em1 = g.expm1(log_var)?;
    let gap = g.sub(em1, log_var)?;
    let terms = g.add(mu2, gap)?;
    let total = g.sum(terms)?;
    g.scale(total, 0.5 / shape[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn planes_stats(t: &Tensor) -> Vec<(f64, f64)> {
        let (n, c, h, w) = t.dims4().unwrap();
        let sp = h * w;
        (0..n * c)
            .map(|p| {
                let s = &t.data()[p * sp..(p + 1) * sp];
                let m = s.iter().sum::<f64>() / sp as f64;
                let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / sp as f64;
                (m, v.sqrt())
            })
            .collect()
    }

    fn constant_params(g: &mut Graph, n: usize, c: usize, s: f64, b: f64) -> AdaInParams {
        AdaInParams {
            scale: g.constant(Tensor::full(&[n, c], s)),
            bias: g.constant(Tensor::full(&[n, c], b)),
        }
    }

    #[test]
    fn stats_of_hand_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 2, 1, 2], vec![5.0, 5.0, 1.0, 3.0]).unwrap());
        let (m, s) = instance_stats(&mut g, x).unwrap();
        assert_eq!(g.value(m).data(), &[5.0, 2.0]);
        assert!(g.value(s).data()[0] < 1e-5);
        assert!((g.value(s).data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adain_matches_target_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::randn(&[2, 3, 5, 5], Rng::new(4)));
        let p = constant_params(&mut g, 2, 3, 2.0, 3.0);
        let y = adain(&mut g, x, p).unwrap();
        for (m, s) in planes_stats(g.value(y)) {
            assert!((m - 3.0).abs() < 1e-6);
            assert!((s - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn adain_identity_on_standardized_input() {
        let mut g = Graph::new();
        let raw = Tensor::randn(&[1, 2, 4, 4], Rng::new(5));
        let x0 = g.constant(raw);
        let p = constant_params(&mut g, 1, 2, 1.0, 0.0);
        let std = adain(&mut g, x0, p).unwrap();
        let again = adain(&mut g, std, p).unwrap();
        assert!(g.value(again).max_abs_diff(g.value(std)) < 1e-6);
    }

    #[test]
    fn adain_rejects_channel_mismatch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
        let p = constant_params(&mut g, 1, 4, 1.0, 0.0);
        assert!(matches!(adain(&mut g, x, p), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_head_is_identity_modulation() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::randn(&[3, 128], Rng::new(6)));
        let w = g.constant(Tensor::zeros(&[128, 128]));
        let b = g.constant(Tensor::zeros(&[128]));
        let p = style_params_from_latent(&mut g, z, w, b).unwrap();
        assert_eq!(g.shape(p.scale), &[3, 64]);
        assert_eq!(g.shape(p.bias), &[3, 64]);
        assert!(g.value(p.scale).data().iter().all(|&v| v == 1.0));
        assert!(g.value(p.bias).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn head_then_adain_gradcheck() {
        let x = Tensor::randn(&[2, 3, 3, 3], Rng::new(7));
        let w = Tensor::randn(&[4, 6], Rng::new(8)).map(|v| 0.3 * v);
        let z = Tensor::randn(&[2, 4], Rng::new(9));
        let r = grad_check(
            |g, zv| {
                let xv = g.constant(x.clone());
                let wv = g.constant(w.clone());
                let bv = g.constant(Tensor::zeros(&[6]));
                let p = style_params_from_latent(g, zv, wv, bv)?;
                let y = adain(g, xv, p)?;
                let y2 = g.square(y)?;
                g.mean(y2)
            },
            &z,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn stats_gradcheck() {
        let x = Tensor::randn(&[2, 2, 3, 3], Rng::new(10));
        let r = grad_check(
            |g, x| {
                let (m, s) = instance_stats(g, x)?;
                let a = g.sum(m)?;
                let b = g.sum(s)?;
                g.add(a, b)
            },
            &x,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn reparameterize_limits_and_determinism() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::randn(&[4, 8], Rng::new(11)));
        let lv = g.constant(Tensor::full(&[4, 8], -100.0));
        let c = reparameterize(&mut g, mu, lv, Rng::new(12)).unwrap();
        assert!(g.value(c.z).max_abs_diff(g.value(mu)) < 1e-15);
        let c2 = reparameterize(&mut g, mu, lv, Rng::new(12)).unwrap();
        assert_eq!(g.value(c.z), g.value(c2.z));
    }

    #[test]
    fn reparameterize_unit_moments() {
        let mut g = Graph::new();
        let mu = g.constant(Tensor::zeros(&[100_000, 1]));
        let lv = g.constant(Tensor::zeros(&[100_000, 1]));
        let c = reparameterize(&mut g, mu, lv, Rng::new(13)).unwrap();
        let d = g.value(c.z).data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let s = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!(m.abs() < 0.02);
        assert!((0.98..=1.02).contains(&s));
    }

    #[test]
    fn reparameterize_gradcheck_with_frozen_noise() {
        let eps = Tensor::randn(&[3, 4], Rng::new(14));
        let mu = Tensor::randn(&[3, 4], Rng::new(15));
        let lv = Tensor::randn(&[3, 4], Rng::new(16));
        let rm = grad_check(
            |g, m| {
                let l = g.constant(lv.clone());
                let e = g.constant(eps.clone());
                let z = reparameterize_with(g, m, l, e)?;
                let z2 = g.square(z)?;
                g.sum(z2)
            },
            &mu,
            1e-5,
            1e-4,
        );
        let rl = grad_check(
            |g, l| {
                let m = g.constant(mu.clone());
                let e = g.constant(eps.clone());
                let z = reparameterize_with(g, m, l, e)?;
                let z2 = g.square(z)?;
                g.sum(z2)
            },
            &lv,
            1e-5,
            1e-4,
        );
        assert!(rm.passed && rl.passed, "{rm:?} {rl:?}");
    }

    fn kl_value(mu: Tensor, lv: Tensor) -> f64 {
        let mut g = Graph::new();
        let m = g.constant(mu);
        let l = g.constant(lv);
        let k = kl_divergence(&mut g, m, l).unwrap();
        g.value(k).item()
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_value(Tensor::zeros(&[3, 5]), Tensor::zeros(&[3, 5])), 0.0);
        assert_eq!(kl_value(Tensor::ones(&[1, 1]), Tensor::zeros(&[1, 1])), 0.5);
    }

    #[test]
    fn kl_gradcheck() {
        let mu = Tensor::randn(&[2, 3], Rng::new(17));
        let lv = Tensor::randn(&[2, 3], Rng::new(18));
        let r = grad_check(
            |g, l| {
                let m = g.constant(mu.clone());
                kl_divergence(g, m, l)
            },
            &lv,
            1e-5,
            1e-4,
        );
        assert!(r.passed, "{r:?}");
    }
}
