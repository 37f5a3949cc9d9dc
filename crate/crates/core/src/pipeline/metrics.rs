//! PSNR, SSIM and the bilinear upsampling baseline.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64)
}

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / m).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region of one plane.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`,
/// `K2 = 0.03` and dynamic range 1, averaged over channels. Accepts
/// `[C, H, W]` images.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let [c, h, w] = a.shape()[..] else {
        return Err(Error::shape("ssim", format!("expected [C, H, W], got {:?}", a.shape())));
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data()[ch * h * w..(ch + 1) * h * w];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter(pa, h, w, &k);
        let mu_b = filter(pb, h, w, &k);
        let aa = filter(&prod(|x, _| x * x), h, w, &k);
        let bb = filter(&prod(|_, y| y * y), h, w, &k);
        let ab = filter(&prod(|x, y| x * y), h, w, &k);
        let mut s = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            s += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += s / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Bilinear upsampling by an integer factor with half-pixel centres and
/// edge clamping, for `[C, H, W]` images.
pub fn bilinear_upsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::shape("bilinear_upsample", format!("expected [C, H, W], got {:?}", img.shape())));
    };
    let (oh, ow) = (h * factor, w * factor);
    let src = |o: usize, n: usize| {
        let s = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let p = &img.data()[ch * h * w..];
        for y in 0..oh {
            let (y0, y1, fy) = src(y, h);
            for x in 0..ow {
                let (x0, x1, fx) = src(x, w);
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out[(ch * oh + y) * ow + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn psnr_examples() {
        let a = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, Rng::new(1));
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let z = Tensor::zeros(&[100]);
        let b = Tensor::full(&[100], 0.1);
        assert!((psnr(&z, &b, 1.0).unwrap() - 20.0).abs() < 1e-12);
        let c = Tensor::rand_uniform(&[3, 8, 8], 0.0, 1.0, Rng::new(2));
        assert_eq!(psnr(&a, &c, 1.0).unwrap(), psnr(&c, &a, 1.0).unwrap());
    }

    #[test]
    fn psnr_falls_as_noise_grows() {
        let a = Tensor::rand_uniform(&[3, 32, 32], 0.2, 0.8, Rng::new(3));
        let noise = Tensor::randn(&[3, 32, 32], Rng::new(4));
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.05, 0.1] {
            let mut b = a.clone();
            for (v, n) in b.data_mut().iter_mut().zip(noise.data()) {
                *v += sigma * n;
            }
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_examples() {
        let a = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, Rng::new(5));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let b = Tensor::rand_uniform(&[3, 16, 16], 0.0, 1.0, Rng::new(6));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&Tensor::zeros(&[1, 10, 20]), &Tensor::zeros(&[1, 10, 20])).is_err());
    }

    #[test]
    fn bilinear_keeps_constants_and_means() {
        let a = Tensor::full(&[3, 4, 4], 0.25);
        let up = bilinear_upsample(&a, 4).unwrap();
        assert_eq!(up.shape(), &[3, 16, 16]);
        assert!(up.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
