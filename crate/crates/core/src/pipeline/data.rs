//! Procedural face-like images, the parametric degradation and image
//! directories.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;

use super::image;

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn color(s: &mut Stream, lo: f64, hi: f64) -> [f64; 3] {
    [s.uniform(lo, hi), s.uniform(lo, hi), s.uniform(lo, hi)]
}

/// An ellipse mask with soft edges: 1 inside, 0 outside.
fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, soft: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
    1.0 - smoothstep(1.0 - soft, 1.0 + soft, d)
}

/// A `[3, size, size]` image in `[0, 1]`: a textured gradient background,
/// hair, a skin-toned oval, eyes with pupils, brows and a mouth, all with
/// random placement and colours.
pub fn procedural_face(size: usize, rng: Rng) -> Tensor {
    let mut s = rng.stream();
    let bg0 = color(&mut s, 0.1, 0.9);
    let bg1 = color(&mut s, 0.1, 0.9);
    let stripe_f = s.uniform(0.15, 0.45);
    let stripe_a = s.uniform(0.0, 0.12);
    let stripe_phase = s.uniform(0.0, std::f64::consts::TAU);
    let skin_base = s.uniform(0.35, 0.9);
    let skin = [skin_base, skin_base * s.uniform(0.7, 0.85), skin_base * s.uniform(0.5, 0.7)];
    let hair = color(&mut s, 0.0, 0.45);
    let iris = color(&mut s, 0.05, 0.6);
    let lip = [s.uniform(0.5, 0.85), s.uniform(0.1, 0.35), s.uniform(0.15, 0.35)];
    let (cx, cy) = (0.5 + s.uniform(-0.06, 0.06), 0.53 + s.uniform(-0.05, 0.05));
    let (rx, ry) = (s.uniform(0.24, 0.32), s.uniform(0.32, 0.4));
    let eye_dx = rx * s.uniform(0.35, 0.5);
    let eye_y = cy - ry * s.uniform(0.1, 0.3);
    let eye_r = rx * s.uniform(0.14, 0.22);
    let mouth_y = cy + ry * s.uniform(0.4, 0.6);
    let mouth_w = rx * s.uniform(0.3, 0.55);
    let n = size as f64;
    let mut data = vec![0.0; 3 * size * size];
    for py in 0..size {
        for px in 0..size {
            let (x, y) = ((px as f64 + 0.5) / n, (py as f64 + 0.5) / n);
            let stripes = stripe_a * (stripe_f * n * (x + 0.6 * y) + stripe_phase).sin();
            let mut c = [0.0; 3];
            for k in 0..3 {
                c[k] = bg0[k] * (1.0 - y) + bg1[k] * y + stripes;
            }
            let hair_m = ellipse(x, y, cx, cy - 0.08, rx * 1.15, ry * 1.05, 0.04) * (1.0 - smoothstep(cy - 0.12, cy, y));
            let face_m = ellipse(x, y, cx, cy, rx, ry, 0.05);
            let eye_m = ellipse(x, y, cx - eye_dx, eye_y, eye_r, eye_r * 0.6, 0.2)
                .max(ellipse(x, y, cx + eye_dx, eye_y, eye_r, eye_r * 0.6, 0.2));
            let pupil_m = ellipse(x, y, cx - eye_dx, eye_y, eye_r * 0.45, eye_r * 0.45, 0.25)
                .max(ellipse(x, y, cx + eye_dx, eye_y, eye_r * 0.45, eye_r * 0.45, 0.25));
            let brow_y = eye_y - eye_r * 1.2;
            let brow_m = ellipse(x, y, cx - eye_dx, brow_y, eye_r * 1.3, eye_r * 0.25, 0.3)
                .max(ellipse(x, y, cx + eye_dx, brow_y, eye_r * 1.3, eye_r * 0.25, 0.3));
            let mouth_m = ellipse(x, y, cx, mouth_y, mouth_w, mouth_w * 0.3, 0.25);
            for k in 0..3 {
                let mut v = c[k];
                v = v * (1.0 - hair_m) + hair[k] * hair_m;
                v = v * (1.0 - face_m) + skin[k] * face_m;
                v = v * (1.0 - eye_m) + 0.95 * eye_m;
                v = v * (1.0 - pupil_m) + iris[k] * 0.5 * pupil_m;
                v = v * (1.0 - brow_m) + hair[k] * brow_m;
                v = v * (1.0 - mouth_m) + lip[k] * mouth_m;
                data[(k * size + py) * size + px] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![3, size, size], data).expect("image shape")
}

/// Sampling ranges of the synthetic degradation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    pub blur_sigma: (f64, f64),
    pub noise_sigma: (f64, f64),
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            blur_sigma: (0.5, 2.5),
            noise_sigma: (0.0, 10.0 / 255.0),
        }
    }
}

/// Parameters drawn for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Degradation {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl DegradationParams {
    pub fn sample(&self, s: &mut Stream) -> Degradation {
        Degradation {
            blur_sigma: s.uniform(self.blur_sigma.0, self.blur_sigma.1),
            noise_sigma: s.uniform(self.noise_sigma.0, self.noise_sigma.1),
        }
    }
}

/// Separable Gaussian blur with clamped borders; σ below 1e-3 is a no-op.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::shape("gaussian_blur", format!("expected [C, H, W], got {:?}", img.shape())));
    };
    if sigma < 1e-3 {
        return Ok(img.clone());
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let ks: f64 = k.iter().sum();
    let k: Vec<f64> = k.into_iter().map(|v| v / ks).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; c * h * w];
    let mut out = vec![0.0; c * h * w];
    let d = img.data();
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            for x in 0..w {
                tmp[base + y * w + x] = (-r..=r)
                    .map(|i| k[(i + r) as usize] * d[base + y * w + clampi(x as isize + i, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                out[base + y * w + x] = (-r..=r)
                    .map(|i| k[(i + r) as usize] * tmp[base + clampi(y as isize + i, h) * w + x])
                    .sum();
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Mean over non-overlapping `factor×factor` blocks of a `[C, H, W]` image.
pub fn area_downsample(img: &Tensor, factor: usize) -> Result<Tensor> {
    let [c, h, w] = img.shape()[..] else {
        return Err(Error::shape("area_downsample", format!("expected [C, H, W], got {:?}", img.shape())));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape("area_downsample", format!("{h}x{w} not divisible by {factor}")));
    }
    let data = crate::kernels::avg_pool(img.data(), c, h, w, factor);
    Tensor::new(vec![c, h / factor, w / factor], data)
}

/// Blur, area-downsample, add Gaussian noise, clamp to `[0, 1]`.
pub fn synthesize_lr(hr: &Tensor, factor: usize, d: Degradation, rng: Rng) -> Result<Tensor> {
    let blurred = gaussian_blur(hr, d.blur_sigma)?;
    let mut lr = area_downsample(&blurred, factor)?;
    let mut s = rng.stream();
    for v in lr.data_mut() {
        *v = (*v + d.noise_sigma * s.normal()).clamp(0.0, 1.0);
    }
    Ok(lr)
}

/// Sorted `.png` files in a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(files)
}

/// Loads every PNG of `dir`, requiring `[3, size, size]`.
pub fn load_dir(dir: &Path, size: usize) -> Result<Vec<Tensor>> {
    list_pngs(dir)?
        .iter()
        .map(|p| {
            let t = image::load_png(p)?;
            if t.shape() != [3, size, size] {
                return Err(Error::Data(format!(
                    "{} is {:?}, expected 3x{size}x{size}",
                    p.display(),
                    t.shape()
                )));
            }
            Ok(t)
        })
        .collect()
}

pub fn procedural_hr(count: usize, size: usize, rng: Rng) -> Vec<Tensor> {
    (0..count).map(|i| procedural_face(size, rng.fork_indexed("face", i as u64))).collect()
}

pub fn degrade_all(hr: &[Tensor], factor: usize, rng: Rng) -> Result<Vec<Tensor>> {
    let params = DegradationParams::default();
    hr.iter()
        .enumerate()
        .map(|(i, img)| {
            let r = rng.fork_indexed("image", i as u64);
            let d = params.sample(&mut r.fork("params").stream());
            synthesize_lr(img, factor, d, r.fork("noise"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faces_are_deterministic_and_in_range() {
        let a = procedural_face(32, Rng::new(1));
        assert_eq!(a, procedural_face(32, Rng::new(1)));
        assert_ne!(a, procedural_face(32, Rng::new(2)));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn no_blur_no_noise_is_area_downsample() {
        let c = Tensor::full(&[3, 16, 16], 0.3);
        let d = Degradation {
            blur_sigma: 0.0,
            noise_sigma: 0.0,
        };
        let lr = synthesize_lr(&c, 4, d, Rng::new(1)).unwrap();
        assert!(lr.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
        let img = procedural_face(16, Rng::new(3));
        assert_eq!(synthesize_lr(&img, 4, d, Rng::new(1)).unwrap(), area_downsample(&img, 4).unwrap());
    }

    #[test]
    fn noise_level_matches_sigma() {
        let hr = Tensor::full(&[1, 256, 256], 0.5);
        let sigma = 10.0 / 255.0;
        let lr = synthesize_lr(
            &hr,
            4,
            Degradation {
                blur_sigma: 0.0,
                noise_sigma: sigma,
            },
            Rng::new(4),
        )
        .unwrap();
        let d = lr.data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let s = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
        assert!((s / sigma - 1.0).abs() < 0.2, "{s}");
    }

    #[test]
    fn degraded_output_stays_in_unit_range() {
        let hr = procedural_hr(4, 32, Rng::new(5));
        for lr in degrade_all(&hr, 4, Rng::new(6)).unwrap() {
            assert_eq!(lr.shape(), &[3, 8, 8]);
            assert!(lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
