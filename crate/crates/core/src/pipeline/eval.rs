//! Held-out evaluation against the bilinear baseline, and inference.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::fmt_sig9;
use crate::models::SrNetwork;
use crate::tensor::Tensor;

use super::csv::CsvLog;
use super::data::list_pngs;
use super::image::{load_png, save_png};
use super::metrics::{bilinear_upsample, psnr, ssim};
use super::sources::EvalSet;

pub const HEADER: [&str; 5] = ["image", "bilinear_psnr", "bilinear_ssim", "model_psnr", "model_ssim"];
pub const FILE: &str = "eval.csv";
/// Images per inference batch.
const BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scores {
    pub bilinear_psnr: f64,
    pub bilinear_ssim: f64,
    pub model_psnr: f64,
    pub model_ssim: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub rows: Vec<Scores>,
    pub mean: Scores,
}

impl EvalReport {
    /// One row per image plus a final `mean` row.
    pub fn to_csv(&self) -> CsvLog {
        let mut log = CsvLog::new(&HEADER);
        let fmt = |label: String, s: &Scores| {
            let mut r = vec![label];
            r.extend([s.bilinear_psnr, s.bilinear_ssim, s.model_psnr, s.model_ssim].map(fmt_sig9));
            r
        };
        for (i, s) in self.rows.iter().enumerate() {
            log.push_raw(fmt(i.to_string(), s));
        }
        log.push_raw(fmt("mean".into(), &self.mean));
        log
    }

    /// Mean model PSNR minus mean baseline PSNR, in dB.
    pub fn gain_db(&self) -> f64 {
        self.mean.model_psnr - self.mean.bilinear_psnr
    }
}

/// Scores `upscale` and the bilinear baseline on every image of `set`.
/// `upscale` maps a batch `[N, 3, h, w]` to `[N, 3, s·h, s·w]`.
pub fn evaluate(set: &EvalSet, factor: usize, upscale: impl Fn(&Tensor) -> Result<Tensor>) -> Result<EvalReport> {
    if set.hr.is_empty() || set.hr.len() != set.lr.len() {
        return Err(Error::Data("the eval set needs matching, non-empty HR and LR lists".into()));
    }
    let mut rows = Vec::with_capacity(set.hr.len());
    for start in (0..set.lr.len()).step_by(BATCH) {
        let end = (start + BATCH).min(set.lr.len());
        let batch = Tensor::stack(&set.lr[start..end].iter().collect::<Vec<_>>())?;
        let up = upscale(&batch)?;
        for (k, i) in (start..end).enumerate() {
            let hr = &set.hr[i];
            let model = up.slice_batch(k, 1)?.reshape(hr.shape())?;
            let base = bilinear_upsample(&set.lr[i], factor)?;
            rows.push(Scores {
                bilinear_psnr: psnr(&base, hr, 1.0)?,
                bilinear_ssim: ssim(&base, hr)?,
                model_psnr: psnr(&model, hr, 1.0)?,
                model_ssim: ssim(&model, hr)?,
            });
        }
    }
    let n = rows.len() as f64;
    let mean_of = |f: fn(&Scores) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = Scores {
        bilinear_psnr: mean_of(|s| s.bilinear_psnr),
        bilinear_ssim: mean_of(|s| s.bilinear_ssim),
        model_psnr: mean_of(|s| s.model_psnr),
        model_ssim: mean_of(|s| s.model_ssim),
    };
    Ok(EvalReport { rows, mean })
}

pub fn evaluate_sr(set: &EvalSet, sr: &SrNetwork) -> Result<EvalReport> {
    evaluate(set, sr.arch.scale_factor, |x| sr.infer(x))
}

/// Upscales one PNG, or every PNG of a directory into `output`.
pub fn infer(sr: &SrNetwork, input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    let jobs: Vec<(PathBuf, PathBuf)> = if input.is_dir() {
        list_pngs(input)?
            .into_iter()
            .map(|p| {
                let name = p.file_name().expect("listed files have names").to_owned();
                (p, output.join(name))
            })
            .collect()
    } else {
        vec![(input.to_path_buf(), output.to_path_buf())]
    };
    for (src, dst) in &jobs {
        let img = load_png(src)?;
        let s = img.shape().to_vec();
        let up = sr.infer(&img.reshape(&[1, s[0], s[1], s[2]])?)?;
        let us = up.shape()[1..].to_vec();
        save_png(&up.reshape(&us)?, dst)?;
    }
    Ok(jobs.into_iter().map(|(_, d)| d).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::procedural_face;
    use crate::pipeline::metrics::PSNR_CAP_DB;
    use crate::rng::Rng;

    #[test]
    fn identity_at_scale_one_hits_the_cap() {
        let hr: Vec<Tensor> = (0..3).map(|i| procedural_face(16, Rng::new(i))).collect();
        let set = EvalSet {
            hr: hr.clone(),
            lr: hr,
        };
        let r = evaluate(&set, 1, |x| Ok(x.clone())).unwrap();
        assert_eq!(r.mean.model_psnr, PSNR_CAP_DB);
        assert_eq!(r.mean.bilinear_psnr, PSNR_CAP_DB);
        assert_eq!(r.to_csv().len(), 4);
    }
}
