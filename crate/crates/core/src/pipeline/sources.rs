//! The image sets a configuration resolves to: user directories when set,
//! seeded procedural images otherwise. LR images are always 8-bit
//! quantized, as if read from PNG.

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::data::{degrade_all, load_dir, procedural_hr};
use super::image::quantize;

fn data_rng(cfg: &TrainConfig) -> Rng {
    Rng::new(cfg.seed).fork("data")
}

pub fn quantize_image(img: &Tensor) -> Tensor {
    img.map(|v| f64::from(quantize(v)) / 255.0)
}

/// HR content images for stage 1 and pair generation.
pub fn training_hr(cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    match &cfg.paths.hr_dir {
        Some(dir) => load_dir(dir, cfg.hr_size),
        None => Ok(procedural_hr(cfg.train_images, cfg.hr_size, data_rng(cfg).fork("train_hr"))
            .iter()
            .map(quantize_image)
            .collect()),
    }
}

/// Real-world LR images for stage 1, unpaired with [`training_hr`]. The
/// procedural stand-in degrades a disjoint set of HR images.
pub fn real_lr(cfg: &TrainConfig) -> Result<Vec<Tensor>> {
    match &cfg.paths.lr_dir {
        Some(dir) => load_dir(dir, cfg.lr_size()),
        None => {
            let rng = data_rng(cfg);
            let hr = procedural_hr(cfg.train_images, cfg.hr_size, rng.fork("real_hr"));
            Ok(degrade_all(&hr, cfg.scale_factor, rng.fork("real_lr"))?
                .iter()
                .map(quantize_image)
                .collect())
        }
    }
}

/// Held-out HR images with LR inputs synthesized by the degradation.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub hr: Vec<Tensor>,
    pub lr: Vec<Tensor>,
}

pub fn eval_set(cfg: &TrainConfig) -> Result<EvalSet> {
    let rng = data_rng(cfg);
    let hr: Vec<Tensor> = match &cfg.paths.eval_dir {
        Some(dir) => load_dir(dir, cfg.hr_size)?,
        None => procedural_hr(cfg.eval_images, cfg.hr_size, rng.fork("eval_hr"))
            .iter()
            .map(quantize_image)
            .collect(),
    };
    let lr = degrade_all(&hr, cfg.scale_factor, rng.fork("eval_lr"))?
        .iter()
        .map(quantize_image)
        .collect();
    Ok(EvalSet { hr, lr })
}

/// Rows `order[start..start+len]` of `images` stacked into a batch.
pub fn gather(images: &[Tensor], order: &[usize]) -> Result<Tensor> {
    let picked: Vec<&Tensor> = order.iter().map(|&i| &images[i]).collect();
    Tensor::stack(&picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrainConfig {
        TrainConfig {
            train_images: 4,
            eval_images: 3,
            hr_size: 32,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn procedural_sets_have_config_shapes() {
        let cfg = small();
        let hr = training_hr(&cfg).unwrap();
        let lr = real_lr(&cfg).unwrap();
        assert_eq!(hr.len(), 4);
        assert_eq!(hr[0].shape(), [3, 32, 32]);
        assert_eq!(lr[0].shape(), [3, 8, 8]);
        let e = eval_set(&cfg).unwrap();
        assert_eq!((e.hr.len(), e.lr.len()), (3, 3));
    }

    #[test]
    fn sets_are_quantized_and_disjoint() {
        let cfg = small();
        let hr = training_hr(&cfg).unwrap();
        let e = eval_set(&cfg).unwrap();
        assert!(hr[0].data().iter().all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-9));
        assert_ne!(hr[0], e.hr[0]);
    }
}
