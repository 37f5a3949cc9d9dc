//! The two-stage training pipeline, its data and its file formats.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod data;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod pairs;
pub mod sources;
pub mod stage1;
pub mod stage2;

use std::path::{Path, PathBuf};

use crate::error::Result;

pub use config::TrainConfig;
pub use eval::{evaluate, EvalReport};
pub use pairs::gen_pairs;
pub use stage1::train_stylevae;
pub use stage2::train_sr;

/// Outcome of [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineReport {
    pub stage1: stage1::Stage1Report,
    pub pairs: pairs::PairsReport,
    pub stage2: stage2::Stage2Report,
    pub eval: EvalReport,
}

/// Stage 1, pair generation, stage 2 and evaluation under `out`.
pub fn run_pipeline(cfg: &TrainConfig, out: &Path) -> Result<PipelineReport> {
    let stage1 = train_stylevae(cfg, out, None)?;
    let pairs = gen_pairs(cfg, &stage1.checkpoint, &out.join("pairs"))?;
    let stage2 = train_sr(cfg, &pairs.dir, out, None)?;
    let eval = eval_checkpoint(cfg, &stage2.checkpoint, out)?;
    Ok(PipelineReport {
        stage1,
        pairs,
        stage2,
        eval,
    })
}

/// Evaluates an SR checkpoint on the eval set of `cfg` and writes
/// `<out>/eval.csv`.
pub fn eval_checkpoint(cfg: &TrainConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let (sr, _) = stage2::load_sr(checkpoint)?;
    if sr.arch.scale_factor != cfg.scale_factor {
        return Err(crate::Error::Config(format!(
            "checkpoint upscales by {}, the config by {}",
            sr.arch.scale_factor, cfg.scale_factor
        )));
    }
    let report = eval::evaluate_sr(&sources::eval_set(cfg)?, &sr)?;
    report.to_csv().write(&out.join(eval::FILE))?;
    Ok(report)
}

/// Writes the procedural data sets as PNG directories `hr/`, `lr/` and
/// `eval/` under `out`, in the layout the `paths` config expects.
pub fn synth_data(cfg: &TrainConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let sets = [
        ("hr", sources::training_hr(cfg)?),
        ("lr", sources::real_lr(cfg)?),
        ("eval", sources::eval_set(cfg)?.hr),
    ];
    let mut dirs = Vec::new();
    for (name, images) in sets {
        let dir = out.join(name);
        for (i, img) in images.iter().enumerate() {
            image::save_png(img, &dir.join(format!("{i:05}.png")))?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_pipeline_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::smoke();
        let r = run_pipeline(&cfg, dir.path()).unwrap();
        assert_eq!(r.stage1.steps, 2);
        assert_eq!(r.pairs.count, 8);
        assert_eq!(r.stage2.steps, 4);
        assert_eq!(r.eval.rows.len(), 2);
        for f in ["stage1_loss.csv", "stage2_loss.csv", "eval.csv", "stylevae/manifest.json", "sr/manifest.json"] {
            assert!(dir.path().join(f).is_file(), "{f} missing");
        }
        let sr_eval = eval_checkpoint(&cfg, &r.stage2.checkpoint, dir.path()).unwrap();
        assert_eq!(sr_eval.mean, r.eval.mean);
    }

    #[test]
    fn eval_rejects_a_mismatched_scale() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::smoke();
        let r = run_pipeline(&cfg, dir.path()).unwrap();
        let other = TrainConfig {
            scale_factor: 2,
            ..cfg
        };
        assert!(matches!(
            eval_checkpoint(&other, &r.stage2.checkpoint, dir.path()),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn synth_data_round_trips_through_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::smoke();
        let dirs = synth_data(&cfg, dir.path()).unwrap();
        let mut from_dirs = cfg.clone();
        from_dirs.paths = config::Paths {
            hr_dir: Some(dirs[0].clone()),
            lr_dir: Some(dirs[1].clone()),
            eval_dir: Some(dirs[2].clone()),
        };
        assert_eq!(sources::training_hr(&from_dirs).unwrap(), sources::training_hr(&cfg).unwrap());
        assert_eq!(sources::real_lr(&from_dirs).unwrap(), sources::real_lr(&cfg).unwrap());
        let (a, b) = (sources::eval_set(&from_dirs).unwrap(), sources::eval_set(&cfg).unwrap());
        assert_eq!(a.hr, b.hr);
        assert_eq!(a.lr, b.lr);
    }
}
