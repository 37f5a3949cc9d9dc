//! Stage 1: the styleVAE learns to degrade HR content into the style of
//! unpaired real LR images, alternating with the MI critic.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::FeatureExtractor;
use crate::mine::{derangement, ImageCritic, MineState};
use crate::models::{stylevae_loss, StyleVae, StyleVaeBatch};
use crate::nn::ParamStore;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::checkpoint::{self, CheckpointData, GroupRef, Manifest};
use super::config::TrainConfig;
use super::csv::CsvLog;
use super::sources::{gather, real_lr, training_hr};

pub const KIND: &str = "stylevae";
pub const LOG_HEADER: [&str; 5] = ["step", "kl", "style", "mi", "total"];
pub const LOG_FILE: &str = "stage1_loss.csv";
const LOG_EMA_KEY: &str = "mine.log_ema";

/// The styleVAE, its critic and their optimizers.
pub struct Stage1Model {
    pub vae: StyleVae,
    pub adam: Adam,
    pub critic: ImageCritic,
    pub mine: MineState,
}

impl Stage1Model {
    pub fn build(cfg: &TrainConfig) -> Result<Self> {
        let rng = Rng::new(cfg.seed);
        let vae = StyleVae::build(&cfg.stylevae_arch(), rng.fork("stylevae"))?;
        let adam = Adam::new(&vae.store, cfg.adam());
        let mut critic_store = ParamStore::new();
        let critic = ImageCritic::build(
            &ImageCritic::spec(cfg.model.critic_fc),
            3,
            &mut critic_store,
            rng.fork("critic"),
        )?;
        let critic_adam = Adam::new(&critic_store, cfg.adam());
        Ok(Stage1Model {
            vae,
            adam,
            critic,
            mine: MineState::new(critic_store, critic_adam),
        })
    }

    fn networks(&self) -> Vec<(String, String)> {
        let mut n = self.vae.specs();
        n.push(("critic".into(), self.critic.network().spec().to_string()));
        n
    }

    fn round_to_f32(&mut self) {
        self.vae.store.round_to_f32();
        self.adam.round_to_f32();
        self.mine.store.round_to_f32();
        self.mine.adam.round_to_f32();
    }
}

/// The feature extractor of the perceptual losses, fixed by the seed.
pub fn extractor(cfg: &TrainConfig) -> FeatureExtractor {
    FeatureExtractor::new(3, Rng::new(cfg.seed).fork("extractor"))
}

/// The configuration as stored in checkpoints. Fields that only set how
/// long to train are neutralized so a run may be resumed and extended.
pub(crate) fn config_fingerprint(cfg: &TrainConfig) -> serde_json::Value {
    let mut c = cfg.clone();
    c.epochs_stage1 = 0;
    c.epochs_stage2 = 0;
    c.checkpoint_every = 0;
    serde_json::json!({ "config": c })
}

/// The configuration a checkpoint was trained with.
pub fn stored_config(m: &Manifest) -> Result<TrainConfig> {
    serde_json::from_value(m.arch["config"].clone())
        .map_err(|e| Error::format(checkpoint::MANIFEST, format!("stored config: {e}")))
}

/// Values of one logged step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Losses {
    pub kl: f64,
    pub style: f64,
    pub mi: f64,
    pub total: f64,
}

pub struct Stage1Trainer {
    pub cfg: TrainConfig,
    pub model: Stage1Model,
    pub extractor: FeatureExtractor,
    hr: Vec<Tensor>,
    lr: Vec<Tensor>,
    pub step: u64,
    pub log: CsvLog,
}

impl Stage1Trainer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let hr = training_hr(cfg)?;
        let lr = real_lr(cfg)?;
        if hr.len().min(lr.len()) < cfg.batch_size {
            return Err(Error::Data(format!(
                "{} HR and {} LR images cannot fill a batch of {}",
                hr.len(),
                lr.len(),
                cfg.batch_size
            )));
        }
        Ok(Stage1Trainer {
            cfg: cfg.clone(),
            model: Stage1Model::build(cfg)?,
            extractor: extractor(cfg),
            hr,
            lr,
            step: 0,
            log: CsvLog::new(&LOG_HEADER),
        })
    }

    /// Continues from a checkpoint written by [`Stage1Trainer::save`].
    pub fn resume(cfg: &TrainConfig, dir: &Path) -> Result<Self> {
        let mut t = Stage1Trainer::new(cfg)?;
        let m = checkpoint::read_manifest(dir, KIND)?;
        if m.arch != config_fingerprint(cfg) {
            return Err(Error::Config(format!("{} was trained with a different configuration", dir.display())));
        }
        m.check_networks(&t.model.networks())?;
        let model = &mut t.model;
        checkpoint::load_group(dir, &m, "stylevae", &mut model.vae.store, Some(&mut model.adam))?;
        checkpoint::load_group(dir, &m, "critic", &mut model.mine.store, Some(&mut model.mine.adam))?;
        model.mine.log_ema = m.scalars.get(LOG_EMA_KEY).map(|&b| f64::from_bits(b));
        t.step = m.step;
        t.log = CsvLog::read(&dir.join(LOG_FILE), &LOG_HEADER)?;
        if t.log.len() as u64 != t.step {
            return Err(Error::format(dir.display(), "loss log length differs from the step count"));
        }
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.hr.len().min(self.lr.len()) / self.cfg.batch_size
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs_stage1 * self.steps_per_epoch()) as u64
    }

    /// HR and LR batches of a step. The two sets are shuffled
    /// independently each epoch, so they stay unpaired.
    fn batch(&self, step: u64) -> Result<(Tensor, Tensor)> {
        let spe = self.steps_per_epoch() as u64;
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let rng = Rng::new(self.cfg.seed).fork("stage1");
        let b = self.cfg.batch_size;
        let pick = |label: &str, n: usize| -> Vec<usize> {
            rng.fork_indexed(label, epoch).stream().permutation(n)[pos * b..(pos + 1) * b].to_vec()
        };
        Ok((
            gather(&self.hr, &pick("hr_order", self.hr.len()))?,
            gather(&self.lr, &pick("lr_order", self.lr.len()))?,
        ))
    }

    /// One styleVAE update against the current (frozen) critic, then one
    /// critic update on the images that update generated.
    pub fn train_step(&mut self) -> Result<Stage1Losses> {
        let (x_hr, x_lr) = self.batch(self.step)?;
        let rng = Rng::new(self.cfg.seed).fork("stage1").fork_indexed("step", self.step);
        let model = &mut self.model;
        let perm = derangement(self.cfg.batch_size, &mut rng.fork("perm").stream())?;
        let mut g = Graph::new();
        let mut bound = model.vae.store.bind(&mut g, true, true);
        let mut critic_bound = model.mine.store.bind(&mut g, false, false);
        let loss = stylevae_loss(
            &mut g,
            &model.vae,
            &mut bound,
            &model.critic,
            &mut critic_bound,
            &self.extractor,
            StyleVaeBatch {
                x_lr: &x_lr,
                x_hr: &x_hr,
                noise: rng.fork("noise"),
                perm: &perm,
            },
            &self.cfg.loss_weights(),
        )?;
        let v = |var| g.value(var).item();
        let losses = Stage1Losses {
            kl: v(loss.kl),
            style: v(loss.style),
            mi: v(loss.mi),
            total: v(loss.total),
        };
        if ![losses.kl, losses.style, losses.mi, losses.total].iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite(format!("stage-1 loss at step {}: {losses:?}", self.step)));
        }
        g.backward(loss.total)?;
        let grads = bound.gradients(&g);
        model.vae.store.commit(&bound);
        model.adam.step(&mut model.vae.store, &grads)?;
        let generated = g.value(loss.generated).clone();
        drop(g);
        model
            .mine
            .train_step(&model.critic, &x_lr, &generated, &mut rng.fork("mine").stream())?;
        self.log
            .push_step(self.step, &[losses.kl, losses.style, losses.mi, losses.total]);
        self.step += 1;
        Ok(losses)
    }

    /// Snaps the live state to file precision, then writes a checkpoint
    /// with the loss log so far.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.model.round_to_f32();
        let networks = self.model.networks();
        let model = &self.model;
        let scalars = model
            .mine
            .log_ema
            .map(|v| BTreeMap::from([(LOG_EMA_KEY.to_string(), v.to_bits())]))
            .unwrap_or_default();
        checkpoint::save(
            dir,
            CheckpointData {
                kind: KIND,
                step: self.step,
                arch: config_fingerprint(&self.cfg),
                networks,
                groups: vec![
                    GroupRef {
                        name: "stylevae",
                        store: &model.vae.store,
                        adam: Some(&model.adam),
                    },
                    GroupRef {
                        name: "critic",
                        store: &model.mine.store,
                        adam: Some(&model.mine.adam),
                    },
                ],
                scalars,
            },
        )?;
        self.log.write(&dir.join(LOG_FILE))
    }
}

/// Result of [`train_stylevae`].
#[derive(Clone, Debug)]
pub struct Stage1Report {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub log: CsvLog,
}

impl Stage1Report {
    /// The logged total loss of every step.
    pub fn totals(&self) -> Vec<f64> {
        self.log.rows().iter().map(|r| r[4].parse().unwrap_or(f64::NAN)).collect()
    }
}

/// Trains stage 1 to completion, writing `<out>/stylevae` (final
/// checkpoint), periodic `<out>/stylevae-step<N>` checkpoints and
/// `<out>/stage1_loss.csv`.
pub fn train_stylevae(cfg: &TrainConfig, out: &Path, resume: Option<&Path>) -> Result<Stage1Report> {
    let mut t = match resume {
        Some(dir) => Stage1Trainer::resume(cfg, dir)?,
        None => Stage1Trainer::new(cfg)?,
    };
    let total = t.total_steps();
    let every = cfg.checkpoint_every as u64;
    while t.step < total {
        t.train_step()?;
        if every > 0 && t.step % every == 0 && t.step < total {
            t.save(&out.join(format!("stylevae-step{}", t.step)))?;
        }
    }
    let checkpoint = out.join("stylevae");
    t.save(&checkpoint)?;
    t.log.write(&out.join(LOG_FILE))?;
    Ok(Stage1Report {
        checkpoint,
        steps: t.step,
        log: t.log,
    })
}

/// Loads the styleVAE of a stage-1 checkpoint for generation.
pub fn load_stylevae(dir: &Path) -> Result<(StyleVae, TrainConfig)> {
    let m = checkpoint::read_manifest(dir, KIND)?;
    let cfg = stored_config(&m)?;
    let mut vae = StyleVae::build(&cfg.stylevae_arch(), Rng::new(cfg.seed).fork("stylevae"))?;
    let expected = vae.specs();
    let stored: Vec<(String, String)> = m
        .networks
        .iter()
        .filter(|e| e.name != "critic")
        .map(|e| (e.name.clone(), e.spec.clone()))
        .collect();
    if stored != expected {
        return Err(Error::Config("stored networks differ from the stored configuration".into()));
    }
    checkpoint::load_group(dir, &m, "stylevae", &mut vae.store, None)?;
    Ok((vae, cfg))
}
