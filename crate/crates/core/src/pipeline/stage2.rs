//! Stage 2: the SR network learns from generated pairs under L1.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::l1_loss;
use crate::models::SrNetwork;
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::checkpoint::{self, CheckpointData, GroupRef};
use super::config::TrainConfig;
use super::csv::CsvLog;
use super::pairs::load_pairs;
use super::sources::gather;
use super::stage1::{config_fingerprint, stored_config};

pub const KIND: &str = "sr";
pub const LOG_HEADER: [&str; 2] = ["step", "l1"];
pub const LOG_FILE: &str = "stage2_loss.csv";

pub struct Stage2Trainer {
    pub cfg: TrainConfig,
    pub sr: SrNetwork,
    pub adam: Adam,
    lr: Vec<Tensor>,
    hr: Vec<Tensor>,
    pub step: u64,
    pub log: CsvLog,
}

impl Stage2Trainer {
    /// A fresh network over in-memory `(lr, hr)` pairs.
    pub fn new(cfg: &TrainConfig, pairs: Vec<(Tensor, Tensor)>) -> Result<Self> {
        cfg.validate()?;
        let (l, h) = (cfg.lr_size(), cfg.hr_size);
        if let Some((lr, hr)) = pairs.iter().find(|(lr, hr)| lr.shape() != [3, l, l] || hr.shape() != [3, h, h]) {
            return Err(Error::Data(format!(
                "pair shapes {:?} -> {:?} do not match the configured {l} -> {h}",
                lr.shape(),
                hr.shape()
            )));
        }
        if pairs.len() < cfg.batch_size {
            return Err(Error::Data(format!("{} pairs cannot fill a batch of {}", pairs.len(), cfg.batch_size)));
        }
        let sr = SrNetwork::build(&cfg.sr_arch(), Rng::new(cfg.seed).fork("sr"))?;
        let adam = Adam::new(&sr.store, cfg.adam());
        let (lr, hr) = pairs.into_iter().unzip();
        Ok(Stage2Trainer {
            cfg: cfg.clone(),
            sr,
            adam,
            lr,
            hr,
            step: 0,
            log: CsvLog::new(&LOG_HEADER),
        })
    }

    pub fn resume(cfg: &TrainConfig, pairs: Vec<(Tensor, Tensor)>, dir: &Path) -> Result<Self> {
        let mut t = Stage2Trainer::new(cfg, pairs)?;
        let m = checkpoint::read_manifest(dir, KIND)?;
        if m.arch != config_fingerprint(cfg) {
            return Err(Error::Config(format!("{} was trained with a different configuration", dir.display())));
        }
        m.check_networks(&[("sr".into(), t.sr.net.spec().to_string())])?;
        checkpoint::load_group(dir, &m, "sr", &mut t.sr.store, Some(&mut t.adam))?;
        t.step = m.step;
        t.log = CsvLog::read(&dir.join(LOG_FILE), &LOG_HEADER)?;
        if t.log.len() as u64 != t.step {
            return Err(Error::format(dir.display(), "loss log length differs from the step count"));
        }
        Ok(t)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.lr.len() / self.cfg.batch_size
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs_stage2 * self.steps_per_epoch()) as u64
    }

    pub fn train_step(&mut self) -> Result<f64> {
        let spe = self.steps_per_epoch() as u64;
        let (epoch, pos) = (self.step / spe, (self.step % spe) as usize);
        let b = self.cfg.batch_size;
        let order = Rng::new(self.cfg.seed)
            .fork("stage2")
            .fork_indexed("order", epoch)
            .stream()
            .permutation(self.lr.len());
        let idx = &order[pos * b..(pos + 1) * b];
        let mut g = Graph::new();
        let mut bound = self.sr.store.bind(&mut g, true, true);
        let x = g.constant(gather(&self.lr, idx)?);
        let target = g.constant(gather(&self.hr, idx)?);
        let y = self.sr.forward(&mut g, &mut bound, x)?;
        let loss = l1_loss(&mut g, y, target)?;
        let l1 = g.value(loss).item();
        if !l1.is_finite() {
            return Err(Error::NonFinite(format!("stage-2 L1 at step {}: {l1}", self.step)));
        }
        g.backward(loss)?;
        let grads = bound.gradients(&g);
        self.sr.store.commit(&bound);
        self.adam.step(&mut self.sr.store, &grads)?;
        self.log.push_step(self.step, &[l1]);
        self.step += 1;
        Ok(l1)
    }

    pub fn save(&mut self, dir: &Path) -> Result<()> {
        self.sr.store.round_to_f32();
        self.adam.round_to_f32();
        checkpoint::save(
            dir,
            CheckpointData {
                kind: KIND,
                step: self.step,
                arch: config_fingerprint(&self.cfg),
                networks: vec![("sr".into(), self.sr.net.spec().to_string())],
                groups: vec![GroupRef {
                    name: "sr",
                    store: &self.sr.store,
                    adam: Some(&self.adam),
                }],
                scalars: Default::default(),
            },
        )?;
        self.log.write(&dir.join(LOG_FILE))
    }
}

#[derive(Clone, Debug)]
pub struct Stage2Report {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub log: CsvLog,
}

/// Trains on the pairs in `pairs_dir`, writing `<out>/sr`, periodic
/// `<out>/sr-step<N>` checkpoints and `<out>/stage2_loss.csv`.
pub fn train_sr(cfg: &TrainConfig, pairs_dir: &Path, out: &Path, resume: Option<&Path>) -> Result<Stage2Report> {
    let pairs = load_pairs(pairs_dir)?;
    let t = match resume {
        Some(dir) => Stage2Trainer::resume(cfg, pairs, dir)?,
        None => Stage2Trainer::new(cfg, pairs)?,
    };
    run_to_end(t, out, "sr")
}

/// Trains to the configured step count and saves `<out>/<name>`.
pub fn run_to_end(mut t: Stage2Trainer, out: &Path, name: &str) -> Result<Stage2Report> {
    let total = t.total_steps();
    let every = t.cfg.checkpoint_every as u64;
    while t.step < total {
        t.train_step()?;
        if every > 0 && t.step % every == 0 && t.step < total {
            t.save(&out.join(format!("{name}-step{}", t.step)))?;
        }
    }
    let checkpoint = out.join(name);
    t.save(&checkpoint)?;
    t.log.write(&out.join(LOG_FILE))?;
    Ok(Stage2Report {
        checkpoint,
        steps: t.step,
        log: t.log,
    })
}

/// Loads a trained SR network and the configuration it was trained with.
pub fn load_sr(dir: &Path) -> Result<(SrNetwork, TrainConfig)> {
    let m = checkpoint::read_manifest(dir, KIND)?;
    let cfg = stored_config(&m)?;
    let mut sr = SrNetwork::build(&cfg.sr_arch(), Rng::new(cfg.seed).fork("sr"))?;
    m.check_networks(&[("sr".into(), sr.net.spec().to_string())])?;
    checkpoint::load_group(dir, &m, "sr", &mut sr.store, None)?;
    Ok((sr, cfg))
}
