//! Pair generation: the trained styleVAE degrades every HR image under
//! several style codes drawn from the prior.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::StyleVae;
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::image::{load_png, save_png};
use super::sources::{quantize_image, training_hr};
use super::stage1::load_stylevae;

pub const MANIFEST: &str = "manifest.csv";
const HEADER: &str = "lr,hr";

/// `samples` LR renderings of one HR image, each with its own style code.
pub fn degrade_with_styles(vae: &StyleVae, hr: &Tensor, samples: usize, rng: Rng) -> Result<Tensor> {
    let d = vae.arch.d_style;
    let batch = Tensor::stack(&vec![hr; samples])?;
    let z = Tensor::new(vec![samples, d], rng.stream().normals(samples * d))?;
    let mut g = Graph::new();
    let mut bound = vae.store.bind(&mut g, false, false);
    let x = g.constant(batch);
    let zv = g.constant(z);
    let content = vae.encode_content(&mut g, &mut bound, x)?;
    let y = vae.generate(&mut g, &mut bound, content, zv)?;
    Ok(g.value(y).map(|v| v.clamp(0.0, 1.0)))
}

/// Written pairs, with the 8-bit images as stored.
#[derive(Clone, Debug)]
pub struct PairsReport {
    pub dir: PathBuf,
    pub count: usize,
    /// Mean over HR images of the mean absolute difference between their
    /// first two LR samples; `None` with one sample per image.
    pub diversity: Option<f64>,
}

/// Writes `hr/<i>.png`, `lr/<i>_<j>.png` and a manifest pairing them to
/// `out`, using the HR images and `samples_per_hr` of `cfg`.
pub fn gen_pairs(cfg: &TrainConfig, checkpoint: &Path, out: &Path) -> Result<PairsReport> {
    let (vae, trained) = load_stylevae(checkpoint)?;
    if trained.scale_factor != cfg.scale_factor || trained.hr_size != cfg.hr_size {
        return Err(Error::Config(
            "the styleVAE was trained for a different scale factor or HR size".into(),
        ));
    }
    let hr = training_hr(cfg)?;
    let rng = Rng::new(cfg.seed).fork("gen_pairs");
    let mut manifest = format!("{HEADER}\n");
    let mut diffs = Vec::new();
    for (i, img) in hr.iter().enumerate() {
        let hr_name = format!("hr/{i:05}.png");
        save_png(img, &out.join(&hr_name))?;
        let lr = degrade_with_styles(&vae, img, cfg.samples_per_hr, rng.fork_indexed("hr", i as u64))?;
        let samples: Vec<Tensor> = (0..cfg.samples_per_hr)
            .map(|j| {
                let t = lr.slice_batch(j, 1)?;
                let s = t.shape()[1..].to_vec();
                Ok(quantize_image(&t.reshape(&s)?))
            })
            .collect::<Result<_>>()?;
        for (j, s) in samples.iter().enumerate() {
            let lr_name = format!("lr/{i:05}_{j:02}.png");
            save_png(s, &out.join(&lr_name))?;
            manifest.push_str(&format!("{lr_name},{hr_name}\n"));
        }
        if let [a, b, ..] = samples.as_slice() {
            diffs.push(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64);
        }
    }
    crate::io::write_atomic(&out.join(MANIFEST), manifest.as_bytes())?;
    Ok(PairsReport {
        dir: out.to_path_buf(),
        count: hr.len() * cfg.samples_per_hr,
        diversity: (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64),
    })
}

/// The `(lr, hr)` images listed by a pair manifest.
pub fn load_pairs(dir: &Path) -> Result<Vec<(Tensor, Tensor)>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::format(path.display(), "missing lr,hr header"));
    }
    let mut pairs = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let (lr, hr) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path.display(), format!("bad row {line:?}")))?;
        pairs.push((load_png(&dir.join(lr))?, load_png(&dir.join(hr))?));
    }
    if pairs.is_empty() {
        return Err(Error::Data(format!("{} lists no pairs", path.display())));
    }
    Ok(pairs)
}
