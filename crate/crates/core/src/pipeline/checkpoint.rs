//! Checkpoint directories: `manifest.json` plus one RTEN file per tensor.
//!
//! The manifest records the canonical spec text of every network, the
//! architecture, the step count and, per parameter group, the named
//! parameters, running buffers and Adam moments. It is written last, so a
//! directory with a manifest is complete.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{NamedTensor, ParamStore};
use crate::optim::Adam;
use crate::tensor::Tensor;

pub const FORMAT: &str = "stylesr-checkpoint/1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub kind: String,
    pub step: u64,
    pub arch: serde_json::Value,
    pub networks: Vec<SpecEntry>,
    pub groups: Vec<GroupEntry>,
    /// Extra state stored bit-exactly as `u64` (floats as their bits).
    #[serde(default)]
    pub scalars: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub name: String,
    pub spec: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamEntry {
    pub step: u64,
    pub m: Vec<String>,
    pub v: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupEntry {
    pub name: String,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
    pub adam: Option<AdamEntry>,
}

/// One parameter store (and optionally its optimizer) to save.
pub struct GroupRef<'a> {
    pub name: &'a str,
    pub store: &'a ParamStore,
    pub adam: Option<&'a Adam>,
}

fn save_tensors(dir: &Path, sub: &str, tensors: &[NamedTensor]) -> Result<Vec<TensorEntry>> {
    tensors
        .iter()
        .map(|t| {
            let file = format!("{sub}/{}.rten", t.name);
            t.tensor.save_rten(&dir.join(&file))?;
            Ok(TensorEntry {
                name: t.name.clone(),
                shape: t.tensor.shape().to_vec(),
                file,
            })
        })
        .collect()
}

pub struct CheckpointData<'a> {
    pub kind: &'a str,
    pub step: u64,
    pub arch: serde_json::Value,
    pub networks: Vec<(String, String)>,
    pub groups: Vec<GroupRef<'a>>,
    pub scalars: BTreeMap<String, u64>,
}

pub fn save(dir: &Path, data: CheckpointData<'_>) -> Result<Manifest> {
    crate::io::create_dir(dir)?;
    let mut groups = Vec::new();
    for g in &data.groups {
        let base = format!("tensors/{}", g.name);
        let params = save_tensors(dir, &format!("{base}/params"), g.store.params())?;
        let buffers = save_tensors(dir, &format!("{base}/buffers"), g.store.buffers())?;
        let adam = match g.adam {
            None => None,
            Some(a) => {
                let named = |ts: &[Tensor]| -> Vec<NamedTensor> {
                    g.store
                        .params()
                        .iter()
                        .zip(ts)
                        .map(|(p, t)| NamedTensor {
                            name: p.name.clone(),
                            tensor: t.clone(),
                        })
                        .collect()
                };
                let m = save_tensors(dir, &format!("{base}/adam_m"), &named(&a.state.m))?;
                let v = save_tensors(dir, &format!("{base}/adam_v"), &named(&a.state.v))?;
                Some(AdamEntry {
                    step: a.state.step,
                    m: m.into_iter().map(|e| e.file).collect(),
                    v: v.into_iter().map(|e| e.file).collect(),
                })
            }
        };
        groups.push(GroupEntry {
            name: g.name.to_string(),
            params,
            buffers,
            adam,
        });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        kind: data.kind.to_string(),
        step: data.step,
        arch: data.arch,
        networks: data
            .networks
            .into_iter()
            .map(|(name, spec)| SpecEntry { name, spec })
            .collect(),
        groups,
        scalars: data.scalars,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    crate::io::write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path, kind: &str) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(path.display(), e.to_string()))?;
    if m.format != FORMAT {
        return Err(Error::format(path.display(), format!("unsupported format {:?}", m.format)));
    }
    if m.kind != kind {
        return Err(Error::format(path.display(), format!("expected a {kind} checkpoint, found {}", m.kind)));
    }
    Ok(m)
}

impl Manifest {
    /// Fails unless the stored spec text of every network matches `expected`.
    pub fn check_networks(&self, expected: &[(String, String)]) -> Result<()> {
        let stored: Vec<(String, String)> = self.networks.iter().map(|e| (e.name.clone(), e.spec.clone())).collect();
        if stored != expected {
            return Err(Error::Config(
                "checkpoint networks differ from the configured architecture".into(),
            ));
        }
        Ok(())
    }

    fn group(&self, name: &str) -> Result<&GroupEntry> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| Error::format(MANIFEST, format!("missing group {name}")))
    }
}

fn load_into(dir: &Path, entries: &[TensorEntry], targets: &mut [&mut NamedTensor]) -> Result<()> {
    if entries.len() != targets.len() {
        return Err(Error::format(
            dir.display(),
            format!("{} stored tensors for {} slots", entries.len(), targets.len()),
        ));
    }
    for (e, t) in entries.iter().zip(targets.iter_mut()) {
        if e.name != t.name || e.shape != t.tensor.shape() {
            return Err(Error::format(
                dir.display(),
                format!("stored {} {:?} does not match {} {:?}", e.name, e.shape, t.name, t.tensor.shape()),
            ));
        }
        let loaded = Tensor::load_rten(&dir.join(&e.file))?;
        if loaded.shape() != e.shape.as_slice() {
            return Err(Error::format(e.file.clone(), "shape differs from the manifest"));
        }
        t.tensor = loaded;
    }
    Ok(())
}

/// Loads group `name` into a store built with the same layout, and its
/// optimizer state when both are present.
pub fn load_group(dir: &Path, manifest: &Manifest, name: &str, store: &mut ParamStore, adam: Option<&mut Adam>) -> Result<()> {
    let g = manifest.group(name)?;
    load_into(dir, &g.params, &mut store.params_mut().collect::<Vec<_>>())?;
    load_into(dir, &g.buffers, &mut store.buffers_mut().collect::<Vec<_>>())?;
    if let Some(adam) = adam {
        let entry = g
            .adam
            .as_ref()
            .ok_or_else(|| Error::format(dir.display(), format!("group {name} has no optimizer state")))?;
        let load_all = |files: &[String]| -> Result<Vec<Tensor>> {
            files.iter().map(|f| Tensor::load_rten(&dir.join(f))).collect()
        };
        let (m, v) = (load_all(&entry.m)?, load_all(&entry.v)?);
        let shapes_ok = m.len() == store.len()
            && v.len() == store.len()
            && store
                .params()
                .iter()
                .zip(m.iter().zip(&v))
                .all(|(p, (a, b))| a.shape() == p.tensor.shape() && b.shape() == p.tensor.shape());
        if !shapes_ok {
            return Err(Error::format(dir.display(), format!("optimizer state of {name} does not match")));
        }
        adam.state.step = entry.step;
        adam.state.m = m;
        adam.state.v = v;
    }
    Ok(())
}
