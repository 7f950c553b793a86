//! Versioned checkpoint: `JMPOSECK`, u32 version, u64 header length, JSON header, raw f64 LE payload.
//!
//! The payload holds every parameter tensor in store order, followed by the first and
//! second moment buffers of the model and estimator optimizers.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::JmPose;
use crate::optim::AdamW;
use crate::train::{ExperimentConfig, Trainer};

const MAGIC: &[u8; 8] = b"JMPOSECK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    /// `(parameter index, buffer length)`
    moments: Vec<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct RngEntry {
    seed: u64,
    next_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ExperimentConfig,
    epoch: usize,
    rng: RngEntry,
    params: Vec<ParamEntry>,
    optimizers: Vec<OptimizerEntry>,
}

fn optimizer_entry(opt: &AdamW, payload: &mut Vec<f64>) -> OptimizerEntry {
    let mut moments = Vec::new();
    for (k, m, v) in opt.moments() {
        moments.push((k, m.len()));
        payload.extend_from_slice(m);
        payload.extend_from_slice(v);
    }
    OptimizerEntry { beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps, weight_decay: opt.weight_decay, step: opt.step, moments }
}

pub fn to_bytes(t: &Trainer) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(t.model.store.num_scalars());
    let params = t
        .model
        .store
        .iter()
        .map(|(name, tensor)| {
            payload.extend_from_slice(tensor.data());
            ParamEntry { name: name.to_string(), shape: tensor.shape().to_vec() }
        })
        .collect();
    let optimizers = vec![optimizer_entry(&t.model_opt, &mut payload), optimizer_entry(&t.estimator_opt, &mut payload)];
    let header = Header {
        config: t.config.clone(),
        epoch: t.epoch,
        rng: RngEntry { seed: t.config.seed, next_epoch: t.epoch },
        params,
        optimizers,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

struct Payload<'a> {
    bytes: &'a [u8],
}

impl Payload<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        if self.bytes.len() < 8 * n {
            return Err(Error::Checkpoint("payload is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(8 * n);
        self.bytes = rest;
        Ok(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect())
    }
}

fn read_optimizer(e: &OptimizerEntry, payload: &mut Payload) -> Result<AdamW> {
    let mut opt = AdamW::new(e.weight_decay);
    opt.beta1 = e.beta1;
    opt.beta2 = e.beta2;
    opt.eps = e.eps;
    opt.step = e.step;
    let moments = e
        .moments
        .iter()
        .map(|&(k, n)| Ok((k, payload.take(n)?, payload.take(n)?)))
        .collect::<Result<Vec<_>>>()?;
    opt.set_moments(moments);
    Ok(opt)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + len).ok_or_else(|| Error::Checkpoint("header is truncated".into()))?;
    let header: Header = serde_json::from_slice(json)?;
    let mut payload = Payload { bytes: &bytes[20 + len..] };
    let mut model = JmPose::new(header.config.model.clone(), header.config.variant, header.config.seed)?;
    let names: Vec<String> = model.store.iter().map(|(n, _)| n.to_string()).collect();
    if names.len() != header.params.len() {
        return Err(Error::Checkpoint(format!("{} parameters stored, model has {}", header.params.len(), names.len())));
    }
    for (i, entry) in header.params.iter().enumerate() {
        let id = crate::params::ParamId(i);
        if names[i] != entry.name || model.store.get(id).shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!("parameter {} {:?} does not match the model", entry.name, entry.shape)));
        }
        let n = entry.shape.iter().product();
        let data = payload.take(n)?;
        model.store.get_mut(id).data_mut().copy_from_slice(&data);
    }
    let [m, e] = header.optimizers.as_slice() else {
        return Err(Error::Checkpoint("expected two optimizer states".into()));
    };
    let model_opt = read_optimizer(m, &mut payload)?;
    let estimator_opt = read_optimizer(e, &mut payload)?;
    if !payload.bytes.is_empty() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    if header.rng.seed != header.config.seed || header.rng.next_epoch != header.epoch {
        return Err(Error::Checkpoint("inconsistent RNG state".into()));
    }
    Ok(Trainer { config: header.config, model, model_opt, estimator_opt, epoch: header.epoch })
}

pub fn save(t: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(t)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Trainer> {
    from_bytes(&std::fs::read(path)?)
}
