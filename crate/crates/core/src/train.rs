//! Losses, experiment configuration and the training loop.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::data::augment::{AugmentParams, AugmentRanges};
use crate::dataset::{load_samples, make_batch, Batch, Sample, SyntheticDataSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::flow::FlowProviderKind;
use crate::mi::{io_estimator_objective, io_loss};
use crate::model::{JmPose, ModelConfig, Variant};
use crate::optim::{clip_grad_norm, AdamW, LrSchedule};
use crate::params::ParamId;
use crate::tensor::Tensor;

/// Mean squared error between predicted and ground-truth heatmaps.
pub fn heatmap_loss(g: &mut Graph, gt: Var, pred: Var) -> Result<Var> {
    g.mse(pred, gt)
}

/// `l_h + alpha * sum(l_io)`; with `alpha == 0` the result is `l_h` itself.
pub fn total_loss(g: &mut Graph, l_h: Var, l_io: &[Var], alpha: f64, layers: usize) -> Result<Var> {
    if l_io.len() != layers {
        return Err(Error::InvalidArgument(format!("{} information terms for {layers} layers", l_io.len())));
    }
    if alpha == 0.0 || l_io.is_empty() {
        return Ok(l_h);
    }
    let mut sum = l_io[0];
    for &v in &l_io[1..] {
        sum = g.add(sum, v)?;
    }
    let weighted = g.scale(sum, alpha);
    g.add(l_h, weighted)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub train_synthetic: Option<SyntheticDataSpec>,
    pub val_synthetic: Option<SyntheticDataSpec>,
}

impl DataConfig {
    pub fn synthetic(train: SyntheticDataSpec, val: SyntheticDataSpec) -> Self {
        Self { train_synthetic: Some(train), val_synthetic: Some(val), ..Default::default() }
    }

    fn load(dir: &Option<PathBuf>, spec: &Option<SyntheticDataSpec>, kind: FlowProviderKind, what: &str) -> Result<Vec<Sample>> {
        let stride = ModelConfig::STRIDE;
        match (dir, spec) {
            (Some(d), None) => load_samples(d, kind, stride),
            (None, Some(s)) => {
                if kind != FlowProviderKind::Oracle {
                    let stored = s.generate()?;
                    return stored
                        .into_iter()
                        .map(|c| {
                            let flows = Some(c.flows);
                            crate::dataset::sample_from_stored(crate::data::io::StoredClip { clip: c.clip, poses: c.poses, flows }, kind, stride)
                        })
                        .collect();
                }
                s.samples(stride)
            }
            (None, None) => Ok(Vec::new()),
            (Some(_), Some(_)) => Err(Error::Config(format!("{what}: give either a directory or a synthetic spec, not both"))),
        }
    }

    pub fn load_train(&self, kind: FlowProviderKind) -> Result<Vec<Sample>> {
        Self::load(&self.train_dir, &self.train_synthetic, kind, "train")
    }

    pub fn load_val(&self, kind: FlowProviderKind) -> Result<Vec<Sample>> {
        Self::load(&self.val_dir, &self.val_synthetic, kind, "val")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub sigma_gt: f64,
    pub variant: Variant,
    pub flow_provider: FlowProviderKind,
    pub weight_decay: f64,
    pub estimator_lr: f64,
    pub estimator_steps: usize,
    /// Global gradient-norm cap for the model update (0 disables clipping).
    pub grad_clip: f64,
    pub eval_tau: f64,
    /// Validate every n epochs (0 disables validation during training).
    pub eval_every: usize,
    pub lr: LrSchedule,
    pub model: ModelConfig,
    pub augment: AugmentRanges,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 20,
            batch_size: 8,
            alpha: 0.1,
            sigma_gt: 2.0,
            variant: Variant::Full,
            flow_provider: FlowProviderKind::Oracle,
            weight_decay: 1e-4,
            estimator_lr: 1e-3,
            estimator_steps: 1,
            grad_clip: 0.1,
            eval_tau: 0.2,
            eval_every: 1,
            lr: LrSchedule::default(),
            model: ModelConfig::default(),
            augment: AugmentRanges::default(),
            data: DataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.augment.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be a finite non-negative number");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2 (the information bounds contrast samples)");
        }
        if !(self.sigma_gt > 0.0) || !(self.eval_tau > 0.0) {
            return bad("sigma_gt and eval_tau must be positive");
        }
        if !(self.lr.initial > 0.0) || !(self.lr.factor > 0.0) || !(self.estimator_lr > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip >= 0.0) {
            return bad("learning rates must be positive and weight_decay non-negative");
        }
        Ok(())
    }

    /// `no_io` is the full model trained with `alpha = 0`.
    pub fn effective_alpha(&self) -> f64 {
        if self.variant.uses_io() {
            self.alpha
        } else {
            0.0
        }
    }
}

/// One JSONL metrics record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_h: f64,
    pub l_io: Vec<f64>,
    #[serde(rename = "mAP")]
    pub map: Option<f64>,
    pub per_joint: std::collections::BTreeMap<String, f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NanDump {
    pub epoch: usize,
    pub batch: usize,
    pub clips: Vec<usize>,
    pub l_h: f64,
    pub l_io: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub l_h: f64,
    pub l_io: Vec<f64>,
    pub total: f64,
}

/// Parameters, both optimizers and the epoch counter; everything a resume needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: ExperimentConfig,
    pub model: JmPose,
    pub model_opt: AdamW,
    pub estimator_opt: AdamW,
    /// Completed epochs.
    pub epoch: usize,
}

/// Data-order and augmentation stream of one epoch: a pure function of `(seed, epoch)`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

fn pooled(t: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = t.dims4()?;
    let n = (h * w) as f64;
    let data = (0..b * c).map(|i| t.data()[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / n).collect();
    Tensor::from_vec(&[b, c], data)
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = JmPose::new(config.model.clone(), config.variant, config.seed)?;
        Ok(Self { model_opt: AdamW::new(config.weight_decay), estimator_opt: AdamW::new(0.0), model, config, epoch: 0 })
    }

    fn uses_io(&self) -> bool {
        self.config.effective_alpha() > 0.0 && !self.model.estimators.is_empty()
    }

    /// Forward, loss and gradients for one batch, without touching the parameters.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(StepStats, Vec<(ParamId, Tensor)>, Vec<[Tensor; 3]>)> {
        let model = &self.model;
        let mut g = Graph::new().with_max_tokens(model.config.max_tokens);
        let out = model.forward(&mut g, &batch.frames, &batch.motion)?;
        let gt = g.constant(batch.targets.clone());
        let l_h = heatmap_loss(&mut g, gt, out.heatmaps)?;
        let mut io = Vec::new();
        let mut features = Vec::new();
        if self.uses_io() {
            for (state, est) in out.states.iter().zip(&model.estimators) {
                io.push(io_loss(&mut g, &model.store, est, state.motion, state.joint, out.h_hat)?.loss);
                features.push([pooled(g.value(state.motion))?, pooled(g.value(state.joint))?, pooled(g.value(out.h_hat))?]);
            }
        }
        let layers = io.len();
        let total = total_loss(&mut g, l_h, &io, self.config.effective_alpha(), layers)?;
        let stats = StepStats { l_h: g.scalar(l_h), l_io: io.iter().map(|&v| g.scalar(v)).collect(), total: g.scalar(total) };
        if !stats.total.is_finite() {
            return Ok((stats, Vec::new(), features));
        }
        let grads = g.backward(total)?;
        let model_ids: HashSet<ParamId> = model.model_ids().into_iter().collect();
        let grads = g.param_grads(&grads).into_iter().filter(|(id, _)| model_ids.contains(id)).collect();
        Ok((stats, grads, features))
    }

    fn estimator_update(&mut self, features: &[[Tensor; 3]]) -> Result<()> {
        for _ in 0..self.config.estimator_steps {
            let mut g = Graph::new();
            let mut objective: Option<Var> = None;
            for (est, [m, j, h]) in self.model.estimators.iter().zip(features) {
                let o = io_estimator_objective(&mut g, &self.model.store, est, m, j, h)?;
                objective = Some(match objective {
                    Some(acc) => g.add(acc, o)?,
                    None => o,
                });
            }
            let Some(objective) = objective else { return Ok(()) };
            if !g.scalar(objective).is_finite() {
                return Err(Error::Numerical(format!("estimator objective is {}", g.scalar(objective))));
            }
            let grads = g.backward(objective)?;
            let grads = g.param_grads(&grads);
            self.estimator_opt.step(&mut self.model.store, &grads, self.config.estimator_lr)?;
        }
        Ok(())
    }

    /// Runs epoch `self.epoch` over `train` and advances the counter.
    pub fn train_epoch(&mut self, train: &[Sample]) -> Result<EpochMetrics> {
        if train.len() < 2 {
            return Err(Error::Dataset("training needs at least two clips".into()));
        }
        let epoch = self.epoch;
        let lr = self.config.lr.lr_at(epoch);
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (h, w) = (self.config.model.height, self.config.model.width);
        let mut sum_h = 0.0;
        let mut sum_io = vec![0.0; self.model.estimators.len()];
        let mut steps = 0usize;
        let bs = self.config.batch_size;
        for (bi, idx) in order.chunks(bs).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let samples: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let params: Vec<AugmentParams> = idx.iter().map(|_| self.config.augment.sample(&mut rng, h, w)).collect();
            let batch = make_batch(&samples, Some(&params), &self.config.model, self.config.sigma_gt)?;
            let (stats, mut grads, features) = self.loss_and_grads(&batch)?;
            if !stats.total.is_finite() || grads.iter().any(|(_, g)| !g.is_finite()) {
                let dump = NanDump { epoch, batch: bi, clips: idx.to_vec(), l_h: stats.l_h, l_io: stats.l_io };
                return Err(Error::Numerical(serde_json::to_string(&dump)?));
            }
            clip_grad_norm(&mut grads, self.config.grad_clip);
            self.model_opt.step(&mut self.model.store, &grads, lr)?;
            if !features.is_empty() {
                self.estimator_update(&features)?;
            }
            sum_h += stats.l_h;
            for (a, v) in sum_io.iter_mut().zip(&stats.l_io) {
                *a += v;
            }
            steps += 1;
        }
        self.epoch += 1;
        let n = steps.max(1) as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            l_h: sum_h / n,
            l_io: if self.uses_io() { sum_io.iter().map(|v| v / n).collect() } else { Vec::new() },
            map: None,
            per_joint: Default::default(),
            lr,
        })
    }

    /// Trains until `config.epochs`, reporting every finished epoch to `on_epoch`.
    pub fn run(
        &mut self,
        train: &[Sample],
        val: &[Sample],
        mut on_epoch: impl FnMut(&EpochMetrics, &Trainer) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut history = Vec::new();
        while self.epoch < self.config.epochs {
            let mut m = self.train_epoch(train)?;
            let every = self.config.eval_every;
            if every > 0 && !val.is_empty() && (m.epoch % every == 0 || m.epoch == self.config.epochs) {
                let report = self.evaluate(val, "val")?;
                m.map = Some(report.map);
                m.per_joint = report.per_joint;
            }
            log::info!("epoch {} l_h {:.6} l_io {:?} mAP {:?}", m.epoch, m.l_h, m.l_io, m.map);
            on_epoch(&m, self)?;
            history.push(m);
        }
        Ok(history)
    }

    pub fn evaluate(&self, samples: &[Sample], split: &str) -> Result<MetricsReport> {
        let refs: Vec<&Sample> = samples.iter().collect();
        evaluate(&self.model, &refs, self.config.eval_tau, split)
    }
}

/// Trains `variant` under otherwise identical settings and reports validation metrics.
pub fn ablate(config: &ExperimentConfig, variant: Variant, train: &[Sample], val: &[Sample]) -> Result<MetricsReport> {
    let mut cfg = config.clone();
    cfg.variant = variant;
    cfg.eval_every = 0;
    let mut t = Trainer::new(cfg)?;
    t.run(train, val, |_, _| Ok(()))?;
    let mut report = t.evaluate(val, variant.as_str())?;
    report.split = format!("val/{}", variant.as_str());
    Ok(report)
}
