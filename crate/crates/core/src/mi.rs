//! Variational mutual-information bounds and the information-orthogonality loss.
//!
//! * lower bound: InfoNCE with a separable critic `f(x) . g(y)`;
//! * upper bound: leave-one-out bound with a Gaussian conditional predictor
//!   `q(y | x) = N(mu(x), exp(logvar(x)))`, fitted by likelihood on the positives;
//! * conditional bound: `upper(X; Y ++ Z) - upper(X; Z)` with a chain-rule
//!   predictor `q(z | x) q(y | x, z)` for the joint term.
//!
//! Estimator parameters live in the shared store under a caller-chosen prefix.
//! The loss-side entry points freeze them on the graph; estimators are trained
//! separately through the `*_fit_objective` functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{require_batch, Graph, Var};
use crate::error::{Error, Result};
use crate::optim::AdamW;
use crate::params::{LinearParams, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: LinearParams,
    pub out: LinearParams,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let out = store.linear(&format!("{name}.out"), hidden, output, rng);
        let std = (1.0 / hidden as f64).sqrt();
        *store.get_mut(out.weight) = Tensor::randn(&[output, hidden], std, rng);
        Self { hidden: store.linear(&format!("{name}.hidden"), input, hidden, rng), out }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = g.linear_layer(store, self.hidden, x)?;
        let h = g.relu(h);
        g.linear_layer(store, self.out, h)
    }

    fn ids(&self) -> [ParamId; 4] {
        [self.hidden.weight, self.hidden.bias, self.out.weight, self.out.bias]
    }
}

/// Gaussian conditional predictor `q(y | x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UpperEstimator {
    pub mu: Mlp,
    pub logvar: Mlp,
}

impl UpperEstimator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dx: usize, dy: usize, hidden: usize, rng: &mut R) -> Self {
        Self { mu: Mlp::new(store, &format!("{name}.mu"), dx, hidden, dy, rng), logvar: Mlp::new(store, &format!("{name}.logvar"), dx, hidden, dy, rng) }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mu.ids().into_iter().chain(self.logvar.ids()).collect()
    }

    /// `L[i, j] = log q(y_j | x_i)`.
    pub fn loglik(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let mu = self.mu.forward(g, store, x)?;
        let lv = self.logvar.forward(g, store, x)?;
        g.gaussian_loglik(mu, lv, y)
    }
}

/// Separable critic `S = f(X) g(Y)^T`.
#[derive(Clone, Debug, PartialEq)]
pub struct LowerEstimator {
    pub f: Mlp,
    pub g: Mlp,
}

impl LowerEstimator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dx: usize, dy: usize, hidden: usize, embed: usize, rng: &mut R) -> Self {
        Self { f: Mlp::new(store, &format!("{name}.f"), dx, hidden, embed, rng), g: Mlp::new(store, &format!("{name}.g"), dy, hidden, embed, rng) }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.f.ids().into_iter().chain(self.g.ids()).collect()
    }

    pub fn scores(&self, g: &mut Graph, store: &ParamStore, x: Var, y: Var) -> Result<Var> {
        let fx = self.f.forward(g, store, x)?;
        let gy = self.g.forward(g, store, y)?;
        g.matmul_nt(fx, gy)
    }
}

/// Chain-rule predictor `q(y, z | x) = q(z | x) q(y | x, z)`. A diagonal Gaussian over
/// `y ++ z` cannot express how `y` depends on `z`, which biases the difference low.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalEstimator {
    /// `q(z | x)`, shared by both terms of the difference
    pub marginal: UpperEstimator,
    /// `q(y | x, z)`
    pub given: UpperEstimator,
}

impl ConditionalEstimator {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dx: usize, dy: usize, dz: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            marginal: UpperEstimator::new(store, &format!("{name}.marginal"), dx, dz, hidden, rng),
            given: UpperEstimator::new(store, &format!("{name}.given"), dx + dz, dy, hidden, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.marginal.param_ids().into_iter().chain(self.given.param_ids()).collect()
    }
}

fn batch_of(g: &Graph, x: Var, y: Var) -> Result<usize> {
    let (bx, _) = g.value(x).dims2()?;
    let (by, _) = g.value(y).dims2()?;
    if bx != by {
        return Err(Error::Shape(format!("unaligned batches of {bx} and {by}")));
    }
    require_batch(bx, "mutual information")?;
    Ok(bx)
}

/// Contrastive lower bound on `I(X; Y)` in nats.
pub fn mi_lower_bound(g: &mut Graph, store: &ParamStore, est: &LowerEstimator, x: Var, y: Var) -> Result<Var> {
    batch_of(g, x, y)?;
    let s = est.scores(g, store, x, y)?;
    g.infonce(s)
}

/// Leave-one-out upper bound on `I(X; Y)` in nats.
pub fn mi_upper_bound(g: &mut Graph, store: &ParamStore, est: &UpperEstimator, x: Var, y: Var) -> Result<Var> {
    batch_of(g, x, y)?;
    let l = est.loglik(g, store, x, y)?;
    g.l1out(l)
}

/// Upper-bound estimate of `I(X; Y | Z)` as `upper(X; Y ++ Z) - upper(X; Z)`;
/// unclamped (see [`report_nonnegative`]).
pub fn conditional_mi_upper(g: &mut Graph, store: &ParamStore, est: &ConditionalEstimator, x: Var, y: Var, z: Var) -> Result<Var> {
    batch_of(g, x, y)?;
    batch_of(g, x, z)?;
    let lz = est.marginal.loglik(g, store, x, z)?;
    let pairs = g.pair_rows(x, z)?;
    let mu = est.given.mu.forward(g, store, pairs)?;
    let lv = est.given.logvar.forward(g, store, pairs)?;
    let ly = g.gaussian_loglik_pairs(mu, lv, y)?;
    let lyz = g.add(lz, ly)?;
    let joint = g.l1out(lyz)?;
    let marginal = g.l1out(lz)?;
    g.sub(joint, marginal)
}

pub fn report_nonnegative(v: f64) -> f64 {
    v.max(0.0)
}

/// Negative mean log-likelihood of the positive pairs (minimized to fit `q`).
pub fn upper_fit_objective(g: &mut Graph, store: &ParamStore, est: &UpperEstimator, x: Var, y: Var) -> Result<Var> {
    batch_of(g, x, y)?;
    let l = est.loglik(g, store, x, y)?;
    let d = g.diag_mean(l)?;
    Ok(g.scale(d, -1.0))
}

pub fn lower_fit_objective(g: &mut Graph, store: &ParamStore, est: &LowerEstimator, x: Var, y: Var) -> Result<Var> {
    let b = mi_lower_bound(g, store, est, x, y)?;
    Ok(g.scale(b, -1.0))
}

pub fn conditional_fit_objective(g: &mut Graph, store: &ParamStore, est: &ConditionalEstimator, x: Var, y: Var, z: Var) -> Result<Var> {
    let a = upper_fit_objective(g, store, &est.marginal, x, z)?;
    let xz = g.concat(&[x, z])?;
    let b = upper_fit_objective(g, store, &est.given, xz, y)?;
    g.add(a, b)
}

/// The three estimators behind one layer's `L_IO`.
#[derive(Clone, Debug, PartialEq)]
pub struct IoEstimators {
    /// `upper(M; J)`
    pub relevancy: UpperEstimator,
    /// `lower(J; H)`
    pub complement: LowerEstimator,
    /// `upper(H; J | M)`
    pub redundancy: ConditionalEstimator,
}

impl IoEstimators {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, motion_dim: usize, joint_dim: usize, heatmap_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            relevancy: UpperEstimator::new(store, &format!("{name}.relevancy"), motion_dim, joint_dim, hidden, rng),
            complement: LowerEstimator::new(store, &format!("{name}.complement"), joint_dim, heatmap_dim, hidden, hidden, rng),
            redundancy: ConditionalEstimator::new(store, &format!("{name}.redundancy"), heatmap_dim, joint_dim, motion_dim, hidden, rng),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.relevancy.param_ids();
        ids.extend(self.complement.param_ids());
        ids.extend(self.redundancy.param_ids());
        ids
    }
}

#[derive(Clone, Copy, Debug)]
pub struct IoTerms {
    pub loss: Var,
    pub relevancy: Var,
    pub complement: Var,
    pub redundancy: Var,
}

/// `[B, C, H, W]` features to `[B, C]` vectors; `[B, C]` passes through.
pub fn pool_features(g: &mut Graph, x: Var) -> Result<Var> {
    match g.value(x).shape().len() {
        4 => g.global_avg_pool(x),
        2 => Ok(x),
        _ => Err(Error::Shape(format!("cannot pool {:?}", g.value(x).shape()))),
    }
}

/// `L_IO = [upper(M; J)]+ - lower(J; H) + [upper(H; J | M)]+` on pooled features.
/// Estimator parameters are frozen: gradients reach the features only.
pub fn io_loss(g: &mut Graph, store: &ParamStore, est: &IoEstimators, m: Var, j: Var, h_hat: Var) -> Result<IoTerms> {
    g.freeze(est.param_ids());
    let (m, j, h) = (pool_features(g, m)?, pool_features(g, j)?, pool_features(g, h_hat)?);
    // information is non-negative: an upper-bound estimate below zero carries no signal
    let relevancy = mi_upper_bound(g, store, &est.relevancy, m, j)?;
    let relevancy = g.relu(relevancy);
    let complement = mi_lower_bound(g, store, &est.complement, j, h)?;
    let redundancy = conditional_mi_upper(g, store, &est.redundancy, h, j, m)?;
    let redundancy = g.relu(redundancy);
    let loss = assemble_io(g, relevancy, complement, redundancy)?;
    Ok(IoTerms { loss, relevancy, complement, redundancy })
}

/// `a - b + c`
pub fn assemble_io(g: &mut Graph, relevancy: Var, complement: Var, redundancy: Var) -> Result<Var> {
    let d = g.sub(relevancy, complement)?;
    g.add(d, redundancy)
}

/// Fit objective of all three estimators on detached pooled features.
pub fn io_estimator_objective(g: &mut Graph, store: &ParamStore, est: &IoEstimators, m: &Tensor, j: &Tensor, h_hat: &Tensor) -> Result<Var> {
    let m = g.constant(m.clone());
    let j = g.constant(j.clone());
    let h = g.constant(h_hat.clone());
    let a = upper_fit_objective(g, store, &est.relevancy, m, j)?;
    let b = lower_fit_objective(g, store, &est.complement, j, h)?;
    let c = conditional_fit_objective(g, store, &est.redundancy, h, j, m)?;
    let ab = g.add(a, b)?;
    g.add(ab, c)
}

/// Closed-form `I(X; Y)` for unit-variance jointly Gaussian scalars with correlation `rho`.
pub fn gaussian_mi(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub hidden: usize,
    /// Batches averaged for the final estimate.
    pub eval_batches: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { batch: 256, steps: 1500, lr: 2e-3, hidden: 64, eval_batches: 20, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub rho: f64,
    pub truth: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Draws `b` pairs `(x, y)` of unit normals with correlation `rho`; `y` is multiplied by `y_scale`.
pub fn correlated_gaussians<R: Rng + ?Sized>(rng: &mut R, b: usize, rho: f64, y_scale: f64) -> (Tensor, Tensor) {
    let e1 = Tensor::randn(&[b, 1], 1.0, rng);
    let e2 = Tensor::randn(&[b, 1], 1.0, rng);
    let s = (1.0 - rho * rho).sqrt();
    let y = e1.zip_map(&e2, |a, c| y_scale * (rho * a + s * c)).expect("same shape");
    (e1, y)
}

/// Trains a fresh estimator on a stream of batches and returns the mean estimate over
/// `eval_batches` fresh batches. `sample` yields aligned `(x, y)` batches.
pub fn fit_upper<F>(cfg: &CalibrationConfig, dx: usize, dy: usize, mut sample: F) -> Result<f64>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> (Tensor, Tensor),
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let est = UpperEstimator::new(&mut store, "upper", dx, dy, cfg.hidden, &mut rng);
    let mut opt = AdamW::new(0.0);
    for _ in 0..cfg.steps {
        let (x, y) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y) = (g.constant(x), g.constant(y));
        let obj = upper_fit_objective(&mut g, &store, &est, x, y)?;
        let grads = g.backward(obj)?;
        let pg = g.param_grads(&grads);
        opt.step(&mut store, &pg, cfg.lr)?;
    }
    let mut total = 0.0;
    for _ in 0..cfg.eval_batches {
        let (x, y) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y) = (g.constant(x), g.constant(y));
        let v = mi_upper_bound(&mut g, &store, &est, x, y)?;
        total += g.scalar(v);
    }
    Ok(total / cfg.eval_batches as f64)
}

pub fn fit_lower<F>(cfg: &CalibrationConfig, dx: usize, dy: usize, mut sample: F) -> Result<f64>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> (Tensor, Tensor),
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut store = ParamStore::new();
    let est = LowerEstimator::new(&mut store, "lower", dx, dy, cfg.hidden, cfg.hidden, &mut rng);
    let mut opt = AdamW::new(0.0);
    for _ in 0..cfg.steps {
        let (x, y) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y) = (g.constant(x), g.constant(y));
        let obj = lower_fit_objective(&mut g, &store, &est, x, y)?;
        let grads = g.backward(obj)?;
        let pg = g.param_grads(&grads);
        opt.step(&mut store, &pg, cfg.lr)?;
    }
    let mut total = 0.0;
    for _ in 0..cfg.eval_batches {
        let (x, y) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y) = (g.constant(x), g.constant(y));
        let v = mi_lower_bound(&mut g, &store, &est, x, y)?;
        total += g.scalar(v);
    }
    Ok(total / cfg.eval_batches as f64)
}

/// Conditional estimate from samples `(x, y, z)`; returns the unclamped value.
pub fn fit_conditional<F>(cfg: &CalibrationConfig, dims: (usize, usize, usize), mut sample: F) -> Result<f64>
where
    F: FnMut(&mut ChaCha8Rng, usize) -> (Tensor, Tensor, Tensor),
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut store = ParamStore::new();
    let est = ConditionalEstimator::new(&mut store, "cond", dims.0, dims.1, dims.2, cfg.hidden, &mut rng);
    let mut opt = AdamW::new(0.0);
    for _ in 0..cfg.steps {
        let (x, y, z) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y, z) = (g.constant(x), g.constant(y), g.constant(z));
        let obj = conditional_fit_objective(&mut g, &store, &est, x, y, z)?;
        let grads = g.backward(obj)?;
        let pg = g.param_grads(&grads);
        opt.step(&mut store, &pg, cfg.lr)?;
    }
    let mut total = 0.0;
    for _ in 0..cfg.eval_batches {
        let (x, y, z) = sample(&mut rng, cfg.batch);
        let mut g = Graph::new();
        let (x, y, z) = (g.constant(x), g.constant(y), g.constant(z));
        let v = conditional_mi_upper(&mut g, &store, &est, x, y, z)?;
        total += g.scalar(v);
    }
    Ok(total / cfg.eval_batches as f64)
}

/// Lower/upper estimates on 1-D correlated Gaussians for each `rho`.
pub fn gaussian_calibration(rhos: &[f64], cfg: &CalibrationConfig) -> Result<Vec<CalibrationRow>> {
    rhos.iter()
        .map(|&rho| {
            let lower = fit_lower(cfg, 1, 1, |r, b| correlated_gaussians(r, b, rho, 1.0))?;
            let upper = fit_upper(cfg, 1, 1, |r, b| correlated_gaussians(r, b, rho, 1.0))?;
            Ok(CalibrationRow { rho, truth: gaussian_mi(rho), lower, upper })
        })
        .collect()
}

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut s = String::from("rho,truth,lower,upper\n");
    for r in rows {
        s.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.rho, r.truth, r.lower, r.upper));
    }
    s
}
