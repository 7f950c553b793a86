//! Finite-difference checks of the analytic gradients of the trainable blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{gradient_rel_error, numerical_gradient, Graph, Var};
use crate::error::{Error, Result};
use crate::mi::{io_loss, IoEstimators};
use crate::model::{aggregate_and_detect, jmml::jmib_layer, HeadParams, JmibParams, LayerState};
use crate::ops::deform::DeformableKernelSpec;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-3;
const EPS: f64 = 1e-5;

pub const MODULES: [&str; 4] = ["deform", "jmib", "head", "io"];

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckResult {
    pub module: String,
    /// Input or parameter name.
    pub wrt: String,
    pub rel_error: f64,
    pub passed: bool,
}

type Build<'a> = dyn Fn(&mut Graph, &ParamStore, &[Var]) -> Result<Var> + 'a;

/// Compares the analytic gradient of `sum(build(...) * probe)` with central differences,
/// for every input and every non-frozen parameter.
pub fn check(module: &str, inputs: &[(&str, Tensor)], store: &ParamStore, frozen: &[ParamId], build: &Build) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let mut g = Graph::new();
        g.freeze(frozen.iter().copied());
        let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let out = build(&mut g, store, &vars)?;
        g.value(out).shape().to_vec()
    };
    let probe = Tensor::randn(&probe_shape, 1.0, &mut rng);
    let eval = |g: &mut Graph, store: &ParamStore, vars: &[Var]| -> Result<Var> {
        let out = build(g, store, vars)?;
        let p = g.constant(probe.clone());
        let prod = g.mul(out, p)?;
        Ok(g.sum(prod))
    };
    let scalar = |inputs: &[Tensor], store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        g.freeze(frozen.iter().copied());
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let l = eval(&mut g, store, &vars)?;
        Ok(g.scalar(l))
    };

    let mut g = Graph::new();
    g.freeze(frozen.iter().copied());
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.input(t.clone())).collect();
    let loss = eval(&mut g, store, &vars)?;
    let grads = g.backward(loss)?;
    let values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut results = Vec::new();
    for (i, (name, t)) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()));
        let numeric = numerical_gradient(t, EPS, |x| {
            let mut v = values.clone();
            v[i] = x.clone();
            scalar(&v, store)
        })?;
        results.push(result(module, name, &analytic, &numeric));
    }
    for (id, analytic) in g.param_grads(&grads) {
        let numeric = numerical_gradient(store.get(id), EPS, |x| {
            let mut s = store.clone();
            *s.get_mut(id) = x.clone();
            scalar(&values, &s)
        })?;
        results.push(result(module, store.name(id), &analytic, &numeric));
    }
    Ok(results)
}

fn result(module: &str, wrt: &str, analytic: &Tensor, numeric: &Tensor) -> GradcheckResult {
    let rel_error = gradient_rel_error(analytic, numeric);
    GradcheckResult { module: module.to_string(), wrt: wrt.to_string(), rel_error, passed: rel_error < TOLERANCE }
}

/// Modulated deformable convolution w.r.t. motion, offsets, modulation and weight.
pub fn deform(seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = DeformableKernelSpec::new(3, 2);
    let (b, h, w) = (2, 5, 4);
    let inputs = [
        ("motion", Tensor::randn(&[b, 3, h, w], 1.0, &mut rng)),
        // keep samples away from integer grid points, where bilinear weights have kinks
        ("offsets", Tensor::uniform(&[b, spec.offset_channels(), h, w], -1.4, 1.4, &mut rng).map(|v| v.floor() + 0.2 + 0.6 * (v - v.floor()))),
        ("modulation", Tensor::uniform(&[b, spec.weight_channels(), h, w], 0.1, 0.9, &mut rng)),
        ("weight", Tensor::randn(&[2, 3, 3, 3], 0.5, &mut rng)),
        ("bias", Tensor::randn(&[2], 0.5, &mut rng)),
    ];
    check("deform", &inputs, &ParamStore::new(), &[], &|g, _, v| g.deform_conv(spec, v[0], v[1], v[2], v[3], Some(v[4])))
}

fn small_state_inputs(rng: &mut ChaCha8Rng, b: usize, c: usize, h: usize, w: usize) -> [(&'static str, Tensor); 2] {
    [("joint", Tensor::randn(&[b, c, h, w], 1.0, rng)), ("motion", Tensor::randn(&[b, c, h, w], 1.0, rng))]
}

/// One interaction block w.r.t. both input streams and all block parameters.
pub fn jmib(seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, h, w) = (2, 3, 3, 3);
    let mut store = ParamStore::new();
    let p = JmibParams::new(&mut store, 0, c, c, c, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        // non-zero biases so that no unit sits exactly at a ReLU kink
        if store.name(id).ends_with("bias") {
            let n = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::randn(&n, 0.3, &mut rng);
        }
    }
    let inputs = small_state_inputs(&mut rng, b, c, h, w);
    check("jmib", &inputs, &store, &[], &|g, s, v| {
        let (state, _) = jmib_layer(g, s, &p, LayerState { joint: v[0], motion: v[1], index: 0 }, true)?;
        g.concat(&[state.joint, state.motion])
    })
}

/// Detection head w.r.t. the final joint/motion features and head parameters.
pub fn head(seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, h, w, k) = (2, 3, 3, 3, 2);
    let mut store = ParamStore::new();
    let p = HeadParams::new(&mut store, 2 * c, c, k, &mut rng);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).ends_with("bias") {
            let n = store.get(id).shape().to_vec();
            *store.get_mut(id) = Tensor::randn(&n, 0.3, &mut rng);
        }
    }
    let inputs = small_state_inputs(&mut rng, b, c, h, w);
    check("head", &inputs, &store, &[], &|g, s, v| aggregate_and_detect(g, s, &p, v[0], Some(v[1])))
}

/// Information objective w.r.t. the features, estimators frozen.
pub fn io(seed: u64) -> Result<Vec<GradcheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, c, k, h, w) = (6, 3, 2, 2, 2);
    let mut store = ParamStore::new();
    let est = IoEstimators::new(&mut store, "mi.0", c, c, k, 5, &mut rng);
    let frozen = est.param_ids();
    let inputs = [
        ("motion", Tensor::randn(&[b, c, h, w], 1.0, &mut rng)),
        ("joint", Tensor::randn(&[b, c, h, w], 1.0, &mut rng)),
        ("h_hat", Tensor::randn(&[b, k, h, w], 1.0, &mut rng)),
    ];
    let results = check("io", &inputs, &store, &frozen, &|g, s, v| Ok(io_loss(g, s, &est, v[0], v[1], v[2])?.loss))?;
    if results.len() != inputs.len() {
        return Err(Error::Numerical("estimator parameters received gradients while frozen".into()));
    }
    Ok(results)
}

pub fn run(module: &str, seed: u64) -> Result<Vec<GradcheckResult>> {
    match module {
        "deform" => deform(seed),
        "jmib" => jmib(seed),
        "head" => head(seed),
        "io" => io(seed),
        "all" => {
            let mut out = Vec::new();
            for m in MODULES {
                out.extend(run(m, seed)?);
            }
            Ok(out)
        }
        other => Err(Error::Config(format!("unknown gradcheck module {other:?} (expected all, {})", MODULES.join(", ")))),
    }
}
