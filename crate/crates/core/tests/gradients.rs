use jmpose_core::autograd::{Graph, Var};
use jmpose_core::gradcheck::{self, check, TOLERANCE};
use jmpose_core::mi::{conditional_mi_upper, mi_lower_bound, mi_upper_bound, ConditionalEstimator, LowerEstimator, UpperEstimator};
use jmpose_core::ops::deform::{deform_conv_forward, DeformableKernelSpec};
use jmpose_core::params::ParamStore;
use jmpose_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assert_all_pass(results: &[gradcheck::GradcheckResult]) {
    assert!(!results.is_empty());
    for r in results {
        assert!(r.passed && r.rel_error < TOLERANCE, "{} w.r.t. {}: {:e}", r.module, r.wrt, r.rel_error);
    }
}

#[test]
fn every_registered_module_passes() {
    for seed in [0, 1] {
        let results = gradcheck::run("all", seed).unwrap();
        for m in gradcheck::MODULES {
            assert!(results.iter().any(|r| r.module == m), "{m} missing");
        }
        assert_all_pass(&results);
    }
}

#[test]
fn deform_covers_all_four_inputs() {
    let results = gradcheck::run("deform", 3).unwrap();
    for wrt in ["motion", "offsets", "modulation", "weight"] {
        assert!(results.iter().any(|r| r.wrt.contains(wrt)), "no check against {wrt}: {results:?}");
    }
}

#[test]
fn unknown_module_is_a_config_error() {
    assert!(matches!(gradcheck::run("nope", 0), Err(jmpose_core::Error::Config(_))));
}

#[test]
fn bound_estimators_pass_against_inputs_and_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let lower = LowerEstimator::new(&mut store, "lower", 2, 3, 5, 4, &mut rng);
    let upper = UpperEstimator::new(&mut store, "upper", 2, 3, 5, &mut rng);
    let cond = ConditionalEstimator::new(&mut store, "cond", 3, 2, 2, 5, &mut rng);
    let x = Tensor::randn(&[5, 2], 1.0, &mut rng);
    let y = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let z = Tensor::randn(&[5, 2], 1.0, &mut rng);
    let inputs = [("x", x), ("y", y), ("z", z)];
    let build = |g: &mut Graph, s: &ParamStore, v: &[Var]| {
        let a = mi_lower_bound(g, s, &lower, v[0], v[1])?;
        let b = mi_upper_bound(g, s, &upper, v[0], v[1])?;
        let c = conditional_mi_upper(g, s, &cond, v[1], v[0], v[2])?;
        let ab = g.add(a, b)?;
        g.add(ab, c)
    };
    let results = check("bounds", &inputs, &store, &[], &build).unwrap();
    assert!(results.len() > 3);
    assert_all_pass(&results);
}

/// Central differences computed here, independently of the library helpers.
fn fd(f: &dyn Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Vec<f64> {
    (0..x.numel())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
        .collect()
}

#[test]
fn deform_conv_gradient_matches_local_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let spec = DeformableKernelSpec::new(2, 2);
    let m = Tensor::randn(&[1, 2, 4, 5], 1.0, &mut rng);
    // fractional offsets keep every sample away from the bilinear kinks
    let off = Tensor::uniform(&[1, 18, 4, 5], 0.1, 0.9, &mut rng);
    let mask = Tensor::uniform(&[1, 9, 4, 5], 0.0, 1.0, &mut rng);
    let w = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng);
    let probe = Tensor::randn(&[1, 2, 4, 5], 1.0, &mut rng);
    let objective = |m: &Tensor, off: &Tensor, mask: &Tensor, w: &Tensor| -> f64 {
        let out = deform_conv_forward(&spec, m, off, mask, w, None).unwrap();
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let mut g = Graph::new();
    let (vm, vo, vk, vw) = (g.input(m.clone()), g.input(off.clone()), g.input(mask.clone()), g.input(w.clone()));
    let out = g.deform_conv(spec, vm, vo, vk, vw, None).unwrap();
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();

    let rel = |a: &Tensor, n: &[f64]| {
        let num: f64 = a.data().iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
        num / den.max(1e-12)
    };
    let eps = 1e-6;
    let checks = [
        (grads.get(vm).unwrap(), fd(&|t| objective(t, &off, &mask, &w), &m, eps)),
        (grads.get(vo).unwrap(), fd(&|t| objective(&m, t, &mask, &w), &off, eps)),
        (grads.get(vk).unwrap(), fd(&|t| objective(&m, &off, t, &w), &mask, eps)),
        (grads.get(vw).unwrap(), fd(&|t| objective(&m, &off, &mask, t), &w, eps)),
    ];
    for (i, (a, n)) in checks.iter().enumerate() {
        assert!(rel(a, n) < 1e-6, "input {i}: {:e}", rel(a, n));
    }
}
