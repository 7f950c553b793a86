use jmpose_core::autograd::Graph;
use jmpose_core::mi::*;
use jmpose_core::optim::AdamW;
use jmpose_core::params::ParamStore;
use jmpose_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> CalibrationConfig {
    CalibrationConfig::default()
}

#[test]
fn independent_gaussians_give_near_zero_bounds() {
    let lower = fit_lower(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.0, 1.0)).unwrap();
    let upper = fit_upper(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.0, 1.0)).unwrap();
    assert!((-0.05..=0.1).contains(&lower), "lower {lower}");
    assert!((-0.1..=0.1).contains(&upper), "upper {upper}");
}

#[test]
fn correlated_gaussians_bracket_the_closed_form() {
    let truth = gaussian_mi(0.9);
    assert!((truth - 0.8304).abs() < 1e-4);
    let lower = fit_lower(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.9, 1.0)).unwrap();
    let upper = fit_upper(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.9, 1.0)).unwrap();
    assert!((0.65..=0.84).contains(&lower), "lower {lower}");
    assert!((0.80..=1.10).contains(&upper), "upper {upper}");
    assert!(upper >= lower);
}

#[test]
fn identical_variables_give_a_large_lower_bound() {
    let est = fit_lower(&cfg(), 1, 1, |r, b| {
        let x = Tensor::randn(&[b, 1], 1.0, r);
        (x.clone(), x)
    })
    .unwrap();
    assert!(est >= 2.0, "{est}");
    assert!(est <= (256f64).ln() + 1e-9);
}

#[test]
fn upper_bound_is_invariant_to_rescaling_y() {
    let plain = fit_upper(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.5, 1.0)).unwrap();
    let scaled = fit_upper(&cfg(), 1, 1, |r, b| correlated_gaussians(r, b, 0.5, 10.0)).unwrap();
    assert!((plain - scaled).abs() <= 0.1, "{plain} vs {scaled}");
}

#[test]
fn conditioning_on_y_itself_reports_near_zero() {
    let est = fit_conditional(&cfg(), (1, 1, 1), |r, b| {
        let (x, y) = correlated_gaussians(r, b, 0.8, 1.0);
        (x, y.clone(), y)
    })
    .unwrap();
    let reported = report_nonnegative(est);
    assert!((0.0..=0.1).contains(&reported), "{est}");
}

#[test]
fn mutually_independent_triple_is_near_zero() {
    let est = fit_conditional(&cfg(), (1, 1, 1), |r, b| {
        (Tensor::randn(&[b, 1], 1.0, r), Tensor::randn(&[b, 1], 1.0, r), Tensor::randn(&[b, 1], 1.0, r))
    })
    .unwrap();
    assert!((-0.1..=0.1).contains(&est), "{est}");
}

#[test]
fn conditional_sum_with_unit_noise_matches_closed_form() {
    // Y = X + Z + eta with unit normals: I(X; Y | Z) = I(X; X + eta) = ln(2) / 2
    let truth = 0.5 * 2f64.ln();
    let est = fit_conditional(&cfg(), (1, 1, 1), |r, b| {
        let x = Tensor::randn(&[b, 1], 1.0, r);
        let z = Tensor::randn(&[b, 1], 1.0, r);
        let eta = Tensor::randn(&[b, 1], 1.0, r);
        let y = Tensor::from_vec(&[b, 1], (0..b).map(|i| x.data()[i] + z.data()[i] + eta.data()[i]).collect()).unwrap();
        (x, y, z)
    })
    .unwrap();
    assert!((truth - 0.3466).abs() < 1e-4);
    assert!((0.25..=0.55).contains(&est), "{est}");
}

#[test]
fn batch_of_one_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let lower = LowerEstimator::new(&mut store, "l", 1, 1, 8, 8, &mut rng);
    let upper = UpperEstimator::new(&mut store, "u", 1, 1, 8, &mut rng);
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 1]));
    let y = g.constant(Tensor::zeros(&[1, 1]));
    assert!(mi_lower_bound(&mut g, &store, &lower, x, y).is_err());
    assert!(mi_upper_bound(&mut g, &store, &upper, x, y).is_err());
}

fn io_setup(seed: u64) -> (ParamStore, IoEstimators, Tensor, Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let est = IoEstimators::new(&mut store, "io", 4, 3, 2, 16, &mut rng);
    let m = Tensor::randn(&[8, 4, 3, 3], 1.0, &mut rng);
    let j = Tensor::randn(&[8, 3, 3, 3], 1.0, &mut rng);
    let h = Tensor::randn(&[8, 2, 3, 3], 1.0, &mut rng);
    (store, est, m, j, h)
}

#[test]
fn io_loss_is_the_signed_sum_of_its_terms() {
    let (store, est, m, j, h) = io_setup(3);
    let mut g = Graph::new();
    let (mv, jv, hv) = (g.input(m.clone()), g.input(j.clone()), g.input(h.clone()));
    let terms = io_loss(&mut g, &store, &est, mv, jv, hv).unwrap();

    // each term recomputed on its own graph from the same pooled inputs
    let mut g2 = Graph::new();
    let (mp, jp, hp) = (g2.constant(m), g2.constant(j), g2.constant(h));
    let (mp, jp, hp) = (pool_features(&mut g2, mp).unwrap(), pool_features(&mut g2, jp).unwrap(), pool_features(&mut g2, hp).unwrap());
    let a = mi_upper_bound(&mut g2, &store, &est.relevancy, mp, jp).unwrap();
    let b = mi_lower_bound(&mut g2, &store, &est.complement, jp, hp).unwrap();
    let c = conditional_mi_upper(&mut g2, &store, &est.redundancy, hp, jp, mp).unwrap();
    let (a, b, c) = (g2.scalar(a).max(0.0), g2.scalar(b), g2.scalar(c).max(0.0));
    assert_eq!(g.scalar(terms.relevancy), a);
    assert_eq!(g.scalar(terms.complement), b);
    assert_eq!(g.scalar(terms.redundancy), c);
    assert_eq!(g.scalar(terms.loss), a - b + c);
}

#[test]
fn assembly_of_mock_terms_is_exact() {
    for (a, b, c) in [(0.3, 0.7, 0.11), (1e-9, -2.5, 3.25), (0.0, 0.0, 0.0)] {
        let mut g = Graph::new();
        let (va, vb, vc) = (g.constant(Tensor::scalar(a)), g.constant(Tensor::scalar(b)), g.constant(Tensor::scalar(c)));
        let l = assemble_io(&mut g, va, vb, vc).unwrap();
        assert_eq!(g.scalar(l), a - b + c);
    }
}

#[test]
fn io_loss_feeds_features_and_withholds_estimator_gradients() {
    let (store, est, m, j, h) = io_setup(9);
    let mut g = Graph::new();
    let (mv, jv, hv) = (g.input(m), g.input(j), g.input(h));
    let terms = io_loss(&mut g, &store, &est, mv, jv, hv).unwrap();
    let grads = g.backward(terms.loss).unwrap();
    assert!(g.param_grads(&grads).is_empty());
    let gj = grads.get(jv).expect("feature gradient");
    assert!(gj.data().iter().any(|v| *v != 0.0));
}

#[test]
fn io_loss_rejects_single_sample_batches() {
    let (store, est, m, j, h) = io_setup(1);
    let mut g = Graph::new();
    let one = |t: &Tensor| Tensor::from_vec(&[1, t.shape()[1], 3, 3], t.sample(0).to_vec()).unwrap();
    let (mv, jv, hv) = (g.input(one(&m)), g.input(one(&j)), g.input(one(&h)));
    assert!(io_loss(&mut g, &store, &est, mv, jv, hv).is_err());
}

#[test]
fn independent_joint_features_give_small_io_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let est = IoEstimators::new(&mut store, "io", 2, 2, 2, 32, &mut rng);
    let mut opt = AdamW::new(0.0);
    let draw = |r: &mut ChaCha8Rng| {
        let m = Tensor::randn(&[128, 2], 1.0, r);
        let noise = Tensor::randn(&[128, 2], 0.5, r);
        // heatmaps depend on motion; joints are pure noise
        let h = m.zip_map(&noise, |a, b| a + b).unwrap();
        let j = Tensor::randn(&[128, 2], 1.0, r);
        (m, j, h)
    };
    for _ in 0..800 {
        let (m, j, h) = draw(&mut rng);
        let mut g = Graph::new();
        let obj = io_estimator_objective(&mut g, &store, &est, &m, &j, &h).unwrap();
        let grads = g.backward(obj).unwrap();
        opt.step(&mut store, &g.param_grads(&grads), 2e-3).unwrap();
    }
    let mut total = 0.0;
    for _ in 0..10 {
        let (m, j, h) = draw(&mut rng);
        let mut g = Graph::new();
        let (m, j, h) = (g.constant(m), g.constant(j), g.constant(h));
        let l = io_loss(&mut g, &store, &est, m, j, h).unwrap().loss;
        total += g.scalar(l);
    }
    let loss = total / 10.0;
    assert!(loss.abs() <= 0.3, "{loss}");
}
