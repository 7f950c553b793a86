use jmpose_core::autograd::{Graph, Var};
use jmpose_core::checkpoint;
use jmpose_core::dataset::{make_batch, Sample, SyntheticDataSpec};
use jmpose_core::model::{ModelConfig, Variant};
use jmpose_core::optim::LrSchedule;
use jmpose_core::train::{heatmap_loss, total_loss, DataConfig, ExperimentConfig, Trainer};
use jmpose_core::{Error, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ExperimentConfig {
    let train = SyntheticDataSpec { num_clips: 6, seed: 3, ..Default::default() };
    let val = SyntheticDataSpec { num_clips: 4, seed: 4, challenging_fraction: 0.5, ..Default::default() };
    ExperimentConfig {
        epochs: 2,
        batch_size: 3,
        lr: LrSchedule { initial: 1e-3, milestones: vec![1], factor: 0.1 },
        model: ModelConfig { layers: 2, backbone_widths: [4, 4, 4], fuse_channels: 4, channels: 4, estimator_hidden: 8, ..Default::default() },
        data: DataConfig::synthetic(train, val),
        ..Default::default()
    }
}

fn data(cfg: &ExperimentConfig) -> (Vec<Sample>, Vec<Sample>) {
    (cfg.data.load_train(cfg.flow_provider).unwrap(), cfg.data.load_val(cfg.flow_provider).unwrap())
}

fn scalars(g: &mut Graph, v: &[f64]) -> Vec<Var> {
    v.iter().map(|&x| g.constant(Tensor::scalar(x))).collect()
}

#[test]
fn total_loss_examples() {
    let mut g = Graph::new();
    let l_h = g.constant(Tensor::scalar(1.0));
    let io = scalars(&mut g, &[0.1, 0.2, 0.3, 0.4]);
    let t = total_loss(&mut g, l_h, &io, 0.1, 4).unwrap();
    assert!((g.scalar(t) - 1.1).abs() < 1e-12);
    let zero = total_loss(&mut g, l_h, &io, 0.0, 4).unwrap();
    assert_eq!(g.scalar(zero), 1.0);
    assert!(total_loss(&mut g, l_h, &io[..3], 0.1, 4).is_err());
    assert!(total_loss(&mut g, l_h, &io, 0.1, 5).is_err());
}

#[test]
fn alpha_zero_gradient_is_pure_heatmap_gradient() {
    let mut g = Graph::new();
    let l_h = g.input(Tensor::scalar(0.7));
    let io: Vec<Var> = [0.5, -0.2].iter().map(|&v| g.input(Tensor::scalar(v))).collect();
    let t = total_loss(&mut g, l_h, &io, 0.0, 2).unwrap();
    let grads = g.backward(t).unwrap();
    assert_eq!(grads.get(l_h).unwrap().data(), &[1.0]);
    for v in io {
        assert!(grads.get(v).map_or(true, |t| t.data().iter().all(|x| *x == 0.0)));
    }
}

proptest! {
    #[test]
    fn total_loss_matches_scalar_oracle(l_h in -5.0f64..5.0, io in prop::collection::vec(-3.0f64..3.0, 1..6), alpha in 0.0f64..2.0) {
        let mut g = Graph::new();
        let h = g.constant(Tensor::scalar(l_h));
        let vars = scalars(&mut g, &io);
        let got = total_loss(&mut g, h, &vars, alpha, io.len()).unwrap();
        let want = l_h + alpha * io.iter().sum::<f64>();
        prop_assert!((g.scalar(got) - want).abs() <= 1e-7);

        let at = |g: &mut Graph, a: f64| { let t = total_loss(g, h, &vars, a, io.len()).unwrap(); g.scalar(t) };
        let (t0, t1, t2) = (at(&mut g, 0.0), at(&mut g, alpha), at(&mut g, 2.0 * alpha));
        prop_assert!(((t2 - t0) - 2.0 * (t1 - t0)).abs() <= 1e-9);
    }

    #[test]
    fn heatmap_loss_matches_nested_loop_mse(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = Tensor::uniform(&[2, 3, 5, 4], 0.0, 1.0, &mut rng);
        let pred = Tensor::randn(&[2, 3, 5, 4], 1.0, &mut rng);
        let mut want = 0.0;
        for b in 0..2 {
            for c in 0..3 {
                for y in 0..5 {
                    for x in 0..4 {
                        want += (pred.at4(b, c, y, x) - gt.at4(b, c, y, x)).powi(2);
                    }
                }
            }
        }
        want /= 120.0;
        let mut g = Graph::new();
        let (a, b) = (g.constant(gt), g.constant(pred));
        let l = heatmap_loss(&mut g, a, b).unwrap();
        prop_assert!((g.scalar(l) - want).abs() <= 1e-7);
    }
}

#[test]
fn heatmap_loss_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gt = Tensor::uniform(&[1, 15, 24, 18], 0.0, 1.0, &mut rng);
    let mut g = Graph::new();
    let (a, b) = (g.constant(gt.clone()), g.constant(gt));
    let l = heatmap_loss(&mut g, a, b).unwrap();
    assert_eq!(g.scalar(l), 0.0);

    let z = g.constant(Tensor::zeros(&[1, 15, 24, 18]));
    let half = g.constant(Tensor::full(&[1, 15, 24, 18], 0.5));
    let l = heatmap_loss(&mut g, z, half).unwrap();
    assert!((g.scalar(l) - 0.25).abs() < 1e-15);

    let other = g.constant(Tensor::zeros(&[1, 15, 24, 17]));
    assert!(heatmap_loss(&mut g, z, other).is_err());
}

#[test]
fn learning_rate_decays_by_exact_decades() {
    let s = LrSchedule::default();
    let epochs = [0, s.milestones[0], s.milestones[1], s.milestones[2]];
    assert_eq!(epochs.map(|e| s.lr_at(e)), [1e-4, 1e-5, 1e-6, 1e-7]);
    assert_eq!(s.lr_at(s.milestones[0] - 1), 1e-4);
    assert_eq!(s.lr_at(100), 1e-7);
}

#[test]
fn config_validation_rejects_bad_values() {
    let bad = [
        "alpha = -0.1",
        "batch_size = 1",
        "unknown_key = 3",
        "[model]\nlayers = 0",
        "[model]\ndelta = 0",
        "sigma_gt = 0.0",
    ];
    for text in bad {
        assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
    }
    let cfg = tiny();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
}

#[test]
fn zero_epochs_yield_the_initialized_model() {
    let mut cfg = tiny();
    cfg.epochs = 0;
    let (train, val) = data(&cfg);
    let fresh = Trainer::new(cfg.clone()).unwrap();
    let mut t = Trainer::new(cfg).unwrap();
    let history = t.run(&train, &val, |_, _| Ok(())).unwrap();
    assert!(history.is_empty());
    assert_eq!(t.epoch, 0);
    assert_eq!(checkpoint::to_bytes(&t).unwrap(), checkpoint::to_bytes(&fresh).unwrap());
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let mut cfg = tiny();
    cfg.epochs = 1;
    let (train, val) = data(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    t.run(&train, &val, |_, _| Ok(())).unwrap();
    let bytes = checkpoint::to_bytes(&t).unwrap();
    let loaded = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded).unwrap(), bytes);
    for ((na, a), (nb, b)) in t.model.store.iter().zip(loaded.model.store.iter()) {
        assert_eq!(na, nb);
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{na}");
    }
    assert_eq!(loaded, t);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    checkpoint::save(&t, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(checkpoint::load(&path).unwrap(), t);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let t = Trainer::new(tiny()).unwrap();
    let bytes = checkpoint::to_bytes(&t).unwrap();
    assert!(checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(checkpoint::from_bytes(&bad).is_err());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let cfg = tiny();
    let (train, val) = data(&cfg);
    let mut straight = Trainer::new(cfg.clone()).unwrap();
    let full_history = straight.run(&train, &val, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(ExperimentConfig { epochs: 1, ..cfg.clone() }).unwrap();
    first.run(&train, &val, |_, _| Ok(())).unwrap();
    let mut resumed = checkpoint::from_bytes(&checkpoint::to_bytes(&first).unwrap()).unwrap();
    resumed.config.epochs = cfg.epochs;
    let rest = resumed.run(&train, &val, |_, _| Ok(())).unwrap();

    assert_eq!(rest.last(), full_history.last());
    assert_eq!(checkpoint::to_bytes(&resumed).unwrap(), checkpoint::to_bytes(&straight).unwrap());
}

#[test]
fn fixed_seed_reruns_are_identical_and_seeds_matter() {
    let cfg = tiny();
    let (train, val) = data(&cfg);
    let go = |cfg: ExperimentConfig| {
        let mut t = Trainer::new(cfg).unwrap();
        let h = t.run(&train, &val, |_, _| Ok(())).unwrap();
        (h, checkpoint::to_bytes(&t).unwrap())
    };
    let a = go(cfg.clone());
    let b = go(cfg.clone());
    assert_eq!(a, b);
    let c = go(ExperimentConfig { seed: 1, ..cfg });
    assert_ne!(a.1, c.1);
}

#[test]
fn metrics_records_carry_the_reported_fields() {
    let cfg = tiny();
    let (train, val) = data(&cfg);
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let history = t.run(&train, &val, |_, _| Ok(())).unwrap();
    assert_eq!(history.len(), cfg.epochs);
    for (i, m) in history.iter().enumerate() {
        assert_eq!(m.epoch, i + 1);
        assert!(m.l_h.is_finite() && m.l_h > 0.0);
        assert_eq!(m.l_io.len(), cfg.model.layers);
        let map = m.map.expect("validated every epoch");
        assert!((0.0..=100.0).contains(&map));
        let mean = m.per_joint.values().sum::<f64>() / m.per_joint.len() as f64;
        assert!((mean - map).abs() < 1e-9);
        let line = serde_json::to_value(m).unwrap();
        for key in ["epoch", "l_h", "l_io", "mAP", "per_joint"] {
            assert!(line.get(key).is_some(), "{key}");
        }
    }
    assert_eq!(history[0].lr, 1e-3);
    assert_eq!(history[1].lr, 1e-4);
}

#[test]
fn nan_parameters_abort_with_a_batch_dump() {
    let cfg = tiny();
    let (train, _) = data(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    let id = t.model.store.find("head.conv2.bias").expect("head bias");
    t.model.store.get_mut(id).data_mut().fill(f64::NAN);
    match t.train_epoch(&train) {
        Err(Error::Numerical(msg)) => {
            let dump: serde_json::Value = serde_json::from_str(&msg).unwrap();
            assert_eq!(dump["epoch"], 0);
            assert_eq!(dump["batch"], 0);
            assert_eq!(dump["clips"].as_array().unwrap().len(), 3);
        }
        other => panic!("expected a numerical failure, got {other:?}"),
    }
}

#[test]
fn no_io_is_the_full_model_with_alpha_zero() {
    let cfg = tiny();
    let (train, _) = data(&cfg);
    let refs: Vec<&Sample> = train.iter().take(3).collect();
    let batch = make_batch(&refs, None, &cfg.model, cfg.sigma_gt).unwrap();
    let no_io = Trainer::new(ExperimentConfig { variant: Variant::NoIo, ..cfg.clone() }).unwrap();
    let zero = Trainer::new(ExperimentConfig { alpha: 0.0, ..cfg.clone() }).unwrap();
    let full = Trainer::new(cfg).unwrap();
    let (sa, ga, _) = no_io.loss_and_grads(&batch).unwrap();
    let (sb, gb, _) = zero.loss_and_grads(&batch).unwrap();
    let (sc, _, _) = full.loss_and_grads(&batch).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(ga.len(), gb.len());
    for ((ia, a), (ib, b)) in ga.iter().zip(&gb) {
        assert_eq!(ia, ib);
        assert_eq!(a, b);
    }
    assert_eq!(sa.total, sa.l_h);
    assert_eq!(sc.l_h, sa.l_h);
    assert_eq!(sc.l_io.len(), 2);
}

#[test]
fn training_needs_two_clips() {
    let cfg = tiny();
    let (train, _) = data(&cfg);
    let mut t = Trainer::new(cfg).unwrap();
    assert!(matches!(t.train_epoch(&train[..1]), Err(Error::Dataset(_))));
}
