use jmpose_core::data::pose::{BBox, Keypoint, PersonPose, JOINT_NAMES};
use jmpose_core::dataset::{select_challenging_subset, select_clean_subset, SyntheticDataSpec};
use jmpose_core::eval::{evaluate, pck_report};
use jmpose_core::model::{JmPose, ModelConfig, Variant};
use jmpose_core::Error;
use proptest::prelude::*;

fn pose(points: &[(f64, f64, bool)]) -> PersonPose {
    PersonPose::new(points.iter().map(|&(x, y, v)| Keypoint::new(x, y, v)).collect())
}

fn shifted(p: &PersonPose, shifts: &[(f64, f64)]) -> PersonPose {
    PersonPose::new(p.keypoints.iter().zip(shifts).map(|(k, &(dx, dy))| Keypoint::new(k.x + dx, k.y + dy, true)).collect())
}

#[test]
fn three_clip_toy_set_matches_hand_table() {
    // box diagonals 50, 100, 50 -> thresholds 10, 20, 10 at tau 0.2
    let boxes = [
        BBox { x0: 0.0, y0: 0.0, x1: 30.0, y1: 40.0 },
        BBox { x0: 10.0, y0: 10.0, x1: 70.0, y1: 90.0 },
        BBox { x0: 5.0, y0: 5.0, x1: 35.0, y1: 45.0 },
    ];
    let gts = [
        pose(&[(10.0, 10.0, true), (20.0, 20.0, true), (15.0, 30.0, false)]),
        pose(&[(30.0, 40.0, true), (50.0, 60.0, true), (40.0, 80.0, true)]),
        pose(&[(20.0, 20.0, true), (25.0, 30.0, true), (10.0, 40.0, true)]),
    ];
    let preds = [
        shifted(&gts[0], &[(6.0, 7.9), (11.0, 0.0), (0.0, 0.0)]),
        shifted(&gts[1], &[(-9.0, 12.0), (0.0, 0.0), (0.0, 25.0)]),
        shifted(&gts[2], &[(12.0, 0.0), (0.0, -3.0), (7.0, -7.0)]),
    ];
    // joint 0: hit, hit, miss; joint 1: miss, hit, hit; joint 2: (invisible), miss, hit
    let r = pck_report(&preds, &gts, &boxes, 0.2, "toy").unwrap();
    let want = [200.0 / 3.0, 200.0 / 3.0, 50.0];
    assert_eq!(r.per_joint.len(), 3);
    for (k, w) in want.iter().enumerate() {
        assert!((r.per_joint[JOINT_NAMES[k]] - w).abs() < 1e-12, "{}", JOINT_NAMES[k]);
    }
    assert!((r.map - (want.iter().sum::<f64>() / 3.0)).abs() < 1e-12);
    assert_eq!(r.num_clips, 3);
}

#[test]
fn perfect_predictions_score_100_and_displaced_score_0() {
    let spec = SyntheticDataSpec { num_clips: 5, seed: 9, ..Default::default() };
    let samples = spec.samples(ModelConfig::STRIDE).unwrap();
    let gts: Vec<PersonPose> = samples.iter().map(|s| s.keyframe_pose().clone()).collect();
    let boxes: Vec<BBox> = samples.iter().map(|s| s.person_box()).collect();
    let r = pck_report(&gts, &gts, &boxes, 0.2, "val").unwrap();
    assert_eq!(r.map, 100.0);
    assert!(r.per_joint.values().all(|&v| v == 100.0));

    let far: Vec<PersonPose> = gts
        .iter()
        .zip(&boxes)
        .map(|(g, b)| {
            let d = 0.3 * b.diagonal();
            PersonPose::new(g.keypoints.iter().map(|k| Keypoint::new(k.x + d, k.y, k.visible)).collect())
        })
        .collect();
    let r = pck_report(&far, &gts, &boxes, 0.2, "val").unwrap();
    assert_eq!(r.map, 0.0);
}

#[test]
fn empty_and_mismatched_inputs_are_errors() {
    assert!(matches!(pck_report(&[], &[], &[], 0.2, "x"), Err(Error::Dataset(_))));
    let p = pose(&[(1.0, 1.0, true)]);
    let b = BBox { x0: 0.0, y0: 0.0, x1: 3.0, y1: 4.0 };
    assert!(pck_report(&[p.clone(), p.clone()], &[p.clone()], &[b], 0.2, "x").is_err());
    let hidden = pose(&[(1.0, 1.0, false)]);
    assert!(pck_report(&[hidden.clone()], &[hidden], &[b], 0.2, "x").is_err());
    let model = JmPose::new(ModelConfig { layers: 1, backbone_widths: [4, 4, 4], fuse_channels: 4, channels: 4, ..Default::default() }, Variant::Full, 0).unwrap();
    assert!(matches!(evaluate(&model, &[], 0.2, "val"), Err(Error::Dataset(_))));
}

#[test]
fn subset_selection_filters_on_flags() {
    let mixed = SyntheticDataSpec { num_clips: 10, challenging_fraction: 0.4, seed: 5, ..Default::default() };
    let samples = mixed.samples(ModelConfig::STRIDE).unwrap();
    let hard = select_challenging_subset(&samples);
    assert_eq!(hard.len(), 4);
    assert!(hard.iter().all(|s| s.meta().occluded || s.meta().defocused));
    assert_eq!(select_clean_subset(&samples).len(), 6);

    let clean = SyntheticDataSpec { num_clips: 6, challenging_fraction: 0.0, seed: 5, ..Default::default() };
    assert!(select_challenging_subset(&clean.samples(ModelConfig::STRIDE).unwrap()).is_empty());
}

#[test]
fn model_evaluation_reports_a_mean_of_per_joint_scores() {
    let spec = SyntheticDataSpec { num_clips: 4, seed: 2, challenging_fraction: 1.0, ..Default::default() };
    let samples = spec.samples(ModelConfig::STRIDE).unwrap();
    let refs: Vec<_> = samples.iter().collect();
    let model = JmPose::new(ModelConfig { layers: 1, backbone_widths: [4, 4, 4], fuse_channels: 4, channels: 4, ..Default::default() }, Variant::Full, 0).unwrap();
    let r = evaluate(&model, &refs, 0.2, "val").unwrap();
    assert!(r.challenging_only);
    assert!(r.per_joint.values().all(|v| (0.0..=100.0).contains(v)));
    assert!((r.map - r.per_joint.values().sum::<f64>() / r.per_joint.len() as f64).abs() < 1e-12);
}

fn scene() -> impl Strategy<Value = Vec<(f64, f64, f64, f64, bool)>> {
    // (gt x, gt y, displacement as a multiple of the threshold, angle, visible)
    let ratio = prop_oneof![0.0f64..0.95, 1.05f64..3.0];
    prop::collection::vec((0.0f64..50.0, 0.0f64..50.0, ratio, 0.0f64..6.28, prop::bool::weighted(0.9)), 15)
}

proptest! {
    #[test]
    fn map_is_invariant_to_uniform_scaling(clips in prop::collection::vec((scene(), 5.0f64..40.0, 5.0f64..40.0), 1..5), s in 0.05f64..20.0) {
        let tau = 0.2;
        let mut gts = Vec::new();
        let mut preds = Vec::new();
        let mut boxes = Vec::new();
        for (joints, w, h) in &clips {
            let b = BBox { x0: 0.0, y0: 0.0, x1: *w, y1: *h };
            let thr = tau * b.diagonal();
            gts.push(PersonPose::new(joints.iter().map(|&(x, y, _, _, v)| Keypoint::new(x, y, v)).collect()));
            preds.push(PersonPose::new(joints.iter().map(|&(x, y, r, a, v)| Keypoint::new(x + r * thr * a.cos(), y + r * thr * a.sin(), v)).collect()));
            boxes.push(b);
        }
        prop_assume!(gts.iter().any(|p| p.keypoints.iter().any(|k| k.visible)));
        let scale = |ps: &[PersonPose]| -> Vec<PersonPose> {
            ps.iter().map(|p| PersonPose::new(p.keypoints.iter().map(|k| Keypoint::new(k.x * s, k.y * s, k.visible)).collect())).collect()
        };
        let base = pck_report(&preds, &gts, &boxes, tau, "a").unwrap();
        let sb: Vec<BBox> = boxes.iter().map(|b| b.scaled(s)).collect();
        let scaled = pck_report(&scale(&preds), &scale(&gts), &sb, tau, "a").unwrap();
        prop_assert_eq!(base, scaled);
    }
}
