//! Box-relative PCK average precision.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::heatmap::{decode_heatmaps, HeatmapStack};
use crate::data::pose::{BBox, PersonPose, JOINT_NAMES};
use crate::dataset::{make_batch, Sample};
use crate::error::{Error, Result};
use crate::model::{JmPose, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub challenging_only: bool,
    pub num_clips: usize,
    pub tau: f64,
    /// Percent, joints without any visible ground truth omitted.
    pub per_joint: BTreeMap<String, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
}

fn joint_name(k: usize) -> String {
    JOINT_NAMES.get(k).map(|s| s.to_string()).unwrap_or_else(|| format!("joint_{k}"))
}

/// A visible ground-truth joint counts as correct when the prediction lies within
/// `tau` times the person-box diagonal.
pub fn pck_report(preds: &[PersonPose], gts: &[PersonPose], boxes: &[BBox], tau: f64, split: &str) -> Result<MetricsReport> {
    if gts.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    if preds.len() != gts.len() || boxes.len() != gts.len() {
        return Err(Error::InvalidArgument(format!("{} predictions, {} annotations, {} boxes", preds.len(), gts.len(), boxes.len())));
    }
    let k = gts[0].num_joints();
    let mut correct = vec![0usize; k];
    let mut visible = vec![0usize; k];
    for ((p, gt), b) in preds.iter().zip(gts).zip(boxes) {
        if p.num_joints() != k || gt.num_joints() != k {
            return Err(Error::InvalidArgument("joint counts differ".into()));
        }
        let thr = tau * b.diagonal();
        for j in 0..k {
            let g = &gt.keypoints[j];
            if !g.visible {
                continue;
            }
            visible[j] += 1;
            let q = &p.keypoints[j];
            if (q.x - g.x).hypot(q.y - g.y) <= thr {
                correct[j] += 1;
            }
        }
    }
    let per_joint: BTreeMap<String, f64> =
        (0..k).filter(|&j| visible[j] > 0).map(|j| (joint_name(j), 100.0 * correct[j] as f64 / visible[j] as f64)).collect();
    if per_joint.is_empty() {
        return Err(Error::Dataset("no visible ground-truth joints".into()));
    }
    let map = per_joint.values().sum::<f64>() / per_joint.len() as f64;
    Ok(MetricsReport { split: split.to_string(), challenging_only: false, num_clips: gts.len(), tau, per_joint, map })
}

/// Decoded keyframe poses for `samples`, evaluated `batch` clips at a time.
pub fn predict_poses(model: &JmPose, samples: &[&Sample], batch: usize) -> Result<Vec<PersonPose>> {
    let cfg: &ModelConfig = &model.config;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let b = make_batch(chunk, None, cfg, 2.0)?;
        let hm = model.predict(&b.frames, &b.motion)?;
        let (_, k, h, w) = hm.dims4()?;
        for i in 0..chunk.len() {
            let maps = crate::Tensor::from_vec(&[k, h, w], hm.sample(i).to_vec())?;
            out.push(decode_heatmaps(&HeatmapStack::new(maps, ModelConfig::STRIDE as f64)?));
        }
    }
    Ok(out)
}

pub fn evaluate(model: &JmPose, samples: &[&Sample], tau: f64, split: &str) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Dataset(format!("split {split:?} is empty")));
    }
    let preds = predict_poses(model, samples, 16)?;
    let gts: Vec<PersonPose> = samples.iter().map(|s| s.keyframe_pose().clone()).collect();
    let boxes: Vec<BBox> = samples.iter().map(|s| s.person_box()).collect();
    let mut report = pck_report(&preds, &gts, &boxes, tau, split)?;
    report.challenging_only = samples.iter().all(|s| s.meta().challenging());
    Ok(report)
}
