//! Toy per-frame encoder and temporal heatmap aggregation.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::params::{ConvParams, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    /// Two stride-2 stages, then two stride-1 stages; the last one is linear.
    pub convs: Vec<ConvParams>,
    pub strides: Vec<usize>,
    pub aggregate: ConvParams,
}

impl BackboneParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        in_channels: usize,
        widths: [usize; 3],
        num_joints: usize,
        num_frames: usize,
        rng: &mut R,
    ) -> Self {
        let chans = [in_channels, widths[0], widths[1], widths[2], num_joints];
        let convs = (0..4).map(|i| store.conv(&format!("backbone.conv{i}"), chans[i], chans[i + 1], 3, rng)).collect();
        let aggregate = store.conv("backbone.aggregate", num_frames * num_joints, num_joints, 1, rng);
        let p = Self { convs, strides: vec![2, 2, 1, 1], aggregate };
        p.init_keyframe_aggregate(store);
        p
    }

    /// Sets the aggregation kernel to copy the keyframe block.
    pub fn init_keyframe_aggregate(&self, store: &mut ParamStore) {
        let w = store.get_mut(self.aggregate.weight);
        let (k, ck) = (w.shape()[0], w.shape()[1]);
        let center = (ck / k) / 2;
        w.data_mut().fill(0.0);
        for j in 0..k {
            w.data_mut()[j * ck + center * k + j] = 1.0;
        }
        store.get_mut(self.aggregate.bias).data_mut().fill(0.0);
    }

    pub fn total_stride(&self) -> usize {
        self.strides.iter().product()
    }
}

/// `[N, C_img, H, W]` frames to `[N, K, H / 4, W / 4]` heatmaps.
pub fn extract_heatmaps(g: &mut Graph, store: &ParamStore, p: &BackboneParams, frames: Var) -> Result<Var> {
    let mut x = frames;
    let last = p.convs.len() - 1;
    for (i, (&conv, &stride)) in p.convs.iter().zip(&p.strides).enumerate() {
        x = g.conv_layer(store, conv, x, stride)?;
        if i < last {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// Heatmaps of one `[C_img, H, W]` frame, evaluated without a tape.
pub fn extract_frame_heatmaps(store: &ParamStore, p: &BackboneParams, frame: &Tensor) -> Result<Tensor> {
    let s = frame.shape().to_vec();
    if s.len() != 3 || s[0] != store.get(p.convs[0].weight).shape()[1] {
        return shape_err(format!("frame {:?} does not match the encoder input", s));
    }
    let mut g = Graph::new();
    let x = g.constant(frame.clone().reshape(&[1, s[0], s[1], s[2]])?);
    let out = extract_heatmaps(&mut g, store, p, x)?;
    let o = g.value(out).shape().to_vec();
    g.value(out).clone().reshape(&o[1..])
}

/// `[B * T, K, h, w]` per-frame stacks (frame-major within each clip) to the
/// sequence-level `[B, K, h, w]` via a 1x1 convolution over the `T * K` channels.
pub fn aggregate_heatmaps(g: &mut Graph, store: &ParamStore, p: &BackboneParams, stacks: Var, num_frames: usize) -> Result<Var> {
    let (n, k, h, w) = g.value(stacks).dims4()?;
    if num_frames == 0 || n % num_frames != 0 {
        return shape_err(format!("{n} stacks cannot be grouped into clips of {num_frames}"));
    }
    if store.get(p.aggregate.weight).shape()[1] != num_frames * k {
        return shape_err(format!("aggregation expects {} channels", store.get(p.aggregate.weight).shape()[1]));
    }
    let grouped = g.reshape(stacks, &[n / num_frames, num_frames * k, h, w])?;
    g.conv_layer(store, p.aggregate, grouped, 1)
}
