//! Joint-motion mutual learning: stacked interaction blocks (cross-attention
//! exchange plus sigmoid channel-chunk gating), aggregation and detection head.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::params::{ConvParams, ParamStore};

#[derive(Clone, Debug, PartialEq)]
pub struct JmibParams {
    pub pre_joint: ConvParams,
    pub pre_motion: ConvParams,
    pub q_joint: ConvParams,
    pub k_joint: ConvParams,
    pub v_joint: ConvParams,
    pub q_motion: ConvParams,
    pub k_motion: ConvParams,
    pub v_motion: ConvParams,
    pub gate: ConvParams,
}

impl JmibParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, layer: usize, joint_in: usize, motion_in: usize, c: usize, rng: &mut R) -> Self {
        let n = |s: &str| format!("jmml.{layer}.{s}");
        Self {
            pre_joint: store.conv(&n("pre_joint"), joint_in, c, 3, rng),
            pre_motion: store.conv(&n("pre_motion"), motion_in, c, 3, rng),
            q_joint: store.conv(&n("q_joint"), c, c, 1, rng),
            k_joint: store.conv(&n("k_joint"), c, c, 1, rng),
            v_joint: store.conv(&n("v_joint"), c, c, 1, rng),
            q_motion: store.conv(&n("q_motion"), c, c, 1, rng),
            k_motion: store.conv(&n("k_motion"), c, c, 1, rng),
            v_motion: store.conv(&n("v_motion"), c, c, 1, rng),
            gate: store.conv(&n("gate"), 2 * c, 2 * c, 1, rng),
        }
    }
}

/// Joint and motion features after layer `index` (0 is the input pair).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerState {
    pub joint: Var,
    pub motion: Var,
    pub index: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CrossAttended {
    pub joint_att: Var,
    pub motion_att: Var,
    pub joint_pre: Var,
    pub motion_pre: Var,
    /// Attention nodes (their probabilities are kept on the tape).
    pub joint_attention: Var,
    pub motion_attention: Var,
}

fn pre_block(g: &mut Graph, store: &ParamStore, conv: ConvParams, x: Var) -> Result<Var> {
    let y = g.conv_layer(store, conv, x, 1)?;
    Ok(g.relu(y))
}

pub fn jmib_cross_attend(g: &mut Graph, store: &ParamStore, p: &JmibParams, state: LayerState) -> Result<CrossAttended> {
    let (js, ms) = (g.value(state.joint).shape().to_vec(), g.value(state.motion).shape().to_vec());
    if js.len() != 4 || ms.len() != 4 || js[0] != ms[0] || js[2..] != ms[2..] {
        return shape_err(format!("joint {:?} and motion {:?} streams disagree", js, ms));
    }
    let jp = pre_block(g, store, p.pre_joint, state.joint)?;
    let mp = pre_block(g, store, p.pre_motion, state.motion)?;
    let qj = g.conv_layer(store, p.q_joint, jp, 1)?;
    let kj = g.conv_layer(store, p.k_joint, jp, 1)?;
    let vj = g.conv_layer(store, p.v_joint, jp, 1)?;
    let qm = g.conv_layer(store, p.q_motion, mp, 1)?;
    let km = g.conv_layer(store, p.k_motion, mp, 1)?;
    let vm = g.conv_layer(store, p.v_motion, mp, 1)?;
    let att_j = g.attention(qj, km, vm)?;
    let att_m = g.attention(qm, kj, vj)?;
    let ja = g.add(att_j, jp)?;
    let ma = g.add(att_m, mp)?;
    Ok(CrossAttended { joint_att: ja, motion_att: ma, joint_pre: jp, motion_pre: mp, joint_attention: att_j, motion_attention: att_m })
}

/// Gating masks `(A_j, A_m)` in `(0, 1)` from the attended pair.
pub fn jmib_masks(g: &mut Graph, store: &ParamStore, p: &JmibParams, joint_att: Var, motion_att: Var) -> Result<(Var, Var)> {
    let x = g.concat(&[joint_att, motion_att])?;
    let logits = g.conv_layer(store, p.gate, x, 1)?;
    let s = g.sigmoid(logits);
    let c = g.value(joint_att).shape()[1];
    Ok((g.slice_channels(s, 0, c)?, g.slice_channels(s, c, c)?))
}

/// Rescales the pre-attention features with externally supplied masks.
pub fn apply_masks(g: &mut Graph, mask_j: Var, mask_m: Var, joint_pre: Var, motion_pre: Var, index: usize) -> Result<LayerState> {
    Ok(LayerState { joint: g.mul(mask_j, joint_pre)?, motion: g.mul(mask_m, motion_pre)?, index })
}

pub fn jmib_gate(g: &mut Graph, store: &ParamStore, p: &JmibParams, att: &CrossAttended, index: usize) -> Result<LayerState> {
    let (aj, am) = jmib_masks(g, store, p, att.joint_att, att.motion_att)?;
    apply_masks(g, aj, am, att.joint_pre, att.motion_pre, index)
}

/// One interaction block; `interact = false` keeps only the pre-convolutions.
pub fn jmib_layer(g: &mut Graph, store: &ParamStore, p: &JmibParams, state: LayerState, interact: bool) -> Result<(LayerState, Option<CrossAttended>)> {
    if !interact {
        let jp = pre_block(g, store, p.pre_joint, state.joint)?;
        let mp = pre_block(g, store, p.pre_motion, state.motion)?;
        return Ok((LayerState { joint: jp, motion: mp, index: state.index + 1 }, None));
    }
    let att = jmib_cross_attend(g, store, p, state)?;
    let next = jmib_gate(g, store, p, &att, state.index + 1)?;
    Ok((next, Some(att)))
}

pub struct JmmlOutput {
    pub last: LayerState,
    pub layers: Vec<LayerState>,
    pub attended: Vec<CrossAttended>,
}

pub fn jmml_forward(g: &mut Graph, store: &ParamStore, layers: &[JmibParams], initial: LayerState, interact: bool) -> Result<JmmlOutput> {
    if layers.is_empty() {
        return Err(crate::Error::InvalidArgument("mutual learning needs at least one layer".into()));
    }
    let mut state = initial;
    let mut states = Vec::with_capacity(layers.len());
    let mut attended = Vec::new();
    for p in layers {
        let (next, att) = jmib_layer(g, store, p, state, interact)?;
        states.push(next);
        attended.extend(att);
        state = next;
    }
    Ok(JmmlOutput { last: state, layers: states, attended })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub aggregate: ConvParams,
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

impl HeadParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, c: usize, num_joints: usize, rng: &mut R) -> Self {
        Self {
            aggregate: store.conv("head.aggregate", input, c, 3, rng),
            conv1: store.conv("head.conv1", c, c, 3, rng),
            conv2: store.conv("head.conv2", c, num_joints, 3, rng),
        }
    }
}

/// `S_t = relu(conv(J ++ M))` followed by two 3x3 convolutions to `K` heatmaps.
/// With `motion = None` the joint features alone feed the head.
pub fn aggregate_and_detect(g: &mut Graph, store: &ParamStore, p: &HeadParams, joint: Var, motion: Option<Var>) -> Result<Var> {
    let x = match motion {
        Some(m) => g.concat(&[joint, m])?,
        None => joint,
    };
    let s = g.conv_layer(store, p.aggregate, x, 1)?;
    let s = g.relu(s);
    let h = g.conv_layer(store, p.conv1, s, 1)?;
    let h = g.relu(h);
    g.conv_layer(store, p.conv2, h, 1)
}
