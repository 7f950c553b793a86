//! Context-aware joint learner: heatmap-guided modulated deformable retrieval
//! of joint features from the motion volume.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{shape_err, Result};
use crate::ops::DeformableKernelSpec;
use crate::params::{ConvParams, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

impl ResidualBlock {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, c: usize, rng: &mut R) -> Self {
        Self { conv1: store.conv(&format!("{name}.conv1"), c, c, 3, rng), conv2: store.conv(&format!("{name}.conv2"), c, c, 3, rng) }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = g.conv_layer(store, self.conv1, x, 1)?;
        let h = g.relu(h);
        let h = g.conv_layer(store, self.conv2, h, 1)?;
        let s = g.add(x, h)?;
        Ok(g.relu(s))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CjlParams {
    pub fuse: ConvParams,
    pub offset_res: ResidualBlock,
    pub offset_out: ConvParams,
    pub weight_res: ResidualBlock,
    pub weight_out: ConvParams,
    pub deform: ConvParams,
    pub spec: DeformableKernelSpec,
}

impl CjlParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        num_joints: usize,
        motion_channels: usize,
        fuse_channels: usize,
        joint_channels: usize,
        rng: &mut R,
    ) -> Self {
        let spec = DeformableKernelSpec::new(motion_channels, joint_channels);
        let fuse = store.conv("cjl.fuse", num_joints + motion_channels, fuse_channels, 3, rng);
        let offset_res = ResidualBlock::new(store, "cjl.offset.res", fuse_channels, rng);
        let offset_out = store.conv("cjl.offset.out", fuse_channels, spec.offset_channels(), 3, rng);
        let weight_res = ResidualBlock::new(store, "cjl.weight.res", fuse_channels, rng);
        let weight_out = store.conv("cjl.weight.out", fuse_channels, spec.weight_channels(), 3, rng);
        let k = spec.kernel_size;
        let deform = ConvParams {
            weight: store.add(
                "cjl.deform.weight",
                Tensor::randn(&[joint_channels, motion_channels, k, k], (2.0 / (motion_channels * k * k) as f64).sqrt(), rng),
            ),
            bias: store.add("cjl.deform.bias", Tensor::zeros(&[joint_channels])),
        };
        // start near the regular grid: small offsets
        store.get_mut(offset_out.weight).data_mut().iter_mut().for_each(|v| *v *= 0.05);
        Self { fuse, offset_res, offset_out, weight_res, weight_out, deform, spec }
    }
}

/// `R_t = relu(conv(H_hat ++ M))`
pub fn fuse(g: &mut Graph, store: &ParamStore, p: &CjlParams, h_hat: Var, m: Var) -> Result<Var> {
    let (hs, ms) = (g.value(h_hat).shape().to_vec(), g.value(m).shape().to_vec());
    if hs.len() != 4 || ms.len() != 4 || hs[0] != ms[0] || hs[2..] != ms[2..] {
        return shape_err(format!("fuse {:?} with {:?}", hs, ms));
    }
    let x = g.concat(&[h_hat, m])?;
    let r = g.conv_layer(store, p.fuse, x, 1)?;
    Ok(g.relu(r))
}

/// Offsets `JO` (`2 k^2` raw channels) and modulation `JW` (`k^2` channels in `(0, 1)`),
/// from two branches with disjoint parameters.
pub fn predict_offsets_weights(g: &mut Graph, store: &ParamStore, p: &CjlParams, r: Var) -> Result<(Var, Var)> {
    let o = p.offset_res.forward(g, store, r)?;
    let jo = g.conv_layer(store, p.offset_out, o, 1)?;
    let w = p.weight_res.forward(g, store, r)?;
    let jw = g.conv_layer(store, p.weight_out, w, 1)?;
    Ok((jo, g.sigmoid(jw)))
}

pub fn modulated_deformable_conv(g: &mut Graph, store: &ParamStore, p: &CjlParams, m: Var, jo: Var, jw: Var) -> Result<Var> {
    let w = g.param(store, p.deform.weight);
    let b = g.param(store, p.deform.bias);
    g.deform_conv(p.spec, m, jo, jw, w, Some(b))
}

/// `J_t` from `(H_hat, M)`.
pub fn cjl_forward(g: &mut Graph, store: &ParamStore, p: &CjlParams, h_hat: Var, m: Var) -> Result<Var> {
    let r = fuse(g, store, p, h_hat, m)?;
    let (jo, jw) = predict_offsets_weights(g, store, p, r)?;
    modulated_deformable_conv(g, store, p, m, jo, jw)
}
