use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Adam with decoupled weight decay. Moment buffers are created lazily per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    moments: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, moments: BTreeMap::new() }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - self.beta1.powi(t), 1.0 - self.beta2.powi(t));
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = self.moments.entry(id.0).or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + self.eps);
                *w -= lr * (update + self.weight_decay * *w);
            }
        }
        Ok(())
    }

    /// Moment buffers `(param index, first, second)` in parameter order.
    pub fn moments(&self) -> impl Iterator<Item = (usize, &[f64], &[f64])> {
        self.moments.iter().map(|(&k, (m, v))| (k, m.as_slice(), v.as_slice()))
    }

    pub fn set_moments(&mut self, moments: Vec<(usize, Vec<f64>, Vec<f64>)>) {
        self.moments = moments.into_iter().map(|(k, m, v)| (k, (m, v))).collect();
    }
}

/// Rescales `grads` in place so that their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Step-decay schedule: `initial * factor^(number of milestones <= epoch)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { initial: 1e-4, milestones: vec![5, 10, 15], factor: 0.1 }
    }
}

impl LrSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let n = self.milestones.iter().filter(|&&m| m <= epoch).count();
        // exact decade values: 1e-4 -> 1e-5 -> 1e-6 -> 1e-7
        if self.factor == 0.1 {
            return decimal_shift(self.initial, n);
        }
        self.initial * self.factor.powi(n as i32)
    }
}

fn decimal_shift(v: f64, decades: usize) -> f64 {
    if decades == 0 {
        return v;
    }
    // parse through the decimal representation so that 1e-4 * 0.1 is 1e-5 exactly
    let s = format!("{:e}", v);
    let (mant, exp) = s.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    format!("{mant}e{}", exp - decades as i32).parse().expect("float literal")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decade_schedule_hits_exact_literals() {
        let s = LrSchedule { initial: 1e-4, milestones: vec![5, 10, 15], factor: 0.1 };
        assert_eq!([s.lr_at(0), s.lr_at(5), s.lr_at(10), s.lr_at(15)], [1e-4, 1e-5, 1e-6, 1e-7]);
        assert_eq!(s.lr_at(4), 1e-4);
        assert_eq!(s.lr_at(19), 1e-7);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![(ParamId(0), Tensor::from_vec(&[2], vec![3.0, 0.0]).unwrap()), (ParamId(1), Tensor::from_vec(&[1], vec![4.0]).unwrap())];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-15 && (g[1].1.data()[0] - 0.8).abs() < 1e-15);
        // already within the cap: untouched
        assert!((clip_grad_norm(&mut g, 10.0) - 1.0).abs() < 1e-12);
        assert_eq!(g[1].1.data()[0], 0.8);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, &[(id, Tensor::from_vec(&[2], vec![3.0, -0.5]).unwrap())], 0.1).unwrap();
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }
}
