//! Optimizers and gradient clipping.

use ndarray::ArrayD;

use crate::autograd::Scalar;
use crate::checkpoint::OptimizerState;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamSet};

/// Scale gradients in place so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm<F: Scalar>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter().flatten() {
        for v in g.iter() {
            let x = v.as_f64();
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = F::from_f64(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64, params: &ParamSet<F>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.entries().iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect(),
            v: params.entries().iter().map(|e| ArrayD::zeros(e.value.raw_dim())).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &Gradients<F>) {
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr = F::from_f64(self.lr);
        let eps = F::from_f64(self.eps);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(m).and(v).and(g).for_each(|m, v, gv| {
                *m = b1 * *m + (one - b1) * *gv;
                *v = b2 * *v + (one - b2) * *gv * *gv;
            });
            let value = params.value_mut(crate::params::ParamId(i));
            ndarray::Zip::from(value)
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, m, v| {
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

pub struct SgdMomentum<F: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    t: u64,
    velocity: Vec<ArrayD<F>>,
}

impl<F: Scalar> SgdMomentum<F> {
    pub fn new(lr: f64, params: &ParamSet<F>) -> Self {
        SgdMomentum {
            lr,
            momentum: 0.9,
            t: 0,
            velocity: params
                .entries()
                .iter()
                .map(|e| ArrayD::zeros(e.value.raw_dim()))
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &Gradients<F>) {
        self.t += 1;
        let mu = F::from_f64(self.momentum);
        let lr = F::from_f64(self.lr);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let vel = &mut self.velocity[i];
            ndarray::Zip::from(vel).and(g).for_each(|v, gv| {
                *v = mu * *v + *gv;
            });
            let value = params.value_mut(crate::params::ParamId(i));
            ndarray::Zip::from(value).and(&self.velocity[i]).for_each(|p, v| {
                *p = *p - lr * *v;
            });
        }
    }
}

pub enum Optimizer<F: Scalar> {
    Adam(Adam<F>),
    Sgd(SgdMomentum<F>),
}

impl<F: Scalar> Optimizer<F> {
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &Gradients<F>) {
        match self {
            Optimizer::Adam(o) => o.step(params, grads),
            Optimizer::Sgd(o) => o.step(params, grads),
        }
    }

    pub fn kind_tag(&self) -> u8 {
        match self {
            Optimizer::Adam(_) => 1,
            Optimizer::Sgd(_) => 2,
        }
    }

    /// Serialize moment buffers for checkpointing (f32 storage).
    pub fn to_state(&self, params: &ParamSet<F>) -> OptimizerState {
        let cast = |a: &ArrayD<F>| a.mapv(|v| v.as_f64() as f32);
        match self {
            Optimizer::Adam(o) => {
                let mut tensors = Vec::new();
                for (i, e) in params.entries().iter().enumerate() {
                    tensors.push((format!("adam.m.{}", e.name), cast(&o.m[i])));
                    tensors.push((format!("adam.v.{}", e.name), cast(&o.v[i])));
                }
                OptimizerState {
                    kind: 1,
                    t: o.t,
                    tensors,
                }
            }
            Optimizer::Sgd(o) => {
                let tensors = params
                    .entries()
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (format!("sgd.v.{}", e.name), cast(&o.velocity[i])))
                    .collect();
                OptimizerState {
                    kind: 2,
                    t: o.t,
                    tensors,
                }
            }
        }
    }

    pub fn from_state(state: &OptimizerState, lr: f64, params: &ParamSet<F>) -> Result<Self> {
        let lift = |a: &ArrayD<f32>| a.mapv(|v| F::from_f64(v as f64));
        match state.kind {
            1 => {
                let mut o = Adam::new(lr, params);
                o.t = state.t;
                if state.tensors.len() != 2 * params.len() {
                    return Err(Error::Checkpoint("adam state size mismatch".into()));
                }
                for (i, e) in params.entries().iter().enumerate() {
                    let (mn, m) = &state.tensors[2 * i];
                    let (vn, v) = &state.tensors[2 * i + 1];
                    if mn != &format!("adam.m.{}", e.name) || vn != &format!("adam.v.{}", e.name) {
                        return Err(Error::Checkpoint(format!(
                            "adam state order mismatch near {}",
                            e.name
                        )));
                    }
                    o.m[i] = lift(m);
                    o.v[i] = lift(v);
                }
                Ok(Optimizer::Adam(o))
            }
            2 => {
                let mut o = SgdMomentum::new(lr, params);
                o.t = state.t;
                if state.tensors.len() != params.len() {
                    return Err(Error::Checkpoint("sgd state size mismatch".into()));
                }
                for (i, (_, v)) in state.tensors.iter().enumerate() {
                    o.velocity[i] = lift(v);
                }
                Ok(Optimizer::Sgd(o))
            }
            k => Err(Error::Checkpoint(format!("unknown optimizer kind {k}"))),
        }
    }
}
