//! Adam with a stepped learning-rate decay schedule.

use super::real::Real;
use super::tape::ParamStore;
use super::tensor::Tensor;

/// First/second moment accumulators, one pair per parameter tensor.
///
/// `step` applies one update from the gradients currently in the store and
/// then clears them, so separate update streams should own separate states.
#[derive(Clone)]
pub struct AdamState<R> {
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    /// Update count, drives bias correction.
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplicative factor applied once per `decay_interval` global steps.
    pub lr_decay: f64,
    pub decay_interval: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(store: &ParamStore<R>, lr: f64) -> Self {
        let m = store.ids().map(|id| Tensor::zeros(store.value(id).shape())).collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            m,
            v,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_decay: 1.0,
            decay_interval: u64::MAX,
        }
    }

    pub fn effective_lr(&self, global_step: u64) -> f64 {
        let k = global_step / self.decay_interval.max(1);
        self.lr * self.lr_decay.powi(k.min(i32::MAX as u64) as i32)
    }

    /// One Adam update from the accumulated gradients; gradients are zeroed
    /// afterwards.
    pub fn step(&mut self, store: &mut ParamStore<R>, global_step: u64) {
        self.t += 1;
        let alpha = R::from_f64(self.effective_lr(global_step));
        let b1 = R::from_f64(self.beta1);
        let b2 = R::from_f64(self.beta2);
        let one = R::one();
        let bc1 = one - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = one - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let eps = R::from_f64(self.eps);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g_owned: Vec<R> = store.grad(id).data().to_vec();
            let mt = self.m[i].data_mut();
            let vt = self.v[i].data_mut();
            let pv = store.value_mut(id).data_mut();
            for j in 0..g_owned.len() {
                let g = g_owned[j];
                mt[j] = b1 * mt[j] + (one - b1) * g;
                vt[j] = b2 * vt[j] + (one - b2) * g * g;
                let mhat = mt[j] / bc1;
                let vhat = vt[j] / bc2;
                pv[j] = pv[j] - alpha * mhat / (vhat.sqrt() + eps);
            }
        }
        store.zero_grads();
    }

    /// Moment tensors in parameter order, for checkpointing.
    pub fn moments(&self) -> (&[Tensor<R>], &[Tensor<R>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, t: u64, m: Vec<Tensor<R>>, v: Vec<Tensor<R>>) {
        assert_eq!(m.len(), self.m.len(), "moment count mismatch");
        assert_eq!(v.len(), self.v.len(), "moment count mismatch");
        self.t = t;
        self.m = m;
        self.v = v;
    }
}
