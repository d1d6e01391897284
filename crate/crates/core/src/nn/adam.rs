use super::{Param, Real, TrainConfig};

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
        Self { m: zeros(), v: zeros() }
    }
}

/// One Adam update with bias correction at step `t` (1-based).
pub fn adam_step<T: Real>(params: &mut [Param<T>], grads: &[Vec<T>], state: &mut AdamState<T>, t: u64, cfg: &TrainConfig) {
    assert!(t >= 1, "adam step counter starts at 1");
    assert_eq!(params.len(), grads.len());
    let b1 = T::from_f64_lossy(cfg.adam_beta1);
    let b2 = T::from_f64_lossy(cfg.adam_beta2);
    let one = T::one();
    let c1 = T::from_f64_lossy(1.0 - cfg.adam_beta1.powf(t as f64));
    let c2 = T::from_f64_lossy(1.0 - cfg.adam_beta2.powf(t as f64));
    let lr = T::from_f64_lossy(cfg.learning_rate);
    let eps = T::from_f64_lossy(cfg.adam_eps);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &g), m), v) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
