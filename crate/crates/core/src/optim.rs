//! AdamW with linear warmup and linear decay to zero.

use crate::numerics::ParamStore;
use crate::scalar::Real;

/// Learning rate as a function of the 1-based optimiser step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_max: f64,
    pub warmup: usize,
    pub total: usize,
}

impl Schedule {
    /// `warmup = ceil(ratio · total)`; products that land within 1e-9 of an
    /// integer are taken as that integer.
    pub fn new(lr_max: f64, ratio: f64, total: usize) -> Self {
        let x = ratio * total as f64;
        let w = if (x - x.round()).abs() < 1e-9 {
            x.round()
        } else {
            x.ceil()
        };
        Schedule {
            lr_max,
            warmup: (w.max(0.0) as usize).min(total),
            total,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let step = step.min(self.total);
        if step <= self.warmup {
            if self.warmup == 0 {
                return self.lr_max;
            }
            self.lr_max * step as f64 / self.warmup as f64
        } else {
            self.lr_max * (self.total - step) as f64 / (self.total - self.warmup) as f64
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<T>> = store
            .iter()
            .map(|p| vec![T::zero(); p.value.numel()])
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated `grad` of every parameter.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) {
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let one = T::one();
        let c1 = one - b1.powi(self.t as i32);
        let c2 = one - b2.powi(self.t as i32);
        let lr_t = T::lit(lr);
        let decay = one - lr_t * T::lit(self.weight_decay);
        let eps = T::lit(self.eps);
        for (k, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, x) in p.value.data_mut().iter_mut().enumerate() {
                let g = p.grad[i];
                *x *= decay;
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *x -= lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn schedule_examples() {
        let s = Schedule::new(5e-5, 0.06, 100);
        assert_eq!(s.warmup, 6);
        assert!((s.lr(3) - 2.5e-5).abs() < 1e-18);
        assert_eq!(s.lr(6), 5e-5);
        assert_eq!(s.lr(100), 0.0);
    }

    #[test]
    fn schedule_is_monotone() {
        for total in [1usize, 2, 7, 50, 100, 333] {
            for ratio in [0.0, 0.06, 0.07, 0.5, 1.0] {
                let s = Schedule::new(1.0, ratio, total);
                for k in 1..s.warmup {
                    assert!(s.lr(k + 1) > s.lr(k), "warmup {total} {ratio} {k}");
                }
                for k in s.warmup.max(1)..total {
                    assert!(s.lr(k + 1) < s.lr(k), "decay {total} {ratio} {k}");
                }
            }
        }
    }

    #[test]
    fn warmup_ignores_float_noise() {
        assert_eq!(Schedule::new(1.0, 0.07, 100).warmup, 7);
        assert_eq!(Schedule::new(1.0, 0.061, 100).warmup, 7);
    }

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(values.to_vec())).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = store(&[0.5, -1.25, 3.0]);
        let mut opt = AdamW::new(&s, 0.0);
        opt.step(&mut s, 0.1);
        assert_eq!(s.iter().next().unwrap().value.data(), &[0.5, -1.25, 3.0]);
    }

    #[test]
    fn matches_hand_computed_updates() {
        let (lr, wd) = (0.01, 0.1);
        let mut s = store(&[1.0]);
        let mut opt = AdamW::new(&s, wd);
        let grads = [0.5, -0.2, 0.3];
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            s.iter_mut().next().unwrap().grad[0] = g;
            opt.step(&mut s, lr);
            let t = (t + 1) as i32;
            x *= 1.0 - lr * wd;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            assert!((s.iter().next().unwrap().value.data()[0] - x).abs() < 1e-15);
        }
        assert_eq!(opt.steps(), 3);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store(&[0.0, 0.0]);
        s.iter_mut().next().unwrap().grad = vec![3.0, -1e-3];
        let mut opt = AdamW::new(&s, 0.0);
        opt.step(&mut s, 0.05);
        let d = s.iter().next().unwrap().value.data().to_vec();
        assert!((d[0] + 0.05).abs() < 1e-9);
        assert!((d[1] - 0.05).abs() < 1e-6);
    }
}
