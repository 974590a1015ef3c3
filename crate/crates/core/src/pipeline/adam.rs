use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    params: AdamParams,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: AdamParams, tensors: &[Tensor]) -> Self {
        let zeros = || tensors.iter().map(|t| alloc::vec![0.0; t.len()]).collect();
        Self {
            params,
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Updates `tensors` in place; `grads[i]` is `None` for a parameter the
    /// loss did not reach.
    pub fn step(&mut self, tensors: &mut [Tensor], grads: &[Option<Vec<f64>>]) {
        self.step += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, t) in tensors.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let update = (m[j] / c1) / (libm::sqrt(v[j] / c2) + eps);
                // `-0.0 - -0.0` is `+0.0`, so a zero rate must skip the write
                if self.lr != 0.0 {
                    *p -= self.lr * update;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut t = [Tensor::new(alloc::vec![3], alloc::vec![1.0, 1.0, 1.0]).unwrap()];
        let mut opt = Adam::new(0.1, AdamParams::default(), &t);
        opt.step(&mut t, &[Some(alloc::vec![2.0, -0.5, 0.0])]);
        let d = t[0].data();
        assert!((d[0] - 0.9).abs() < 1e-7);
        assert!((d[1] - 1.1).abs() < 1e-7);
        assert_eq!(d[2], 1.0);
    }

    #[test]
    fn minimises_quadratic() {
        let mut t = [Tensor::new(alloc::vec![2], alloc::vec![3.0, -2.0]).unwrap()];
        let mut opt = Adam::new(0.05, AdamParams::default(), &t);
        for _ in 0..2000 {
            let g = t[0].data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut t, &[Some(g)]);
        }
        assert!(t[0].data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn zero_rate_is_identity() {
        let orig = Tensor::new(alloc::vec![2], alloc::vec![0.3, -0.0]).unwrap();
        let mut t = [orig.clone()];
        let mut opt = Adam::new(0.0, AdamParams::default(), &t);
        for _ in 0..5 {
            opt.step(&mut t, &[Some(alloc::vec![1.0, -4.0])]);
        }
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t[0]), bits(&orig));
    }
}
