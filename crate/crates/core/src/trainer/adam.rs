use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::{Gradients, ParamStore};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// One descent step on `grads` (gradients of a loss).
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, g) in grads.iter() {
            let m = self.m.get_mut(name)?;
            m.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(m, g)| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.v.get_mut(name)?;
            v.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(v, g)| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m = self.m.get(name)?.data();
            let v = self.v.get(name)?.data();
            let p = params.get_mut(name)?;
            for ((p, m), v) in p.data_mut().iter_mut().zip(m).zip(v) {
                let mh = m / bc1;
                let vh = v / bc2;
                *p -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::vector(vec![1.0, -2.0, 0.5]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = store();
        let before = p.clone();
        let mut opt = Adam::new(&p, 1e-3);
        let g = p.zeros_like();
        for _ in 0..10 {
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store();
        let mut opt = Adam::new(&p, 0.01);
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().data_mut().copy_from_slice(&[3.0, -0.2, 100.0]);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap().data();
        // bias-corrected first step is lr * sign(g), up to eps
        assert!((w[0] - 0.99).abs() < 1e-8);
        assert!((w[1] + 1.99).abs() < 1e-7);
        assert!((w[2] - 0.49).abs() < 1e-8);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = store();
        let mut opt = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let mut g = p.zeros_like();
            let w = p.get("w").unwrap().data().to_vec();
            g.get_mut("w").unwrap().data_mut().iter_mut().zip(&w).for_each(|(g, w)| *g = 2.0 * (w - 3.0));
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.get("w").unwrap().data().iter().all(|w| (w - 3.0).abs() < 1e-3));
    }
}
