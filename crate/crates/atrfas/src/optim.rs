//! Adam with bias correction.

use ndarr_core::Tensor;

use crate::net::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; `None` leaves
    /// that parameter and its moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i).data_mut();
            for k in 0..p.len() {
                let g = grad.data()[k] as f64;
                let mk = self.beta1 * m[k] as f64 + (1.0 - self.beta1) * g;
                let vk = self.beta2 * v[k] as f64 + (1.0 - self.beta2) * g * g;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let update = lr * (mk / c1) / ((vk / c2).sqrt() + self.eps);
                p[k] = (p[k] as f64 - update) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f32) -> ParamStore {
        let mut s = ParamStore::default();
        s.push("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = scalar_store(1.5);
        let mut adam = Adam::new(&p);
        for _ in 0..5 {
            adam.step(&mut p, &[Some(Tensor::scalar(0.0))], 0.1);
        }
        assert_eq!(p.get(0).item(), 1.5);
    }

    #[test]
    fn first_step_is_bounded_by_lr() {
        for g in [1e-3f32, 0.5, -40.0] {
            let mut p = scalar_store(0.0);
            let mut adam = Adam::with_betas(&p, 0.7, 0.95, 1e-8);
            adam.step(&mut p, &[Some(Tensor::scalar(g))], 0.01);
            let moved = p.get(0).item() as f64;
            assert!(moved.abs() <= 0.01 * (1.0 + 1e-6));
            assert!((moved + 0.01 * g.signum() as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn minimizes_square() {
        let mut p = scalar_store(1.0);
        let mut adam = Adam::new(&p);
        for _ in 0..100 {
            let x = p.get(0).item();
            adam.step(&mut p, &[Some(Tensor::scalar(2.0 * x))], 0.1);
        }
        assert!(p.get(0).item().abs() < 0.05, "x = {}", p.get(0).item());
    }
}
