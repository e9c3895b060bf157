//! First-order optimizers and the staged fitting driver.

pub mod fit_driver;
pub mod reparam;

pub use fit_driver::{run_full_fit, run_stage1_init, FitConfig, FitTrace, TraceRow};
pub use reparam::SmoothReparam;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Adam {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Adam variant whose second-moment normalizer is shared within each block
/// of consecutive coordinates (the per-block maximum of the per-coordinate
/// estimates), so all components of a block are scaled uniformly.
#[derive(Debug, Clone)]
pub struct AdamUniform {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub block: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamUniform {
    pub fn new(n: usize, block: usize) -> AdamUniform {
        assert!(block > 0 && n % block == 0);
        AdamUniform {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            block,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
        }
        for b in 0..params.len() / self.block {
            let lo = b * self.block;
            let hi = lo + self.block;
            let vmax = self.v[lo..hi]
                .iter()
                .fold(0.0f64, |a, &x| a.max(x));
            let denom = (vmax / c2).sqrt() + self.eps;
            for i in lo..hi {
                params[i] -= lr * (self.m[i] / c1) / denom;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0, 7.0];
        let mut opt = Adam::new(3);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|&xi| 2.0 * xi).collect();
            opt.step(&mut x, &g, 0.05);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-4), "{x:?}");
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // With bias correction the very first step has magnitude ~lr.
        let mut x = vec![1.0];
        let mut opt = Adam::new(1);
        opt.step(&mut x, &[1e-3], 0.01);
        assert!((x[0] - (1.0 - 0.01)).abs() < 1e-6, "{}", x[0]);
    }

    #[test]
    fn adam_uniform_scales_block_together() {
        // One block of 3 with very different gradient magnitudes: the
        // update direction must be parallel to the first moment (uniform
        // denominator), unlike per-coordinate Adam.
        let g = [1.0, 1e-3, 1e-6];
        let mut x = vec![0.0; 3];
        let mut opt = AdamUniform::new(3, 3);
        opt.step(&mut x, &g, 0.1);
        // Updates proportional to gradient components.
        let r01 = x[0] / x[1];
        let r12 = x[1] / x[2];
        assert!((r01 - 1e3).abs() / 1e3 < 1e-6, "{r01}");
        assert!((r12 - 1e3).abs() / 1e3 < 1e-6, "{r12}");
    }

    #[test]
    fn adam_uniform_matches_adam_for_block_one() {
        let g = [0.7, -0.3];
        let mut a = vec![0.5, -0.1];
        let mut b = a.clone();
        let mut oa = Adam::new(2);
        let mut ob = AdamUniform::new(2, 1);
        for _ in 0..10 {
            oa.step(&mut a, &g, 0.02);
            ob.step(&mut b, &g, 0.02);
        }
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
