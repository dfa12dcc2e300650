use ndarray::{Array2, Zip};

use super::autodiff::Mat;
use super::model::ModelParams;

/// Adaptive-moment optimizer over the canonical tensor list of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let zeros: Vec<Mat> = params
            .named_tensors()
            .iter()
            .map(|(_, t)| Array2::zeros(t.dim()))
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Mat]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let step_size = self.lr / bc1;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / ((*v / bc2).sqrt() + eps);
            });
        }
        params.round_to_storage();
    }
}

pub fn global_norm(grads: &[Mat]) -> f64 {
    grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| g.mapv_inplace(|x| x * k));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![array![[3.0, 0.0]], array![[4.0]]];
        let before = clip_global_norm(&mut g, 0.5);
        assert!((before - 5.0).abs() < 1e-12);
        assert!((global_norm(&g) - 0.5).abs() < 1e-12);
        let mut small = vec![array![[0.1]]];
        clip_global_norm(&mut small, 0.5);
        assert_eq!(small[0], array![[0.1]]);
    }
}
