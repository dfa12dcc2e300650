//! Diagonal Gaussian action distributions.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use super::autodiff::{Graph, Var};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `0.5 * ln(2 pi)`.
pub fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_std.len());
        let log_std = log_std.into_iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        Self { mean, log_std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        assert_eq!(action.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.log_std)
            .zip(action)
            .map(|((m, ls), a)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - half_log_two_pi()
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + half_log_two_pi()).sum()
    }

    pub fn log_prob_and_entropy(&self, action: &[f64]) -> (f64, f64) {
        (self.log_prob(action), self.entropy())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let eps: f64 = rng.sample(StandardNormal);
                m + ls.exp() * eps
            })
            .collect()
    }
}

/// Per-row Gaussian log-density as an `n x 1` node.
pub fn log_prob(g: &mut Graph, mean: Var, log_std: Var, actions: Var) -> Var {
    let dim = g.value(mean).ncols() as f64;
    let diff = g.sub(actions, mean);
    let neg_ls = g.neg(log_std);
    let inv_std = g.exp(neg_ls);
    let z = g.mul(diff, inv_std);
    let z2 = g.square(z);
    let quad = g.sum_cols(z2);
    let quad = g.scale(quad, -0.5);
    let ls_sum = g.sum_cols(log_std);
    let lp = g.sub(quad, ls_sum);
    g.add_scalar(lp, -dim * half_log_two_pi())
}

/// Per-row entropy as an `n x 1` node.
pub fn entropy(g: &mut Graph, log_std: Var) -> Var {
    let dim = g.value(log_std).ncols() as f64;
    let s = g.sum_cols(log_std);
    g.add_scalar(s, dim * (0.5 + half_log_two_pi()))
}

/// Per-row `KL(old || new)` for diagonal Gaussians.
pub fn kl_divergence(g: &mut Graph, old_mean: Var, old_log_std: Var, mean: Var, log_std: Var) -> Var {
    let two_old = g.scale(old_log_std, 2.0);
    let old_var = g.exp(two_old);
    let diff = g.sub(old_mean, mean);
    let diff2 = g.square(diff);
    let num = g.add(old_var, diff2);
    let neg_two = g.scale(log_std, -2.0);
    let inv_var = g.exp(neg_two);
    let ratio = g.mul(num, inv_var);
    let ratio = g.scale(ratio, 0.5);
    let ls_diff = g.sub(log_std, old_log_std);
    let per = g.add(ls_diff, ratio);
    let per = g.add_scalar(per, -0.5);
    g.sum_cols(per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_prob_at_mode_unit_std() {
        let d = ActionDistribution::new(vec![0.3], vec![0.0]);
        assert!((d.log_prob(&[0.3]) + half_log_two_pi()).abs() < 1e-15);
    }

    #[test]
    fn entropy_unit_gaussian() {
        let d = ActionDistribution::new(vec![0.0], vec![0.0]);
        let expected = 0.5 * (2.0 * PI * std::f64::consts::E).ln();
        assert!((d.entropy() - expected).abs() < 1e-12);
        assert!((d.entropy() - 1.41894).abs() < 1e-5);
    }

    #[test]
    fn log_std_is_clamped() {
        let d = ActionDistribution::new(vec![0.0, 0.0], vec![-50.0, 9.0]);
        assert_eq!(d.log_std, vec![LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn graph_log_prob_matches_scalar() {
        let d = ActionDistribution::new(vec![0.2, -1.0], vec![-0.3, 0.4]);
        let a = [0.5, 0.1];
        let mut g = Graph::new();
        let m = g.constant(array![[0.2, -1.0]]);
        let ls = g.constant(array![[-0.3, 0.4]]);
        let act = g.constant(array![[0.5, 0.1]]);
        let lp = log_prob(&mut g, m, ls, act);
        assert!((g.scalar(lp) - d.log_prob(&a)).abs() < 1e-14);
        let h = entropy(&mut g, ls);
        assert!((g.scalar(h) - d.entropy()).abs() < 1e-14);
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut g = Graph::new();
        let m = g.constant(array![[0.2, -1.0]]);
        let ls = g.constant(array![[-0.3, 0.4]]);
        let kl = kl_divergence(&mut g, m, ls, m, ls);
        assert!(g.scalar(kl).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = ActionDistribution::new(vec![0.0, 1.0], vec![0.0, -1.0]);
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(3));
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
