//! Finite-difference validation of analytic gradients. For a random unit
//! direction v, the analytic directional derivative g.v is compared against
//! the central difference (f(th + h v) - f(th - h v)) / 2h.
//!
//! The evaluation closure receives f64 parameters and must evaluate the
//! objective in f64 (see [`super::shadow`]); perturbing the stored f32
//! tensors instead would bury small directional derivatives under storage
//! rounding noise. h = 1e-4 is small enough that crossing a ReLU kink is
//! vanishingly rare at the scales used in the tests, while curvature error
//! (O(h^2)) sits far below the tolerance.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::tensor::TensorF32;

/// Default half-step for central differences.
pub const DEFAULT_H: f64 = 1e-4;

/// Relative error floor: if both derivative estimates are below this, the
/// direction is treated as flat and passes.
pub const ABS_FLOOR: f64 = 1e-9;

/// Widens parameter tensors to one flat f64 vector (exact).
pub fn flatten(params: &[&TensorF32]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| p.data().iter().map(|&v| v as f64))
        .collect()
}

/// Random direction of unit Euclidean norm.
pub fn unit_direction(n: usize, rng: &mut ChaCha12Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl DirectionalCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.rel_err < tol
    }
}

/// Compares the analytic directional derivative of `eval` at `theta` along
/// `direction` against a central difference with half-step `h`.
pub fn directional(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    theta: &[f64],
    grad: &[f64],
    direction: &[f64],
    h: f64,
) -> DirectionalCheck {
    debug_assert_eq!(theta.len(), grad.len());
    debug_assert_eq!(theta.len(), direction.len());
    let analytic: f64 = grad
        .iter()
        .zip(direction)
        .map(|(&g, &d)| g * d)
        .sum();
    let plus: Vec<f64> = theta
        .iter()
        .zip(direction)
        .map(|(&t, &d)| t + h * d)
        .collect();
    let minus: Vec<f64> = theta
        .iter()
        .zip(direction)
        .map(|(&t, &d)| t - h * d)
        .collect();
    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    DirectionalCheck {
        analytic,
        numeric,
        rel_err: (analytic - numeric).abs() / denom,
    }
}

/// Runs `n_dirs` directional checks with fresh random directions; returns
/// the worst relative error observed.
pub fn check_many(
    eval: &mut dyn FnMut(&[f64]) -> f64,
    theta: &[f64],
    grad: &[f64],
    n_dirs: usize,
    h: f64,
    rng: &mut ChaCha12Rng,
) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..n_dirs {
        let dir = unit_direction(theta.len(), rng);
        let check = directional(eval, theta, grad, &dir, h);
        if check.rel_err > worst {
            worst = check.rel_err;
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn quadratic_gradient_verifies() {
        // f(x) = sum x_i^2, grad = 2x; central diff is exact for quadratics
        let theta = vec![0.3, -0.7, 1.2, 0.05];
        let grad: Vec<f64> = theta.iter().map(|&x| 2.0 * x).collect();
        let mut eval = |t: &[f64]| t.iter().map(|&x| x * x).sum::<f64>();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let worst = check_many(&mut eval, &theta, &grad, 20, DEFAULT_H, &mut rng);
        assert!(worst < 1e-9, "worst rel err {worst}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let theta = vec![0.3, -0.7, 1.2];
        let grad: Vec<f64> = theta.iter().map(|&x| 3.0 * x).collect(); // wrong scale
        let mut eval = |t: &[f64]| t.iter().map(|&x| x * x).sum::<f64>();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let worst = check_many(&mut eval, &theta, &grad, 5, DEFAULT_H, &mut rng);
        assert!(worst > 0.1, "expected detection, worst {worst}");
    }

    #[test]
    fn nonpolynomial_gradient_verifies() {
        // f(x) = sum sin(x_i) exp(x_i / 3)
        let theta: Vec<f64> = vec![0.4, -1.1, 2.0, 0.9, -0.2];
        let grad: Vec<f64> = theta
            .iter()
            .map(|&x| (x.cos() + x.sin() / 3.0) * (x / 3.0).exp())
            .collect();
        let mut eval = |t: &[f64]| t.iter().map(|&x| x.sin() * (x / 3.0).exp()).sum::<f64>();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let worst = check_many(&mut eval, &theta, &grad, 20, DEFAULT_H, &mut rng);
        assert!(worst < 1e-6, "worst rel err {worst}");
    }

    #[test]
    fn flatten_widens_exactly() {
        let a = TensorF32::new(vec![2], vec![1.5, -2.25]).unwrap();
        let flat = flatten(&[&a]);
        assert_eq!(flat, vec![1.5f64, -2.25f64]);
    }

    #[test]
    fn directions_have_unit_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for n in [1usize, 5, 100] {
            let d = unit_direction(n, &mut rng);
            let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }
}
