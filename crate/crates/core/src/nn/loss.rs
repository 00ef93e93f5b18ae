//! Scalar objectives and their gradients. Reductions accumulate in f64;
//! probabilities fed to logarithms are clamped away from {0, 1} and the
//! clamp count is surfaced so training loops can report saturation.

/// Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log.
pub const PROB_EPS: f64 = 1e-7;

pub fn mse(pred: &[f32], target: &[f32]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// d(mse)/d(pred)
pub fn mse_grad(pred: &[f32], target: &[f32]) -> Vec<f32> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| (2.0 * (a as f64 - b as f64) / n) as f32)
        .collect()
}

pub fn l1(pred: &[f32], target: &[f32]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum::<f64>()
        / n
}

/// d(l1)/d(pred); subgradient 0 at exact ties.
pub fn l1_grad(pred: &[f32], target: &[f32]) -> Vec<f32> {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            if d > 0.0 {
                (1.0 / n) as f32
            } else if d < 0.0 {
                (-1.0 / n) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// Euclidean norm of the residual, ||pred - target||_2 (no averaging).
pub fn l2_norm(pred: &[f32], target: &[f32]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// d(l2_norm)/d(pred) = (pred - target) / ||pred - target||; zero at the
/// nondifferentiable origin.
pub fn l2_norm_grad(pred: &[f32], target: &[f32]) -> Vec<f32> {
    let norm = l2_norm(pred, target);
    if norm == 0.0 {
        return vec![0.0; pred.len()];
    }
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| ((a as f64 - b as f64) / norm) as f32)
        .collect()
}

/// Cross-entropy of softmax(logits) against a class index, with gradient
/// softmax - onehot. Uses the max-shift trick for stability.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> (f64, Vec<f32>) {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = -(exps[label] / sum).max(PROB_EPS).ln();
    let grad = exps
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            let p = e / sum;
            (if i == label { p - 1.0 } else { p }) as f32
        })
        .collect();
    (loss, grad)
}

/// Softmax probabilities (stable); used for classifier predictions.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| (e / sum) as f32).collect()
}

/// mean(log p) over clamped probabilities; returns (value, clamp count).
pub fn mean_log(probs: &[f32]) -> (f64, usize) {
    let n = probs.len().max(1) as f64;
    let mut clamped = 0usize;
    let mut acc = 0.0f64;
    for &p in probs {
        let p = p as f64;
        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            clamped += 1;
        }
        acc += p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln();
    }
    (acc / n, clamped)
}

/// d(mean log p)/dp; zero where the clamp is active.
pub fn mean_log_grad(probs: &[f32]) -> Vec<f32> {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .map(|&p| {
            let p = p as f64;
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                (1.0 / (n * p)) as f32
            } else {
                0.0
            }
        })
        .collect()
}

/// mean(log(1 - p)) over clamped probabilities; returns (value, clamp count).
pub fn mean_log_one_minus(probs: &[f32]) -> (f64, usize) {
    let n = probs.len().max(1) as f64;
    let mut clamped = 0usize;
    let mut acc = 0.0f64;
    for &p in probs {
        let p = p as f64;
        if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
            clamped += 1;
        }
        acc += (1.0 - p.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln();
    }
    (acc / n, clamped)
}

/// d(mean log(1 - p))/dp; zero where the clamp is active.
pub fn mean_log_one_minus_grad(probs: &[f32]) -> Vec<f32> {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .map(|&p| {
            let p = p as f64;
            if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                (-1.0 / (n * (1.0 - p))) as f32
            } else {
                0.0
            }
        })
        .collect()
}

// f64 twins used by the finite-difference oracle, which must evaluate
// objectives without any f32 rounding.

pub fn mse64(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

pub fn l164(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let n = pred.len().max(1) as f64;
    pred.iter().zip(target).map(|(&a, &b)| (a - b).abs()).sum::<f64>() / n
}

pub fn mean_log64(probs: &[f64]) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .map(|&p| p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln())
        .sum::<f64>()
        / n
}

pub fn mean_log_one_minus64(probs: &[f64]) -> f64 {
    let n = probs.len().max(1) as f64;
    probs
        .iter()
        .map(|&p| (1.0 - p.clamp(PROB_EPS, 1.0 - PROB_EPS)).ln())
        .sum::<f64>()
        / n
}

pub fn softmax_cross_entropy64(logits: &[f64], label: usize) -> f64 {
    debug_assert!(label < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    -(exps[label] / sum).max(PROB_EPS).ln()
}
