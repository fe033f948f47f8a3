//! Loss functions in pure form; the graph carries their differentiable
//! counterparts (`Graph::smoothed_ce`, `Graph::mse`).

use super::NeuralError;
use crate::scalar::Scalar;

/// Label-smoothing settings: the one-hot target is mixed with the uniform
/// distribution at weight `epsilon`.
#[derive(Debug, Clone, Copy)]
pub struct SmoothedCeConfig {
    pub epsilon: f64,
    pub num_classes: usize,
}

impl Default for SmoothedCeConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            num_classes: 2,
        }
    }
}

impl SmoothedCeConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(NeuralError::InvalidConfig(format!(
                "label smoothing epsilon must be in [0,1), got {}",
                self.epsilon
            )));
        }
        if self.num_classes < 2 {
            return Err(NeuralError::InvalidConfig(format!(
                "label smoothing needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let denom: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Label-smoothed cross-entropy of one logit row against a class index:
/// with `p = softmax(logits)` and `t_k = ε/K + (1−ε)·[k = target]`, the loss
/// is `−Σ_k t_k·log p_k`.
pub fn label_smoothed_ce<T: Scalar>(
    logits: &[T],
    target: usize,
    cfg: &SmoothedCeConfig,
) -> Result<T, NeuralError> {
    cfg.validate()?;
    let k = logits.len();
    if k != cfg.num_classes || target >= k {
        return Err(NeuralError::shape(
            "label_smoothed_ce",
            format!("{k} logits, {} classes, target {target}", cfg.num_classes),
        ));
    }
    let eps = T::from_f64_lossy(cfg.epsilon);
    let uniform = eps / T::from_f64_lossy(k as f64);
    let confident = T::one() - eps;
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut denom = T::zero();
    for &x in logits {
        denom += (x - max).exp();
    }
    let log_denom = denom.ln();
    let mut loss = T::zero();
    for (j, &x) in logits.iter().enumerate() {
        let logp = x - max - log_denom;
        let tj = uniform + if j == target { confident } else { T::zero() };
        loss -= tj * logp;
    }
    Ok(loss)
}

/// Mean squared error.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, NeuralError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(NeuralError::shape(
            "mse_loss",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    let n = T::from_f64_lossy(pred.len() as f64);
    let mut total = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        total += d * d;
    }
    Ok(total / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_cost_ln_k() {
        for k in [2usize, 5, 10] {
            for eps in [0.0, 0.1, 0.5, 0.9] {
                let cfg = SmoothedCeConfig {
                    epsilon: eps,
                    num_classes: k,
                };
                let logits = vec![0.7f64; k];
                let loss = label_smoothed_ce(&logits, k - 1, &cfg).unwrap();
                assert!(
                    (loss - (k as f64).ln()).abs() < 1e-12,
                    "k={k} eps={eps}: {loss}"
                );
            }
        }
    }

    #[test]
    fn smoothed_ce_hand_example() {
        // softmax(ln p) = p, so feed log-probabilities directly.
        let logits = [0.9f64.ln(), 0.1f64.ln()];
        let cfg = SmoothedCeConfig {
            epsilon: 0.1,
            num_classes: 2,
        };
        let loss = label_smoothed_ce(&logits, 0, &cfg).unwrap();
        let expected = -(0.95 * 0.9f64.ln() + 0.05 * 0.1f64.ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.21522).abs() < 5e-6);
    }

    #[test]
    fn eps_zero_is_plain_cross_entropy() {
        let logits = [1.3f64, -0.2, 0.7, 2.2, -1.0];
        let cfg = SmoothedCeConfig {
            epsilon: 0.0,
            num_classes: 5,
        };
        let loss = label_smoothed_ce(&logits, 3, &cfg).unwrap();
        let p = softmax(&logits);
        assert!((loss - (-p[3].ln())).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&[4.2f64, -3.0, 0.1, 9.9]);
        let sum: f64 = p.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mse_loss(&[0.0f64, 1.0], &[0.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_two_pass_oracle() {
        let mut rng = crate::rng::stream(3, "mse", 0);
        use rand::Rng;
        let pred: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let target: Vec<f64> = (0..100).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let loss = mse_loss(&pred, &target).unwrap();
        // Independent two-pass computation.
        let diffs: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| p - t).collect();
        let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        assert!((loss - oracle).abs() < 1e-12);
    }
}
