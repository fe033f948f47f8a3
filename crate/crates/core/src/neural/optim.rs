//! Decoupled-weight-decay Adam and the one-cycle learning-rate policy.

use super::tensor::ParamTensor;
use super::NeuralError;
use crate::scalar::Scalar;

/// Adam settings with decoupled weight decay.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NeuralError::InvalidConfig(format!(
                "betas must be in [0,1), got ({}, {})",
                self.beta1, self.beta2
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(NeuralError::InvalidConfig(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One bias-corrected Adam step with decoupled decay over every unfrozen
/// parameter: `θ ← θ − lr·wd·θ − lr·m̂/(√v̂+ε)` with `lr = cfg.lr · lr_scale`.
/// Frozen parameters are skipped entirely (no state advance).
pub fn adamw_step<T: Scalar>(
    params: &mut [ParamTensor<T>],
    cfg: &AdamWConfig,
    lr_scale: f64,
) -> Result<(), NeuralError> {
    cfg.validate()?;
    let lr = T::from_f64_lossy(cfg.lr * lr_scale);
    let beta1 = T::from_f64_lossy(cfg.beta1);
    let beta2 = T::from_f64_lossy(cfg.beta2);
    let eps = T::from_f64_lossy(cfg.eps);
    let wd = T::from_f64_lossy(cfg.weight_decay);
    let one = T::one();

    for p in params.iter_mut() {
        if p.frozen {
            continue;
        }
        if !p.grad.all_finite() {
            return Err(NeuralError::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
        p.step += 1;
        let bc1 = one - beta1.powi(p.step as i32);
        let bc2 = one - beta2.powi(p.step as i32);
        let n = p.value.len();
        for i in 0..n {
            let g = p.grad.data()[i];
            let m = beta1 * p.m.data()[i] + (one - beta1) * g;
            let v = beta2 * p.v.data()[i] + (one - beta2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let theta = p.value.data()[i];
            p.value.data_mut()[i] = theta - lr * wd * theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
        if !p.value.all_finite() {
            return Err(NeuralError::NonFinite {
                what: format!("parameter `{}` after optimizer step", p.name),
            });
        }
    }
    Ok(())
}

/// One-cycle policy: cosine warmup from `lr_max/div_start` to `lr_max` over
/// `warmup_frac` of the run, then cosine annealing to `lr_max/div_final`.
/// Momentum mirrors the cycle between `momentum_range.0` and `.1`.
#[derive(Debug, Clone, Copy)]
pub struct OneCycleConfig {
    pub lr_max: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
    pub div_start: f64,
    pub div_final: f64,
    pub momentum_range: (f64, f64),
}

impl OneCycleConfig {
    pub fn new(lr_max: f64, total_steps: u64) -> Self {
        Self {
            lr_max,
            total_steps,
            warmup_frac: 0.3,
            div_start: 25.0,
            div_final: 1e5,
            momentum_range: (0.95, 0.85),
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(NeuralError::InvalidConfig(format!(
                "warmup fraction must be in (0,1), got {}",
                self.warmup_frac
            )));
        }
        if self.div_start <= 1.0 || self.div_final <= 1.0 {
            return Err(NeuralError::InvalidConfig(
                "divisors must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

fn cosine_blend(from: f64, to: f64, frac: f64) -> f64 {
    from + (to - from) * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0
}

/// `(learning rate, momentum)` at a given step.
pub fn one_cycle(step: u64, cfg: &OneCycleConfig) -> (f64, f64) {
    let total = cfg.total_steps.max(1) as f64;
    let warm = (cfg.warmup_frac * total).max(1.0);
    let lr_start = cfg.lr_max / cfg.div_start;
    let lr_final = cfg.lr_max / cfg.div_final;
    let (m_hi, m_lo) = cfg.momentum_range;
    let s = (step as f64).min(total);
    if s < warm {
        let frac = s / warm;
        (
            cosine_blend(lr_start, cfg.lr_max, frac),
            cosine_blend(m_hi, m_lo, frac),
        )
    } else {
        let frac = ((s - warm) / (total - warm).max(1.0)).min(1.0);
        (
            cosine_blend(cfg.lr_max, lr_final, frac),
            cosine_blend(m_lo, m_hi, frac),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor;

    fn param(value: f64, grad: f64) -> ParamTensor<f64> {
        let mut p = ParamTensor::new("w", Tensor::scalar(value));
        p.grad = Tensor::scalar(grad);
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Bias correction makes m̂ = v̂ = 1 on the first step with g = 1.
        let mut params = [param(0.0, 1.0)];
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut params, &cfg, 1.0).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((params[0].value.item() - expected).abs() < 1e-15);
        assert_eq!(params[0].step, 1);
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut params = [param(0.7, 0.0)];
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut params, &cfg, 1.0).unwrap();
        assert_eq!(params[0].value.item(), 0.7);
    }

    #[test]
    fn decay_only_step() {
        let mut params = [param(1.0, 0.0)];
        let cfg = AdamWConfig {
            lr: 1e-3,
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        adamw_step(&mut params, &cfg, 1.0).unwrap();
        assert!((params[0].value.item() - (1.0 - 1e-4)).abs() < 1e-15);
    }

    #[test]
    fn wd_zero_matches_plain_adam_trajectory() {
        // Hand-rolled plain Adam as the second route.
        let mut p = param(0.3, 0.0);
        let cfg = AdamWConfig {
            lr: 2e-3,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, 0.3f64);
        for t in 1..=25u64 {
            let g = (t as f64 * 0.37).sin();
            p.grad = Tensor::scalar(g);
            adamw_step(std::slice::from_mut(&mut p), &cfg, 1.0).unwrap();

            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= 2e-3 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!(
                (p.value.item() - theta).abs() < 1e-15,
                "diverged at step {t}"
            );
        }
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut p = param(1.0, 5.0);
        p.frozen = true;
        adamw_step(std::slice::from_mut(&mut p), &AdamWConfig::default(), 1.0).unwrap();
        assert_eq!(p.value.item(), 1.0);
        assert_eq!(p.step, 0);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut p = param(1.0, f64::NAN);
        let err = adamw_step(std::slice::from_mut(&mut p), &AdamWConfig::default(), 1.0);
        assert!(matches!(err, Err(NeuralError::NonFiniteGradient { .. })));
    }

    #[test]
    fn one_cycle_endpoints_and_peak() {
        let cfg = OneCycleConfig::new(0.005, 1000);
        let (lr0, m0) = one_cycle(0, &cfg);
        assert!((lr0 - 0.005 / 25.0).abs() < 1e-15);
        assert!((m0 - 0.95).abs() < 1e-15);

        let (lr_peak, m_peak) = one_cycle(300, &cfg);
        assert!((lr_peak - 0.005).abs() < 1e-12);
        assert!((m_peak - 0.85).abs() < 1e-12);

        let (lr_end, m_end) = one_cycle(1000, &cfg);
        assert!((lr_end - 0.005 / 1e5).abs() < 1e-12);
        assert!((m_end - 0.95).abs() < 1e-12);
    }

    #[test]
    fn one_cycle_warmup_midpoint_matches_cosine_formula() {
        let cfg = OneCycleConfig::new(0.01, 1000);
        let (lr, _) = one_cycle(150, &cfg);
        let lr_start = 0.01 / 25.0;
        let expected = lr_start
            + (0.01 - lr_start) * (1.0 - (std::f64::consts::PI * 0.5).cos()) / 2.0;
        assert!((lr - expected).abs() < 1e-15);
    }

    #[test]
    fn one_cycle_is_continuous() {
        let cfg = OneCycleConfig::new(0.004, 1000);
        let mut prev = one_cycle(0, &cfg).0;
        let mut max_jump = 0.0f64;
        for step in 1..=1000 {
            let (lr, _) = one_cycle(step, &cfg);
            max_jump = max_jump.max((lr - prev).abs());
            prev = lr;
        }
        assert!(
            max_jump < cfg.lr_max / 100.0,
            "max adjacent jump {max_jump}"
        );
    }
}
