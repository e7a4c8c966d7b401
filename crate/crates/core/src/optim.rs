//! Optimizers and schedules: LARS with weight-decay exclusions, heavy-ball
//! SGD, linear warmup into cosine decay, and the batch-size/K learning
//! rate scaling rule.

use crate::error::{Error, Result};
use crate::nn::{is_excluded_param, ParamSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExclusionRule {
    /// Biases and normalization parameters skip LARS adaptation and decay.
    BiasAndNorm,
    None,
}

impl ExclusionRule {
    pub fn excluded(&self, name: &str) -> bool {
        match self {
            ExclusionRule::BiasAndNorm => is_excluded_param(name),
            ExclusionRule::None => false,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bias_norm" => Ok(ExclusionRule::BiasAndNorm),
            "none" => Ok(ExclusionRule::None),
            other => Err(Error::Config(format!(
                "unknown exclusion rule '{other}' (expected bias_norm|none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ExclusionRule::BiasAndNorm => "bias_norm",
            ExclusionRule::None => "none",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub batch_size: usize,
    /// Views per image, part of the learning-rate scaling rule.
    pub k: usize,
    pub weight_decay: f64,
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub exclude: ExclusionRule,
    /// Trust-ratio denominator offset.
    pub trust_delta: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            base_lr: 0.4,
            batch_size: 256,
            k: 4,
            weight_decay: 1e-5,
            momentum: 0.9,
            warmup_epochs: 10,
            total_epochs: 100,
            steps_per_epoch: 1,
            exclude: ExclusionRule::BiasAndNorm,
            trust_delta: 0.0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::invalid("base_lr must be finite and > 0"));
        }
        if self.warmup_epochs > self.total_epochs {
            return Err(Error::invalid("warmup_epochs must not exceed total_epochs"));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("momentum", self.momentum),
            ("trust_delta", self.trust_delta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn warmup_steps(&self) -> usize {
        self.warmup_epochs * self.steps_per_epoch
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }
}

/// Peak learning rate: `base_lr * batch_size / 256 * K`.
pub fn max_lr(cfg: &OptimConfig) -> f64 {
    cfg.base_lr * cfg.batch_size as f64 / 256.0 * cfg.k as f64
}

/// Linear ramp to `max_lr` over the warmup steps starting from
/// `max_lr / warmup_steps` at step 1, then cosine decay to zero at the
/// final step. Continuous at the warmup boundary.
pub fn lr_at(step: usize, cfg: &OptimConfig) -> f64 {
    let peak = max_lr(cfg);
    let warmup = cfg.warmup_steps();
    let total = cfg.total_steps();
    if total == 0 {
        return 0.0;
    }
    let step = step.min(total);
    if step < warmup {
        peak * step as f64 / warmup as f64
    } else if total == warmup {
        if step == warmup { peak } else { 0.0 }
    } else {
        let frac = (step - warmup) as f64 / (total - warmup) as f64;
        peak * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }
}

/// Momentum buffers, one per parameter, allocated lazily on first use.
#[derive(Debug, Clone, Default)]
pub struct OptimState {
    buffers: Vec<Tensor>,
}

impl OptimState {
    pub fn new() -> Self {
        OptimState::default()
    }

    fn buffer_mut(&mut self, i: usize, shape: &[usize]) -> &mut Tensor {
        while self.buffers.len() <= i {
            self.buffers.push(Tensor::zeros(vec![0]));
        }
        if self.buffers[i].shape() != shape {
            self.buffers[i] = Tensor::zeros(shape.to_vec());
        }
        &mut self.buffers[i]
    }
}

fn check_aligned(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(format!(
            "optimizer got {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for i in 0..params.len() {
        if params.tensor_at(i).shape() != grads[i].shape() {
            return Err(Error::shape(format!(
                "gradient shape mismatch for {}",
                params.name_at(i)
            )));
        }
    }
    Ok(())
}

/// One LARS step. Per parameter group:
/// `g' = grad + wd * w` (wd = 0 for excluded groups), trust ratio
/// `eta = |w| / (|g'| + delta)` when both norms are positive (excluded
/// groups use eta = 1), `m <- mu * m + eta * lr * g'`, `w <- w - m`.
pub fn lars_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    cfg: &OptimConfig,
    lr: f64,
    state: &mut OptimState,
) -> Result<()> {
    check_aligned(params, grads)?;
    for i in 0..params.len() {
        let excluded = cfg.exclude.excluded(params.name_at(i));
        let w = params.tensor_at(i);
        let wd = if excluded { 0.0 } else { cfg.weight_decay };
        let g = if wd != 0.0 { grads[i].add(&w.scale(wd)) } else { grads[i].clone() };
        let eta = if excluded {
            1.0
        } else {
            let w_norm = w.norm();
            let g_norm = g.norm();
            if w_norm > 0.0 && g_norm > 0.0 {
                w_norm / (g_norm + cfg.trust_delta)
            } else {
                1.0
            }
        };
        let shape = w.shape().to_vec();
        let m = state.buffer_mut(i, &shape);
        *m = m.scale(cfg.momentum).add(&g.scale(eta * lr));
        let step = m.clone();
        let w = params.tensor_at_mut(i);
        *w = w.sub(&step);
    }
    Ok(())
}

/// Heavy-ball SGD: `m <- mu * m + (grad + wd * w)`, `w <- w - lr * m`.
/// Weight decay honors the same exclusion rule as LARS.
pub fn sgd_momentum_step(
    params: &mut ParamSet,
    grads: &[Tensor],
    cfg: &OptimConfig,
    lr: f64,
    state: &mut OptimState,
) -> Result<()> {
    check_aligned(params, grads)?;
    for i in 0..params.len() {
        let excluded = cfg.exclude.excluded(params.name_at(i));
        let w = params.tensor_at(i);
        let wd = if excluded { 0.0 } else { cfg.weight_decay };
        let g = if wd != 0.0 { grads[i].add(&w.scale(wd)) } else { grads[i].clone() };
        let shape = w.shape().to_vec();
        let m = state.buffer_mut(i, &shape);
        *m = m.scale(cfg.momentum).add(&g);
        let step = m.scale(lr);
        let w = params.tensor_at_mut(i);
        *w = w.sub(&step);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(name: &str, data: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        let n = data.len();
        p.insert(name, Tensor::from_vec(vec![n], data).unwrap());
        p
    }

    #[test]
    fn max_lr_scaling_rule() {
        let unit = OptimConfig { base_lr: 0.5, batch_size: 256, k: 1, ..OptimConfig::default() };
        assert!((max_lr(&unit) - 0.5).abs() < 1e-15);
        let imagenet = OptimConfig { base_lr: 0.15, batch_size: 512, k: 4, ..OptimConfig::default() };
        assert!((max_lr(&imagenet) - 1.2).abs() < 1e-12);
        let desk = OptimConfig { base_lr: 0.4, batch_size: 128, k: 2, ..OptimConfig::default() };
        assert!((max_lr(&desk) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_boundaries_and_continuity() {
        let cfg = OptimConfig {
            base_lr: 0.4,
            batch_size: 256,
            k: 1,
            warmup_epochs: 10,
            total_epochs: 100,
            steps_per_epoch: 7,
            ..OptimConfig::default()
        };
        let peak = max_lr(&cfg);
        assert_eq!(lr_at(0, &cfg), 0.0);
        // Ramp starts at peak / warmup_steps.
        assert!((lr_at(1, &cfg) - peak / 70.0).abs() < 1e-15);
        // Peak is reached exactly at the warmup boundary.
        assert!((lr_at(70, &cfg) - peak).abs() < 1e-15);
        // Zero at the end.
        assert!(lr_at(cfg.total_steps(), &cfg).abs() < 1e-15);
        // Continuity: adjacent steps never jump more than the local slope.
        let max_jump = peak / 70.0 + 1e-12;
        let mut prev = lr_at(0, &cfg);
        let mut observed_max = prev;
        for step in 1..=cfg.total_steps() {
            let cur = lr_at(step, &cfg);
            assert!((cur - prev).abs() <= max_jump, "discontinuity at step {step}");
            observed_max = observed_max.max(cur);
            prev = cur;
        }
        assert!((observed_max - peak).abs() < 1e-12);
    }

    #[test]
    fn lars_hand_example() {
        // w=3, grad=4, wd=0, mu=0, lr=0.1: eta=3/4, step = 0.1*0.75*4 = 0.3.
        let mut params = single_param("layer.weight", vec![3.0]);
        let grads = vec![Tensor::from_vec(vec![1], vec![4.0]).unwrap()];
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.0, ..OptimConfig::default() };
        let mut state = OptimState::new();
        lars_step(&mut params, &grads, &cfg, 0.1, &mut state).unwrap();
        assert!((params.expect("layer.weight").data()[0] - 2.7).abs() < 1e-12);
    }

    #[test]
    fn lars_zero_gradient_is_fixed_point() {
        let mut params = single_param("layer.weight", vec![1.5, -2.0]);
        let before = params.expect("layer.weight").clone();
        let grads = vec![Tensor::zeros(vec![2])];
        let cfg = OptimConfig { weight_decay: 0.0, ..OptimConfig::default() };
        let mut state = OptimState::new();
        lars_step(&mut params, &grads, &cfg, 0.5, &mut state).unwrap();
        assert_eq!(params.expect("layer.weight"), &before);
    }

    #[test]
    fn lars_excluded_param_is_plain_sgd_momentum() {
        let mut lars_params = single_param("layer.bias", vec![1.0, 2.0]);
        let mut sgd_params = lars_params.clone();
        let grads = vec![Tensor::from_vec(vec![2], vec![0.3, -0.1]).unwrap()];
        let cfg = OptimConfig { weight_decay: 1e-2, momentum: 0.9, ..OptimConfig::default() };
        let mut s1 = OptimState::new();
        let mut s2 = OptimState::new();
        for _ in 0..3 {
            lars_step(&mut lars_params, &grads, &cfg, 0.05, &mut s1).unwrap();
            sgd_momentum_step(&mut sgd_params, &grads, &cfg, 0.05, &mut s2).unwrap();
        }
        let a = lars_params.expect("layer.bias");
        let b = sgd_params.expect("layer.bias");
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn lars_direction_parallel_to_decayed_gradient() {
        let mut params = single_param("layer.weight", vec![2.0, -1.0, 0.5]);
        let before = params.expect("layer.weight").clone();
        let grads = vec![Tensor::from_vec(vec![3], vec![0.4, 0.2, -0.6]).unwrap()];
        let cfg = OptimConfig { weight_decay: 0.01, momentum: 0.0, ..OptimConfig::default() };
        let mut state = OptimState::new();
        lars_step(&mut params, &grads, &cfg, 0.1, &mut state).unwrap();
        let after = params.expect("layer.weight");
        let delta = before.sub(after);
        let gprime = grads[0].add(&before.scale(0.01));
        // delta = c * gprime for a positive scalar c.
        let c = delta.data()[0] / gprime.data()[0];
        assert!(c > 0.0);
        for (d, g) in delta.data().iter().zip(gprime.data().iter()) {
            assert!((d - c * g).abs() < 1e-12);
        }
    }

    #[test]
    fn lars_trust_ratio_scale_invariance() {
        // Scaling w and grad together leaves the trust ratio unchanged, so
        // the update scales linearly.
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.0, ..OptimConfig::default() };
        let mut p1 = single_param("layer.weight", vec![1.0, 2.0]);
        let g1 = vec![Tensor::from_vec(vec![2], vec![0.5, -0.25]).unwrap()];
        let mut s1 = OptimState::new();
        lars_step(&mut p1, &g1, &cfg, 0.1, &mut s1).unwrap();
        let d1 = Tensor::from_vec(vec![2], vec![1.0, 2.0])
            .unwrap()
            .sub(p1.expect("layer.weight"));

        let c = 7.5;
        let mut p2 = single_param("layer.weight", vec![c * 1.0, c * 2.0]);
        let g2 = vec![Tensor::from_vec(vec![2], vec![c * 0.5, c * -0.25]).unwrap()];
        let mut s2 = OptimState::new();
        lars_step(&mut p2, &g2, &cfg, 0.1, &mut s2).unwrap();
        let d2 = Tensor::from_vec(vec![2], vec![c * 1.0, c * 2.0])
            .unwrap()
            .sub(p2.expect("layer.weight"));
        for (a, b) in d1.data().iter().zip(d2.data().iter()) {
            assert!((a * c - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_momentum_second_step_magnitude() {
        // Constant gradient, mu = 0.9: second step magnitude lr * 1.9 * g.
        let mut params = single_param("layer.weight", vec![0.0]);
        let grads = vec![Tensor::from_vec(vec![1], vec![1.0]).unwrap()];
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.9, ..OptimConfig::default() };
        let mut state = OptimState::new();
        let lr = 0.1;
        sgd_momentum_step(&mut params, &grads, &cfg, lr, &mut state).unwrap();
        let after_first = params.expect("layer.weight").data()[0];
        sgd_momentum_step(&mut params, &grads, &cfg, lr, &mut state).unwrap();
        let after_second = params.expect("layer.weight").data()[0];
        let second_step = after_first - after_second;
        assert!((second_step - lr * 1.9).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_momentum_is_plain_descent() {
        let mut params = single_param("layer.weight", vec![1.0]);
        let grads = vec![Tensor::from_vec(vec![1], vec![2.0]).unwrap()];
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.0, ..OptimConfig::default() };
        let mut state = OptimState::new();
        sgd_momentum_step(&mut params, &grads, &cfg, 0.25, &mut state).unwrap();
        assert!((params.expect("layer.weight").data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_moves_on_zero_gradient() {
        let mut params = single_param("layer.weight", vec![1.0]);
        let cfg = OptimConfig { weight_decay: 0.0, momentum: 0.9, ..OptimConfig::default() };
        let mut state = OptimState::new();
        let g1 = vec![Tensor::from_vec(vec![1], vec![1.0]).unwrap()];
        sgd_momentum_step(&mut params, &g1, &cfg, 0.1, &mut state).unwrap();
        let before = params.expect("layer.weight").data()[0];
        let g0 = vec![Tensor::zeros(vec![1])];
        sgd_momentum_step(&mut params, &g0, &cfg, 0.1, &mut state).unwrap();
        let after = params.expect("layer.weight").data()[0];
        assert!(before != after, "momentum must keep the parameter moving");
    }

    #[test]
    fn config_validation() {
        let bad = OptimConfig { warmup_epochs: 11, total_epochs: 10, ..OptimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = OptimConfig { base_lr: 0.0, ..OptimConfig::default() };
        assert!(bad.validate().is_err());
        assert!(OptimConfig::default().validate().is_ok());
    }
}
