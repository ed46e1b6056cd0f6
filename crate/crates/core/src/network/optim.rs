use serde::{Deserialize, Serialize};

use super::model::ParamMut;

/// One-cycle learning-rate schedule: cosine warm-up from `peak / div_factor` to
/// `peak` over the first `pct_start` of training, then cosine annealing down to
/// `peak / (div_factor * final_div_factor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak_lr: f64,
    pub total_steps: u64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(peak_lr: f64, total_steps: u64) -> Self {
        Self { peak_lr, total_steps, pct_start: 0.3, div_factor: 25.0, final_div_factor: 1e4 }
    }

    /// Learning rate for 1-based `step`.
    pub fn lr(&self, step: u64) -> f64 {
        let initial = self.peak_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        let last = self.total_steps.max(2) as f64 - 1.0;
        let t = (step.saturating_sub(1) as f64).min(last);
        let warm = (self.pct_start * last).max(1.0);
        let cos = |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        if t <= warm {
            cos(initial, self.peak_lr, t / warm)
        } else {
            cos(self.peak_lr, min, (t - warm) / (last - warm).max(1.0))
        }
    }
}

/// AdamW with decoupled weight decay. Masked positions are skipped entirely, so
/// their weights stay zero and their moments stay clean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

impl AdamW {
    /// Applies one update with 1-based step count `t`.
    pub fn step(&self, p: ParamMut<'_>, lr: f64, t: u64) {
        let b1 = self.beta1 as f32;
        let b2 = self.beta2 as f32;
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        let step_size = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        let decay = if p.decay { (lr * self.weight_decay) as f32 } else { 0.0 };
        for k in 0..p.value.len() {
            if let Some(mask) = p.mask {
                if !mask[k] {
                    continue;
                }
            }
            let g = p.grad[k];
            p.m[k] = b1 * p.m[k] + (1.0 - b1) * g;
            p.v[k] = b2 * p.v[k] + (1.0 - b2) * g * g;
            let denom = p.v[k].sqrt() / bc2_sqrt + eps;
            p.value[k] -= decay * p.value[k] + step_size * p.m[k] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle::new(5e-3, 1000);
        assert!((s.lr(1) - 5e-3 / 25.0).abs() < 1e-12);
        let peak_step = (0.3f64 * 999.0) as u64 + 1;
        assert!((s.lr(peak_step) - 5e-3).abs() < 1e-6);
        assert!(s.lr(1000) < 1e-6);
        assert!(s.lr(500) < s.lr(peak_step));
    }

    #[test]
    fn masked_positions_untouched() {
        let mut value = vec![0.5f32, 0.0, -0.5];
        let mut m = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        let grad = vec![1.0, 1.0, -1.0];
        let mask = vec![true, false, true];
        AdamW::default().step(
            ParamMut { value: &mut value, m: &mut m, v: &mut v, grad: &grad, mask: Some(&mask), decay: true },
            1e-2,
            1,
        );
        assert_eq!(value[1], 0.0);
        assert_eq!((m[1], v[1]), (0.0, 0.0));
        assert!(value[0] < 0.5 && value[2] > -0.5);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut value = vec![0.5f32, -1.0];
        let mut m = vec![0.0; 2];
        let mut v = vec![0.0; 2];
        AdamW::default().step(
            ParamMut { value: &mut value, m: &mut m, v: &mut v, grad: &[3.0, -2.0], mask: None, decay: true },
            0.0,
            1,
        );
        assert_eq!(value, vec![0.5, -1.0]);
    }
}
