use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::{NamedTensor, Param};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Adam with decoupled weight decay. Moments are allocated on the first step
/// and matched to parameters by position.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<NamedTensor>,
    pub v: Vec<NamedTensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update at learning rate `lr` (the schedule's value for this step).
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.dim() != p.value.dim())
        {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *w -= lr * c.weight_decay * *w;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + c.eps);
                });
        }
        Ok(())
    }

    pub fn state(&self, names: &[String]) -> AdamWState {
        let named = |tensors: &[Array2<f64>]| {
            tensors
                .iter()
                .zip(names)
                .map(|(t, n)| NamedTensor::from_array(n, t))
                .collect()
        };
        AdamWState {
            config: self.config,
            step: self.step,
            m: named(&self.m),
            v: named(&self.v),
        }
    }

    pub fn from_state(state: &AdamWState) -> Result<Self> {
        let arrays = |ts: &[NamedTensor]| ts.iter().map(NamedTensor::to_array).collect::<Result<Vec<_>>>();
        Ok(Self {
            config: state.config,
            step: state.step,
            m: arrays(&state.m)?,
            v: arrays(&state.v)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine annealing from the base rate down to `min_ratio · base`.
    Cosine { min_ratio: f64 },
    /// Linear warm-up from `max_lr / div_factor` to `max_lr` over the first
    /// `warmup_fraction` of steps, then cosine decay back to `max_lr / div_factor`.
    OneCycle {
        max_lr: f64,
        warmup_fraction: f64,
        div_factor: f64,
    },
}

impl LrSchedule {
    pub fn cosine() -> Self {
        LrSchedule::Cosine { min_ratio: 0.1 }
    }

    pub fn one_cycle(max_lr: f64) -> Self {
        LrSchedule::OneCycle {
            max_lr,
            warmup_fraction: 0.3,
            div_factor: 25.0,
        }
    }

    pub fn warmup_steps(&self, total: usize) -> usize {
        match self {
            LrSchedule::OneCycle { warmup_fraction, .. } => (warmup_fraction * total as f64).round() as usize,
            _ => 0,
        }
    }

    /// Learning rate at `step` of `total`; steps past the end are clamped.
    pub fn lr(&self, base: f64, step: usize, total: usize) -> f64 {
        let step = if step > total {
            log::warn!("learning-rate step {step} beyond schedule length {total}; clamping");
            total
        } else {
            step
        };
        let half_cosine = |from: f64, to: f64, progress: f64| to + (from - to) * (1.0 + (PI * progress).cos()) / 2.0;
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine { min_ratio } => {
                if total == 0 {
                    return base;
                }
                half_cosine(base, min_ratio * base, step as f64 / total as f64)
            }
            LrSchedule::OneCycle { max_lr, div_factor, .. } => {
                let floor = max_lr / div_factor;
                let warm = self.warmup_steps(total);
                if step <= warm {
                    if warm == 0 {
                        return max_lr;
                    }
                    floor + (max_lr - floor) * step as f64 / warm as f64
                } else {
                    let progress = (step - warm) as f64 / (total - warm) as f64;
                    half_cosine(max_lr, floor, progress)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar(x: f64) -> Param {
        Param::new("x", array![[x]])
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = scalar(1.5);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..10 {
            opt.step(&mut [&mut p], 1e-2).unwrap();
        }
        assert_eq!(p.value[[0, 0]], 1.5);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        for g in [2.0, -0.5] {
            let mut p = scalar(0.0);
            let mut opt = AdamW::new(AdamWConfig::default());
            let mut last = 0.0;
            for _ in 0..20 {
                p.grad[[0, 0]] = g;
                opt.step(&mut [&mut p], 1e-2).unwrap();
                let now = p.value[[0, 0]];
                assert_eq!((now - last).signum(), -g.signum());
                last = now;
            }
        }
    }

    #[test]
    fn quadratic_loss_decreases() {
        let mut p = scalar(3.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        let mut loss = 4.5;
        for _ in 0..100 {
            p.grad[[0, 0]] = p.value[[0, 0]];
            opt.step(&mut [&mut p], 1e-2).unwrap();
            let now = 0.5 * p.value[[0, 0]].powi(2);
            assert!(now < loss);
            loss = now;
        }
    }

    #[test]
    fn state_round_trip() {
        let mut p = scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig::default());
        p.grad[[0, 0]] = 0.3;
        opt.step(&mut [&mut p], 1e-3).unwrap();
        let back = AdamW::from_state(&opt.state(&["x".into()])).unwrap();
        assert_eq!(back, opt);
    }

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::cosine();
        assert_eq!(s.lr(1e-3, 0, 50), 1e-3);
        assert_eq!(s.lr(1e-3, 50, 50), 0.1 * 1e-3);
        assert_eq!(s.lr(1e-3, 80, 50), 0.1 * 1e-3);
    }

    #[test]
    fn one_cycle_peaks_at_warmup_boundary() {
        let s = LrSchedule::one_cycle(3e-4);
        let total = 100;
        let warm = s.warmup_steps(total);
        assert_eq!(warm, 30);
        assert_eq!(s.lr(1e-4, warm, total), 3e-4);
        assert!(s.lr(1e-4, warm - 1, total) < 3e-4);
        assert!(s.lr(1e-4, warm + 1, total) < 3e-4);
        assert!((s.lr(1e-4, 0, total) - 3e-4 / 25.0).abs() < 1e-18);
        assert!((s.lr(1e-4, total, total) - 3e-4 / 25.0).abs() < 1e-18);
    }
}
