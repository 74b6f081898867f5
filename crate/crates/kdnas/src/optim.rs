//! First-order optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer family plus hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Adam with decoupled weight decay.
    AdamW {
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    /// RMSProp with decay rate `gamma`.
    RmsProp { gamma: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    /// Distillation default: AdamW with β1 = 0.9, β2 = 0.98.
    pub fn adamw_default() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }

    /// Controller default: RMSProp with γ = 0.95.
    pub fn rmsprop_default() -> Self {
        OptimizerKind::RmsProp {
            gamma: 0.95,
            eps: 1e-8,
        }
    }
}

/// Learning-rate schedule over optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear ramp to the peak over `warmup` steps, then linear decay to
    /// zero at `total` steps.
    LinearWarmup { warmup: usize, total: usize },
    /// `peak · decay^step`.
    Exponential { decay: f64 },
}

impl Schedule {
    /// Learning rate at a 0-based step index.
    pub fn lr(&self, peak: f64, step: usize) -> f64 {
        match *self {
            Schedule::Constant => peak,
            Schedule::LinearWarmup { warmup, total } => {
                if warmup > 0 && step < warmup {
                    peak * (step + 1) as f64 / warmup as f64
                } else if total > warmup {
                    let remaining = total.saturating_sub(step).max(0) as f64;
                    peak * (remaining / (total - warmup) as f64).min(1.0)
                } else {
                    peak
                }
            }
            Schedule::Exponential { decay } => peak * decay.powi(step as i32),
        }
    }
}

/// Per-parameter optimizer state aligned with a fixed parameter order.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: usize,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Apply one update. `params` and `grads` must be index-aligned across
    /// calls; state buffers are allocated lazily on first use.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "optimizer: {} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first_moment.len() < params.len() {
            self.first_moment.resize(params.len(), Vec::new());
            self.second_moment.resize(params.len(), Vec::new());
        }
        self.step += 1;
        let t = self.step as f64;
        for (idx, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != grad.len() {
                return Err(Error::Contract(format!(
                    "optimizer: parameter {idx} has {} values but gradient {}",
                    param.len(),
                    grad.len()
                )));
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in param.data_mut().iter_mut().zip(grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerKind::AdamW {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                } => {
                    let m = &mut self.first_moment[idx];
                    let v = &mut self.second_moment[idx];
                    if m.is_empty() {
                        m.resize(grad.len(), 0.0);
                        v.resize(grad.len(), 0.0);
                    }
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    for (i, (p, g)) in param.data_mut().iter_mut().zip(grad).enumerate() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
                    }
                }
                OptimizerKind::RmsProp { gamma, eps } => {
                    let v = &mut self.second_moment[idx];
                    if v.is_empty() {
                        v.resize(grad.len(), 0.0);
                    }
                    for (i, (p, g)) in param.data_mut().iter_mut().zip(grad).enumerate() {
                        v[i] = gamma * v[i] + (1.0 - gamma) * g * g;
                        *p -= lr * g / (v[i].sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_descends(kind: OptimizerKind, lr: f64) {
        // Minimize f(x) = Σ x², gradient 2x.
        let mut x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut opt = Optimizer::new(kind);
        let f = |t: &Tensor| t.data().iter().map(|v| v * v).sum::<f64>();
        let start = f(&x);
        for _ in 0..200 {
            let grad: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
            opt.step(&mut [&mut x], &[grad], lr).unwrap();
        }
        assert!(f(&x) < start * 0.05, "{kind:?} failed to descend: {}", f(&x));
    }

    #[test]
    fn all_optimizers_descend_on_quadratic() {
        quadratic_descends(OptimizerKind::Sgd, 0.05);
        quadratic_descends(
            OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.98,
                eps: 1e-8,
                weight_decay: 0.0,
            },
            0.05,
        );
        quadratic_descends(OptimizerKind::rmsprop_default(), 0.05);
    }

    #[test]
    fn linear_warmup_shape() {
        let s = Schedule::LinearWarmup {
            warmup: 10,
            total: 100,
        };
        assert!((s.lr(1.0, 0) - 0.1).abs() < 1e-12);
        assert!((s.lr(1.0, 9) - 1.0).abs() < 1e-12);
        assert!(s.lr(1.0, 50) < 1.0);
        assert!(s.lr(1.0, 99) > 0.0);
        assert!(s.lr(1.0, 100) == 0.0);
    }

    #[test]
    fn exponential_schedule() {
        let s = Schedule::Exponential { decay: 0.5 };
        assert_eq!(s.lr(1.0, 0), 1.0);
        assert_eq!(s.lr(1.0, 2), 0.25);
    }

    #[test]
    fn mismatched_grads_rejected() {
        let mut x = Tensor::zeros(vec![2]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd);
        assert!(opt.step(&mut [&mut x], &[vec![1.0]], 0.1).is_err());
    }
}
