use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use super::layers::Param;
use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `v = momentum*v + g + wd*p; p -= lr*v`. Parameters with
    /// `decay == false` (batch-norm scale and shift) skip the decay term.
    pub fn step<T: Scalar>(&self, p: &mut Param<T>, lr: f64) -> Result<()> {
        if p.grad.len() != p.value.len() || p.velocity.len() != p.value.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter of {} values has {} grads, {} velocities",
                p.value.len(),
                p.grad.len(),
                p.velocity.len()
            )));
        }
        let (m, lr) = (T::from_f64(self.momentum), T::from_f64(lr));
        let wd = T::from_f64(if p.decay { self.weight_decay } else { 0.0 });
        for ((w, &g), v) in p.value.iter_mut().zip(&p.grad).zip(p.velocity.iter_mut()) {
            *v = m * *v + g + wd * *w;
            *w -= lr * *v;
        }
        Ok(())
    }
}

/// Per-epoch learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to zero over the run.
    Cosine,
    /// Multiply by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => base * 0.5 * (1.0 + (PI * epoch as f64 / epochs.max(1) as f64).cos()),
            LrSchedule::Step { every, gamma } => base * gamma.powi((epoch / every.max(1)) as i32),
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::Cosine => f.write_str("cosine"),
            LrSchedule::Step { every, gamma } => write!(f, "step:{every}:{gamma}"),
        }
    }
}

/// Parses `constant`, `cosine` or `step:<every>:<gamma>`.
impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown learning-rate schedule {s:?}"));
        match s.trim() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => {
                let rest = other.strip_prefix("step:").ok_or_else(bad)?;
                let (every, gamma) = rest.split_once(':').ok_or_else(bad)?;
                Ok(LrSchedule::Step {
                    every: every.parse().map_err(|_| bad())?,
                    gamma: gamma.parse().map_err(|_| bad())?,
                })
            }
        }
    }
}
