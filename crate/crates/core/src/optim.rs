//! Momentum SGD, momentum lifecycle policies and cosine annealing.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ModelState};
use crate::{Error, Result, Tensor};

/// Velocity buffers plus the momentum coefficient and step counter of one
/// candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub velocity: Vec<Tensor>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub steps: u64,
}

impl OptimizerState {
    /// Zero velocity congruent with `model`.
    pub fn new(model: &ModelState, momentum: f64) -> Self {
        Self {
            velocity: zero_like(model.params()),
            momentum,
            weight_decay: 0.0,
            steps: 0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn reset_velocity(&mut self) {
        for v in &mut self.velocity {
            v.data_mut().fill(0.0);
        }
    }
}

fn zero_like(tensors: &[Tensor]) -> Vec<Tensor> {
    tensors
        .iter()
        .map(|t| Tensor::zeros(t.shape().to_vec()))
        .collect()
}

/// One momentum-SGD update: `v <- mu * v + g; w <- w - eta * v`.
///
/// With a nonzero weight decay `lambda` the gradient is replaced by
/// `g + lambda * w` before the update.
pub fn sgd_step(
    model: &mut ModelState,
    opt: &mut OptimizerState,
    grads: &Gradients,
    eta: f64,
) -> Result<()> {
    let params = model.params_mut();
    if grads.0.len() != params.len() || opt.velocity.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} gradients and {} velocity tensors for {} parameters",
            grads.0.len(),
            opt.velocity.len(),
            params.len()
        )));
    }
    for (t, ((p, g), v)) in params.iter().zip(&grads.0).zip(&opt.velocity).enumerate() {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape(format!(
                "parameter tensor {t} has shape {:?}, gradient {:?}, velocity {:?}",
                p.shape(),
                g.shape(),
                v.shape()
            )));
        }
        if let Some(element) = g.data().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: t, element });
        }
    }
    let (mu, decay) = (opt.momentum, opt.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(&grads.0).zip(&mut opt.velocity) {
        for ((w, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let gi = if decay != 0.0 { gi + decay * *w } else { gi };
            *vi = mu * *vi + gi;
            *w -= eta * *vi;
        }
    }
    opt.steps += 1;
    Ok(())
}

/// Cosine-annealed learning rate over a fixed horizon of optimizer steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub horizon: u64,
}

impl LrSchedule {
    pub fn new(eta_max: f64, eta_min: f64, horizon: u64) -> Result<Self> {
        if !(eta_max >= 0.0 && eta_min >= 0.0 && eta_min <= eta_max) {
            return Err(Error::invalid(format!(
                "learning rates need 0 <= eta_min <= eta_max, got {eta_min} and {eta_max}"
            )));
        }
        if horizon == 0 {
            return Err(Error::invalid("schedule horizon must be positive"));
        }
        Ok(Self {
            eta_max,
            eta_min,
            horizon,
        })
    }

    /// `eta_min + (eta_max - eta_min) * (1 + cos(pi * t / T)) / 2`, clamped to
    /// `eta_min` past the horizon.
    pub fn eta(&self, t: u64) -> f64 {
        if t > self.horizon {
            log::warn!(
                "learning-rate schedule overrun: step {t} past horizon {}",
                self.horizon
            );
            return self.eta_min;
        }
        if t == self.horizon {
            return self.eta_min;
        }
        let phase = std::f64::consts::PI * t as f64 / self.horizon as f64;
        self.eta_min + 0.5 * (self.eta_max - self.eta_min) * (1.0 + phase.cos())
    }
}

pub fn cosine_lr(sched: &LrSchedule, t: u64) -> f64 {
    sched.eta(t)
}

/// Lifecycle of the velocity buffer across generations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumPolicy {
    /// Momentum coefficient forced to zero.
    NoMomentum,
    /// Every offspring starts a generation with zero velocity.
    ResetEachGeneration,
    /// Offspring copy the selected parent's velocity.
    Inherit,
}

impl MomentumPolicy {
    pub fn as_str(&self) -> &'static str {
        match self {
            MomentumPolicy::NoMomentum => "none",
            MomentumPolicy::ResetEachGeneration => "reset",
            MomentumPolicy::Inherit => "inherit",
        }
    }
}

impl fmt::Display for MomentumPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MomentumPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MomentumPolicy::NoMomentum),
            "reset" => Ok(MomentumPolicy::ResetEachGeneration),
            "inherit" => Ok(MomentumPolicy::Inherit),
            other => Err(Error::invalid(format!(
                "unknown momentum policy {other:?} (expected none, reset or inherit)"
            ))),
        }
    }
}

/// Optimizer state handed to one offspring at the start of a generation.
/// The step counter always carries over so the schedule keeps advancing
/// along the lineage.
pub fn apply_momentum_policy(
    policy: MomentumPolicy,
    parent: &OptimizerState,
    momentum: f64,
) -> OptimizerState {
    let mut opt = parent.clone();
    match policy {
        MomentumPolicy::NoMomentum => {
            opt.momentum = 0.0;
            opt.reset_velocity();
        }
        MomentumPolicy::ResetEachGeneration => {
            opt.momentum = momentum;
            opt.reset_velocity();
        }
        MomentumPolicy::Inherit => opt.momentum = momentum,
    }
    opt
}
