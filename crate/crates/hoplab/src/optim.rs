//! Layer-wise learning rates and the two update rules used by the trainer.
//!
//! The schedule is geometric: the top group trains at `base_lr` and each
//! group below trains at `zeta` times the rate of the group above it.

use crate::numerics::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("base_lr must be positive, got {0}")]
    InvalidBaseLr(f64),
    #[error("zeta must be in (0, 1], got {0}")]
    InvalidZeta(f64),
    #[error("schedule needs at least one group")]
    EmptySchedule,
    #[error("{what}: expected {expected}, got {got}")]
    Misaligned {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("param {index}: gradient shape {grad:?} does not match param shape {param:?}")]
    GradShape {
        index: usize,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
    #[error("param {index} assigned to group {group} but only {groups} rates given")]
    GroupOutOfRange {
        index: usize,
        group: usize,
        groups: usize,
    },
    #[error("learning rate for group {group} is not finite or negative: {rate}")]
    InvalidRate { group: usize, rate: f64 },
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Per-group learning rates, bottom group first, top group last.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrdSchedule {
    base_lr: f64,
    zeta: f64,
    per_group_lr: Vec<f64>,
}

impl LlrdSchedule {
    pub fn new(base_lr: f64, zeta: f64, num_groups: usize) -> Result<Self> {
        if !(base_lr.is_finite() && base_lr > 0.0) {
            return Err(OptimError::InvalidBaseLr(base_lr));
        }
        if !(zeta.is_finite() && zeta > 0.0 && zeta <= 1.0) {
            return Err(OptimError::InvalidZeta(zeta));
        }
        if num_groups == 0 {
            return Err(OptimError::EmptySchedule);
        }
        // Multiply downward from the top so each adjacent pair differs by
        // exactly one multiplication by zeta.
        let mut per_group_lr = vec![0.0; num_groups];
        per_group_lr[num_groups - 1] = base_lr;
        for k in (0..num_groups - 1).rev() {
            per_group_lr[k] = zeta * per_group_lr[k + 1];
        }
        Ok(LlrdSchedule {
            base_lr,
            zeta,
            per_group_lr,
        })
    }

    pub fn base_lr(&self) -> f64 {
        self.base_lr
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn rates(&self) -> &[f64] {
        &self.per_group_lr
    }

    pub fn num_groups(&self) -> usize {
        self.per_group_lr.len()
    }
}

/// Where a parameter sits in the group stack and whether weight decay
/// applies to it (decay is skipped for gains and biases).
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub group: usize,
    pub decay: bool,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAM_WEIGHT_DECAY: f64 = 0.01;

enum Variant {
    PlainSgd,
    AdamW {
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
        step: u64,
    },
}

/// Optimizer state for one training run. Owns the moment accumulators; the
/// parameters themselves live in the model and are passed in by the caller.
pub struct Optimizer {
    variant: Variant,
    specs: Vec<ParamSpec>,
}

impl Optimizer {
    pub fn plain_sgd(specs: Vec<ParamSpec>) -> Self {
        Optimizer {
            variant: Variant::PlainSgd,
            specs,
        }
    }

    pub fn adamw(specs: Vec<ParamSpec>) -> Self {
        let n = specs.len();
        Optimizer {
            variant: Variant::AdamW {
                m: vec![Vec::new(); n],
                v: vec![Vec::new(); n],
                step: 0,
            },
            specs,
        }
    }

    pub fn step_count(&self) -> u64 {
        match &self.variant {
            Variant::PlainSgd => 0,
            Variant::AdamW { step, .. } => *step,
        }
    }

    /// One update with the schedule's per-group rates.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        schedule: &LlrdSchedule,
    ) -> Result<()> {
        self.step_with_rates(params, grads, schedule.rates())
    }

    /// One update with explicit per-group rates. `rates[g]` applies to every
    /// parameter whose spec names group `g`.
    pub fn step_with_rates(
        &mut self,
        params: &mut [Tensor],
        grads: &[Tensor],
        rates: &[f64],
    ) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(OptimError::Misaligned {
                what: "params",
                expected: self.specs.len(),
                got: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(OptimError::Misaligned {
                what: "grads",
                expected: params.len(),
                got: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(OptimError::GradShape {
                    index: i,
                    param: p.shape().to_vec(),
                    grad: g.shape().to_vec(),
                });
            }
            let group = self.specs[i].group;
            if group >= rates.len() {
                return Err(OptimError::GroupOutOfRange {
                    index: i,
                    group,
                    groups: rates.len(),
                });
            }
        }
        for (g, &rate) in rates.iter().enumerate() {
            if !rate.is_finite() || rate < 0.0 {
                return Err(OptimError::InvalidRate { group: g, rate });
            }
        }

        match &mut self.variant {
            Variant::PlainSgd => {
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let rate = rates[self.specs[i].group];
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= rate * gv;
                    }
                }
            }
            Variant::AdamW { m, v, step } => {
                *step += 1;
                let t = *step;
                let bias1 = 1.0 - libm::pow(ADAM_BETA1, t as f64);
                let bias2 = 1.0 - libm::pow(ADAM_BETA2, t as f64);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let rate = rates[self.specs[i].group];
                    let decay = if self.specs[i].decay {
                        ADAM_WEIGHT_DECAY
                    } else {
                        0.0
                    };
                    if m[i].is_empty() {
                        m[i] = vec![0.0; p.numel()];
                        v[i] = vec![0.0; p.numel()];
                    }
                    let (mi, vi) = (&mut m[i], &mut v[i]);
                    for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        mi[j] = ADAM_BETA1 * mi[j] + (1.0 - ADAM_BETA1) * gv;
                        vi[j] = ADAM_BETA2 * vi[j] + (1.0 - ADAM_BETA2) * gv * gv;
                        let mhat = mi[j] / bias1;
                        let vhat = vi[j] / bias2;
                        *pv -= rate * (mhat / (libm::sqrt(vhat) + ADAM_EPS) + decay * *pv);
                    }
                }
            }
        }
        Ok(())
    }
}
