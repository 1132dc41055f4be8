//! SGD and Adam over any [`Tensors`] parameter set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.kind == OptimizerKind::Adam {
            if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
                return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
            }
            if self.epsilon.is_nan() || self.epsilon <= 0.0 {
                return Err(Error::InvalidConfig("adam epsilon must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Step count and Adam moments; moments are allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

fn check_shapes(params: &[&Matrix], grads: &[&Matrix]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            found: grads.len(),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::DimensionMismatch {
                expected: p.rows() * p.cols(),
                found: g.rows() * g.cols(),
            });
        }
    }
    Ok(())
}

/// Applies one update in place. The new values are computed first and only
/// committed when every entry is finite, so a failed step leaves `params` and
/// `state` untouched.
pub fn optimizer_step<P: Tensors + ?Sized, G: Tensors + ?Sized>(
    params: &mut P,
    grads: &G,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    let grads = grads.tensors();
    check_shapes(&params.tensors(), &grads)?;
    let lr = config.learning_rate;
    let mut updated: Vec<Vec<f64>> = Vec::with_capacity(grads.len());

    match config.kind {
        OptimizerKind::Sgd => {
            for (p, g) in params.tensors().iter().zip(&grads) {
                updated.push(
                    p.as_slice()
                        .iter()
                        .zip(g.as_slice())
                        .map(|(&p, &g)| p - lr * g)
                        .collect(),
                );
            }
            if !updated.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("parameters after SGD step".into()));
            }
        }
        OptimizerKind::Adam => {
            let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
            let t = state.step + 1;
            let c1 = 1.0 - b1.powi(t as i32);
            let c2 = 1.0 - b2.powi(t as i32);
            let mut first = Vec::with_capacity(grads.len());
            let mut second = Vec::with_capacity(grads.len());
            for (i, (p, g)) in params.tensors().iter().zip(&grads).enumerate() {
                let (rows, cols) = g.shape();
                let mut m = state
                    .first
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(rows, cols));
                let mut v = state
                    .second
                    .get(i)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(rows, cols));
                let mut out = p.as_slice().to_vec();
                for (((o, &g), m), v) in out
                    .iter_mut()
                    .zip(g.as_slice())
                    .zip(m.as_mut_slice())
                    .zip(v.as_mut_slice())
                {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *o -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
                updated.push(out);
                first.push(m);
                second.push(v);
            }
            if !updated.iter().flatten().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("parameters after Adam step".into()));
            }
            state.first = first;
            state.second = second;
        }
    }

    for (p, new) in params.tensors_mut().into_iter().zip(updated) {
        p.as_mut_slice().copy_from_slice(&new);
    }
    state.step += 1;
    Ok(())
}
