//! A small reverse-mode differentiation engine with the layers, losses and
//! optimizer needed by the shout classifiers and regressors.
//!
//! Tensors that require gradients are graph leaves created with
//! [`Graph::param`] or [`Graph::variable`]; constants use [`Graph::constant`].

mod adam;
mod checkpoint;
mod graph;
pub mod layers;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use graph::{mse, sigmoid, softmax, Graph, Var, PROB_FLOOR};
pub use params::{Initializer, ParamSet};
pub use scalar::{gemm, MatRef, NumericMode, Real};
pub use tensor::Tensor;

/// Loss attached to a task head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    MeanSquaredError,
    CrossEntropy,
}

/// Batch loss on plain arrays: MSE over all values, or cross-entropy
/// averaged over rows of class probabilities.
pub fn batch_loss<T: Real>(pred: &[Vec<T>], target: &[Target], kind: LossKind) -> crate::Result<f64> {
    use crate::Error;
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        total += match (kind, t) {
            (LossKind::MeanSquaredError, Target::Values(v)) => {
                if v.len() != p.len() {
                    return Err(Error::Shape("prediction/target length".into()));
                }
                p.iter()
                    .zip(v)
                    .map(|(a, b)| (a.as_f64() - b) * (a.as_f64() - b))
                    .sum::<f64>()
                    / p.len() as f64
            }
            (LossKind::CrossEntropy, Target::Class(c)) => {
                let prob = p
                    .get(*c)
                    .ok_or_else(|| Error::Range(format!("class {c} out of {}", p.len())))?;
                -prob.as_f64().max(PROB_FLOOR).ln()
            }
            _ => return Err(Error::Config(format!("target {t:?} does not fit {kind:?}"))),
        };
    }
    Ok(total / pred.len() as f64)
}

/// Supervision for one example.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

#[cfg(test)]
mod tests;
