//! The weighted joint loss `Σ_t λ_t L_t` (+ regularizer) and its gradients.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::{ForwardResult, MdlModel, TaskId};
use crate::nn::{cross_entropy_row, Float, Tensor};
use crate::weighting::{uncertainty_objective_grad, TaskLossVector, WeightingState, Weights};

#[derive(Debug, Clone, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub losses: TaskLossVector,
    /// Weights for every task the weighting state tracks.
    pub lambda: Weights,
    pub regularizer: f64,
}

/// Result of a gradient step computation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub losses: StepLosses,
    /// ∂total/∂s for Uncertainty weighting.
    pub log_var_grad: Option<BTreeMap<TaskId, f64>>,
}

impl StepOutcome {
    pub fn present_tasks(&self) -> BTreeSet<TaskId> {
        self.losses.losses.present_tasks()
    }
}

fn check_batch<F: Float>(model: &MdlModel<F>, images: &Tensor<F>, labels: &[u32], tasks: &[TaskId]) -> Result<()> {
    if labels.len() != images.n || tasks.len() != images.n {
        return Err(Error::Shape(format!("{} images, {} labels, {} task labels", images.n, labels.len(), tasks.len())));
    }
    if let Some(t) = tasks.iter().find(|t| !model.has_head(**t)) {
        return Err(Error::UnknownTask(*t));
    }
    Ok(())
}

/// Per-task mean cross-entropy, and optionally `∂(Σ_t w_t L_t)/∂logits`
/// for the per-task scales `w_t` supplied later.
fn task_losses<F: Float>(
    out: &ForwardResult<F>,
    labels: &[u32],
    tasks: &[TaskId],
    want_grad: bool,
) -> Result<(BTreeMap<TaskId, f64>, BTreeMap<TaskId, usize>, BTreeMap<TaskId, Vec<F>>)> {
    let mut sums: BTreeMap<TaskId, f64> = BTreeMap::new();
    let mut counts: BTreeMap<TaskId, usize> = BTreeMap::new();
    let mut grads: BTreeMap<TaskId, Vec<F>> = BTreeMap::new();
    for (i, (&label, &t)) in labels.iter().zip(tasks).enumerate() {
        let row = out.logit_row(t, i).ok_or(Error::UnknownTask(t))?;
        let classes = row.len();
        if label as usize >= classes {
            return Err(Error::invalid(format!("label {label} out of range for head {t} with {classes} classes")));
        }
        let loss = if want_grad {
            let g = grads.entry(t).or_insert_with(|| vec![F::zero(); out.batch * classes]);
            cross_entropy_row(row, label as usize, Some(&mut g[i * classes..(i + 1) * classes]))
        } else {
            cross_entropy_row(row, label as usize, None)
        };
        *sums.entry(t).or_default() += loss.as_f64();
        *counts.entry(t).or_default() += 1;
    }
    let means = sums.iter().map(|(t, s)| (*t, s / counts[t] as f64)).collect();
    Ok((means, counts, grads))
}

/// `Σ_{t present} λ_t L_t + regularizer`.
pub fn weighted_total(losses: &TaskLossVector, lambda: &Weights, regularizer: f64) -> f64 {
    let weighted: f64 = losses.values.iter().map(|(t, l)| lambda.get(t).copied().unwrap_or(1.0) * l).sum();
    weighted + regularizer
}

fn combine(means: BTreeMap<TaskId, f64>, state: &mut WeightingState) -> StepLosses {
    // non-finite values are kept so the caller's divergence guard sees them
    let losses = TaskLossVector { values: means };
    let w = state.step(&losses);
    StepLosses { total: weighted_total(&losses, &w.lambda, w.regularizer), losses, lambda: w.lambda, regularizer: w.regularizer }
}

/// Forward-only evaluation of the weighted loss. CoV statistics in
/// `state` are advanced exactly as during training.
pub fn step_losses<F: Float>(
    model: &MdlModel<F>,
    images: &Tensor<F>,
    labels: &[u32],
    tasks: &[TaskId],
    state: &mut WeightingState,
) -> Result<StepLosses> {
    check_batch(model, images, labels, tasks)?;
    let out = model.forward(images)?;
    let (means, _, _) = task_losses(&out, labels, tasks, false)?;
    Ok(combine(means, state))
}

/// Computes the weighted loss and accumulates its gradient into the model.
/// Only heads of tasks present in the batch receive gradient.
pub fn backward_step<F: Float>(
    model: &mut MdlModel<F>,
    images: Tensor<F>,
    labels: &[u32],
    tasks: &[TaskId],
    state: &mut WeightingState,
) -> Result<StepOutcome> {
    check_batch(model, &images, labels, tasks)?;
    let (out, cache) = model.forward_train(images)?;
    let (means, counts, mut grads) = task_losses(&out, labels, tasks, true)?;
    let losses = combine(means, state);
    for (t, g) in grads.iter_mut() {
        let scale = F::from_f64_lossy(losses.lambda.get(t).copied().unwrap_or(1.0) / counts[t] as f64);
        g.iter_mut().for_each(|v| *v = *v * scale);
    }
    model.backward(cache, &grads)?;
    let log_var_grad = match state {
        WeightingState::Uncertainty(u) => Some(uncertainty_objective_grad(u, &losses.losses)),
        _ => None,
    };
    Ok(StepOutcome { losses, log_var_grad })
}
