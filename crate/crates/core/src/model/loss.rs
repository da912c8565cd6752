//! Utterance-averaged cross-entropy and focal objectives with a norm
//! penalty on the trainable parameters.
//!
//! For `T` utterances across a batch with true classes `y_i`,
//!
//! ```text
//! CE    = −(1/T) Σ_i log p_i[y_i]                          + η ‖Θ‖
//! focal = −(1/T) Σ_i w[y_i] (1 − p_i[y_i])^γ log p_i[y_i]  + η ‖Θ‖
//! ```
//!
//! `‖Θ‖` is the plain Euclidean norm over every parameter the forward pass
//! read; the squared variant is available behind a flag.

use super::config::{ClassWeighting, LossKind};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Tensor, Var};

/// Loss settings independent of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub focal_gamma: f64,
    /// One weight per class; only used by the focal loss.
    pub class_weights: Vec<f64>,
    pub eta: f64,
    pub squared_norm: bool,
}

/// Per-class weights from training labels. Inverse frequency gives class
/// `c` the weight `T / (C⁺ · n_c)`, where `C⁺` counts classes that occur;
/// classes that never occur get weight 1.
pub fn class_weights(labels: &[usize], classes: usize, scheme: ClassWeighting) -> Vec<f64> {
    match scheme {
        ClassWeighting::Uniform => vec![1.0; classes],
        ClassWeighting::InverseFrequency => {
            let mut counts = vec![0usize; classes];
            for &l in labels {
                if l < classes {
                    counts[l] += 1;
                }
            }
            let present = counts.iter().filter(|&&c| c > 0).count().max(1);
            let total = labels.len() as f64;
            counts
                .iter()
                .map(|&c| if c == 0 { 1.0 } else { total / (present as f64 * c as f64) })
                .collect()
        }
    }
}

/// Records the data term from row-wise log-probabilities (`T × C`).
pub fn data_term(tape: &Tape, log_probs: Var, targets: &[usize], spec: &LossSpec) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::Contract("loss over zero utterances".into()));
    }
    let picked = tape.pick(log_probs, targets)?;
    let per_utterance = match spec.kind {
        LossKind::CrossEntropy => picked,
        LossKind::Focal => {
            if !(spec.focal_gamma >= 0.0) {
                return Err(Error::Contract(format!(
                    "focal focusing parameter must be >= 0, got {}",
                    spec.focal_gamma
                )));
            }
            let weights = targets
                .iter()
                .map(|&c| spec.class_weights.get(c).copied().unwrap_or(1.0))
                .collect::<Vec<_>>();
            let weights = tape.constant(Tensor::new(vec![targets.len(), 1], weights)?);
            let miss = tape.affine(tape.exp(picked), -1.0, 1.0);
            let focus = tape.powf(miss, spec.focal_gamma);
            tape.mul(weights, tape.mul(focus, picked)?)?
        }
    };
    Ok(tape.scale(tape.sum(per_utterance), -1.0 / targets.len() as f64))
}

/// Records `η‖Θ‖` (or `η‖Θ‖²`) over `params`.
pub fn norm_penalty(tape: &Tape, params: &[Var], eta: f64, squared: bool) -> Result<Option<Var>> {
    if eta == 0.0 || params.is_empty() {
        return Ok(None);
    }
    let squares = params
        .iter()
        .map(|&p| Ok(tape.sum(tape.mul(p, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut total = squares[0];
    for &s in &squares[1..] {
        total = tape.add(total, s)?;
    }
    let norm = if squared { total } else { tape.sqrt(total) };
    Ok(Some(tape.scale(norm, eta)))
}

/// Full objective from log-probabilities.
pub fn objective(tape: &Tape, log_probs: Var, targets: &[usize], spec: &LossSpec, params: &[Var]) -> Result<Var> {
    let data = data_term(tape, log_probs, targets, spec)?;
    match norm_penalty(tape, params, spec.eta, spec.squared_norm)? {
        Some(pen) => tape.add(data, pen),
        None => Ok(data),
    }
}

fn from_probabilities(probs: &Tensor, labels: &[usize], spec: &LossSpec, theta: &ParamStore) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::dimension("loss", probs.shape(), &[labels.len()]));
    }
    if probs.data().iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Contract("probabilities must be strictly positive".into()));
    }
    let tape = Tape::new();
    let log_probs = tape.ln(tape.constant(probs.clone()));
    let binder = theta.bind(&tape);
    let params = theta
        .names()
        .map(|n| binder.get(n))
        .collect::<Result<Vec<_>>>()?;
    let loss = objective(&tape, log_probs, labels, spec, &params)?;
    let value = tape.value(loss).item();
    Ok(value)
}

/// Utterance-averaged cross-entropy of row-wise probabilities plus
/// `η‖Θ‖` over every tensor in `theta`.
pub fn cross_entropy_loss(probs: &Tensor, labels: &[usize], eta: f64, theta: &ParamStore) -> Result<f64> {
    let spec = LossSpec {
        kind: LossKind::CrossEntropy,
        focal_gamma: 0.0,
        class_weights: Vec::new(),
        eta,
        squared_norm: false,
    };
    from_probabilities(probs, labels, &spec, theta)
}

/// Focal counterpart of [`cross_entropy_loss`]. Missing class weights
/// default to 1.
pub fn focal_loss(
    probs: &Tensor,
    labels: &[usize],
    focal_gamma: f64,
    class_weights: &[f64],
    eta: f64,
    theta: &ParamStore,
) -> Result<f64> {
    let spec = LossSpec {
        kind: LossKind::Focal,
        focal_gamma,
        class_weights: class_weights.to_vec(),
        eta,
        squared_norm: false,
    };
    from_probabilities(probs, labels, &spec, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn uniform(rows: usize, classes: usize) -> Tensor {
        Tensor::full(&[rows, classes], 1.0 / classes as f64)
    }

    #[test]
    fn perfect_predictions_cost_nothing() {
        let probs = Tensor::from_rows(&[[1.0, 1e-300], [1e-300, 1.0]]).unwrap();
        let loss = cross_entropy_loss(&probs, &[0, 1], 0.0, &ParamStore::new()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_four_class_predictions_cost_ln_4() {
        let loss = cross_entropy_loss(&uniform(5, 4), &[0, 1, 2, 3, 1], 0.0, &ParamStore::new()).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn norm_penalty_is_unsquared() {
        let mut theta = ParamStore::new();
        theta.insert("w", Tensor::from_rows(&[[0.0, 3.0], [0.0, 0.0]]).unwrap());
        theta.insert("b", Tensor::zeros(&[2]));
        let base = cross_entropy_loss(&uniform(2, 2), &[0, 1], 0.0, &theta).unwrap();
        let reg = cross_entropy_loss(&uniform(2, 2), &[0, 1], 1.0, &theta).unwrap();
        assert!((reg - base - 3.0).abs() < 1e-15);
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let mut rng = Rng::new(5);
        let logits = rng.uniform_tensor(&[7, 3], 2.0);
        let probs = logits.softmax_rows();
        let labels = [0, 2, 1, 1, 0, 2, 2];
        let ce = cross_entropy_loss(&probs, &labels, 0.0, &ParamStore::new()).unwrap();
        let fl = focal_loss(&probs, &labels, 0.0, &[1.0; 3], 0.0, &ParamStore::new()).unwrap();
        assert!((ce - fl).abs() < 1e-12);
    }

    #[test]
    fn focal_examples() {
        let sure = Tensor::from_rows(&[[1.0, 1e-300]]).unwrap();
        for g in [0.5, 2.0, 5.0] {
            assert_eq!(focal_loss(&sure, &[0], g, &[], 0.0, &ParamStore::new()).unwrap(), 0.0);
        }
        let half = uniform(1, 2);
        let term = focal_loss(&half, &[1], 2.0, &[], 0.0, &ParamStore::new()).unwrap();
        assert!((term - 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((term - 0.1733).abs() < 1e-4);
    }

    #[test]
    fn empty_batches_are_rejected() {
        let tape = Tape::new();
        let lp = tape.constant(Tensor::zeros(&[1, 2]));
        let spec = LossSpec {
            kind: LossKind::CrossEntropy,
            focal_gamma: 0.0,
            class_weights: vec![],
            eta: 0.0,
            squared_norm: false,
        };
        assert!(matches!(data_term(&tape, lp, &[], &spec), Err(Error::Contract(_))));
    }

    #[test]
    fn inverse_frequency_weights_average_to_one() {
        let labels = [0, 0, 0, 1, 2, 2];
        let w = class_weights(&labels, 4, ClassWeighting::InverseFrequency);
        assert_eq!(w, vec![6.0 / 9.0, 2.0, 1.0, 1.0]);
        let mean: f64 = labels.iter().map(|&l| w[l]).sum::<f64>() / labels.len() as f64;
        assert!((mean - 1.0).abs() < 1e-15);
        assert_eq!(class_weights(&labels, 2, ClassWeighting::Uniform), vec![1.0, 1.0]);
    }
}
