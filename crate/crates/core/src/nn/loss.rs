use serde::{Deserialize, Serialize};

use super::mlp::{backprop, Activation, ForwardCache, GradSet, MlpSpec, OutputGrad, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Borrowed supervision for one batch.
#[derive(Debug, Clone, Copy)]
pub enum TargetRef<'a> {
    Values(&'a Tensor),
    Labels(&'a [usize]),
}

/// Mean of squared residuals over every element.
pub fn loss_mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "loss_mse",
            format!("{:?}", pred.shape()),
            format!("{:?}", target.shape()),
        ));
    }
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::shape("cross-entropy labels", logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// `-log softmax(logits)[label]`, averaged over rows.
pub fn loss_xent(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Loss value and the gradient to feed into [`backprop`] for a head whose
/// output activation is `head`. `output` is the activated output and
/// `logits` the final pre-activation.
pub fn loss_and_output_grad(
    kind: LossKind,
    head: Activation,
    output: &Tensor,
    logits: &Tensor,
    target: TargetRef<'_>,
) -> Result<(f64, OutputGrad)> {
    match (kind, target) {
        (LossKind::Mse, TargetRef::Values(t)) => {
            if head == Activation::Softmax {
                return Err(Error::LossMismatch {
                    loss: kind.name(),
                    activation: head.name(),
                });
            }
            let loss = loss_mse(output, t)?;
            let scale = 2.0 / output.len() as f64;
            let g: Vec<f64> = output
                .data()
                .iter()
                .zip(t.data())
                .map(|(p, y)| scale * (p - y))
                .collect();
            Ok((loss, OutputGrad::Output(Tensor::from_parts(output.shape().to_vec(), g))))
        }
        (LossKind::CrossEntropy, TargetRef::Labels(labels)) => {
            if head != Activation::Softmax {
                return Err(Error::LossMismatch {
                    loss: kind.name(),
                    activation: head.name(),
                });
            }
            let loss = loss_xent(logits, labels)?;
            let n = labels.len() as f64;
            let c = output.cols();
            let mut g = output.data().to_vec();
            for (r, &label) in labels.iter().enumerate() {
                g[r * c + label] -= 1.0;
            }
            g.iter_mut().for_each(|v| *v /= n);
            Ok((loss, OutputGrad::Logits(Tensor::from_parts(output.shape().to_vec(), g))))
        }
        (LossKind::Mse, TargetRef::Labels(_)) | (LossKind::CrossEntropy, TargetRef::Values(_)) => {
            Err(Error::InvalidArgument(format!(
                "{} loss given the wrong kind of target",
                kind.name()
            )))
        }
    }
}

/// Loss of a cached forward pass.
pub fn loss_from_cache(spec: &MlpSpec, cache: &ForwardCache, kind: LossKind, target: TargetRef<'_>) -> Result<f64> {
    match kind {
        LossKind::Mse => match target {
            TargetRef::Values(t) => {
                if spec.output_activation() == Activation::Softmax {
                    return Err(Error::LossMismatch { loss: kind.name(), activation: "softmax" });
                }
                loss_mse(cache.output(), t)
            }
            TargetRef::Labels(_) => Err(Error::InvalidArgument("mse loss given labels".into())),
        },
        LossKind::CrossEntropy => match target {
            TargetRef::Labels(l) => {
                if spec.output_activation() != Activation::Softmax {
                    return Err(Error::LossMismatch {
                        loss: kind.name(),
                        activation: spec.output_activation().name(),
                    });
                }
                loss_xent(cache.logits(), l)
            }
            TargetRef::Values(_) => Err(Error::InvalidArgument("cross-entropy loss given values".into())),
        },
    }
}

/// Exact gradient of `loss(forward(params, x), target)` for a cached pass.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    kind: LossKind,
    target: TargetRef<'_>,
) -> Result<GradSet> {
    let (_, upstream) = loss_and_output_grad(
        kind,
        spec.output_activation(),
        cache.output(),
        cache.logits(),
        target,
    )?;
    backprop(spec, params, cache, upstream, true)
}
