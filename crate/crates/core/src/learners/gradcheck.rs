//! Finite-difference checks of gradients through composed and gated models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{Dims, Model, Part};
use crate::data::{Dataset, Targets, TaskKind};
use crate::error::Result;
use crate::nn::{finite_difference_check, loss_and_output_grad, loss_from_cache, GradCheckReport, Tensor};

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub instances: usize,
    pub checks: usize,
    pub max_rel_error: f64,
    pub compared: usize,
    pub excluded: usize,
    /// Model and loss of the worst check.
    pub worst: String,
}

fn random_batch(dims: Dims, n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = Tensor::matrix(n, dims.input, (0..n * dims.input).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let y = match dims.kind {
        TaskKind::Regression => Targets::Values(Tensor::matrix(
            n,
            dims.output,
            (0..n * dims.output).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?),
        TaskKind::Classification => Targets::Labels {
            labels: (0..n).map(|_| rng.random_range(0..dims.output)).collect(),
            classes: dims.output,
        },
    };
    Dataset::new(x, y)
}

/// Compares analytic and central-difference gradients of `model`'s loss on
/// `batch` over all its networks.
pub fn check_model(model: &Model, batch: &Dataset, h: f64) -> Result<GradCheckReport> {
    let loss = batch.kind().loss();
    let (_, grads) = model.loss_and_grads(batch, loss, Part::All)?;
    let params: Vec<_> = model.nets().into_iter().map(|(_, n)| n.params.clone()).collect();
    finite_difference_check(&params, &grads, h, |p| {
        let mut m = model.clone();
        for (net, values) in m.nets_mut().into_iter().zip(p) {
            net.params = values.clone();
        }
        match &m {
            Model::Single(n) => {
                let (_, cache) = n.forward(&batch.x)?;
                let j = loss_from_cache(&n.spec, &cache, loss, batch.y.as_ref())?;
                Ok((j, cache.relu_pattern(&n.spec)))
            }
            Model::Composed(t) => {
                let pass = t.forward(&batch.x)?;
                let j = loss_from_cache(&t.pred.spec, &pass.pred, loss, batch.y.as_ref())?;
                let mut pattern = pass.rep.relu_pattern(&t.rep.spec);
                pattern.extend(pass.pred.relu_pattern(&t.pred.spec));
                Ok((j, pattern))
            }
            Model::Gated(g) => {
                let pass = g.forward(&batch.x)?;
                let (j, _) = loss_and_output_grad(loss, g.output, &pass.output, &pass.logits, batch.y.as_ref())?;
                let mut pattern = pass.gate.relu_pattern(&g.gate.spec);
                pattern.extend(pass.body.relu_pattern(&g.body.spec));
                Ok((j, pattern))
            }
        }
    })
}

/// `instances` random draws, each checking the composed and the gated model
/// under both losses.
pub fn composition_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        instances,
        checks: 0,
        max_rel_error: 0.0,
        compared: 0,
        excluded: 0,
        worst: String::new(),
    };
    for i in 0..instances {
        for kind in [TaskKind::Regression, TaskKind::Classification] {
            let dims = Dims {
                input: rng.random_range(2..=4),
                output: rng.random_range(2..=4),
                hidden: rng.random_range(3..=6),
                kind,
                init_scale: None,
            };
            let batch = random_batch(dims, rng.random_range(3..=6), &mut rng)?;
            let lr = 0.1;
            for (label, model) in [
                ("composed", Model::composed(dims, lr, &mut rng)?),
                ("gated", Model::gated(dims, lr, &mut rng)?),
            ] {
                let r = check_model(&model, &batch, FD_STEP)?;
                report.checks += 1;
                report.compared += r.compared;
                report.excluded += r.excluded;
                if r.max_rel_error > report.max_rel_error || report.worst.is_empty() {
                    report.max_rel_error = report.max_rel_error.max(r.max_rel_error);
                    report.worst = format!("instance {i}, {label}, {}", kind.loss().name());
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let r = composition_suite(3, 1).unwrap();
        assert_eq!(r.checks, 12);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.compared > 0);
    }

    #[test]
    fn single_network_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Dims {
            input: 2,
            output: 3,
            hidden: 4,
            kind: TaskKind::Regression,
            init_scale: None,
        };
        let model = Model::single(dims, 0.1, &mut rng).unwrap();
        let batch = random_batch(dims, 4, &mut rng).unwrap();
        assert!(check_model(&model, &batch, FD_STEP).unwrap().passes(1e-4));
    }
}
