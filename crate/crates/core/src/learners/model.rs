//! Network containers used by the learners.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::LearnerConfig;
use crate::data::{Dataset, Task, TaskKind};
use crate::error::{Error, Result};
use crate::nn::{
    backprop, capped_joint_step, forward, loss_and_output_grad, Activation, AdagradState, ForwardCache, LossKind, MlpSpec,
    OutputGrad, ParamSet, StepReport, TargetRef, Tensor,
};

/// One network with its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Net {
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub opt: AdagradState,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, base_lr: f64, rng: &mut R) -> Self {
        let params = ParamSet::init(&spec, rng);
        let opt = AdagradState::new(&params, base_lr);
        Self { spec, params, opt }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardCache)> {
        forward(&self.spec, &self.params, x)
    }
}

/// Which networks of a model a training step updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    All,
    /// The prediction network (the body of a gated model).
    Prediction,
    /// The representation network (the gate of a gated model).
    Representation,
}

/// Representation network `h` feeding prediction network `g`:
/// `y = g(h(x; theta_1); theta_2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoNet {
    pub rep: Net,
    pub pred: Net,
}

/// Forward record of a [`TwoNet`].
#[derive(Debug, Clone)]
pub struct TwoNetPass {
    pub rep: ForwardCache,
    pub pred: ForwardCache,
}

impl TwoNetPass {
    pub fn output(&self) -> &Tensor {
        self.pred.output()
    }

    /// The representation `h(x)`.
    pub fn features(&self) -> &Tensor {
        self.rep.output()
    }
}

impl TwoNet {
    pub fn new(rep: Net, pred: Net) -> Result<Self> {
        if rep.spec.output_dim() != pred.spec.input_dim() {
            return Err(Error::shape(
                "two-network composition",
                rep.spec.output_dim(),
                pred.spec.input_dim(),
            ));
        }
        Ok(Self { rep, pred })
    }

    pub fn forward(&self, x: &Tensor) -> Result<TwoNetPass> {
        let (_, rep) = self.rep.forward(x)?;
        let (_, pred) = self.pred.forward(rep.output())?;
        Ok(TwoNetPass { rep, pred })
    }

    /// Backpropagates an output gradient through both networks.
    pub fn backprop(&self, pass: &TwoNetPass, upstream: OutputGrad, part: Part) -> Result<(ParamSet, ParamSet)> {
        let want_pred = part != Part::Representation;
        let want_rep = part != Part::Prediction;
        let gp = backprop(&self.pred.spec, &self.pred.params, &pass.pred, upstream, want_pred)?;
        let gr = if want_rep {
            backprop(
                &self.rep.spec,
                &self.rep.params,
                &pass.rep,
                OutputGrad::Output(gp.input_grad),
                true,
            )?
            .params
        } else {
            self.rep.params.zeros_like()
        };
        Ok((gr, gp.params))
    }

    pub fn loss_and_grads(&self, batch: &Dataset, kind: LossKind, part: Part) -> Result<(f64, ParamSet, ParamSet)> {
        let pass = self.forward(&batch.x)?;
        let (loss, up) = loss_and_output_grad(
            kind,
            self.pred.spec.output_activation(),
            pass.pred.output(),
            pass.pred.logits(),
            batch.y.as_ref(),
        )?;
        let (gr, gp) = self.backprop(&pass, up, part)?;
        Ok((loss, gr, gp))
    }

    /// One capped step of the networks in `part`; returns the loss before it.
    pub fn train_step(&mut self, batch: &Dataset, kind: LossKind, part: Part, beta: f64, eps: f64) -> Result<(f64, StepReport)> {
        let (loss, gr, gp) = self.loss_and_grads(batch, kind, part)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let report = match part {
            Part::All => capped_joint_step(
                &mut [(&mut self.rep.params, &mut self.rep.opt, &gr), (&mut self.pred.params, &mut self.pred.opt, &gp)],
                beta,
                eps,
            )?,
            Part::Prediction => capped_joint_step(&mut [(&mut self.pred.params, &mut self.pred.opt, &gp)], beta, eps)?,
            Part::Representation => capped_joint_step(&mut [(&mut self.rep.params, &mut self.rep.opt, &gr)], beta, eps)?,
        };
        Ok((loss, report))
    }
}

/// Two networks reading the same input whose outputs are multiplied:
/// `y = act(sigmoid(gate(x)) * body(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedNet {
    pub gate: Net,
    pub body: Net,
    pub output: Activation,
}

#[derive(Debug, Clone)]
pub struct GatedPass {
    pub gate: ForwardCache,
    pub body: ForwardCache,
    /// `sigmoid(gate(x))`.
    pub gate_values: Tensor,
    /// Product before the output activation.
    pub logits: Tensor,
    pub output: Tensor,
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl GatedNet {
    pub fn new(gate: Net, body: Net, output: Activation) -> Result<Self> {
        if gate.spec.output_dim() != body.spec.output_dim() || gate.spec.input_dim() != body.spec.input_dim() {
            return Err(Error::shape(
                "gated networks",
                format!("{:?}", body.spec.layer_sizes),
                format!("{:?}", gate.spec.layer_sizes),
            ));
        }
        if output == Activation::Relu {
            return Err(Error::InvalidArgument("gated output must be linear or softmax".into()));
        }
        for net in [&gate, &body] {
            if net.spec.output_activation() != Activation::Linear {
                return Err(Error::InvalidArgument(
                    "gate and body networks must end in a linear layer".into(),
                ));
            }
        }
        Ok(Self { gate, body, output })
    }

    pub fn forward(&self, x: &Tensor) -> Result<GatedPass> {
        let (a, gate) = self.gate.forward(x)?;
        let (b, body) = self.body.forward(x)?;
        let gate_values = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&v| sigmoid(v)).collect());
        let z: Vec<f64> = gate_values.data().iter().zip(b.data()).map(|(s, b)| s * b).collect();
        let logits = Tensor::from_parts(b.shape().to_vec(), z);
        let mut output = logits.clone();
        if self.output == Activation::Softmax {
            let c = output.cols();
            output
                .data_mut()
                .chunks_exact_mut(c)
                .for_each(crate::nn::mlp::softmax_in_place);
        }
        Ok(GatedPass {
            gate,
            body,
            gate_values,
            logits,
            output,
        })
    }

    pub fn loss_and_grads(&self, pass: &GatedPass, kind: LossKind, target: TargetRef<'_>, part: Part) -> Result<(f64, ParamSet, ParamSet)> {
        let (loss, upstream) = loss_and_output_grad(kind, self.output, &pass.output, &pass.logits, target)?;
        let dz = match upstream {
            OutputGrad::Output(g) | OutputGrad::Logits(g) => g,
        };
        let body_out = pass.body.output();
        let s = pass.gate_values.data();
        let da: Vec<f64> = dz
            .data()
            .iter()
            .zip(body_out.data())
            .zip(s)
            .map(|((d, b), s)| d * b * s * (1.0 - s))
            .collect();
        let db: Vec<f64> = dz.data().iter().zip(s).map(|(d, s)| d * s).collect();
        let shape = dz.shape().to_vec();
        let g_gate = if part != Part::Prediction {
            backprop(&self.gate.spec, &self.gate.params, &pass.gate, OutputGrad::Output(Tensor::from_parts(shape.clone(), da)), true)?.params
        } else {
            self.gate.params.zeros_like()
        };
        let g_body = if part != Part::Representation {
            backprop(&self.body.spec, &self.body.params, &pass.body, OutputGrad::Output(Tensor::from_parts(shape, db)), true)?.params
        } else {
            self.body.params.zeros_like()
        };
        Ok((loss, g_gate, g_body))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Single(Net),
    Composed(TwoNet),
    Gated(GatedNet),
}

/// Shapes of the networks built for a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub input: usize,
    pub output: usize,
    pub hidden: usize,
    pub kind: TaskKind,
    pub init_scale: Option<f64>,
}

impl Dims {
    /// Sizes for the tasks of a stream under `cfg`.
    pub fn for_task(task: &Task, cfg: &LearnerConfig) -> Self {
        Self {
            input: task.input_dim(),
            output: task.output_width(),
            hidden: cfg.hidden_units,
            kind: task.kind,
            init_scale: cfg.init_scale,
        }
    }

    fn scaled(&self, spec: MlpSpec) -> Result<MlpSpec> {
        match self.init_scale {
            Some(s) => spec.with_init_scale(s),
            None => Ok(spec),
        }
    }

    fn head(&self) -> Activation {
        match self.kind {
            TaskKind::Regression => Activation::Linear,
            TaskKind::Classification => Activation::Softmax,
        }
    }

    /// `input -> H -> H -> input`, linear output.
    pub fn representation_spec(&self) -> Result<MlpSpec> {
        self.scaled(MlpSpec::relu_stack(vec![self.input, self.hidden, self.hidden, self.input], Activation::Linear)?)
    }

    /// `input -> H -> H -> output` with the task's head.
    pub fn prediction_spec(&self) -> Result<MlpSpec> {
        self.scaled(MlpSpec::relu_stack(vec![self.input, self.hidden, self.hidden, self.output], self.head())?)
    }

    /// The representation and prediction stacks fused into one network.
    pub fn single_spec(&self) -> Result<MlpSpec> {
        let (p, h) = (self.input, self.hidden);
        let r = Activation::Relu;
        self.scaled(MlpSpec::new(
            vec![p, h, h, p, h, h, self.output],
            vec![r, r, Activation::Linear, r, r, self.head()],
        )?)
    }

    pub fn gated_part_spec(&self) -> Result<MlpSpec> {
        self.scaled(MlpSpec::relu_stack(vec![self.input, self.hidden, self.hidden, self.output], Activation::Linear)?)
    }
}

impl Model {
    pub fn single<R: Rng + ?Sized>(dims: Dims, lr: f64, rng: &mut R) -> Result<Self> {
        Ok(Model::Single(Net::new(dims.single_spec()?, lr, rng)))
    }

    pub fn composed<R: Rng + ?Sized>(dims: Dims, lr: f64, rng: &mut R) -> Result<Self> {
        let rep = Net::new(dims.representation_spec()?, lr, rng);
        let pred = Net::new(dims.prediction_spec()?, lr, rng);
        Ok(Model::Composed(TwoNet::new(rep, pred)?))
    }

    pub fn gated<R: Rng + ?Sized>(dims: Dims, lr: f64, rng: &mut R) -> Result<Self> {
        let gate = Net::new(dims.gated_part_spec()?, lr, rng);
        let body = Net::new(dims.gated_part_spec()?, lr, rng);
        Ok(Model::Gated(GatedNet::new(gate, body, dims.head())?))
    }

    /// Outputs for `x` (class probabilities for a softmax head).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Model::Single(n) => Ok(n.forward(x)?.0),
            Model::Composed(t) => Ok(t.forward(x)?.output().clone()),
            Model::Gated(g) => Ok(g.forward(x)?.output),
        }
    }

    pub fn nets(&self) -> Vec<(&'static str, &Net)> {
        match self {
            Model::Single(n) => vec![("single", n)],
            Model::Composed(t) => vec![("representation", &t.rep), ("prediction", &t.pred)],
            Model::Gated(g) => vec![("gate", &g.gate), ("body", &g.body)],
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Net> {
        match self {
            Model::Single(n) => vec![n],
            Model::Composed(t) => vec![&mut t.rep, &mut t.pred],
            Model::Gated(g) => vec![&mut g.gate, &mut g.body],
        }
    }

    /// Loss on `batch` and the gradients of every network (zero for networks
    /// outside `part`), in [`Model::nets`] order.
    pub fn loss_and_grads(&self, batch: &Dataset, kind: LossKind, part: Part) -> Result<(f64, Vec<ParamSet>)> {
        let target = batch.y.as_ref();
        match self {
            Model::Single(n) => {
                let (_, cache) = n.forward(&batch.x)?;
                let (loss, up) = loss_and_output_grad(kind, n.spec.output_activation(), cache.output(), cache.logits(), target)?;
                let g = backprop(&n.spec, &n.params, &cache, up, true)?;
                Ok((loss, vec![g.params]))
            }
            Model::Composed(t) => {
                let (loss, gr, gp) = t.loss_and_grads(batch, kind, part)?;
                Ok((loss, vec![gr, gp]))
            }
            Model::Gated(g) => {
                let pass = g.forward(&batch.x)?;
                let (loss, ga, gb) = g.loss_and_grads(&pass, kind, target, part)?;
                Ok((loss, vec![ga, gb]))
            }
        }
    }

    /// One capped Adagrad step of the networks in `part` on `batch`.
    /// Returns the batch loss before the step.
    pub fn train_step(&mut self, batch: &Dataset, kind: LossKind, part: Part, beta: f64, eps: f64) -> Result<(f64, StepReport)> {
        let (loss, grads) = self.loss_and_grads(batch, kind, part)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let single = matches!(self, Model::Single(_));
        let selected: Vec<bool> = match (single, part) {
            (true, _) | (false, Part::All) => vec![true; grads.len()],
            (false, Part::Representation) => vec![true, false],
            (false, Part::Prediction) => vec![false, true],
        };
        let mut parts: Vec<(&mut ParamSet, &mut AdagradState, &ParamSet)> = self
            .nets_mut()
            .into_iter()
            .zip(&grads)
            .zip(selected)
            .filter(|(_, keep)| *keep)
            .map(|((net, g), _)| (&mut net.params, &mut net.opt, g))
            .collect();
        let report = capped_joint_step(&mut parts, beta, eps)?;
        Ok((loss, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Targets;
    use crate::nn::{finite_difference_check, loss_from_cache};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(kind: TaskKind) -> Dims {
        Dims {
            input: 3,
            output: 4,
            hidden: 5,
            kind,
            init_scale: None,
        }
    }

    #[test]
    fn composed_equals_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let Model::Composed(t) = Model::composed(dims(TaskKind::Regression), 0.1, &mut rng).unwrap() else {
            unreachable!()
        };
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![-1.0, 0.5, 2.0]]).unwrap();
        let (h, _) = t.rep.forward(&x).unwrap();
        let (y, _) = t.pred.forward(&h).unwrap();
        assert_eq!(t.forward(&x).unwrap().output(), &y);
    }

    fn gated_with_gate_bias(bias: f64) -> (GatedNet, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let Model::Gated(mut g) = Model::gated(dims(TaskKind::Regression), 0.1, &mut rng).unwrap() else {
            unreachable!()
        };
        let last = g.gate.params.layers.last_mut().unwrap();
        last.weight.data_mut().fill(0.0);
        last.bias.data_mut().fill(bias);
        (g, Tensor::from_rows(&[vec![0.3, -0.2, 0.9]]).unwrap())
    }

    #[test]
    fn saturated_gate_passes_body_output() {
        let (g, x) = gated_with_gate_bias(60.0);
        let (body, _) = g.body.forward(&x).unwrap();
        let out = g.forward(&x).unwrap().output;
        for (a, b) in out.data().iter().zip(body.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn closed_gate_zeroes_output() {
        let (g, x) = gated_with_gate_bias(-800.0);
        assert!(g.forward(&x).unwrap().output.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn part_selection_freezes_other_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = Model::composed(dims(TaskKind::Regression), 0.1, &mut rng).unwrap();
        let x = Tensor::matrix(4, 3, (0..12).map(|v| v as f64 / 10.0).collect()).unwrap();
        let y = Tensor::matrix(4, 4, vec![0.5; 16]).unwrap();
        let batch = Dataset::new(x, Targets::Values(y)).unwrap();
        let before = m.clone();
        m.train_step(&batch, LossKind::Mse, Part::Prediction, 1.0, 1e-8).unwrap();
        let (Model::Composed(a), Model::Composed(b)) = (&before, &m) else { unreachable!() };
        assert_eq!(a.rep, b.rep);
        assert_ne!(a.pred.params, b.pred.params);
    }

    #[test]
    fn gated_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for kind in [TaskKind::Regression, TaskKind::Classification] {
            let Model::Gated(g) = Model::gated(dims(kind), 0.1, &mut rng).unwrap() else { unreachable!() };
            let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let y = match kind {
                TaskKind::Regression => Targets::Values(Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()),
                TaskKind::Classification => Targets::Labels { labels: (0..6).map(|_| rng.random_range(0..4)).collect(), classes: 4 },
            };
            let pass = g.forward(&x).unwrap();
            let (_, ga, gb) = g.loss_and_grads(&pass, kind.loss(), y.as_ref(), Part::All).unwrap();
            let report = finite_difference_check(&[g.gate.params.clone(), g.body.params.clone()], &[ga, gb], 1e-5, |p| {
                let mut h = g.clone();
                h.gate.params = p[0].clone();
                h.body.params = p[1].clone();
                let pass = h.forward(&x)?;
                let (loss, _) = loss_and_output_grad(kind.loss(), h.output, &pass.output, &pass.logits, y.as_ref())?;
                let mut pattern = pass.gate.relu_pattern(&h.gate.spec);
                pattern.extend(pass.body.relu_pattern(&h.body.spec));
                Ok((loss, pattern))
            })
            .unwrap();
            assert!(report.passes(1e-4), "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn composed_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let Model::Composed(t) = Model::composed(dims(TaskKind::Classification), 0.1, &mut rng).unwrap() else {
            unreachable!()
        };
        let x = Tensor::matrix(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let batch = Dataset::new(x.clone(), Targets::Labels { labels: labels.clone(), classes: 4 }).unwrap();
        let (_, grads) = Model::Composed(t.clone()).loss_and_grads(&batch, LossKind::CrossEntropy, Part::All).unwrap();
        let report = finite_difference_check(&[t.rep.params.clone(), t.pred.params.clone()], &grads, 1e-5, |p| {
            let mut h = t.clone();
            h.rep.params = p[0].clone();
            h.pred.params = p[1].clone();
            let pass = h.forward(&x)?;
            let loss = loss_from_cache(&h.pred.spec, &pass.pred, LossKind::CrossEntropy, TargetRef::Labels(&labels))?;
            let mut pattern = pass.rep.relu_pattern(&h.rep.spec);
            pattern.extend(pass.pred.relu_pattern(&h.pred.spec));
            Ok((loss, pattern))
        })
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }
}
