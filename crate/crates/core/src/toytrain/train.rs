//! Momentum SGD over the loss functions in [`crate::losses`].

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ensembles::{bootstrap_indices, BootstrapPlan, SgdrSchedule};
use crate::error::{Error, Result};
use crate::fields::{FlowField, ValidMask};
use crate::losses::{
    epe_loss_grad, epe_loss_with, laplace_nll_grad, laplace_nll_with, wta_loss, wta_loss_grad, InnerLoss, ParamGrad,
    Reduction, WtaSelection,
};

use super::data::SyntheticScene;
use super::model::{HeadKind, ModelGrad, Prediction, ToyModel};

/// One training example: `width * height` input rows and the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Array2<f64>,
    pub gt: FlowField,
    pub mask: ValidMask,
}

impl Sample {
    pub fn from_scene(scene: &SyntheticScene) -> Self {
        Self {
            input: scene.features.clone(),
            gt: scene.gt.clone(),
            mask: scene.mask(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.gt.dims()
    }
}

pub fn samples_from_scenes(scenes: &[SyntheticScene]) -> Vec<Sample> {
    scenes.iter().map(Sample::from_scene).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LossKind {
    #[default]
    Epe,
    LaplaceNll,
    Wta {
        #[serde(default)]
        inner: InnerLoss,
    },
}

impl LossKind {
    fn check_head(&self, head: HeadKind) -> Result<()> {
        let ok = match (self, head) {
            (LossKind::Epe, HeadKind::Flow) | (LossKind::LaplaceNll, HeadKind::Laplace) => true,
            (LossKind::Wta { inner }, HeadKind::Hypotheses { with_scale, .. }) => {
                with_scale == (*inner == InnerLoss::LaplaceNll)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "loss {self:?} does not fit head {head:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Single cosine decay from `lr` to 0 over the run.
    Cosine {
        lr: f64,
    },
    /// Warm restarts; snapshots are kept at the schedule's snapshot
    /// iterations.
    Sgdr {
        schedule: SgdrSchedule,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant { lr: 0.01 }
    }
}

impl LrSchedule {
    pub fn lr(&self, iteration: u64, iterations: u64) -> f64 {
        match self {
            LrSchedule::Constant { lr } => *lr,
            LrSchedule::Cosine { lr } => {
                0.5 * lr * (1.0 + (std::f64::consts::PI * iteration as f64 / iterations as f64).cos())
            }
            LrSchedule::Sgdr { schedule } => schedule.lr(iteration),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub iterations: u64,
    pub schedule: LrSchedule,
    /// Scenes per step.
    pub batch_size: usize,
    pub loss: LossKind,
    pub smoothness_weight: f64,
    /// 0 disables dropout during training.
    pub dropout_rate: f64,
    pub momentum: f64,
    /// Rescale the gradient when its norm exceeds this value.
    pub clip_norm: Option<f64>,
    /// Only read by [`train_bootstrap`].
    pub bootstrap: Option<BootstrapPlan>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations: 1000,
            schedule: LrSchedule::default(),
            batch_size: 4,
            loss: LossKind::Epe,
            smoothness_weight: 0.0,
            dropout_rate: 0.2,
            momentum: 0.9,
            clip_norm: Some(10.0),
            bootstrap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.smoothness_weight >= 0.0 && self.smoothness_weight.is_finite()) {
            return bad("smoothness_weight must be >= 0");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be > 0");
        }
        match &self.schedule {
            LrSchedule::Constant { lr } | LrSchedule::Cosine { lr } if !(*lr > 0.0 && lr.is_finite()) => {
                return bad("learning rate must be > 0")
            }
            LrSchedule::Sgdr { schedule } => {
                schedule.validate()?;
                if schedule.total_iterations() > self.iterations {
                    return Err(Error::InvalidArgument(format!(
                        "SGDR schedule needs {} iterations, config has {}",
                        schedule.total_iterations(),
                        self.iterations
                    )));
                }
            }
            _ => {}
        }
        if let Some(plan) = &self.bootstrap {
            plan.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Models saved at the SGDR snapshot iterations, in order.
    pub snapshots: Vec<ToyModel>,
    /// Objective (loss per valid pixel) at every iteration.
    pub loss_history: Vec<f64>,
    /// Fraction of valid training pixels won by each hypothesis (WTA only).
    pub usage: Option<Vec<f64>>,
}

/// Value and gradient of the training objective on a batch: the summed
/// loss divided by the number of valid pixels in the batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: f64,
    pub grad: ModelGrad,
    pub selections: Vec<WtaSelection>,
}

fn numeric(it: Option<u64>, e: Error) -> Error {
    let at = it.map(|i| format!(" at iteration {i}")).unwrap_or_default();
    match e {
        Error::NonFinite { .. } | Error::InvalidScale { .. } | Error::Numeric(_) => {
            Error::Numeric(format!("training diverged{at}: {e}"))
        }
        other => other,
    }
}

fn write_block(d: &mut Array2<f64>, row0: usize, col0: usize, g: &ParamGrad, with_scale: bool) {
    let n = g.da_u.len();
    for i in 0..n {
        d[[row0 + i, col0]] = g.da_u[i];
        d[[row0 + i, col0 + 1]] = g.da_v[i];
        if with_scale {
            d[[row0 + i, col0 + 2]] = g.ds_u[i];
            d[[row0 + i, col0 + 3]] = g.ds_v[i];
        }
    }
}

/// Objective on `batch`. `dropout = (rate, seed)` draws the dropout masks
/// from a generator seeded with `seed`, so repeated calls see the same
/// masks.
pub fn batch_objective(
    model: &ToyModel,
    batch: &[&Sample],
    loss: LossKind,
    smoothness_weight: f64,
    dropout: Option<(f64, u64)>,
) -> Result<Objective> {
    loss.check_head(model.head)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let rows: usize = batch.iter().map(|s| s.input.nrows()).sum();
    let mut x = Array2::zeros((rows, model.input_dim()));
    let mut r = 0;
    for s in batch {
        if s.input.nrows() != s.gt.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} input rows, got {}",
                s.gt.len(),
                s.input.nrows()
            )));
        }
        x.slice_mut(s![r..r + s.input.nrows(), ..]).assign(&s.input);
        r += s.input.nrows();
    }
    let (out, cache) = match dropout {
        Some((rate, seed)) if rate > 0.0 => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model.forward_matrix(&x, Some((rate, &mut rng)))?
        }
        _ => model.forward_matrix::<ChaCha8Rng>(&x, None)?,
    };
    let mut d_out = Array2::zeros(out.raw_dim());
    let mut total = 0.0;
    let mut valid = 0usize;
    let mut selections = Vec::new();
    let mut r = 0;
    for s in batch {
        let n = s.input.nrows();
        let (w, h) = s.dims();
        let pred = model.decode(&out.slice(s![r..r + n, ..]).to_owned(), w, h)?;
        valid += s.mask.count_valid();
        match (loss, pred) {
            (LossKind::Epe, Prediction::Flow(flow)) => {
                total += epe_loss_with(&flow, &s.gt, &s.mask, Reduction::Sum)?.total;
                let g = epe_loss_grad(&flow, &s.gt, &s.mask)?;
                for i in 0..n {
                    d_out[[r + i, 0]] = g.du[i];
                    d_out[[r + i, 1]] = g.dv[i];
                }
            }
            (LossKind::LaplaceNll, Prediction::Laplace { flow, uncertainty }) => {
                total += laplace_nll_with(&flow, &uncertainty, &s.gt, &s.mask, Reduction::Sum)?.total;
                let g = laplace_nll_grad(&flow, &uncertainty, &s.gt, &s.mask)?;
                write_block(&mut d_out, r, 0, &g, true);
            }
            (LossKind::Wta { inner }, Prediction::Hypotheses(hyps)) => {
                let (l, _) = wta_loss(&hyps, &s.gt, &s.mask, inner, smoothness_weight)?;
                total += l.total;
                let (grads, sel) = wta_loss_grad(&hyps, &s.gt, &s.mask, inner, smoothness_weight)?;
                let block = model.head.block();
                for (k, g) in grads.iter().enumerate() {
                    write_block(&mut d_out, r, k * block, g, block == 4);
                }
                selections.push(sel);
            }
            _ => unreachable!("head checked against loss"),
        }
        r += n;
    }
    if valid == 0 {
        return Err(Error::EmptyMask);
    }
    let norm = 1.0 / valid as f64;
    d_out *= norm;
    Ok(Objective {
        value: total * norm,
        grad: model.backward(&cache, &d_out),
        selections,
    })
}

/// Trains `model` in place of a copy and returns the result. Each step
/// draws `batch_size` samples uniformly with replacement.
pub fn train(model: &ToyModel, data: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    config.loss.check_head(model.head)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut velocity = model.zero_grad();
    let snapshot_at = match &config.schedule {
        LrSchedule::Sgdr { schedule } => schedule.snapshot_iterations(),
        _ => Vec::new(),
    };
    let mut snapshots = Vec::with_capacity(snapshot_at.len());
    let mut history = Vec::with_capacity(config.iterations as usize);
    for it in 0..config.iterations {
        let batch: Vec<&Sample> = (0..config.batch_size)
            .map(|_| &data[rng.random_range(0..data.len())])
            .collect();
        let dropout_seed: u64 = rng.random();
        let obj = batch_objective(
            &model,
            &batch,
            config.loss,
            config.smoothness_weight,
            Some((config.dropout_rate, dropout_seed)),
        )
        .map_err(|e| numeric(Some(it), e))?;
        if !obj.value.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged at iteration {it}: loss {}",
                obj.value
            )));
        }
        history.push(obj.value);
        let mut grad = obj.grad;
        if let Some(c) = config.clip_norm {
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged at iteration {it}: gradient norm {norm}"
                )));
            }
            if norm > c {
                grad.scale(c / norm);
            }
        }
        let lr = config.schedule.lr(it, config.iterations);
        for ((layer, vel), g) in model.layers.iter_mut().zip(&mut velocity.layers).zip(&grad.layers) {
            vel.w *= config.momentum;
            vel.w.scaled_add(-lr, &g.w);
            vel.b *= config.momentum;
            vel.b.scaled_add(-lr, &g.b);
            layer.w += &vel.w;
            layer.b += &vel.b;
        }
        if snapshot_at.binary_search(&(it + 1)).is_ok() {
            snapshots.push(model.clone());
        }
    }
    let usage = match config.loss {
        LossKind::Wta { .. } => Some(hypothesis_usage(&model, data)?),
        _ => None,
    };
    Ok(TrainOutcome {
        model,
        snapshots,
        loss_history: history,
        usage,
    })
}

/// Winner-takes-all training for a hypothesis head; the outcome carries
/// per-head usage frequencies on `data`.
pub fn train_wta(model: &ToyModel, data: &[Sample], config: &TrainConfig) -> Result<TrainOutcome> {
    if !matches!(model.head, HeadKind::Hypotheses { .. }) {
        return Err(Error::InvalidArgument("train_wta needs a hypothesis head".into()));
    }
    if !matches!(config.loss, LossKind::Wta { .. }) {
        return Err(Error::InvalidArgument("train_wta needs a wta loss".into()));
    }
    train(model, data, config)
}

/// Fraction of valid pixels in `data` on which each hypothesis is the
/// EPE-closest to the ground truth.
pub fn hypothesis_usage(model: &ToyModel, data: &[Sample]) -> Result<Vec<f64>> {
    let m = model.head.members();
    let mut counts = vec![0usize; m];
    let mut valid = 0usize;
    for s in data {
        let (w, h) = s.dims();
        let Prediction::Hypotheses(hyps) = model
            .predict::<ChaCha8Rng>(&s.input, w, h, None)
            .map_err(|e| numeric(None, e))?
        else {
            return Err(Error::InvalidArgument("model has no hypothesis head".into()));
        };
        let sel = crate::losses::wta_best_idx(&hyps, &s.gt, &s.mask)?;
        for i in s.mask.valid_indices() {
            counts[sel.best_idx[i]] += 1;
        }
        valid += s.mask.count_valid();
    }
    if valid == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(counts.into_iter().map(|c| c as f64 / valid as f64).collect())
}

/// One member per bootstrap subset of `data`; member `k` starts from
/// `init(k)` and trains with seed `plan.seeds[k]`.
pub fn train_bootstrap(
    init: impl Fn(usize) -> Result<ToyModel>,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<Vec<TrainOutcome>> {
    let plan = config
        .bootstrap
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("config has no bootstrap plan".into()))?;
    let subsets = bootstrap_indices(plan, data.len())?;
    subsets
        .iter()
        .enumerate()
        .map(|(k, idx)| {
            let subset: Vec<Sample> = idx.iter().map(|&i| data[i].clone()).collect();
            let cfg = TrainConfig {
                seed: plan.seeds[k],
                ..config.clone()
            };
            train(&init(k)?, &subset, &cfg)
        })
        .collect()
}

/// Inputs of the merging head: the producer's raw outputs (all hypothesis
/// means and log-scales) at every pixel.
pub fn merge_inputs(producer: &ToyModel, data: &[Sample]) -> Result<Vec<Sample>> {
    data.iter()
        .map(|s| {
            let (out, _) = producer.forward_matrix::<ChaCha8Rng>(&s.input, None)?;
            Ok(Sample {
                input: out,
                gt: s.gt.clone(),
                mask: s.mask.clone(),
            })
        })
        .collect()
}

/// Trains a Laplace-head network with `hidden` layers on top of a frozen
/// hypothesis producer. The config's loss is replaced by the NLL.
pub fn train_merge_head(
    producer: &ToyModel,
    data: &[Sample],
    hidden: &[usize],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !matches!(producer.head, HeadKind::Hypotheses { .. }) {
        return Err(Error::InvalidArgument("merge head needs a hypothesis producer".into()));
    }
    let inputs = merge_inputs(producer, data)?;
    let head = ToyModel::new(
        producer.output_dim(),
        hidden,
        HeadKind::Laplace,
        config.seed ^ 0x6d65_7267,
    )?;
    let cfg = TrainConfig {
        loss: LossKind::LaplaceNll,
        ..config.clone()
    };
    train(&head, &inputs, &cfg)
}

/// Merged `(flow, uncertainty)` of a producer and merging head on `sample`.
pub fn merged_prediction(producer: &ToyModel, merger: &ToyModel, sample: &Sample) -> Result<Prediction> {
    let (w, h) = sample.dims();
    let (hyp_out, _) = producer.forward_matrix::<ChaCha8Rng>(&sample.input, None)?;
    merger.predict::<ChaCha8Rng>(&hyp_out, w, h, None)
}
