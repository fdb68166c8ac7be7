//! Trains the ensemble variants on one synthetic dataset and evaluates them
//! side by side.
//!
//! Empirical variants combine point predictions by their sample mean and
//! variance; predictive variants combine Laplace predictions with the law
//! of total variance. Variants run in parallel, each on its own random
//! stream, so results do not depend on the thread count.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensembles::{merge_empirical, merge_predictive, BootstrapPlan, MergedPrediction, SgdrSchedule};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    evaluate, laplace_entropy, log_scale_ranking, member_variance, oracle_epe, EntropyMap, ImageEval,
    SparsificationCurve, DEFAULT_STEPS,
};
use crate::fields::{endpoint_error, FlowField, HypothesisSet, UncertaintyField};
use crate::io::{encode_png, render_flow, render_heatmap_auto, write_bytes, write_curve_csv, write_json, EvalReport};
use crate::losses::InnerLoss;

use super::data::{generate_with, SceneConfig, SceneMode, FEATURES};
use super::model::{HeadKind, Prediction, ToyModel};
use super::train::{
    merged_prediction, samples_from_scenes, train, train_bootstrap, train_merge_head, train_wta, LossKind, LrSchedule,
    Sample, TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One EPE-trained model, no uncertainty.
    SingleEpe,
    /// One NLL-trained model.
    SinglePred,
    DropoutEmp,
    DropoutPred,
    SgdrEmp,
    SgdrPred,
    BootstrapEmp,
    BootstrapPred,
    /// WTA-trained hypotheses without scales, merged by sample statistics.
    HypEmp,
    /// WTA-trained hypotheses with scales, merged by a trained head.
    HypPredMerged,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::SingleEpe,
        Variant::SinglePred,
        Variant::DropoutEmp,
        Variant::DropoutPred,
        Variant::SgdrEmp,
        Variant::SgdrPred,
        Variant::BootstrapEmp,
        Variant::BootstrapPred,
        Variant::HypEmp,
        Variant::HypPredMerged,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::SingleEpe => "single_epe",
            Variant::SinglePred => "single_pred",
            Variant::DropoutEmp => "dropout_emp",
            Variant::DropoutPred => "dropout_pred",
            Variant::SgdrEmp => "sgdr_emp",
            Variant::SgdrPred => "sgdr_pred",
            Variant::BootstrapEmp => "bootstrap_emp",
            Variant::BootstrapPred => "bootstrap_pred",
            Variant::HypEmp => "hyp_emp",
            Variant::HypPredMerged => "hyp_pred_merged",
        }
    }

    fn predictive(&self) -> bool {
        matches!(
            self,
            Variant::SinglePred
                | Variant::DropoutPred
                | Variant::SgdrPred
                | Variant::BootstrapPred
                | Variant::HypPredMerged
        )
    }

    fn stream(&self) -> u64 {
        Variant::ALL.iter().position(|v| v == self).expect("listed") as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenes: SceneConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub hidden: Vec<usize>,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Ensemble size for dropout, bootstrap and SGDR variants.
    pub members: usize,
    /// Number of hypotheses for the WTA variants.
    pub hypotheses: usize,
    pub dropout_rate: f64,
    pub smoothness_weight: f64,
    pub bootstrap_fraction: f64,
    /// Snapshot count is taken from `members`.
    pub sgdr_cycle: u64,
    pub sgdr_pre_cycles: usize,
    pub merge_hidden: Vec<usize>,
    pub merge_iterations: u64,
    pub steps: usize,
    pub dataset_wise: bool,
    pub variants: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: SceneConfig {
                mode: SceneMode::Bimodal,
                noise: 0.5,
                ..SceneConfig::default()
            },
            train_scenes: 64,
            test_scenes: 16,
            hidden: vec![64, 64],
            iterations: 2000,
            batch_size: 4,
            learning_rate: 0.01,
            members: 8,
            hypotheses: 8,
            dropout_rate: 0.2,
            smoothness_weight: 0.01,
            bootstrap_fraction: 0.67,
            sgdr_cycle: 250,
            sgdr_pre_cycles: 2,
            merge_hidden: vec![32, 32],
            merge_iterations: 1000,
            steps: DEFAULT_STEPS,
            dataset_wise: true,
            variants: Variant::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON config; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidArgument(format!("config key `{path}`: {}", e.into_inner()))
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenes.validate()?;
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return bad("scene counts must be >= 1");
        }
        if self.members < 2 {
            return bad("members must be >= 2");
        }
        if self.hypotheses < 2 {
            return bad("hypotheses must be >= 2");
        }
        if self.steps < 2 {
            return bad("steps must be >= 2");
        }
        if self.variants.is_empty() {
            return bad("no variants selected");
        }
        self.sgdr_schedule().validate()?;
        self.train_config(LossKind::Epe, 0, 0.0).validate()
    }

    fn sgdr_schedule(&self) -> SgdrSchedule {
        SgdrSchedule {
            base_lr: self.learning_rate,
            cycle_length: self.sgdr_cycle,
            t_mult: 1.0,
            pre_cycles: self.sgdr_pre_cycles,
            num_snapshots: self.members,
        }
    }

    fn train_config(&self, loss: LossKind, seed: u64, dropout_rate: f64) -> TrainConfig {
        TrainConfig {
            seed,
            iterations: self.iterations,
            schedule: LrSchedule::Cosine { lr: self.learning_rate },
            batch_size: self.batch_size,
            loss,
            smoothness_weight: self.smoothness_weight,
            dropout_rate,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub report: EvalReport,
    pub curve: Option<SparsificationCurve>,
    /// Hypothesis usage on the training set (WTA variants).
    pub usage: Option<Vec<f64>>,
    /// Trained networks: the members, the hypothesis producer, or the
    /// producer followed by its merging head.
    pub models: Vec<ToyModel>,
    /// Prediction and uncertainty on the first test scene.
    pub preview: (FlowField, Option<UncertaintyField>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub results: Vec<VariantResult>,
}

impl ExperimentReport {
    pub fn get(&self, variant: Variant) -> Option<&VariantResult> {
        self.results.iter().find(|r| r.variant == variant)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    variants: Vec<SummaryRow<'a>>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    variant: &'static str,
    aepe: f64,
    ause: Option<f64>,
    oracle_epe: Option<f64>,
    member_variance: Option<f64>,
    usage: &'a Option<Vec<f64>>,
}

/// Per-scene output of a variant before evaluation.
struct Output {
    flow: FlowField,
    uncertainty: Option<UncertaintyField>,
    ranking: Option<Vec<f64>>,
    members: Option<HypothesisSet>,
}

fn from_merged(merged: MergedPrediction, members: HypothesisSet) -> Result<Output> {
    let ranking = merged.total_variance();
    Ok(Output {
        uncertainty: Some(merged.to_uncertainty()?),
        flow: merged.mean,
        ranking: Some(ranking),
        members: Some(members),
    })
}

fn ensemble_output(preds: Vec<Prediction>, predictive: bool) -> Result<Output> {
    let members = if predictive {
        HypothesisSet::from_predictions(
            preds
                .into_iter()
                .map(|p| match p {
                    Prediction::Laplace { flow, uncertainty } => Ok((flow, uncertainty)),
                    _ => Err(Error::InvalidArgument("predictive member without scales".into())),
                })
                .collect::<Result<_>>()?,
        )?
    } else {
        HypothesisSet::from_flows(preds.iter().map(|p| p.flow().clone()).collect())?
    };
    let merged = if predictive {
        merge_predictive(&members)?
    } else {
        merge_empirical(&members)?
    };
    from_merged(merged, members)
}

fn single_output(pred: Prediction) -> Output {
    match pred {
        Prediction::Laplace { flow, uncertainty } => Output {
            ranking: Some(log_scale_ranking(&uncertainty)),
            flow,
            uncertainty: Some(uncertainty),
            members: None,
        },
        other => Output {
            flow: other.flow().clone(),
            uncertainty: None,
            ranking: None,
            members: None,
        },
    }
}

fn predict(model: &ToyModel, s: &Sample) -> Result<Prediction> {
    let (w, h) = s.dims();
    model.predict::<ChaCha8Rng>(&s.input, w, h, None)
}

struct Trained {
    models: Vec<ToyModel>,
    usage: Option<Vec<f64>>,
}

fn train_variant(variant: Variant, cfg: &ExperimentConfig, data: &[Sample], rng: &mut ChaCha8Rng) -> Result<Trained> {
    let predictive = variant.predictive();
    let (head, loss) = if predictive {
        (HeadKind::Laplace, LossKind::LaplaceNll)
    } else {
        (HeadKind::Flow, LossKind::Epe)
    };
    let init_seed: u64 = rng.random();
    let train_seed: u64 = rng.random();
    let init = |seed: u64, head: HeadKind| ToyModel::new(FEATURES, &cfg.hidden, head, seed);
    let single = |models: Vec<ToyModel>| Trained { models, usage: None };
    match variant {
        Variant::SingleEpe | Variant::SinglePred => {
            let out = train(&init(init_seed, head)?, data, &cfg.train_config(loss, train_seed, 0.0))?;
            Ok(single(vec![out.model]))
        }
        Variant::DropoutEmp | Variant::DropoutPred => {
            let out = train(
                &init(init_seed, head)?,
                data,
                &cfg.train_config(loss, train_seed, cfg.dropout_rate),
            )?;
            Ok(single(vec![out.model]))
        }
        Variant::SgdrEmp | Variant::SgdrPred => {
            let schedule = cfg.sgdr_schedule();
            let tc = TrainConfig {
                iterations: schedule.total_iterations(),
                schedule: LrSchedule::Sgdr { schedule },
                ..cfg.train_config(loss, train_seed, 0.0)
            };
            let out = train(&init(init_seed, head)?, data, &tc)?;
            Ok(single(out.snapshots))
        }
        Variant::BootstrapEmp | Variant::BootstrapPred => {
            let mut plan = BootstrapPlan::new(cfg.members, train_seed);
            plan.subset_fraction = cfg.bootstrap_fraction;
            let tc = TrainConfig {
                bootstrap: Some(plan),
                ..cfg.train_config(loss, train_seed, 0.0)
            };
            let members = train_bootstrap(|k| init(init_seed.wrapping_add(k as u64), head), data, &tc)?;
            Ok(single(members.into_iter().map(|o| o.model).collect()))
        }
        Variant::HypEmp | Variant::HypPredMerged => {
            let with_scale = variant == Variant::HypPredMerged;
            let inner = if with_scale {
                InnerLoss::LaplaceNll
            } else {
                InnerLoss::Epe
            };
            let head = HeadKind::Hypotheses {
                m: cfg.hypotheses,
                with_scale,
            };
            let out = train_wta(
                &init(init_seed, head)?,
                data,
                &cfg.train_config(LossKind::Wta { inner }, train_seed, 0.0),
            )?;
            let mut models = vec![out.model];
            if with_scale {
                let tc = TrainConfig {
                    iterations: cfg.merge_iterations,
                    ..cfg.train_config(LossKind::LaplaceNll, train_seed ^ 1, 0.0)
                };
                models.push(train_merge_head(&models[0], data, &cfg.merge_hidden, &tc)?.model);
            }
            Ok(Trained {
                models,
                usage: out.usage,
            })
        }
    }
}

fn infer(
    variant: Variant,
    cfg: &ExperimentConfig,
    models: &[ToyModel],
    s: &Sample,
    rng: &mut ChaCha8Rng,
) -> Result<Output> {
    let predictive = variant.predictive();
    match variant {
        Variant::SingleEpe | Variant::SinglePred => Ok(single_output(predict(&models[0], s)?)),
        Variant::DropoutEmp | Variant::DropoutPred => {
            let (w, h) = s.dims();
            let preds = (0..cfg.members)
                .map(|_| models[0].predict(&s.input, w, h, Some((cfg.dropout_rate, &mut *rng))))
                .collect::<Result<Vec<_>>>()?;
            ensemble_output(preds, predictive)
        }
        Variant::SgdrEmp | Variant::SgdrPred | Variant::BootstrapEmp | Variant::BootstrapPred => {
            let preds = models.iter().map(|m| predict(m, s)).collect::<Result<Vec<_>>>()?;
            ensemble_output(preds, predictive)
        }
        Variant::HypEmp => {
            let Prediction::Hypotheses(hyps) = predict(&models[0], s)? else {
                unreachable!("hypothesis head")
            };
            from_merged(merge_empirical(&hyps)?, hyps)
        }
        Variant::HypPredMerged => {
            let Prediction::Hypotheses(hyps) = predict(&models[0], s)? else {
                unreachable!("hypothesis head")
            };
            let mut out = single_output(merged_prediction(&models[0], &models[1], s)?);
            out.members = Some(hyps);
            Ok(out)
        }
    }
}

fn run_variant(
    variant: Variant,
    cfg: &ExperimentConfig,
    train_data: &[Sample],
    test_data: &[Sample],
) -> Result<VariantResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(variant.stream());
    let trained = train_variant(variant, cfg, train_data, &mut rng)?;
    let mut images = Vec::with_capacity(test_data.len());
    let mut preview = None;
    for (k, s) in test_data.iter().enumerate() {
        let out = infer(variant, cfg, &trained.models, s, &mut rng)?;
        let (oracle, var) = match &out.members {
            Some(h) => (Some(oracle_epe(h, &s.gt, &s.mask)?), Some(member_variance(h, &s.mask)?)),
            None => (None, None),
        };
        images.push(ImageEval {
            name: format!("scene_{k:03}"),
            errors: endpoint_error(&out.flow, &s.gt, &s.mask)?,
            mask: s.mask.clone(),
            ranking: out.ranking,
            oracle_epe: oracle,
            member_variance: var,
        });
        if preview.is_none() {
            preview = Some((out.flow, out.uncertainty));
        }
    }
    let ev = evaluate(&images, cfg.steps, cfg.dataset_wise)?;
    Ok(VariantResult {
        variant,
        report: ev.report,
        curve: ev.curve,
        usage: trained.usage,
        models: trained.models,
        preview: preview.expect("at least one test scene"),
    })
}

/// Trains and evaluates every configured variant. Training and test scenes
/// are drawn from independent streams of `config.seed`.
pub fn run_experiment_matrix(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let mut variants = Vec::new();
    for v in &config.variants {
        if !variants.contains(v) {
            variants.push(*v);
        }
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_seed, test_seed): (u64, u64) = (seeds.random(), seeds.random());
    let train_data = samples_from_scenes(&generate_with(&config.scenes, train_seed, config.train_scenes)?);
    let test_data = samples_from_scenes(&generate_with(&config.scenes, test_seed, config.test_scenes)?);
    let results = variants
        .par_iter()
        .map(|&v| run_variant(v, config, &train_data, &test_data))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        config: config.clone(),
        results,
    })
}

/// Writes `summary.json` plus, per variant, `<name>.json` (the evaluation
/// report), `<name>_curve.csv`, `<name>_flow.png`, `<name>_entropy.png` and
/// one `<name>_<k>.fuqm` checkpoint per trained network. Curve and entropy
/// files are skipped for variants without uncertainty.
pub fn write_experiment(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows = report
        .results
        .iter()
        .map(|r| SummaryRow {
            variant: r.variant.name(),
            aepe: r.report.aepe,
            ause: r.report.ause,
            oracle_epe: r.report.oracle_epe,
            member_variance: r.report.member_variance,
            usage: &r.usage,
        })
        .collect();
    write_json(
        &Summary {
            config: &report.config,
            variants: rows,
        },
        &out_dir.join("summary.json"),
    )?;
    for r in &report.results {
        let name = r.variant.name();
        write_json(&r.report, &out_dir.join(format!("{name}.json")))?;
        if let Some(c) = &r.curve {
            write_curve_csv(c, &out_dir.join(format!("{name}_curve.csv")))?;
        }
        let (flow, unc) = &r.preview;
        write_bytes(
            &out_dir.join(format!("{name}_flow.png")),
            &encode_png(&render_flow(flow, None))?,
        )?;
        if let Some(u) = unc {
            let map: EntropyMap = laplace_entropy(u);
            write_bytes(
                &out_dir.join(format!("{name}_entropy.png")),
                &encode_png(&render_heatmap_auto(&map))?,
            )?;
        }
        for (k, m) in r.models.iter().enumerate() {
            write_bytes(&out_dir.join(format!("{name}_{k}.fuqm")), &m.to_checkpoint())?;
        }
    }
    Ok(())
}
