//! Small-scale training of flow networks with uncertainty on synthetic
//! scenes.
//!
//! [`data`] generates scenes, [`model`] is a per-pixel perceptron with
//! manual backpropagation, [`train`] runs momentum SGD under the losses of
//! [`crate::losses`], and [`experiment`] trains and evaluates the ensemble
//! variants side by side.

pub mod data;
pub mod experiment;
pub mod model;
pub mod train;

pub use data::{generate_scenes, generate_with, realize, SceneConfig, SceneMode, SyntheticScene, FEATURES};
pub use experiment::{
    run_experiment_matrix, write_experiment, ExperimentConfig, ExperimentReport, Variant, VariantResult,
};
pub use model::{HeadKind, ModelGrad, Prediction, ToyModel};
pub use train::{
    batch_objective, hypothesis_usage, merge_inputs, merged_prediction, samples_from_scenes, train, train_bootstrap,
    train_merge_head, train_wta, LossKind, LrSchedule, Sample, TrainConfig, TrainOutcome,
};
