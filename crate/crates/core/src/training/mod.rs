//! Desk-scale supervision on synthetic translating textures.

mod dataset;
mod features;
mod loss;
mod report;
mod train;

pub use dataset::{synth_dataset, synth_sample_with, write_triplets, SynthConfig, TrainingSample};
pub use features::{
    make_feature_extractor, FeatureExtractor, FeatureSource, FEATURE_INPUT_MEAN, FEATURE_INPUT_STD,
    FEATURE_TENSOR_NAMES, FILE_FEATURE_WIDTH, RANDOM_FEATURE_WIDTH,
};
pub use loss::{contextual_loss, l1_loss, LossConfig, LossGrad, LossMode, LossReduction, DEFAULT_ALPHA};
pub use report::{
    evaluate_quality, frame_average, kernel_localization, motion_localization_report, LocalizationReport, QualityReport,
};
pub use train::{
    sample_loss_and_gradient, train, train_with, EpochRecord, LossCurve, SampleFeatures, TrainConfig, TrainOutcome,
    CURVE_SCHEMA,
};
