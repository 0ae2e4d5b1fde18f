//! Experiment harness: configuration, the four-variant training protocol,
//! exports and model files.

mod config;
mod experiment;
mod export;
mod gridsearch;
mod model;

pub use config::{
    apply_override, BatchMode, ConfigFile, DataSource, ExperimentConfig, NetworkConfig, Variant, DEFAULT_LAMBDA,
};
pub use experiment::{
    accuracy, frozen_copy, load_domains, no_hook, run_experiment, run_experiment_with, train_all, train_seed,
    AlphaPoint, EpochRecord, MeanStd, RunReport, SeedRecord, StepEvent, StepHook, TrainedRun,
};
pub use export::{
    alpha_trace_csv, compute_histograms, export_alpha_trace, export_histograms, histograms_csv, metrics_csv,
    read_report, summary_csv, write_run_outputs, ChannelHistogram, ChannelSampling,
};
pub use gridsearch::{grid_search_lambda, select_lambda, split_source, GridResult, LambdaScore, DEFAULT_HOLDOUT};
pub use model::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
