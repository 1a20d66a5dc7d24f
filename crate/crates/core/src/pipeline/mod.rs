//! Orchestration: configuration, dataset generation, training, evaluation,
//! benchmarking and the on-disk formats behind the command line tool.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod dataset;
pub mod evaluate;
pub mod pgm;
pub mod train;

pub use config::{ExperimentConfig, Precision, Problem};
pub use dataset::{gen_dataset, generate, Dataset, Pair};
pub use evaluate::{evaluate, evaluate_pairs, EvalReport};
pub use train::{fit, train, train_on, TrainReport, TrainingSet};
