//! Shared fixtures for the criterion benches.

use rum_core::datalog::{DatasetConfig, EpisodeLog, TrainingPair};
use rum_core::experiment::{build_dataset, generate_demos, DataConfig};
use rum_core::sim2d::Task;

/// Expert drawer demonstrations, 4 envs × 5 demos.
pub fn demo_logs() -> Vec<EpisodeLog> {
    generate_demos(&DataConfig { task: Task::Drawer, env_count: 4, demos_per_env: 5, ..DataConfig::default() })
        .expect("demo generation")
}

pub fn training_pairs(logs: &[EpisodeLog]) -> Vec<TrainingPair> {
    build_dataset(logs, &DatasetConfig { history: 2, ..DatasetConfig::default() }).expect("dataset").pairs
}
