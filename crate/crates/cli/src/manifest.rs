//! `manifest.json`: everything needed to rerun a training run and to
//! report on it without re-reading any process state.

use std::path::{Path, PathBuf};

use coordconv_core::dataset::SplitKind;
use coordconv_core::models::{BuildOptions, ModelName, Task};
use coordconv_core::train::{SplitMetrics, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub task: Task,
    pub model: ModelName,
    pub options: BuildOptions,
    pub split: SplitKind,
    /// Split file the run read, if it did not derive the split from the seed.
    pub split_file: Option<String>,
    pub config: TrainConfig,
    /// Dataset file the run read; absent means the generated dataset.
    pub dataset_file: Option<String>,
    pub dataset_hash: String,
    pub architecture: String,
    pub param_count: usize,
    pub seed: u32,
    pub outcome: Outcome,
    /// Artifact file names, relative to the run directory.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    /// `completed` or `diverged`.
    pub status: String,
    pub message: Option<String>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub best_epoch: Option<usize>,
    pub final_train: Option<SplitMetrics>,
    pub final_test: Option<SplitMetrics>,
    pub best_test: Option<SplitMetrics>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> CliResult<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(CliError::usage(format!("{} has no {MANIFEST_FILE}", run_dir.display())));
        }
        files::read_json(&path)
    }

    pub fn artifact(&self, run_dir: &Path, name: &str) -> CliResult<PathBuf> {
        if !self.artifacts.iter().any(|a| a == name) {
            return Err(CliError::usage(format!("{}: run recorded no {name}", run_dir.display())));
        }
        let path = run_dir.join(name);
        if !path.is_file() {
            return Err(CliError::usage(format!("{}: missing {name}", run_dir.display())));
        }
        Ok(path)
    }
}
