//! Grid sweeps: every combination of models, splits and hyperparameters,
//! run in parallel and ranked by test metric.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_split, Example, SplitKind};
use crate::error::{Error, Result};
use crate::models::{build, BuildOptions, Hyper, ModelName, Task};
use crate::train::config::TrainConfig;
use crate::train::run::{csv_err, is_better, train_task, SplitMetrics};

/// Sweep description. Empty `models` or `splits` give an empty sweep; any
/// other empty axis falls back to the value in `base` (or, for deconv
/// filter size and multiplier, to every allowed value).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub models: Vec<ModelName>,
    pub splits: Vec<SplitKind>,
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub batch_size: Vec<usize>,
    pub fs: Vec<usize>,
    pub c_mult: Vec<usize>,
    pub seeds: Vec<u32>,
    pub with_r: bool,
    pub base: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepJob {
    pub model: ModelName,
    pub split: SplitKind,
    pub options: BuildOptions,
    pub config: TrainConfig,
}

impl SweepJob {
    pub fn hyper(&self) -> Option<Hyper> {
        self.model.is_deconv().then_some(self.options.hyper)
    }
}

fn or_base<T: Clone>(axis: &[T], base: T) -> Vec<T> {
    if axis.is_empty() {
        vec![base]
    } else {
        axis.to_vec()
    }
}

impl SweepGrid {
    /// Expands the grid in a fixed nesting order. Filter sizes and
    /// multipliers a deconv family does not allow are skipped.
    pub fn jobs(&self) -> Result<Vec<SweepJob>> {
        let base = &self.base;
        let mut jobs = Vec::new();
        for &model in &self.models {
            let hypers: Vec<Hyper> = match model.hyper_ranges() {
                Some((sizes, mults)) => {
                    let fs = if self.fs.is_empty() { sizes.to_vec() } else { self.fs.clone() };
                    let cm = if self.c_mult.is_empty() { mults.to_vec() } else { self.c_mult.clone() };
                    fs.iter()
                        .flat_map(|&fs| cm.iter().map(move |&c_mult| Hyper { fs, c_mult }))
                        .filter(|h| sizes.contains(&h.fs) && mults.contains(&h.c_mult))
                        .collect()
                }
                None => vec![BuildOptions::default().hyper],
            };
            for &split in &self.splits {
                for &hyper in &hypers {
                    for &lr in &or_base(&self.lr, base.lr) {
                        for &weight_decay in &or_base(&self.weight_decay, base.weight_decay) {
                            for &batch_size in &or_base(&self.batch_size, base.batch_size) {
                                for &seed in &or_base(&self.seeds, base.seed) {
                                    let config = TrainConfig {
                                        lr,
                                        weight_decay,
                                        batch_size,
                                        seed,
                                        ..base.clone()
                                    };
                                    config.validate(model.task())?;
                                    jobs.push(SweepJob {
                                        model,
                                        split,
                                        options: BuildOptions {
                                            hyper,
                                            with_r: self.with_r,
                                        },
                                        config,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(jobs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepResult {
    pub job: SweepJob,
    pub params: usize,
    pub epochs_run: usize,
    pub final_train: Option<SplitMetrics>,
    pub final_test: Option<SplitMetrics>,
    pub best_test: Option<SplitMetrics>,
    /// `None` on success, otherwise the error that ended the run.
    pub failure: Option<String>,
    pub wall_clock_s: f64,
}

impl SweepResult {
    pub fn task(&self) -> Task {
        self.job.model.task()
    }

    pub fn test_metric(&self) -> Option<f64> {
        self.final_test.map(|m| m.primary())
    }
}

fn run_job(job: SweepJob, dataset: &[Example]) -> SweepResult {
    let start = std::time::Instant::now();
    let split = make_split(job.split, job.config.seed);
    let outcome = build(job.model, job.options).and_then(|arch| {
        let params = arch.param_count();
        train_task(job.model.task(), arch, dataset, &split, &job.config, None).map(|o| (params, o))
    });
    let wall_clock_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((params, o)) => SweepResult {
            job,
            params,
            epochs_run: o.epochs_run,
            final_train: Some(o.final_train),
            final_test: Some(o.final_test),
            best_test: Some(o.best_test),
            failure: None,
            wall_clock_s,
        },
        Err(e) => SweepResult {
            params: build(job.model, job.options).map(|a| a.param_count()).unwrap_or(0),
            job,
            epochs_run: 0,
            final_train: None,
            final_test: None,
            best_test: None,
            failure: Some(e.to_string()),
            wall_clock_s,
        },
    }
}

/// Runs every job on up to `threads` workers and returns the results
/// ranked best first by final test metric; failed runs come last. Ties keep
/// grid order, so the ranking does not depend on scheduling.
pub fn run_sweep(jobs: Vec<SweepJob>, dataset: &[Example], threads: usize) -> Result<Vec<SweepResult>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut results: Vec<SweepResult> =
        pool.install(|| jobs.into_par_iter().map(|job| run_job(job, dataset)).collect());
    rank(&mut results);
    Ok(results)
}

pub fn rank(results: &mut [SweepResult]) {
    results.sort_by(|a, b| match (a.test_metric(), b.test_metric()) {
        (Some(x), Some(y)) if is_better(a.task(), x, y) => std::cmp::Ordering::Less,
        (Some(x), Some(y)) if is_better(a.task(), y, x) => std::cmp::Ordering::Greater,
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        _ => std::cmp::Ordering::Equal,
    });
}

/// First (best) result of each model family, in ranked order.
pub fn best_per_family(results: &[SweepResult]) -> Vec<&SweepResult> {
    let mut seen = Vec::new();
    results
        .iter()
        .filter(|r| {
            let fresh = !seen.contains(&r.job.model);
            seen.push(r.job.model);
            fresh
        })
        .collect()
}

pub const SWEEP_HEADER: [&str; 15] = [
    "rank",
    "model",
    "split",
    "fs",
    "c_mult",
    "params",
    "lr",
    "weight_decay",
    "batch_size",
    "seed",
    "epochs_run",
    "final_train",
    "final_test",
    "best_test",
    "status",
];

fn metric(m: Option<SplitMetrics>) -> String {
    m.map(|m| m.primary().to_string()).unwrap_or_default()
}

fn key_fields(rank: usize, r: &SweepResult) -> Vec<String> {
    let hyper = r.job.hyper();
    vec![
        rank.to_string(),
        r.job.model.to_string(),
        r.job.split.to_string(),
        hyper.map(|h| h.fs.to_string()).unwrap_or_default(),
        hyper.map(|h| h.c_mult.to_string()).unwrap_or_default(),
        r.params.to_string(),
        r.job.config.lr.to_string(),
        r.job.config.weight_decay.to_string(),
        r.job.config.batch_size.to_string(),
        r.job.config.seed.to_string(),
    ]
}

/// Ranked results without timing, so identical sweeps give identical files.
pub fn write_sweep_csv<W: Write>(out: W, results: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for (i, r) in results.iter().enumerate() {
        let mut row = key_fields(i + 1, r);
        row.extend([
            r.epochs_run.to_string(),
            metric(r.final_train),
            metric(r.final_test),
            metric(r.best_test),
            r.failure.clone().map_or("ok".to_string(), |f| format!("failed: {f}")),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Wall-clock seconds per run, keyed like the results file.
pub fn write_sweep_timing_csv<W: Write>(out: W, results: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SWEEP_HEADER[..10].to_vec();
    header.push("wall_clock_s");
    w.write_record(&header).map_err(csv_err)?;
    for (i, r) in results.iter().enumerate() {
        let mut row = key_fields(i + 1, r);
        row.push(format!("{:.3}", r.wall_clock_s));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_gives_empty_table() {
        let grid = SweepGrid::default();
        assert!(grid.jobs().unwrap().is_empty());
        let results = run_sweep(Vec::new(), &[], 2).unwrap();
        assert!(results.is_empty());
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &results).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn expansion_order_and_filtering() {
        let grid = SweepGrid {
            models: vec![ModelName::DeconvRen, ModelName::CcCls],
            splits: vec![SplitKind::Uniform],
            lr: vec![0.01, 0.001],
            c_mult: vec![1, 2],
            fs: vec![2],
            ..Default::default()
        };
        let jobs = grid.jobs().unwrap();
        // DECONV-REN skips c=1; CC-CLS ignores fs/c.
        assert_eq!(jobs.len(), 4);
        assert_eq!(jobs[0].hyper(), Some(Hyper { fs: 2, c_mult: 2 }));
        assert_eq!(jobs[0].config.lr, 0.01);
        assert_eq!(jobs[2].model, ModelName::CcCls);
        assert_eq!(jobs[2].hyper(), None);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let grid = SweepGrid {
            models: vec![ModelName::CcCls],
            splits: vec![SplitKind::Uniform],
            batch_size: vec![7],
            ..Default::default()
        };
        assert!(grid.jobs().is_err());
        assert!(serde_json::from_str::<SweepGrid>(r#"{"model": ["CC-CLS"]}"#).is_err());
    }

    #[test]
    fn grid_json() {
        let grid: SweepGrid = serde_json::from_str(
            r#"{"models": ["CC-CLS", "DECONV-CLS"], "splits": ["quadrant"], "lr": [0.01], "base": {"epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(grid.base.epochs, 3);
        assert_eq!(grid.jobs().unwrap().len(), 1 + 9);
    }
}
