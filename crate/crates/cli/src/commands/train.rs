use std::path::PathBuf;
use std::time::Instant;

use coordconv_core::dataset::{dataset_hash, make_split};
use coordconv_core::models::{build, BuildOptions, Hyper, ModelName, Task};
use coordconv_core::train::{train_task, write_metrics_csv, write_timing_csv, MetricsRecord, SplitMetrics, TrainConfig};

use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::{Outcome, RunManifest, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, TIMING_FILE};
use crate::TrainArgs;

/// Short label and value of the task's headline metric.
pub fn headline(task: Task, m: &SplitMetrics) -> String {
    let name = match task {
        Task::Cls => "acc",
        Task::Reg => "px",
        Task::Ren => "iou",
    };
    format!("{name} {:.4}", m.primary())
}

pub fn config_from(args: &TrainArgs) -> CliResult<TrainConfig> {
    let mut config: TrainConfig = match &args.config {
        Some(path) => files::read_json(path)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = args.lr {
        config.lr = v;
    }
    if let Some(v) = args.wd {
        config.weight_decay = v;
    }
    if let Some(v) = args.batch {
        config.batch_size = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = &args.milestones {
        config.milestones = v.clone();
    }
    if let Some(v) = args.patience {
        config.patience = v;
    }
    if let Some(v) = args.eval_every {
        config.eval_every = v;
    }
    config.validate(args.task)?;
    Ok(config)
}

pub fn options_from(args: &TrainArgs) -> CliResult<BuildOptions> {
    let mut options = BuildOptions {
        with_r: args.with_r,
        ..Default::default()
    };
    if args.model.is_deconv() {
        let Hyper { fs, c_mult } = options.hyper;
        options.hyper = Hyper {
            fs: args.fs.unwrap_or(fs),
            c_mult: args.c_mult.unwrap_or(c_mult),
        };
    } else if args.fs.is_some() || args.c_mult.is_some() {
        return Err(CliError::usage(format!("--fs/--c-mult apply only to deconv models, not {}", args.model)));
    }
    Ok(options)
}

fn check_task(task: Task, model: ModelName) -> CliResult<()> {
    if model.task() == task {
        return Ok(());
    }
    let fitting: Vec<&str> = ModelName::ALL
        .iter()
        .filter(|m| m.task() == task)
        .map(|m| m.as_str())
        .collect();
    Err(CliError::usage(format!(
        "{model} is a {} model; task {task} takes one of {}",
        model.task(),
        fitting.join("|")
    )))
}

fn progress_line(task: Task, rec: &MetricsRecord) -> String {
    let mut line = format!(
        "epoch {:>4}  lr {:<8}  running {}",
        rec.epoch,
        rec.lr,
        headline(task, &rec.running)
    );
    if let (Some(train), Some(test)) = (rec.train, rec.test) {
        line += &format!("  | train {}  test {}", headline(task, &train), headline(task, &test));
    }
    line + &format!("  ({:.1}s)", rec.wall_clock_s)
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    check_task(args.task, args.model)?;
    let config = config_from(args)?;
    let options = options_from(args)?;
    let arch = build(args.model, options)?;

    let dataset = files::load_dataset(args.dataset.as_deref())?;
    let split = match &args.split_file {
        Some(path) => {
            let split = files::load_split(path)?;
            if split.kind != args.split {
                return Err(CliError::usage(format!(
                    "{} holds a {} split, not {}",
                    path.display(),
                    split.kind,
                    args.split
                )));
            }
            split
        }
        None => make_split(args.split, config.seed),
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-s{}", args.model, args.split, config.seed)));
    files::ensure_dir(&out)?;

    println!("{}  ({} params)", arch.to_text(), arch.param_count());
    let mut manifest = RunManifest {
        command_line: std::env::args().collect(),
        task: args.task,
        model: args.model,
        options,
        split: args.split,
        split_file: args.split_file.as_deref().map(files::display),
        config: config.clone(),
        dataset_file: args.dataset.as_deref().map(files::display),
        dataset_hash: dataset_hash(&dataset),
        architecture: arch.to_text(),
        param_count: arch.param_count(),
        seed: config.seed,
        outcome: Outcome {
            status: "completed".into(),
            message: None,
            epochs_run: 0,
            stopped_early: false,
            best_epoch: None,
            final_train: None,
            final_test: None,
            best_test: None,
            wall_clock_s: 0.0,
        },
        artifacts: Vec::new(),
    };

    let start = Instant::now();
    let task = args.task;
    let quiet = args.quiet;
    let mut report = |rec: &MetricsRecord| {
        if !quiet {
            eprintln!("{}", progress_line(task, rec));
        }
    };
    let result = train_task(task, arch, &dataset, &split, &config, Some(&mut report));
    manifest.outcome.wall_clock_s = start.elapsed().as_secs_f64();

    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let err = CliError::from(e);
            if matches!(err, CliError::Diverged(_)) {
                manifest.outcome.status = "diverged".into();
                manifest.outcome.message = Some(err.to_string());
                files::write_json(&out.join(MANIFEST_FILE), &manifest)?;
            }
            return Err(err);
        }
    };

    files::write_with(&out.join(METRICS_FILE), |w| write_metrics_csv(w, &outcome.history))?;
    files::write_with(&out.join(TIMING_FILE), |w| write_timing_csv(w, &outcome.history))?;
    files::write_with(&out.join(CHECKPOINT_FILE), |w| outcome.model.save(w))?;
    manifest.outcome = Outcome {
        status: "completed".into(),
        message: None,
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
        best_epoch: Some(outcome.best_epoch),
        final_train: Some(outcome.final_train),
        final_test: Some(outcome.final_test),
        best_test: Some(outcome.best_test),
        wall_clock_s: manifest.outcome.wall_clock_s,
    };
    manifest.artifacts = [METRICS_FILE, TIMING_FILE, CHECKPOINT_FILE].map(String::from).to_vec();
    files::write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let m = |s: &SplitMetrics| format!("{} loss {:.5}", headline(task, s), s.loss);
    println!(
        "final after {} epochs{}: train {} | test {}",
        outcome.epochs_run,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        m(&outcome.final_train),
        m(&outcome.final_test)
    );
    println!("artifacts -> {}", out.display());
    Ok(())
}
