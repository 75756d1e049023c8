//! Comparison table and prediction heatmaps for finished runs. Reads only
//! the run directory: manifest, metrics CSV and checkpoint.

use std::path::Path;

use coordconv_core::dataset::{
    dataset_hash, denormalize_coord, make_split, normalize_min_max, write_pgm, Example, CANVAS, PIXELS,
};
use coordconv_core::models::{input_batch, parse_architecture, Model, Task};
use coordconv_core::ops::dense::sigmoid;
use coordconv_core::ops::loss::log_softmax;
use coordconv_core::train::is_better;
use coordconv_core::Tensor;
use serde::Deserialize;

use crate::error::{CliError, CliResult};
use crate::files;
use crate::manifest::{RunManifest, CHECKPOINT_FILE, METRICS_FILE};
use crate::ReportArgs;

pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_HEADER: [&str; 10] = [
    "run",
    "model",
    "split",
    "params",
    "epochs",
    "metric",
    "final_train",
    "final_test",
    "best_test",
    "best_epoch",
];

#[derive(Debug, Deserialize)]
struct MetricsRow {
    epoch: usize,
    split: String,
    #[allow(dead_code)]
    loss: f64,
    accuracy: Option<f64>,
    iou: Option<f64>,
    pixel_error: Option<f64>,
}

impl MetricsRow {
    fn primary(&self) -> Option<f64> {
        self.accuracy.or(self.iou).or(self.pixel_error)
    }
}

/// Final and best evaluated values of the headline metric, from the CSV.
#[derive(Debug, PartialEq)]
struct Summary {
    epochs: usize,
    final_train: f64,
    final_test: f64,
    best_test: f64,
    best_epoch: usize,
}

fn summarize(path: &Path, task: Task) -> CliResult<Summary> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut epochs = 0;
    let (mut train, mut test, mut best) = (None, None, None::<(f64, usize)>);
    for row in reader.deserialize::<MetricsRow>() {
        let row = row.map_err(|e| CliError::io(path, e))?;
        epochs = epochs.max(row.epoch + 1);
        let Some(v) = row.primary() else { continue };
        match row.split.as_str() {
            "train" => train = Some(v),
            "test" => {
                test = Some(v);
                if best.is_none_or(|(b, _)| is_better(task, v, b)) {
                    best = Some((v, row.epoch));
                }
            }
            _ => {}
        }
    }
    match (train, test, best) {
        (Some(final_train), Some(final_test), Some((best_test, best_epoch))) => Ok(Summary {
            epochs,
            final_train,
            final_test,
            best_test,
            best_epoch,
        }),
        _ => Err(CliError::Failed(format!("{}: no evaluated epochs", path.display()))),
    }
}

fn parse_window(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("--window `{text}`: expected ROWSxCOLS with both in 1..=64"));
    let (r, c) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?);
    if r == 0 || c == 0 || r > CANVAS || c > CANVAS {
        return Err(bad());
    }
    Ok((r, c))
}

fn run_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// Per-pixel mass a model output puts on the canvas, per example.
fn prediction_mass(task: Task, out: &Tensor<f32>) -> Vec<Vec<f64>> {
    let width = out.shape()[1];
    out.data()
        .chunks_exact(width)
        .map(|row| match task {
            Task::Cls => log_softmax(row, PIXELS).iter().map(|&lp| (lp as f64).exp()).collect(),
            Task::Ren => row.iter().map(|&z| sigmoid(z) as f64).collect(),
            Task::Reg => {
                let mut m = vec![0.0; PIXELS];
                let px = |t: f32| denormalize_coord(t as f64).round().clamp(0.0, (CANVAS - 1) as f64) as usize;
                m[px(row[1]) * CANVAS + px(row[0])] = 1.0;
                m
            }
        })
        .collect()
}

struct Rebuilt {
    model: Model<f32>,
    dataset: Vec<Example>,
    train: Vec<u16>,
    test: Vec<u16>,
}

fn rebuild(dir: &Path, manifest: &RunManifest) -> CliResult<Rebuilt> {
    let arch = parse_architecture(manifest.model.as_str(), &manifest.architecture)?;
    let checkpoint = manifest.artifact(dir, CHECKPOINT_FILE)?;
    let model = Model::load(arch, &mut files::open(&checkpoint)?).map_err(|e| CliError::io(&checkpoint, e))?;
    let dataset = files::load_dataset(manifest.dataset_file.as_deref().map(Path::new))?;
    if dataset_hash(&dataset) != manifest.dataset_hash {
        return Err(CliError::Failed(format!(
            "{}: dataset hash differs from the one the run trained on",
            dir.display()
        )));
    }
    let split = match &manifest.split_file {
        Some(p) => files::load_split(Path::new(p))?,
        None => make_split(manifest.split, manifest.config.seed),
    };
    Ok(Rebuilt {
        model,
        dataset,
        train: split.train,
        test: split.test,
    })
}

fn heatmaps(args: &ReportArgs, dir: &Path, label: &str, manifest: &RunManifest, window: (usize, usize)) -> CliResult<()> {
    let task = manifest.task;
    let Rebuilt {
        mut model,
        dataset,
        train,
        test,
    } = rebuild(dir, manifest)?;
    let mode = model.architecture().input_mode;
    for (half, indices) in [("train", &train), ("test", &test)] {
        let mut sum = vec![0.0f64; PIXELS];
        for chunk in indices.chunks(64) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &dataset[i as usize]).collect();
            let out = model.predict(input_batch(mode, &batch))?;
            for mass in prediction_mass(task, &out) {
                sum.iter_mut().zip(mass).for_each(|(s, m)| *s += m);
            }
        }
        normalize_min_max(&mut sum);
        let path = args.out.join(format!("{label}-{half}-prediction-sum.pgm"));
        files::write_with(&path, |w| write_pgm(w, CANVAS, CANVAS, &sum))?;
    }
    if task == Task::Reg {
        return Ok(());
    }
    for &i in test.iter().take(args.examples) {
        let ex = &dataset[i as usize];
        let out = model.predict(input_batch(mode, &[ex]))?;
        let logits: Vec<f64> = out.data().iter().map(|&z| z as f64).collect();
        let mut shown = logits.clone();
        normalize_min_max(&mut shown);
        let stem = format!("{label}-test-x{}-y{}", ex.x, ex.y);
        files::write_with(&args.out.join(format!("{stem}-logits.pgm")), |w| write_pgm(w, CANVAS, CANVAS, &shown))?;

        let (rows, cols) = window;
        let top = (ex.y as usize).saturating_sub(rows / 2).min(CANVAS - rows);
        let left = (ex.x as usize).saturating_sub(cols / 2).min(CANVAS - cols);
        let path = args.out.join(format!("{stem}-window.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        w.write_record(["y", "x", "logit", "target"]).map_err(|e| CliError::io(&path, e))?;
        let target = if task == Task::Cls { &ex.onehot } else { &ex.image };
        for y in top..top + rows {
            for x in left..left + cols {
                w.write_record([
                    y.to_string(),
                    x.to_string(),
                    logits[y * CANVAS + x].to_string(),
                    u8::from(target.get(y, x)).to_string(),
                ])
                .map_err(|e| CliError::io(&path, e))?;
            }
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

pub fn run(args: &ReportArgs) -> CliResult<()> {
    if args.runs.is_empty() {
        return Err(CliError::usage("report needs at least one run directory"));
    }
    let window = parse_window(&args.window)?;
    let mut rows = Vec::new();
    let mut loaded = Vec::new();
    for dir in &args.runs {
        let manifest = RunManifest::load(dir)?;
        let metrics = manifest.artifact(dir, METRICS_FILE)?;
        let s = summarize(&metrics, manifest.task)?;
        let metric = match manifest.task {
            Task::Cls => "accuracy",
            Task::Reg => "pixel_error",
            Task::Ren => "iou",
        };
        rows.push([
            run_label(dir),
            manifest.model.to_string(),
            manifest.split.to_string(),
            manifest.param_count.to_string(),
            s.epochs.to_string(),
            metric.to_string(),
            s.final_train.to_string(),
            s.final_test.to_string(),
            s.best_test.to_string(),
            s.best_epoch.to_string(),
        ]);
        loaded.push((dir, manifest));
    }

    files::ensure_dir(&args.out)?;
    let path = args.out.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(REPORT_HEADER).map_err(|e| CliError::io(&path, e))?;
    for row in &rows {
        w.write_record(row).map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let widths: Vec<usize> = (0..REPORT_HEADER.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([REPORT_HEADER[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(REPORT_HEADER.to_vec()));
    for row in &rows {
        println!("{}", line(row.iter().map(String::as_str).collect()));
    }

    for (dir, manifest) in &loaded {
        heatmaps(args, dir, &run_label(dir), manifest, window)?;
    }
    println!("report -> {}", args.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_parsing() {
        assert_eq!(parse_window("5x9").unwrap(), (5, 9));
        assert_eq!(parse_window("64X1").unwrap(), (64, 1));
        for bad in ["", "5", "0x3", "5x65", "ax9"] {
            assert!(parse_window(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn regression_mass_lands_on_rounded_pixel() {
        // x = 0 and y = 1 in normalized coordinates: column 31.5 -> 32, row 63.
        let out = Tensor::from_vec(&[1, 2], vec![0.0f32, 1.0]).unwrap();
        let m = prediction_mass(Task::Reg, &out);
        assert_eq!(m[0][63 * CANVAS + 32], 1.0);
        assert_eq!(m[0].iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn classification_mass_sums_to_one() {
        let out = Tensor::from_vec(&[1, PIXELS], (0..PIXELS).map(|i| (i % 7) as f32).collect()).unwrap();
        let m = prediction_mass(Task::Cls, &out);
        assert!((m[0].iter().sum::<f64>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn summary_reads_last_and_best_evaluations() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "epoch,split,loss,accuracy,iou,pixel_error\n\
             0,running,1,,,3.0\n0,train,1,,,2.0\n0,test,1,,,2.5\n\
             1,running,1,,,1.0\n1,train,1,,,0.5\n1,test,1,,,0.7\n\
             2,running,1,,,0.9\n",
        )
        .unwrap();
        let s = summarize(&path, Task::Reg).unwrap();
        assert_eq!(
            s,
            Summary {
                epochs: 3,
                final_train: 0.5,
                final_test: 0.7,
                best_test: 0.7,
                best_epoch: 1
            }
        );
    }
}
