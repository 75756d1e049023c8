use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{Example, Split, PIXELS};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::models::{input_batch, Architecture, Model, Task};
use crate::rng::{Rng, Stream};
use crate::tensor::Tensor;
use crate::train::config::TrainConfig;
use crate::train::metrics::{correct_count, iou_sum_from_logits, pixel_error_sum};
use crate::train::optim::{lr_at, Adam};

/// Loss plus whichever metric the task defines.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub iou: Option<f64>,
    pub pixel_error: Option<f64>,
}

impl SplitMetrics {
    /// The task's headline metric: accuracy, IOU or pixel error.
    pub fn primary(&self) -> f64 {
        self.accuracy.or(self.iou).or(self.pixel_error).unwrap_or(f64::NAN)
    }
}

/// Whether larger values of the task's headline metric are better.
pub fn higher_is_better(task: Task) -> bool {
    task != Task::Reg
}

pub fn is_better(task: Task, a: f64, b: f64) -> bool {
    if higher_is_better(task) {
        a > b
    } else {
        a < b
    }
}

/// One epoch. `running` averages the minibatch outputs seen while training;
/// `train` and `test` are full evaluations with frozen parameters, present
/// on evaluation epochs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub lr: f64,
    pub running: SplitMetrics,
    pub train: Option<SplitMetrics>,
    pub test: Option<SplitMetrics>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub task: Task,
    pub history: Vec<MetricsRecord>,
    pub final_train: SplitMetrics,
    pub final_test: SplitMetrics,
    /// Best evaluated test metric and the epoch it occurred at.
    pub best_test: SplitMetrics,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub model: Model<f32>,
}

enum Targets {
    Classes(Vec<usize>),
    Maps(Tensor<f32>),
    Coords(Tensor<f32>),
}

fn targets(task: Task, batch: &[&Example]) -> Targets {
    match task {
        Task::Cls => Targets::Classes(batch.iter().map(|e| e.class_index()).collect()),
        Task::Ren => {
            let data = batch.iter().flat_map(|e| e.image.to_values::<f32>()).collect();
            Targets::Maps(Tensor::from_vec(&[batch.len(), PIXELS], data).unwrap())
        }
        Task::Reg => {
            let data = batch
                .iter()
                .flat_map(|e| e.normalized_center().map(|v| v as f32))
                .collect();
            Targets::Coords(Tensor::from_vec(&[batch.len(), 2], data).unwrap())
        }
    }
}

fn loss(graph: &mut Graph<f32>, out: Var, targets: &Targets) -> Result<Var> {
    match targets {
        Targets::Classes(t) => graph.softmax_xent(out, t),
        Targets::Maps(t) => graph.sigmoid_xent(out, t),
        Targets::Coords(t) => graph.mse_loss(out, t),
    }
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    loss: f64,
    score: f64,
}

impl Accumulator {
    fn add(&mut self, out: &Tensor<f32>, targets: &Targets, loss: f64) {
        let n = out.shape()[0];
        self.n += n;
        self.loss += loss * n as f64;
        self.score += match targets {
            Targets::Classes(t) => correct_count(out.data(), PIXELS, t) as f64,
            Targets::Maps(t) => iou_sum_from_logits(out.data(), t.data(), PIXELS),
            Targets::Coords(t) => pixel_error_sum(out.data(), t.data()),
        };
    }

    fn finish(&self, task: Task) -> SplitMetrics {
        let n = self.n.max(1) as f64;
        let score = Some(self.score / n);
        let mut m = SplitMetrics {
            loss: self.loss / n,
            ..Default::default()
        };
        match task {
            Task::Cls => m.accuracy = score,
            Task::Ren => m.iou = score,
            Task::Reg => m.pixel_error = score,
        }
        m
    }
}

/// Full evaluation of `indices` in inference mode.
pub fn evaluate(model: &mut Model<f32>, dataset: &[Example], indices: &[u16], chunk: usize) -> Result<SplitMetrics> {
    let task = model.architecture().task();
    let mode = model.architecture().input_mode;
    let mut acc = Accumulator::default();
    for part in indices.chunks(chunk.max(1)) {
        let batch: Vec<&Example> = part.iter().map(|&i| &dataset[i as usize]).collect();
        let t = targets(task, &batch);
        let mut graph = Graph::new();
        let params = model.bind(&mut graph, false);
        let x = graph.constant(input_batch(mode, &batch));
        let out = model.forward(&mut graph, x, &params, false)?;
        let l = loss(&mut graph, out, &t)?;
        let l = graph.value(l).item()? as f64;
        acc.add(graph.value(out), &t, l);
    }
    Ok(acc.finish(task))
}

fn diverged(epoch: usize, config: &TrainConfig, err: Error) -> Error {
    match err {
        Error::NonFinite { op } => Error::Diverged {
            epoch,
            reason: format!(
                "non-finite value in `{op}` (lr {}, weight decay {}, batch {}, seed {})",
                config.lr, config.weight_decay, config.batch_size, config.seed
            ),
        },
        other => other,
    }
}

fn perfect(task: Task, m: &SplitMetrics, config: &TrainConfig) -> bool {
    match task {
        Task::Cls => m.accuracy == Some(1.0),
        Task::Ren => m.iou == Some(1.0),
        Task::Reg => m.pixel_error.is_some_and(|e| e <= config.reg_stop_px),
    }
}

/// Trains a freshly initialized `arch` (seeded by `config.seed`) on the
/// train half of `split` and evaluates on both halves. `progress` sees every
/// epoch record as it is produced.
pub fn train_task(
    task: Task,
    arch: Architecture,
    dataset: &[Example],
    split: &Split,
    config: &TrainConfig,
    mut progress: Option<&mut dyn FnMut(&MetricsRecord)>,
) -> Result<TrainOutcome> {
    if arch.task() != task {
        return Err(Error::invalid(format!(
            "{} has a {} head and cannot be trained on the {task} task",
            arch.name,
            arch.output_head.name()
        )));
    }
    config.validate(task)?;
    crate::runtime::retain_freed_memory();
    let _flush = crate::runtime::FlushDenormals::enable();
    if split.train.is_empty() {
        return Err(Error::invalid("split has no training examples"));
    }
    let mode = arch.input_mode;
    let mut model = Model::<f32>::new(arch, config.seed as u64)?;
    let mut adam = Adam::for_params(model.params(), config.weight_decay);
    adam.beta1 = config.beta1;
    adam.beta2 = config.beta2;
    adam.eps = config.eps;

    let start = Instant::now();
    let mut order = split.train.clone();
    let mut history = Vec::new();
    let mut streak = 0;
    let mut best: Option<(SplitMetrics, usize)> = None;
    let mut stopped_early = false;
    let mut last = (SplitMetrics::default(), SplitMetrics::default());

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config.lr, &config.milestones, config.lr_decay);
        Rng::with_stream(config.seed as u64, Stream::Shuffle, epoch as u32).shuffle(&mut order);
        let mut running = Accumulator::default();
        for part in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = part.iter().map(|&i| &dataset[i as usize]).collect();
            let t = targets(task, &batch);
            let mut graph = Graph::new();
            let params = model.bind(&mut graph, true);
            let x = graph.constant(input_batch(mode, &batch));
            let step = |graph: &mut Graph<f32>, model: &mut Model<f32>| -> Result<(Var, Var)> {
                let out = model.forward(graph, x, &params, true)?;
                Ok((out, loss(graph, out, &t)?))
            };
            let (out, l) = step(&mut graph, &mut model).map_err(|e| diverged(epoch, config, e))?;
            running.add(graph.value(out), &t, graph.value(l).item()? as f64);
            let mut grads = graph.backward(l)?;
            let grads: Vec<Tensor<f32>> = params
                .iter()
                .map(|&p| grads.take(p).expect("every parameter is on the loss path"))
                .collect();
            adam.step(model.params_mut(), &grads, lr)?;
        }
        let running = running.finish(task);
        streak = if perfect(task, &running, config) { streak + 1 } else { 0 };
        let stop = config.patience > 0 && streak >= config.patience;
        let final_epoch = stop || epoch + 1 == config.epochs;
        let (train, test) = if final_epoch || (epoch + 1) % config.eval_every == 0 {
            let train = evaluate(&mut model, dataset, &split.train, config.eval_batch)?;
            let test = evaluate(&mut model, dataset, &split.test, config.eval_batch)?;
            if best.is_none_or(|(b, _)| is_better(task, test.primary(), b.primary())) {
                best = Some((test, epoch));
            }
            last = (train, test);
            (Some(train), Some(test))
        } else {
            (None, None)
        };
        let record = MetricsRecord {
            epoch,
            lr,
            running,
            train,
            test,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        if let Some(cb) = progress.as_mut() {
            cb(&record);
        }
        history.push(record);
        if stop {
            stopped_early = true;
            break;
        }
    }
    let (best_test, best_epoch) = best.expect("the final epoch is always evaluated");
    Ok(TrainOutcome {
        task,
        epochs_run: history.len(),
        history,
        final_train: last.0,
        final_test: last.1,
        best_test,
        best_epoch,
        stopped_early,
        model,
    })
}

pub const METRICS_HEADER: [&str; 6] = ["epoch", "split", "loss", "accuracy", "iou", "pixel_error"];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Metrics CSV: one row per epoch for the running train averages and one
/// row each for the full train and test evaluations. Contains no timing, so
/// reruns with the same seed reproduce it byte for byte.
pub fn write_metrics_csv<W: Write>(out: W, history: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for rec in history {
        let rows = [("running", Some(rec.running)), ("train", rec.train), ("test", rec.test)];
        for (name, m) in rows {
            if let Some(m) = m {
                w.write_record([
                    rec.epoch.to_string(),
                    name.to_string(),
                    m.loss.to_string(),
                    opt(m.accuracy),
                    opt(m.iou),
                    opt(m.pixel_error),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch elapsed wall-clock seconds, kept apart from the metrics.
pub fn write_timing_csv<W: Write>(out: W, history: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "wall_clock_s"]).map_err(csv_err)?;
    for rec in history {
        w.write_record([rec.epoch.to_string(), format!("{:.3}", rec.wall_clock_s)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format {
            what: "csv",
            detail: format!("{other:?}"),
        },
    }
}
