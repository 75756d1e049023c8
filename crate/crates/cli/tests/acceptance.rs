//! End-to-end acceptance run. Trains the toy-task models at full size and
//! checks the headline numbers, printing one PASS/FAIL line per criterion.
//! Exits nonzero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,5` restricts the run to the listed criteria.

use std::path::Path;
use std::process::{Command, ExitCode};

use coordconv_core::dataset::{generate_dataset, make_split, Example, SplitKind};
use coordconv_core::gradcheck::suite::{adjoint_error, check_operator, OPERATORS};
use coordconv_core::models::{build, BuildOptions, LayerSpec, ModelName};
use coordconv_core::ops::conv::conv2d;
use coordconv_core::ops::coords::coord_conv_fused;
use coordconv_core::ops::{ConvSpec, CoordSpec, Padding};
use coordconv_core::train::{train_task, SplitMetrics, TrainConfig, TrainOutcome};
use coordconv_core::{Fill, Graph, Rng, Stream, Tensor};

const CPU_LIMIT_CLS_S: f64 = 300.0;
const CPU_LIMIT_REN_S: f64 = 600.0;

struct Verdict {
    passed: bool,
    detail: String,
}

impl Verdict {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Verdict {
            passed,
            detail: detail.into(),
        }
    }
}

/// CPU seconds consumed by this process, all threads.
fn cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_PROCESS_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0, "clock_gettime failed");
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

struct Run {
    outcome: TrainOutcome,
    cpu_s: f64,
}

fn train(data: &[Example], model: ModelName, options: BuildOptions, split: SplitKind, config: &TrainConfig) -> Result<Run, String> {
    let arch = build(model, options).map_err(|e| e.to_string())?;
    let split = make_split(split, config.seed);
    let start = cpu_seconds();
    let outcome = train_task(model.task(), arch, data, &split, config, None).map_err(|e| e.to_string())?;
    Ok(Run {
        outcome,
        cpu_s: cpu_seconds() - start,
    })
}

fn acc(m: &SplitMetrics) -> f64 {
    m.accuracy.unwrap_or(f64::NAN)
}

fn px(m: &SplitMetrics) -> f64 {
    m.pixel_error.unwrap_or(f64::NAN)
}

fn iou(m: &SplitMetrics) -> f64 {
    m.iou.unwrap_or(f64::NAN)
}

/// Desk-scale schedule: the rate drops tenfold at each of `decay_at`, and
/// only the final epoch is evaluated.
fn recipe(lr: f64, epochs: usize, decay_at: &[usize], seed: u32) -> TrainConfig {
    TrainConfig {
        lr,
        epochs,
        milestones: decay_at.to_vec(),
        seed,
        eval_every: epochs,
        ..TrainConfig::default()
    }
}

fn cc_classification(data: &[Example]) -> Verdict {
    let params = build(ModelName::CcCls, BuildOptions::default()).map(|a| a.param_count()).ok();
    if params != Some(7553) {
        return Verdict::new(false, format!("CC-CLS has {params:?} parameters, expected 7553"));
    }
    let (seeds, needed) = (5, 4);
    let mut passed = 0;
    let mut notes = Vec::new();
    for seed in 0..seeds {
        let mut ok = true;
        for split in [SplitKind::Uniform, SplitKind::Quadrant] {
            let config = TrainConfig {
                patience: 2,
                ..recipe(0.005, 8, &[], seed)
            };
            match train(data, ModelName::CcCls, BuildOptions::default(), split, &config) {
                Ok(r) => {
                    let (tr, te) = (acc(&r.outcome.final_train), acc(&r.outcome.final_test));
                    ok &= tr == 1.0 && te == 1.0 && r.cpu_s <= CPU_LIMIT_CLS_S;
                    notes.push(format!(
                        "s{seed} {}: {tr:.4}/{te:.4} in {:.0}s cpu",
                        split.name(),
                        r.cpu_s
                    ));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("s{seed} {}: {e}", split.name()));
                }
            }
        }
        passed += usize::from(ok);
        let left = (seeds - seed - 1) as usize;
        if passed >= needed || passed + left < needed {
            break;
        }
    }
    Verdict::new(
        passed >= needed,
        format!("{passed} seeds perfect on both splits (need {needed} of {seeds}); {}", notes.join(", ")),
    )
}

fn deconv_classification(data: &[Example]) -> Verdict {
    // Best by test accuracy per split.
    let mut best: Vec<(SplitKind, f64, f64, String)> = Vec::new();
    let mut failures = Vec::new();
    for split in [SplitKind::Uniform, SplitKind::Quadrant] {
        let mut top: Option<(f64, f64, String)> = None;
        for fs in [2, 4] {
            for c in [1, 2] {
                for lr in [0.001, 0.005, 0.01] {
                    let label = format!("fs{fs} c{c} lr{lr}");
                    match train(data, ModelName::DeconvCls, BuildOptions::deconv(fs, c), split, &recipe(lr, 24, &[18], 0)) {
                        Ok(r) => {
                            let (tr, te) = (acc(&r.outcome.final_train), acc(&r.outcome.final_test));
                            println!("  DECONV-CLS {} {label}: train {tr:.4} test {te:.4}", split.name());
                            if top.as_ref().is_none_or(|t| te > t.1) {
                                top = Some((tr, te, label));
                            }
                        }
                        Err(e) => failures.push(format!("{} {label}: {e}", split.name())),
                    }
                }
            }
        }
        if let Some((tr, te, label)) = top {
            best.push((split, tr, te, label));
        }
    }
    let find = |k: SplitKind| best.iter().find(|b| b.0 == k);
    let passed = failures.is_empty()
        && find(SplitKind::Uniform).is_some_and(|b| b.2 <= 0.90 && b.1 > 0.95)
        && find(SplitKind::Quadrant).is_some_and(|b| b.2 <= 0.05);
    let mut detail: Vec<String> = best
        .iter()
        .map(|(k, tr, te, label)| format!("best {} ({label}): train {tr:.4} test {te:.4}", k.name()))
        .collect();
    detail.extend(failures);
    Verdict::new(passed, detail.join("; "))
}

fn regression(data: &[Example]) -> Verdict {
    let params = build(ModelName::CcReg, BuildOptions::default()).map(|a| a.param_count()).ok();
    let Some(params @ 880..=930) = params else {
        return Verdict::new(false, format!("CC-REG has {params:?} parameters, expected 880..=930"));
    };
    type Case = (ModelName, SplitKind, TrainConfig, fn(f64) -> bool, &'static str);
    let cases: [Case; 4] = [
        (ModelName::CcReg, SplitKind::Uniform, recipe(0.005, 40, &[30, 37], 0), |e| e < 0.5, "< 0.5"),
        (ModelName::CcReg, SplitKind::Quadrant, recipe(0.005, 40, &[30, 37], 0), |e| e < 0.5, "< 0.5"),
        (ModelName::ConvRegU, SplitKind::Uniform, recipe(0.005, 30, &[20, 27], 0), |e| e < 0.5, "< 0.5"),
        (ModelName::ConvRegQ, SplitKind::Quadrant, recipe(0.005, 30, &[20, 27], 0), |e| (2.0..=10.0).contains(&e), "in [2, 10]"),
    ];
    let mut passed = true;
    let mut notes = vec![format!("CC-REG {params} params")];
    for (model, split, config, good, want) in cases {
        match train(data, model, BuildOptions::default(), split, &config) {
            Ok(r) => {
                let (tr, te) = (px(&r.outcome.final_train), px(&r.outcome.final_test));
                passed &= good(te);
                notes.push(format!("{} {}: train {tr:.3} px, test {te:.3} px (want {want})", model.as_str(), split.name()));
            }
            Err(e) => {
                passed = false;
                notes.push(format!("{} {}: {e}", model.as_str(), split.name()));
            }
        }
    }
    Verdict::new(passed, notes.join("; "))
}

fn rendering(data: &[Example]) -> Verdict {
    let mut notes = Vec::new();
    let cc = match train(data, ModelName::CcRen, BuildOptions::default(), SplitKind::Uniform, &recipe(0.005, 9, &[], 0)) {
        Ok(r) => {
            let te = iou(&r.outcome.final_test);
            notes.push(format!("CC-REN test IOU {te:.4} in {:.0}s cpu", r.cpu_s));
            te >= 0.99 && r.cpu_s <= CPU_LIMIT_REN_S
        }
        Err(e) => {
            notes.push(format!("CC-REN: {e}"));
            false
        }
    };
    let mut best: Option<(f64, String)> = None;
    let mut failed = false;
    for fs in [2, 4] {
        for c in [2, 3] {
            let label = format!("fs{fs} c{c}");
            match train(data, ModelName::DeconvRen, BuildOptions::deconv(fs, c), SplitKind::Uniform, &recipe(0.001, 12, &[10], 0)) {
                Ok(r) => {
                    let te = iou(&r.outcome.final_test);
                    println!("  DECONV-REN uniform {label}: train {:.4} test {te:.4}", iou(&r.outcome.final_train));
                    if best.as_ref().is_none_or(|b| te > b.0) {
                        best = Some((te, label));
                    }
                }
                Err(e) => {
                    failed = true;
                    notes.push(format!("DECONV-REN {label}: {e}"));
                }
            }
        }
    }
    let deconv = !failed && best.as_ref().is_some_and(|b| b.0 <= 0.90);
    if let Some((te, label)) = &best {
        notes.push(format!("best DECONV-REN ({label}) test IOU {te:.4}"));
    }
    Verdict::new(cc && deconv, notes.join("; "))
}

fn widen(w: &Tensor<f32>, d: usize) -> Tensor<f32> {
    let s = w.shape();
    let (k, c, co) = (s[0], s[2], s[3]);
    let mut out = Vec::with_capacity(k * k * (c + d) * co);
    for tap in w.data().chunks_exact(c * co) {
        out.extend_from_slice(tap);
        out.extend(std::iter::repeat_n(0.0, d * co));
    }
    Tensor::from_vec(&[k, k, c + d, co], out).unwrap()
}

fn degeneracy() -> Verdict {
    let mut rng = Rng::with_stream(2718, Stream::Test, 0);
    let fill = Fill::Uniform { lo: -1.0, hi: 1.0 };
    let mut differ = 0;
    let trials = 1000;
    for _ in 0..trials {
        let (n, h, w) = (1 + rng.below(3), 1 + rng.below(12), 1 + rng.below(12));
        let (c, co, k) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(4));
        let coords = CoordSpec::with_r(rng.below(2) == 0);
        let padding = if h >= k && w >= k && rng.below(3) == 0 { Padding::Valid } else { Padding::Same };
        let spec = ConvSpec::new(k, c, co).with_stride(1 + rng.below(2)).with_padding(padding);
        let cc_spec = ConvSpec { c_in: c + coords.d(), ..spec };
        let x = Tensor::<f32>::new(&[n, h, w, c], fill, &mut rng).unwrap();
        let wd = Tensor::<f32>::new(&[k, k, c, co], fill, &mut rng).unwrap();
        let b = Tensor::<f32>::new(&[co], fill, &mut rng).unwrap();
        let wc = widen(&wd, coords.d());
        let plain = conv2d(&x, &wd, Some(&b), &spec).unwrap();
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wc.clone()), g.constant(b.clone()));
        let y = g.coord_conv(xv, wv, Some(bv), &cc_spec, coords).unwrap();
        let fused = coord_conv_fused(&x, &wc, Some(&b), &cc_spec, coords).unwrap();
        let same = |t: &Tensor<f32>| {
            t.shape() == plain.shape() && t.data().iter().zip(plain.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        };
        differ += usize::from(!(same(g.value(y)) && same(&fused)));
    }
    Verdict::new(differ == 0, format!("{differ} of {trials} random inputs differ bitwise"))
}

fn parameter_formula() -> Verdict {
    let mut rng = Rng::with_stream(1618, Stream::Test, 0);
    let cases = 200;
    let mut wrong = 0;
    for _ in 0..cases {
        let (c, co, k) = (1 + rng.below(128), 1 + rng.below(128), 1 + rng.below(9));
        let coords = if rng.below(2) == 0 { CoordSpec::default() } else { CoordSpec::with_r(true) };
        let d = coords.d();
        let layer = LayerSpec::CoordConv {
            conv: ConvSpec::new(k, c + d, co),
            coords,
        };
        let formula = (c + d) * co * k * k + co;
        let stored: usize = layer.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum();
        wrong += usize::from(layer.param_count() != formula || stored != formula);
    }
    Verdict::new(wrong == 0, format!("{wrong} of {cases} layers disagree with (c+d)c'k^2 + c'"))
}

fn dataset_oracle(data: &[Example]) -> Verdict {
    const N: isize = 64;
    let mut bad_pixels = 0;
    for ex in data {
        for r in 0..N {
            for c in 0..N {
                let mut acc = 0;
                for dr in -4..=4 {
                    for dc in -4..=4 {
                        let (rr, cc) = (r + dr, c + dc);
                        if (0..N).contains(&rr) && (0..N).contains(&cc) && ex.onehot.get(rr as usize, cc as usize) {
                            acc += 1;
                        }
                    }
                }
                bad_pixels += usize::from((acc > 0) != ex.image.get(r as usize, c as usize));
            }
        }
    }
    let u = make_split(SplitKind::Uniform, 0);
    let q = make_split(SplitKind::Quadrant, 0);
    let counts = [data.len(), u.train.len(), u.test.len(), q.train.len(), q.test.len()];
    Verdict::new(
        bad_pixels == 0 && counts == [3136, 2509, 627, 2352, 784],
        format!("{bad_pixels} pixels differ from the 9x9 ones-kernel oracle; counts {counts:?}"),
    )
}

fn gradient_suite() -> Verdict {
    let mut worst = (0.0f64, "none");
    let mut errors = Vec::new();
    for &op in OPERATORS.iter() {
        match check_operator(op, 100, 31415) {
            Ok(e) if e > worst.0 || e.is_nan() => worst = (e, op),
            Ok(_) => {}
            Err(e) => errors.push(format!("{op}: {e}")),
        }
    }
    let adjoint = adjoint_error(50, 27182);
    let adj_ok = adjoint.as_ref().is_ok_and(|&e| e <= 1e-5);
    Verdict::new(
        errors.is_empty() && worst.0 < 1e-6 && adj_ok,
        format!(
            "{} operators x 100 trials, worst rel err {:.2e} ({}); adjoint x 50 {}{}",
            OPERATORS.len(),
            worst.0,
            worst.1,
            adjoint.map_or_else(|e| e.to_string(), |e| format!("{e:.2e}")),
            if errors.is_empty() { String::new() } else { format!("; {}", errors.join(", ")) }
        ),
    )
}

fn determinism() -> Verdict {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return Verdict::new(false, e.to_string()),
    };
    let run = |dir: &str| -> Result<Vec<u8>, String> {
        let out = tmp.path().join(dir);
        let status = Command::new(env!("CARGO_BIN_EXE_coordconv-lab"))
            .args(["selftest", "--seed", "0", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("selftest exited {:?}", status.status.code()));
        }
        std::fs::read(Path::new(&out).join("selftest_metrics.csv")).map_err(|e| e.to_string())
    };
    match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => Verdict::new(a == b && !a.is_empty(), format!("metrics CSVs {} ({} bytes)", if a == b { "identical" } else { "differ" }, a.len())),
        (a, b) => Verdict::new(false, format!("{:?} / {:?}", a.err(), b.err())),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let data = generate_dataset();
    let criteria: [(&str, &dyn Fn() -> Verdict); 9] = [
        ("CoordConv classification", &|| cc_classification(&data)),
        ("Deconv classification gap", &|| deconv_classification(&data)),
        ("Coordinate regression", &|| regression(&data)),
        ("Rendering", &|| rendering(&data)),
        ("CoordConv degeneracy", &degeneracy),
        ("Parameter formula", &parameter_formula),
        ("Dataset oracle", &|| dataset_oracle(&data)),
        ("Gradient suite", &gradient_suite),
        ("Selftest determinism", &determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let start = cpu_seconds();
        let v = check();
        failed += usize::from(!v.passed);
        println!(
            "criterion {n} {} {name} [{:.0}s cpu]: {}",
            if v.passed { "PASS" } else { "FAIL" },
            cpu_seconds() - start,
            v.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
