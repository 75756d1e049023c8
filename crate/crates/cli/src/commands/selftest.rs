//! Quick end-to-end health check: operator gradients, oracle
//! equivalences, and a short deterministic training run whose metrics CSV
//! must come out byte-identical for a given seed.

use coordconv_core::dataset::{generate_dataset, make_split, Example, Split, SplitKind, CANVAS, HALF_SQUARE};
use coordconv_core::gradcheck::suite::{adjoint_error, check_operator, OPERATORS};
use coordconv_core::models::{build, BuildOptions, LayerSpec, ModelName, Task};
use coordconv_core::ops::{ConvSpec, CoordSpec, Padding};
use coordconv_core::train::{train_task, write_metrics_csv, TrainConfig};
use coordconv_core::{Fill, Graph, Rng, Stream, Tensor};

use crate::error::{CliError, CliResult};
use crate::files;
use crate::SelftestArgs;

pub const SELFTEST_METRICS: &str = "selftest_metrics.csv";

struct Check {
    name: String,
    passed: bool,
    detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn gradients(trials: u32, seed: u64) -> Vec<Check> {
    let mut checks: Vec<Check> = OPERATORS
        .iter()
        .map(|&op| match check_operator(op, trials, seed) {
            Ok(err) => Check::new(format!("gradient {op}"), err < 1e-6, format!("max rel err {err:.2e}")),
            Err(e) => Check::new(format!("gradient {op}"), false, e.to_string()),
        })
        .collect();
    checks.push(match adjoint_error(50, seed) {
        Ok(err) => Check::new("conv/transpose adjoint", err <= 1e-5, format!("max rel err {err:.2e}")),
        Err(e) => Check::new("conv/transpose adjoint", false, e.to_string()),
    });
    checks
}

/// CoordConv whose coordinate weights are zero against plain conv on the
/// data weights, compared bit for bit.
fn degeneracy(trials: usize, seed: u64) -> Check {
    let mut rng = Rng::with_stream(seed, Stream::Test, 2);
    let mut mismatches = 0;
    for _ in 0..trials {
        let (n, h, w, c, co) = (1 + rng.below(2), 2 + rng.below(7), 2 + rng.below(7), 1 + rng.below(4), 1 + rng.below(4));
        let coords = if rng.below(2) == 0 { CoordSpec::default() } else { CoordSpec::with_r(true) };
        let (k, d) = (1 + rng.below(3), coords.d());
        let stride = 1 + rng.below(2);
        let spec = ConvSpec::new(k, c, co).with_stride(stride).with_padding(Padding::Same);
        let fill = Fill::Uniform { lo: -1.0, hi: 1.0 };
        let x = Tensor::<f32>::new(&[n, h, w, c], fill, &mut rng).unwrap();
        let wd = Tensor::<f32>::new(&[k, k, c, co], fill, &mut rng).unwrap();
        let b = Tensor::<f32>::new(&[co], fill, &mut rng).unwrap();
        let mut wc = Vec::with_capacity(k * k * (c + d) * co);
        for tap in wd.data().chunks_exact(c * co) {
            wc.extend_from_slice(tap);
            wc.extend(std::iter::repeat_n(0.0f32, d * co));
        }
        let wc = Tensor::from_vec(&[k, k, c + d, co], wc).unwrap();

        let mut g = Graph::new();
        let (xv, wdv, wcv, bv) = (g.constant(x), g.constant(wd), g.constant(wc), g.constant(b));
        let plain = g.conv2d(xv, wdv, Some(bv), &spec).unwrap();
        let cc_spec = ConvSpec { c_in: c + d, ..spec };
        let coord = g.coord_conv(xv, wcv, Some(bv), &cc_spec, coords).unwrap();
        let same = g.value(plain).shape() == g.value(coord).shape()
            && g.value(plain)
                .data()
                .iter()
                .zip(g.value(coord).data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        mismatches += usize::from(!same);
    }
    Check::new(
        "coord_conv degeneracy",
        mismatches == 0,
        format!("{mismatches} of {trials} inputs differ"),
    )
}

fn parameter_formula(cases: usize, seed: u64) -> Check {
    let mut rng = Rng::with_stream(seed, Stream::Test, 3);
    let mut wrong = 0;
    for _ in 0..cases {
        let (c, co, k) = (1 + rng.below(64), 1 + rng.below(64), 1 + rng.below(7));
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
    let arch_ok = build(ModelName::CcCls, BuildOptions::default()).is_ok_and(|a| a.param_count() == 7553);
    Check::new(
        "coordconv parameter formula",
        wrong == 0 && arch_ok,
        format!("{wrong} of {cases} cases wrong, CC-CLS 7553: {arch_ok}"),
    )
}

fn dataset_oracle(dataset: &[Example]) -> Check {
    let half = HALF_SQUARE as isize;
    let mut bad = 0;
    for ex in dataset {
        for y in 0..CANVAS as isize {
            for x in 0..CANVAS as isize {
                let mut acc = 0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (yy, xx) = (y + dy, x + dx);
                        if (0..CANVAS as isize).contains(&yy) && (0..CANVAS as isize).contains(&xx) {
                            acc += usize::from(ex.onehot.get(yy as usize, xx as usize));
                        }
                    }
                }
                if (acc > 0) != ex.image.get(y as usize, x as usize) {
                    bad += 1;
                }
            }
        }
    }
    let uniform = make_split(SplitKind::Uniform, 0);
    let quadrant = make_split(SplitKind::Quadrant, 0);
    let counts = [
        dataset.len(),
        uniform.train.len(),
        uniform.test.len(),
        quadrant.train.len(),
        quadrant.test.len(),
    ];
    Check::new(
        "dataset oracle",
        bad == 0 && counts == [3136, 2509, 627, 2352, 784],
        format!("{bad} pixels differ, counts {counts:?}"),
    )
}

/// Two epochs of CC-CLS on a fixed slice of the uniform split.
fn short_run(dataset: &[Example], seed: u32, out: &std::path::Path) -> CliResult<Check> {
    let full = make_split(SplitKind::Uniform, seed);
    let split = Split {
        train: full.train[..256].to_vec(),
        test: full.test[..64].to_vec(),
        ..full
    };
    let config = TrainConfig {
        epochs: 2,
        seed,
        patience: 0,
        ..TrainConfig::default()
    };
    let arch = build(ModelName::CcCls, BuildOptions::default())?;
    let outcome = train_task(Task::Cls, arch, dataset, &split, &config, None)?;
    files::ensure_dir(out)?;
    let path = out.join(SELFTEST_METRICS);
    files::write_with(&path, |w| write_metrics_csv(w, &outcome.history))?;
    let first = outcome.history[0].running.loss;
    let last = outcome.history.last().map(|r| r.running.loss).unwrap_or(f64::NAN);
    Ok(Check::new(
        "short training run",
        last.is_finite() && last < first,
        format!("running loss {first:.4} -> {last:.4}, metrics -> {}", path.display()),
    ))
}

pub fn run(args: &SelftestArgs) -> CliResult<()> {
    let seed = args.seed as u64;
    let dataset = generate_dataset();
    let mut checks = gradients(args.trials, seed);
    checks.push(degeneracy(100, seed));
    checks.push(parameter_formula(200, seed));
    checks.push(dataset_oracle(&dataset));
    checks.push(short_run(&dataset, args.seed, &args.out)?);

    for c in &checks {
        println!("{} {:<32} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degeneracy_holds() {
        assert!(degeneracy(20, 1).passed);
    }

    #[test]
    fn formula_holds() {
        assert!(parameter_formula(50, 1).passed);
    }

    #[test]
    fn oracle_catches_a_corrupted_image() {
        let mut dataset = generate_dataset();
        assert!(dataset_oracle(&dataset).passed);
        dataset[5].image.set(0, 63, true);
        assert!(!dataset_oracle(&dataset).passed);
    }
}
