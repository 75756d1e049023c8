//! Randomized gradient and adjoint checks over every differentiable
//! operator, in f64.

use crate::error::Result;
use crate::gradcheck::finite_diff_check;
use crate::graph::{Graph, Var};
use crate::ops::conv::{conv2d, conv2d_transpose};
use crate::ops::{BatchNormState, ConvSpec, CoordSpec, Padding};
use crate::rng::{Rng, Stream};
use crate::tensor::{Fill, Tensor};

// Fourth-order stencil: truncation error ~h⁴, so a wide step keeps the
// rounding term (~1e-16·|f|/h) far below 1e-6.
const EPS: f64 = 1e-3;

pub const OPERATORS: [&str; 16] = [
    "add_coords",
    "conv2d",
    "coord_conv",
    "conv2d_transpose",
    "max_pool2",
    "global_avg_pool",
    "dense",
    "relu",
    "tanh",
    "sigmoid",
    "batch_norm(train)",
    "batch_norm(eval)",
    "softmax_xent",
    "sigmoid_xent",
    "mse_loss",
    "composite",
];

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::new(shape, Fill::Uniform { lo: -1.0, hi: 1.0 }, rng).unwrap()
}

/// Max relative error over every input of `f`, each input checked in turn
/// while the others are held constant. The scalar objective is
/// `sum(f(inputs) ⊙ r)` for a fixed random `r` unless `f` is already scalar.
fn check(inputs: &[Tensor<f64>], rng: &mut Rng, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let probe_shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).shape().to_vec()
    };
    let scalar = probe_shape.iter().product::<usize>() == 1 && probe_shape.len() <= 1;
    let r = uniform(&probe_shape, rng);
    let mut worst = 0.0f64;
    for which in 0..inputs.len() {
        let err = finite_diff_check(
            |g, x| {
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, t)| if i == which { x } else { g.constant(t.clone()) })
                    .collect();
                let out = f(g, &vars)?;
                if scalar {
                    Ok(out)
                } else {
                    let rv = g.constant(r.clone());
                    let m = g.mul(out, rv)?;
                    g.sum(m)
                }
            },
            &inputs[which],
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn dims(rng: &mut Rng) -> (usize, usize, usize, usize) {
    (1 + rng.below(2), 1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(4))
}

// Values at least `gap` away from zero so no finite-difference step crosses
// a kink.
fn away_from_zero(t: Tensor<f64>, gap: f64) -> Tensor<f64> {
    t.map(|v| if v.abs() >= gap { v } else if v >= 0.0 { v + gap } else { v - gap })
}

fn random_coords(rng: &mut Rng) -> CoordSpec {
    if rng.below(2) == 0 {
        CoordSpec::default()
    } else {
        CoordSpec::with_r(true)
    }
}

fn random_padding(rng: &mut Rng) -> Padding {
    if rng.below(3) == 0 {
        Padding::Valid
    } else {
        Padding::Same
    }
}

fn random_conv_spec(rng: &mut Rng, c: usize, co: usize, h: usize, w: usize) -> ConvSpec {
    loop {
        let k = 1 + rng.below(4);
        let stride = 1 + rng.below(2);
        let padding = random_padding(rng);
        if padding == Padding::Valid && (h < k || w < k) {
            continue;
        }
        return ConvSpec::new(k, c, co).with_stride(stride).with_padding(padding);
    }
}

fn trial(name: &str, rng: &mut Rng) -> Result<f64> {
    match name {
        "add_coords" => {
            let (n, h, w, c) = dims(rng);
            let spec = random_coords(rng);
            check(&[uniform(&[n, h, w, c], rng)], rng, |g, v| g.add_coords(v[0], spec))
        }
        "conv2d" => {
            let (n, h, w, c) = dims(rng);
            let co = 1 + rng.below(4);
            let spec = random_conv_spec(rng, c, co, h, w);
            let inputs = [
                uniform(&[n, h, w, c], rng),
                uniform(&[spec.k, spec.k, c, co], rng),
                uniform(&[co], rng),
            ];
            check(&inputs, rng, |g, v| g.conv2d(v[0], v[1], Some(v[2]), &spec))
        }
        "coord_conv" => {
            let (n, h, w, c) = dims(rng);
            let co = 1 + rng.below(4);
            let coords = random_coords(rng);
            let spec = random_conv_spec(rng, c + coords.d(), co, h, w);
            let inputs = [
                uniform(&[n, h, w, c], rng),
                uniform(&[spec.k, spec.k, c + coords.d(), co], rng),
                uniform(&[co], rng),
            ];
            check(&inputs, rng, |g, v| g.coord_conv(v[0], v[1], Some(v[2]), &spec, coords))
        }
        "conv2d_transpose" => {
            let (n, _, _, c) = dims(rng);
            let (h, w) = (1 + rng.below(3), 1 + rng.below(3));
            let co = 1 + rng.below(4);
            let k = 1 + rng.below(4);
            let stride = 1 + rng.below(2);
            let spec = ConvSpec::new(k, c, co).with_stride(stride).with_padding(random_padding(rng));
            let inputs = [uniform(&[n, h, w, c], rng), uniform(&[k, k, co, c], rng), uniform(&[co], rng)];
            check(&inputs, rng, |g, v| g.conv2d_transpose(v[0], v[1], Some(v[2]), &spec))
        }
        "max_pool2" => {
            let (n, _, _, c) = dims(rng);
            let (h, w) = (2 * (1 + rng.below(3)), 2 * (1 + rng.below(3)));
            // Distinct values spaced 0.01 apart keep the argmax stable.
            let mut values: Vec<f64> = (0..n * h * w * c).map(|i| i as f64 * 0.01).collect();
            rng.shuffle(&mut values);
            let x = Tensor::from_vec(&[n, h, w, c], values)?;
            check(&[x], rng, |g, v| g.max_pool2(v[0]))
        }
        "global_avg_pool" => {
            let (n, h, w, c) = dims(rng);
            check(&[uniform(&[n, h, w, c], rng)], rng, |g, v| g.global_avg_pool(v[0]))
        }
        "dense" => {
            let (n, f, u) = (1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6));
            let inputs = [uniform(&[n, f], rng), uniform(&[f, u], rng), uniform(&[u], rng)];
            check(&inputs, rng, |g, v| g.dense(v[0], v[1], Some(v[2])))
        }
        "relu" => {
            let (n, h, w, c) = dims(rng);
            let x = away_from_zero(uniform(&[n, h, w, c], rng), 0.01);
            check(&[x], rng, |g, v| g.relu(v[0]))
        }
        "tanh" => {
            let (n, h, w, c) = dims(rng);
            check(&[uniform(&[n, h, w, c], rng).map(|v| 3.0 * v)], rng, |g, v| g.tanh(v[0]))
        }
        "sigmoid" => {
            let (n, h, w, c) = dims(rng);
            check(&[uniform(&[n, h, w, c], rng).map(|v| 4.0 * v)], rng, |g, v| g.sigmoid(v[0]))
        }
        "batch_norm(train)" => {
            // At least eight samples per channel; with two the normalized
            // output is pinned at ±1 and the objective is numerically flat.
            let (_, h, w, c) = dims(rng);
            let n = (2 + rng.below(3)).max(8usize.div_ceil(h * w));
            let inputs = [uniform(&[n, h, w, c], rng), uniform(&[c], rng), uniform(&[c], rng)];
            check(&inputs, rng, |g, v| {
                let mut state = BatchNormState::new(c);
                g.batch_norm(v[0], v[1], v[2], &mut state, true)
            })
        }
        "batch_norm(eval)" => {
            let (n, h, w, c) = dims(rng);
            let mut state = BatchNormState::new(c);
            state.running_mean = (0..c).map(|_| rng.uniform(-1.0, 1.0)).collect();
            state.running_var = (0..c).map(|_| rng.uniform(0.1, 2.0)).collect();
            let inputs = [uniform(&[n, h, w, c], rng), uniform(&[c], rng), uniform(&[c], rng)];
            check(&inputs, rng, |g, v| {
                let mut s = state.clone();
                g.batch_norm(v[0], v[1], v[2], &mut s, false)
            })
        }
        "softmax_xent" => {
            let (n, k) = (1 + rng.below(4), 2 + rng.below(36));
            let targets: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            let x = uniform(&[n, k], rng).map(|v| 3.0 * v);
            check(&[x], rng, |g, v| g.softmax_xent(v[0], &targets))
        }
        "sigmoid_xent" => {
            let (n, h, w, _) = dims(rng);
            let t = Tensor::from_vec(&[n, h, w, 1], (0..n * h * w).map(|_| rng.below(2) as f64).collect())?;
            let x = uniform(&[n, h, w, 1], rng).map(|v| 4.0 * v);
            check(&[x], rng, |g, v| g.sigmoid_xent(v[0], &t))
        }
        "mse_loss" => {
            let n = 1 + rng.below(6);
            let t = uniform(&[n, 2], rng);
            check(&[uniform(&[n, 2], rng)], rng, |g, v| g.mse_loss(v[0], &t))
        }
        "composite" => {
            // CoordConv -> BN -> tanh -> strided conv -> global pool -> dense.
            let (n, h, w, c) = (2, 4, 4, 1 + rng.below(2));
            let coords = CoordSpec::default();
            let s1 = ConvSpec::new(1, c + 2, 3).without_bias();
            let s2 = ConvSpec::new(3, 3, 2).with_stride(2).without_bias();
            let inputs = [
                uniform(&[n, h, w, c], rng),
                uniform(&[1, 1, c + 2, 3], rng),
                uniform(&[3], rng),
                uniform(&[3], rng),
                uniform(&[3, 3, 3, 2], rng),
                uniform(&[2, 2], rng),
            ];
            let t = uniform(&[n, 2], rng);
            check(&inputs, rng, |g, v| {
                let mut bn = BatchNormState::new(3);
                let a = g.coord_conv(v[0], v[1], None, &s1, coords)?;
                let b = g.batch_norm(a, v[2], v[3], &mut bn, true)?;
                let b = g.tanh(b)?;
                let d = g.conv2d(b, v[4], None, &s2)?;
                let p = g.global_avg_pool(d)?;
                let y = g.dense(p, v[5], None)?;
                g.mse_loss(y, &t)
            })
        }
        other => Err(crate::error::Error::InvalidArgument(format!("no gradient check for `{other}`"))),
    }
}

/// Worst relative error of `name` over `trials` random small-shape trials.
pub fn check_operator(name: &str, trials: u32, seed: u64) -> Result<f64> {
    let mut rng = Rng::with_stream(seed, Stream::Test, 0);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        worst = worst.max(trial(name, &mut rng)?);
    }
    Ok(worst)
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative violation of `⟨conv(y), x⟩ = ⟨y, conv_transpose(x)⟩`
/// over `trials` random shapes, strides and paddings.
pub fn adjoint_error(trials: u32, seed: u64) -> Result<f64> {
    let mut rng = Rng::with_stream(seed, Stream::Test, 1);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = 1 + rng.below(4);
        let s = 1 + rng.below(2);
        let (c, co) = (1 + rng.below(3), 1 + rng.below(3));
        let (h, w) = (1 + rng.below(4), 1 + rng.below(4));
        let pad = random_padding(&mut rng);
        let t_spec = ConvSpec::new(k, c, co).with_stride(s).with_padding(pad).without_bias();
        let c_spec = ConvSpec::new(k, co, c).with_stride(s).with_padding(pad).without_bias();
        let (oh, ow) = t_spec.transpose_output_size(h, w);
        let x = uniform(&[2, h, w, c], &mut rng);
        let y = uniform(&[2, oh, ow, co], &mut rng);
        let wt = uniform(&[k, k, co, c], &mut rng);
        let lhs = dot(&conv2d(&y, &wt, None, &c_spec)?, &x);
        let rhs = dot(&y, &conv2d_transpose(&x, &wt, None, &t_spec)?);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-12));
    }
    Ok(worst)
}
