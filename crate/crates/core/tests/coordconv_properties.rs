//! CoordConv against plain convolution: degeneracy, parameter count,
//! channel bookkeeping and translation equivariance.

use coordconv_core::dataset::Example;
use coordconv_core::models::{build, input_batch, BuildOptions, LayerSpec, Model, ModelName};
use coordconv_core::ops::conv::conv2d;
use coordconv_core::ops::coords::{add_coords, coord_conv_fused};
use coordconv_core::ops::{ConvSpec, CoordSpec, Padding};
use coordconv_core::{Fill, Graph, Rng, Stream, Tensor};
use proptest::prelude::*;

fn uniform(shape: &[usize], rng: &mut Rng) -> Tensor<f32> {
    Tensor::new(shape, Fill::Uniform { lo: -1.0, hi: 1.0 }, rng).unwrap()
}

/// Data weights `[k,k,c,c′]` widened to `[k,k,c+d,c′]` with zero
/// coordinate rows.
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

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn zeroed_coordinate_weights_reduce_to_conv_on_1000_inputs() {
    let mut rng = Rng::with_stream(77, Stream::Test, 0);
    for trial in 0..1000 {
        let (n, h, w) = (1 + rng.below(3), 1 + rng.below(9), 1 + rng.below(9));
        let (c, co, k) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4));
        let coords = if rng.below(2) == 0 { CoordSpec::default() } else { CoordSpec::with_r(rng.below(2) == 0) };
        let stride = 1 + rng.below(2);
        let padding = if h >= k && w >= k && rng.below(3) == 0 { Padding::Valid } else { Padding::Same };
        let spec = ConvSpec::new(k, c, co).with_stride(stride).with_padding(padding);
        let cc_spec = ConvSpec { c_in: c + coords.d(), ..spec };
        let x = uniform(&[n, h, w, c], &mut rng);
        let wd = uniform(&[k, k, c, co], &mut rng);
        let b = uniform(&[co], &mut rng);
        let wc = widen(&wd, coords.d());

        let plain = conv2d(&x, &wd, Some(&b), &spec).unwrap();
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(wc.clone()), g.constant(b.clone()));
        let y = g.coord_conv(xv, wv, Some(bv), &cc_spec, coords).unwrap();
        assert_eq!(bits(g.value(y)), bits(&plain), "graph path, trial {trial}");
        let fused = coord_conv_fused(&x, &wc, Some(&b), &cc_spec, coords).unwrap();
        assert_eq!(bits(&fused), bits(&plain), "fused path, trial {trial}");
    }
}

#[test]
fn cc_cls_without_coordinate_weights_paints_a_flat_map() {
    let arch = build(ModelName::CcCls, BuildOptions::default()).unwrap();
    let mut model = Model::<f32>::new(arch, 5).unwrap();
    // First layer weights are [1, 1, 2 + 2, 32]; rows 2 and 3 see i and j.
    let w = &mut model.params_mut()[0];
    assert_eq!(w.shape(), &[1, 1, 4, 32]);
    w.data_mut()[2 * 32..].iter_mut().for_each(|v| *v = 0.0);
    let examples = [Example::new(4, 4), Example::new(30, 51), Example::new(59, 12)];
    let refs: Vec<&Example> = examples.iter().collect();
    let logits = model.predict(input_batch(model.architecture().input_mode, &refs)).unwrap();
    for row in logits.data().chunks_exact(4096) {
        assert!(row.iter().all(|v| v.to_bits() == row[0].to_bits()));
    }
}

#[test]
fn pinned_parameter_counts() {
    let count = |name| build(name, BuildOptions::default()).unwrap().param_count();
    assert_eq!(count(ModelName::CcCls), 7553);
    let cc_reg = count(ModelName::CcReg);
    assert_eq!(cc_reg, 906);
    assert!((880..=930).contains(&cc_reg));
    assert!((11_000..=14_000).contains(&count(ModelName::ConvRegQ)));
    let cc_ren = count(ModelName::CcRen) as f64;
    assert!((cc_ren - 9490.0).abs() <= 0.15 * 9490.0, "{cc_ren}");
}

/// Deconv stack 2 → 64c → 64c → 64c → 32c → 32c → 1 with bias.
fn deconv_formula(fs: usize, c: usize) -> usize {
    let plan = [2, 64 * c, 64 * c, 64 * c, 32 * c, 32 * c, 1];
    plan.windows(2).map(|p| p[0] * p[1] * fs * fs + p[1]).sum()
}

#[test]
fn deconv_counts_and_band() {
    for fs in [2, 3, 4] {
        for c in [1, 2, 3] {
            let n = build(ModelName::DeconvCls, BuildOptions::deconv(fs, c)).unwrap().param_count();
            assert_eq!(n, deconv_formula(fs, c), "fs={fs} c={c}");
            // "50k" and "1.6M" at the precision they are quoted.
            assert!((45_000..1_650_000).contains(&n), "fs={fs} c={c}: {n}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coordconv_parameter_formula(c in 1usize..64, with_r in any::<bool>(), co in 1usize..64, k in 1usize..8) {
        let coords = if with_r { CoordSpec::with_r(true) } else { CoordSpec::default() };
        let d = coords.d();
        let layer = LayerSpec::CoordConv { conv: ConvSpec::new(k, c + d, co), coords };
        let formula = (c + d) * co * k * k + co;
        prop_assert_eq!(layer.param_count(), formula);
        let stored: usize = layer.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum();
        prop_assert_eq!(stored, formula);
        // Tensors of exactly those shapes are what the layer consumes.
        let mut rng = Rng::with_stream(1, Stream::Test, 9);
        let shapes = layer.param_shapes();
        let mut g = Graph::new();
        let x = g.constant(uniform(&[1, k, k, c], &mut rng));
        let w = g.constant(uniform(&shapes[0], &mut rng));
        let b = g.constant(uniform(&shapes[1], &mut rng));
        let LayerSpec::CoordConv { conv, .. } = layer else { unreachable!() };
        prop_assert!(g.coord_conv(x, w, Some(b), &conv, coords).is_ok());
    }

    #[test]
    fn add_coords_keeps_data_channels(seed in any::<u64>(), h in 1usize..7, w in 1usize..7, c in 1usize..5, with_r in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let spec = if with_r { CoordSpec::with_r(true) } else { CoordSpec::default() };
        let x = uniform(&[2, h, w, c], &mut rng);
        let y = add_coords(&x, spec).unwrap();
        let other = add_coords(&uniform(&[2, h, w, c], &mut rng), spec).unwrap();
        let d = spec.d();
        for ((px, po), orig) in y.data().chunks(c + d).zip(other.data().chunks(c + d)).zip(x.data().chunks(c)) {
            prop_assert_eq!(&px[..c], orig);
            prop_assert_eq!(&px[c..], &po[c..]);
        }
    }

    #[test]
    fn valid_conv_is_translation_equivariant(seed in any::<u64>(), dy in 0usize..3, dx in 0usize..3, k in 1usize..4) {
        let mut rng = Rng::new(seed);
        let (h, w, c, co) = (9, 8, 2, 3);
        let x = uniform(&[1, h, w, c], &mut rng);
        let wt = uniform(&[k, k, c, co], &mut rng);
        let spec = ConvSpec::new(k, c, co).with_padding(Padding::Valid).without_bias();
        // Shift down-right by (dy, dx), zero-filling the exposed border.
        let mut shifted = vec![0.0f32; h * w * c];
        for r in 0..h - dy {
            for q in 0..w - dx {
                for ch in 0..c {
                    shifted[((r + dy) * w + q + dx) * c + ch] = x.data()[(r * w + q) * c + ch];
                }
            }
        }
        let xs = Tensor::from_vec(&[1, h, w, c], shifted).unwrap();
        let (a, b) = (conv2d(&x, &wt, None, &spec).unwrap(), conv2d(&xs, &wt, None, &spec).unwrap());
        let (oh, ow) = (h - k + 1, w - k + 1);
        for r in 0..oh - dy {
            for q in 0..ow - dx {
                for ch in 0..co {
                    let va = a.data()[(r * ow + q) * co + ch];
                    let vb = b.data()[((r + dy) * ow + q + dx) * co + ch];
                    prop_assert_eq!(va.to_bits(), vb.to_bits());
                }
            }
        }
    }
}
