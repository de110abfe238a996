use ctiunet::nn::{grad_check, Adam, AdamConfig, GradCheckOptions, Graph, Padding, ParamStore};
use ctiunet::Tensor4;
use proptest::prelude::*;

fn conv(x: &Tensor4, w: &Tensor4, stride: usize, padding: Padding) -> Tensor4 {
    let mut g = Graph::new();
    let (xv, wv) = (g.input(x.clone()), g.input(w.clone()));
    let out = g.conv2d(xv, wv, None, stride, padding).unwrap();
    g.value(out).clone()
}

/// Direct six-loop convolution with zero padding `pad`.
fn conv_oracle(x: &Tensor4, w: &Tensor4, stride: usize, pad: usize) -> Tensor4 {
    let (sx, sw) = (x.shape(), w.shape());
    let oh = (sx.h + 2 * pad - sw.h) / stride + 1;
    let ow = (sx.w + 2 * pad - sw.w) / stride + 1;
    let mut out = Tensor4::zeros([sx.n, sw.n, oh, ow]);
    for n in 0..sx.n {
        for co in 0..sw.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..sx.c {
                        for ky in 0..sw.h {
                            for kx in 0..sw.w {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < sx.h
                                    && (ix as usize) < sx.w
                                {
                                    acc += x.at(n, ci, iy as usize, ix as usize)
                                        * w.at(co, ci, ky, kx);
                                }
                            }
                        }
                    }
                    out.set(n, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

#[test]
fn ones_kernel2_on_ones_gives_fours_valid() {
    let out = conv(
        &Tensor4::full([1, 1, 4, 4], 1.0),
        &Tensor4::full([1, 1, 2, 2], 1.0),
        1,
        Padding::Valid,
    );
    assert_eq!(out.shape().as_array(), [1, 1, 3, 3]);
    assert!(out.data().iter().all(|&v| v == 4.0));
}

#[test]
fn ones_kernel_sums_window() {
    let x = Tensor4::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let out = conv(&x, &Tensor4::full([1, 1, 2, 2], 1.0), 1, Padding::Valid);
    assert_eq!(out.data(), &[10.0]);
}

#[test]
fn same_padding_keeps_extent_and_zero_pads() {
    let out = conv(
        &Tensor4::full([1, 1, 3, 3], 1.0),
        &Tensor4::full([1, 1, 3, 3], 1.0),
        1,
        Padding::Same,
    );
    assert_eq!(out.shape().as_array(), [1, 1, 3, 3]);
    // corners see 4 pixels, edges 6, centre 9
    assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
}

#[test]
fn maxpool_and_upsample_hand_values() {
    let x = Tensor4::from_rows(&[&[1.0, 5.0, 2.0, 0.0], &[3.0, 4.0, 8.0, 1.0]]);
    let mut g = Graph::new();
    let xv = g.input(x);
    let p = g.maxpool2(xv).unwrap();
    assert_eq!(g.value(p).data(), &[5.0, 8.0]);
    let u = g.upsample_nearest2(p);
    assert_eq!(g.value(u).data(), &[5.0, 5.0, 8.0, 8.0, 5.0, 5.0, 8.0, 8.0]);
}

#[test]
fn maxpool_rejects_odd_extent() {
    let mut g = Graph::new();
    let x = g.input(Tensor4::zeros([1, 1, 3, 4]));
    assert!(g.maxpool2(x).is_err());
}

#[test]
fn instance_norm_gives_zero_mean_unit_variance() {
    let data: Vec<f64> = (0..2 * 3 * 25)
        .map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0)
        .collect();
    let x = Tensor4::from_vec([2, 3, 5, 5], data).unwrap();
    let mut g = Graph::new();
    let xv = g.input(x);
    let s = g.input(Tensor4::full([1, 3, 1, 1], 1.0));
    let b = g.input(Tensor4::zeros([1, 3, 1, 1]));
    let y = g.instance_norm(xv, s, b, 1e-5).unwrap();
    let y = g.value(y);
    for n in 0..2 {
        for c in 0..3 {
            let p = y.plane(n, c);
            let m = p.iter().sum::<f64>() / 25.0;
            let v = p.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 25.0;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-3, "variance {v}");
        }
    }
}

#[test]
fn backward_of_sum_of_squares() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor4::from_rows(&[&[1.0, -2.0, 3.0]]));
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss);
    g.accumulate_param_grads(&grads, &mut store).unwrap();
    assert_eq!(store.get(id).grad().data(), &[2.0, -4.0, 6.0]);
}

#[test]
fn adam_first_step_moves_by_lr_against_gradient_sign() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor4::from_rows(&[&[0.5, -0.5, 0.0]]));
    store
        .get_mut(id)
        .accumulate_grad(&Tensor4::from_rows(&[&[3.0, -0.01, 1e-3]]))
        .unwrap();
    let mut adam = Adam::new(
        AdamConfig {
            lr: 0.1,
            ..Default::default()
        },
        &store,
    );
    adam.step(&mut store).unwrap();
    // bias-corrected first step is lr * g / (|g| + eps)
    let got = store.get(id).value().data().to_vec();
    let want = [0.4, -0.4, -0.1];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-5, "{got:?}");
    }
    assert_eq!(adam.steps(), 1);
}

#[test]
fn conv_gradient_with_stride_checks() {
    let mut store = ParamStore::new();
    let x = store.add(
        "x",
        Tensor4::from_vec(
            [1, 2, 5, 5],
            (0..50).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap(),
    );
    let w = store.add(
        "w",
        Tensor4::from_vec(
            [2, 2, 3, 3],
            (0..36).map(|i| (i as f64 * 0.73).cos()).collect(),
        )
        .unwrap(),
    );
    let report = grad_check(
        &mut store,
        |g, st| {
            let (xv, wv) = (g.param(st, x), g.param(st, w));
            let y = g.conv2d(xv, wv, None, 2, Padding::Same)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum(sq))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

fn tensor(shape: [usize; 4]) -> impl Strategy<Value = Tensor4> {
    prop::collection::vec(-2.0f64..2.0, shape.iter().product::<usize>())
        .prop_map(move |d| Tensor4::from_vec(shape, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_matches_direct_loops(x in tensor([2, 2, 7, 6]), w in tensor([3, 2, 3, 3]), stride in 1usize..3) {
        let got = conv(&x, &w, stride, Padding::Same);
        let want = conv_oracle(&x, &w, stride, 1);
        prop_assert!(got.max_abs_diff(&want) < 1e-12);
        let got = conv(&x, &w, stride, Padding::Valid);
        prop_assert!(got.max_abs_diff(&conv_oracle(&x, &w, stride, 0)) < 1e-12);
    }

    #[test]
    fn conv_is_linear_in_input(a in tensor([1, 2, 6, 6]), b in tensor([1, 2, 6, 6]), w in tensor([2, 2, 3, 3]), k in -3.0f64..3.0) {
        let combo = Tensor4::from_vec([1, 2, 6, 6], a.data().iter().zip(b.data()).map(|(p, q)| p + k * q).collect()).unwrap();
        let lhs = conv(&combo, &w, 1, Padding::Same);
        let (ca, cb) = (conv(&a, &w, 1, Padding::Same), conv(&b, &w, 1, Padding::Same));
        let rhs = Tensor4::from_vec(ca.shape(), ca.data().iter().zip(cb.data()).map(|(p, q)| p + k * q).collect()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-9);
    }

    #[test]
    fn sigmoid_in_open_unit_interval_and_symmetric(x in tensor([1, 1, 4, 4])) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let s = g.sigmoid(xv);
        let neg = g.scale(xv, -1.0);
        let sn = g.sigmoid(neg);
        for (a, b) in g.value(s).data().iter().zip(g.value(sn).data()) {
            prop_assert!(*a > 0.0 && *a < 1.0);
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn f32_rounding_is_idempotent(x in tensor([1, 1, 3, 3])) {
        let mut store = ParamStore::new();
        let id = store.add("p", x);
        store.round_to_f32();
        let once = store.get(id).value().clone();
        store.round_to_f32();
        prop_assert_eq!(store.get(id).value(), &once);
        prop_assert!(once.data().iter().all(|v| (*v as f32) as f64 == *v));
    }
}
