use ctiunet::loss::{bce_loss, composite_loss, tversky_loss, CompositeLossConfig, TverskyParams};
use ctiunet::nn::{grad_check, GradCheckOptions};
use ctiunet::unet::{build_unet, decode_model, encode_model, load_model, save_model, UNetConfig};
use ctiunet::{Error, Tensor4};
use proptest::prelude::*;

fn probs_and_mask(n: usize) -> impl Strategy<Value = (Tensor4, Tensor4)> {
    (
        prop::collection::vec(0.0f64..=1.0, n),
        prop::collection::vec(prop::bool::ANY, n),
    )
        .prop_map(move |(p, t)| {
            (
                Tensor4::from_vec([1, 1, 1, n], p).unwrap(),
                Tensor4::from_vec(
                    [1, 1, 1, n],
                    t.into_iter().map(|b| f64::from(u8::from(b))).collect(),
                )
                .unwrap(),
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn losses_are_bounded_and_finite((p, t) in probs_and_mask(12)) {
        let tv = tversky_loss(&p, &t, &TverskyParams::STAGE1).unwrap();
        prop_assert!((0.0..=1.0).contains(&tv));
        let b = bce_loss(&p, &t).unwrap();
        prop_assert!(b.is_finite() && b >= 0.0);
        // clamping caps the per-pixel penalty at -ln(1e-7)
        prop_assert!(b <= -(1e-7f64).ln() + 1e-9);
    }

    #[test]
    fn moving_a_pixel_toward_its_target_never_hurts((p, t) in probs_and_mask(10), k in 0usize..10, step in 0.0f64..1.0) {
        let mut better = p.clone();
        let target = t.data()[k];
        let v = &mut better.data_mut()[k];
        *v += (target - *v) * step;
        for params in [TverskyParams::STAGE1, TverskyParams::BALANCED] {
            let cfg = CompositeLossConfig::new(params);
            prop_assert!(composite_loss(&better, &t, &cfg).unwrap() <= composite_loss(&p, &t, &cfg).unwrap() + 1e-12);
        }
    }

    #[test]
    fn composite_is_tversky_plus_half_bce((p, t) in probs_and_mask(9)) {
        let params = TverskyParams::BALANCED;
        let c = composite_loss(&p, &t, &CompositeLossConfig::new(params)).unwrap();
        let want = tversky_loss(&p, &t, &params).unwrap() + 0.5 * bce_loss(&p, &t).unwrap();
        prop_assert!((c - want).abs() < 1e-12);
    }
}

#[test]
fn alpha_weights_false_positives() {
    // one false positive only: the FP-weighted setting penalizes more
    let p = Tensor4::from_rows(&[&[1.0, 1.0]]);
    let t = Tensor4::from_rows(&[&[1.0, 0.0]]);
    let heavy = tversky_loss(&p, &t, &TverskyParams::new(0.7, 0.3, 1e-12).unwrap()).unwrap();
    let light = tversky_loss(&p, &t, &TverskyParams::new(0.3, 0.7, 1e-12).unwrap()).unwrap();
    assert!(heavy > light);
    assert!((heavy - (1.0 - 1.0 / 1.7)).abs() < 1e-9);
}

fn small() -> UNetConfig {
    UNetConfig::new(3, vec![4, 8])
}

#[test]
fn model_bytes_round_trip_exactly() {
    let m = build_unet(&small(), 3).unwrap();
    let bytes = encode_model(&m);
    let back = decode_model(&bytes).unwrap();
    assert_eq!(encode_model(&back), bytes);
    let x = Tensor4::from_vec(
        [1, 3, 8, 8],
        (0..192).map(|i| (i as f64 * 0.1).sin()).collect(),
    )
    .unwrap();
    assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
}

#[test]
fn model_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ctiu");
    let m = build_unet(&small(), 9).unwrap();
    save_model(&m, &path).unwrap();
    assert_eq!(encode_model(&load_model(&path).unwrap()), encode_model(&m));

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_model(&path), Err(Error::ModelFile(_))));
}

#[test]
fn zero_head_outputs_its_bias() {
    let mut m = build_unet(&small(), 1).unwrap();
    let (w, b) = m.head_ids();
    let store = m.params_mut();
    for v in store.get_mut(w).value_mut().data_mut() {
        *v = 0.0;
    }
    store.get_mut(b).value_mut().data_mut()[0] = 0.25;
    let x = Tensor4::full([2, 3, 8, 8], 0.3);
    let out = m.forward(&x).unwrap();
    assert_eq!(out.shape().as_array(), [2, 1, 8, 8]);
    assert!(out.data().iter().all(|&v| v == 0.25));
}

#[test]
fn output_shape_and_probability_range() {
    let m = build_unet(&UNetConfig::new(4, vec![4, 8, 16]), 0).unwrap();
    let x = Tensor4::from_vec(
        [3, 4, 16, 24],
        (0..3 * 4 * 16 * 24).map(|i| (i % 7) as f64 - 3.0).collect(),
    )
    .unwrap();
    let p = m.predict_probs(&x).unwrap();
    assert_eq!(p.shape().as_array(), [3, 1, 16, 24]);
    assert!(p.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(m.predict_probs(&Tensor4::zeros([1, 4, 10, 16])).is_err());
    assert!(m.predict_probs(&Tensor4::zeros([1, 3, 16, 16])).is_err());
}

#[test]
fn unet_gradients_match_finite_differences() {
    let m = build_unet(&small(), 5).unwrap();
    let x = Tensor4::from_vec(
        [1, 3, 8, 8],
        (0..192).map(|i| (i as f64 * 0.61).sin()).collect(),
    )
    .unwrap();
    let y = Tensor4::from_vec(
        [1, 1, 8, 8],
        (0..64).map(|i| f64::from(u8::from(i % 3 == 0))).collect(),
    )
    .unwrap();
    let cfg = CompositeLossConfig::new(TverskyParams::STAGE1);
    let mut store = m.params().clone();
    let report = grad_check(
        &mut store,
        |g, st| {
            let xv = g.input(x.clone());
            let logits = m.forward_graph_with(st, g, xv)?;
            let p = g.sigmoid(logits);
            ctiunet::loss::composite_node(g, p, &y, &cfg)
        },
        &GradCheckOptions {
            h: 1e-6,
            tol: 1e-3,
            reject_kinks: true,
            max_coords_per_param: Some(6),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}
