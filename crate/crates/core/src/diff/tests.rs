use super::*;
use crate::tensor::Tensor;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv1d_hand_example() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let k = tape.param("k", t(&[1, 1, 3], &[1.0, 0.0, -1.0])).unwrap();
    let y = tape.conv1d(x, k, None, 1, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[-2.0, -2.0]);
}

#[test]
fn conv1d_identity_kernel_with_large_dilation() {
    let xs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut tape = Tape::new();
    let x = tape.input(t(&[1, 1, 20], &xs)).unwrap();
    let k = tape.param("k", t(&[1, 1, 1], &[1.0])).unwrap();
    let y = tape.conv1d(x, k, None, 1, 16, 0).unwrap();
    assert_eq!(tape.value(y).data(), &xs[..]);
}

#[test]
fn conv1d_rejects_empty_output() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[1, 1, 4], &[0.0; 4])).unwrap();
    let k = tape.param("k", t(&[1, 1, 3], &[0.0; 3])).unwrap();
    assert!(matches!(tape.conv1d(x, k, None, 1, 2, 0), Err(crate::Error::EmptyOutput { .. })));
    let k2 = tape.param("k2", t(&[1, 2, 3], &[0.0; 6])).unwrap();
    assert!(tape.conv1d(x, k2, None, 1, 1, 0).is_err());
}

#[test]
fn conv2d_trivial_cases() {
    let mut tape = Tape::new();
    let xs: Vec<f64> = (0..25).map(|i| i as f64).collect();
    let x = tape.input(t(&[1, 1, 5, 5], &xs)).unwrap();
    let one = tape.param("one", t(&[1, 1, 1, 1], &[1.0])).unwrap();
    let y = tape.conv2d(x, one, None, ConvGeom::default()).unwrap();
    assert_eq!(tape.value(y).data(), &xs[..]);

    let ones = tape.input(Tensor::full(&[1, 1, 5, 5], 1.0)).unwrap();
    let k = tape.param("k", Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
    let y = tape.conv2d(ones, k, None, ConvGeom::default()).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 3, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 9.0));
}

#[test]
fn relu_and_linear_examples() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::from_vec(vec![-1.0, 0.0, 2.0])).unwrap();
    let r = tape.relu(a).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);

    let x = tape.input(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let w = tape.param("w", t(&[2, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
    let b = tape.param("b", t(&[2], &[0.0, 1.0])).unwrap();
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0, 18.0]);

    let eye = tape.param("eye", t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let y = tape.linear(x, eye, None).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    let bad = tape.param("bad", t(&[2, 3], &[0.0; 6])).unwrap();
    assert!(tape.linear(x, bad, None).is_err());
}

#[test]
fn softmax_cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.input(Tensor::full(&[1, 4], 0.7)).unwrap();
    let loss = tape.softmax_cross_entropy(l, &[2]).unwrap();
    assert!((tape.value(loss).data()[0] - 4f64.ln()).abs() < 1e-15);

    let l = tape.input(t(&[1, 2], &[10.0, -10.0])).unwrap();
    let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
    let v = tape.value(loss).data()[0];
    assert!((v - 2.061153622438558e-9).abs() < 1e-15, "{v}");
    assert!(tape.softmax_cross_entropy(l, &[2]).is_err());
}

#[test]
fn batch_norm_examples() {
    // Already zero-mean, unit (population) variance per feature.
    let x = t(&[4, 1], &[1.0, -1.0, 1.0, -1.0]);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone()).unwrap();
    let g = tape.param("g", Tensor::full(&[1], 1.0)).unwrap();
    let b = tape.param("b", Tensor::zeros(&[1])).unwrap();
    let args = BnArgs { eps: 1e-5, mode: BnMode::Train, running: None };
    let (y, stats) = tape.batch_norm(xv, g, b, args).unwrap();
    for (yo, xi) in tape.value(y).data().iter().zip(x.data()) {
        assert!((yo - xi).abs() <= 1e-5);
    }
    let stats = stats.unwrap();
    assert_eq!(stats.mean, vec![0.0]);
    assert!((stats.var[0] - 4.0 / 3.0).abs() < 1e-12);

    let g0 = tape.param("g0", Tensor::zeros(&[1])).unwrap();
    let b3 = tape.param("b3", Tensor::full(&[1], 3.0)).unwrap();
    let (y, _) = tape.batch_norm(xv, g0, b3, args).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 3.0));

    let single = tape.input(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let g2 = tape.param("g2", Tensor::full(&[2], 1.0)).unwrap();
    let b2 = tape.param("b2", Tensor::zeros(&[2])).unwrap();
    assert!(tape.batch_norm(single, g2, b2, args).is_err());
    let eval = BnArgs { eps: 1e-5, mode: BnMode::Eval, running: Some((&[0.0, 0.0], &[1.0, 1.0])) };
    assert!(tape.batch_norm(single, g2, b2, eval).is_ok());
}

#[test]
fn backward_examples() {
    let p0 = t(&[3], &[0.5, -1.5, 2.0]);
    let mut tape = Tape::new();
    let p = tape.param("p", p0.clone()).unwrap();
    let q = tape.param("q", t(&[2], &[1.0, 1.0])).unwrap();
    let sq = tape.mul(p, p).unwrap();
    let loss = tape.sum(sq).unwrap();
    let grads = tape.backward(loss).unwrap();
    let gp: Vec<f64> = p0.data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.get("p").unwrap().data(), &gp[..]);
    assert_eq!(grads.get("q").unwrap().data(), &[0.0, 0.0]);
    let _ = q;
    assert!(tape.backward(loss).is_err(), "reused tape must be rejected");
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let p = tape.param("p", t(&[2], &[1.0, 2.0])).unwrap();
    assert!(tape.backward(p).is_err());
}

#[test]
fn non_finite_values_are_errors() {
    let mut tape = Tape::new();
    let a = tape.input(t(&[1], &[1e300])).unwrap();
    assert!(matches!(tape.mul(a, a), Err(crate::Error::NonFinite { .. })));
}

#[test]
fn adam_examples() {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::scalar(1.0), true).unwrap();
    let mut adam = Adam::new(AdamConfig::default());

    let zero = {
        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::scalar(1.0)).unwrap();
        let z = tape.scale(p, 0.0).unwrap();
        tape.backward(z).unwrap()
    };
    for _ in 0..5 {
        adam.step(&mut store, &zero).unwrap();
    }
    assert_eq!(store.get("p").unwrap().data()[0], 1.0);

    let mut store = ParamStore::new();
    store.insert("p", Tensor::scalar(0.0), true).unwrap();
    let mut adam = Adam::new(AdamConfig::default());
    let unit = {
        let mut tape = Tape::new();
        let p = tape.param("p", Tensor::scalar(0.0)).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap()
    };
    adam.step(&mut store, &unit).unwrap();
    let delta = store.get("p").unwrap().data()[0];
    assert!((delta + 1e-3 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
}

#[test]
fn adam_descends_on_parabola() {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::scalar(1.0), true).unwrap();
    let mut adam = Adam::new(AdamConfig { lr: 0.05, ..AdamConfig::default() });
    let mut prev = 1.0;
    for _ in 0..10 {
        let mut tape = Tape::new();
        let p = tape.param("p", store.get("p").unwrap().clone()).unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        adam.step(&mut store, &g).unwrap();
        let now = store.get("p").unwrap().data()[0];
        assert!(now < prev && now > 0.0);
        prev = now;
    }
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut store = ParamStore::new();
    store.insert("p", Tensor::from_vec(vec![0.0, 0.0]), true).unwrap();
    let mut tape = Tape::new();
    let p = tape.param("p", Tensor::scalar(0.0)).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(Adam::new(AdamConfig::default()).step(&mut store, &g).is_err());
}
