use graspmt::autodiff::{checkpoint, Tape, Tensor, BCE_EPS};

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn matmul_hand_cases() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_fn(
        &[3, 3],
        |i| if i % 4 == 0 { 1.0 } else { 0.0 },
    ));
    let b = t(
        &[3, 4],
        &[1., -2., 3., 0.5, 4., 5., -6., 7., 0., 8., 9., 1.5],
    );
    let bv = tape.constant(b.clone());
    let out = tape.matmul(eye, bv).unwrap();
    assert_eq!(tape.value(out), &b);

    let a = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let c = tape.constant(t(&[2, 1], &[0., 1.]));
    let out = tape.matmul(a, c).unwrap();
    assert_eq!(tape.value(out).data(), &[2., 4.]);
}

#[test]
fn conv_hand_cases() {
    let mut tape = Tape::new();
    let x = Tensor::from_fn(&[1, 5, 5], |i| i as f64 * 0.5 - 3.0);
    let xv = tape.constant(x.clone());
    let mut k = Tensor::zeros(&[1, 1, 3, 3]);
    k.data_mut()[4] = 1.0;
    let kv = tape.constant(k);
    let out = tape.conv2d(xv, kv, None, 1).unwrap();
    assert_eq!(tape.value(out), &x);

    let ones = tape.constant(Tensor::ones(&[1, 5, 5]));
    let kv = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
    let out = tape.conv2d(ones, kv, None, 1).unwrap();
    let o = tape.value(out);
    assert_eq!(o.shape(), &[1, 5, 5]);
    assert_eq!(o.at3(0, 2, 2), 9.0);
    assert_eq!(o.at3(0, 0, 0), 4.0);
    assert_eq!(o.at3(0, 4, 4), 4.0);
    assert_eq!(o.at3(0, 0, 2), 6.0);
}

#[test]
fn elementwise_definitions() {
    let mut tape = Tape::new();
    let x = t(&[3], &[-1., 0., 2.]);
    let xv = tape.constant(x.clone());
    let z = tape.constant(Tensor::zeros(&[3]));
    let s = tape.add(xv, z).unwrap();
    assert_eq!(tape.value(s), &x);
    let r = tape.relu(xv).unwrap();
    assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
    let zero = tape.constant(Tensor::zeros(&[1]));
    let sg = tape.sigmoid(zero).unwrap();
    assert_eq!(tape.value(sg).data(), &[0.5]);
}

#[test]
fn upsample_blocks() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 2, 2], &[1., 2., 3., 4.]));
    let u = tape.upsample2x(x).unwrap();
    let want = [
        1., 1., 2., 2., //
        1., 1., 2., 2., //
        3., 3., 4., 4., //
        3., 3., 4., 4.,
    ];
    assert_eq!(tape.value(u).shape(), &[1, 4, 4]);
    assert_eq!(tape.value(u).data(), &want);

    let c = tape.constant(Tensor::full(&[2, 3, 3], 0.7));
    let u = tape.upsample2x(c).unwrap();
    assert!(tape.value(u).data().iter().all(|&v| v == 0.7));
}

#[test]
fn upsample_gradient_sums_blocks() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1, 2, 2], &[1., 2., 3., 4.]), true);
    let u = tape.upsample2x(x).unwrap();
    let w = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
    let p = tape.mul_const(u, &w).unwrap();
    let l = tape.sum(p).unwrap();
    let g = tape.backward(l).unwrap();
    // Cell (0,0) feeds outputs 0,1,4,5, and so on.
    assert_eq!(g.get(x).unwrap().data(), &[10., 18., 42., 50.]);
}

#[test]
fn smooth_l1_values() {
    let mut tape = Tape::new();
    let target = t(&[1], &[0.0]);
    let same = tape.constant(target.clone());
    let l = tape.smooth_l1(same, &target).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
    let p = tape.constant(t(&[1], &[0.5]));
    let l = tape.smooth_l1(p, &target).unwrap();
    assert_eq!(tape.value(l).item(), 0.125);
    let p = tape.constant(t(&[1], &[2.0]));
    let l = tape.smooth_l1(p, &target).unwrap();
    assert_eq!(tape.value(l).item(), 1.5);
}

#[test]
fn bce_values() {
    let mut tape = Tape::new();
    let half = tape.constant(Tensor::full(&[2, 3], 0.5));
    let target = t(&[2, 3], &[0., 1., 1., 0., 0.3, 0.9]);
    let l = tape.bce(half, &target).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);

    let exact = t(&[3], &[0., 1., 0.]);
    let p = tape.constant(exact.clone());
    let l = tape.bce(p, &exact).unwrap();
    let floor = -(1.0 - BCE_EPS).ln();
    assert!((tape.value(l).item() - floor).abs() < 1e-12);
}

#[test]
fn sum_gradients() {
    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2, 3], &[1., -2., 3., 4., 5., 6.]), true);
    let l = tape.sum(x).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[2], &[1., 2.]), true);
    let sq = tape.mul(x, x).unwrap();
    let l = tape.sum(sq).unwrap();
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[2., 4.]);
}

#[test]
fn shape_errors_are_reported() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(tape.matmul(a, b).is_err());
    let c = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn checkpoint_file_roundtrip() {
    let model = graspmt::model::ModelConfig::desk();
    let store = graspmt::model::init_params::<f32>(&model, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&store, &path).unwrap();
    let back: graspmt::autodiff::ParamStore<f32> = checkpoint::load(&path).unwrap();
    assert!(back.values_equal(&store, ""));
    assert!(checkpoint::load::<f64>(&path).is_err());
}
