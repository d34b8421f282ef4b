use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn matmul_by_identity_is_noop() {
    let tape = Tape::new();
    let m = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let eye = tape.constant(Tensor::eye(2));
    let out = eye.matmul(&tape.constant(m.clone())).unwrap();
    assert_eq!(out.value(), m);
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::new();
    let y = tape.constant(Tensor::zeros([3])).softmax(0).unwrap().value();
    for &p in y.data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn relu_definition() {
    let tape = Tape::new();
    let y = tape.constant(t(&[2], &[-1.0, 2.0])).relu().value();
    assert_eq!(y.data(), &[0.0, 2.0]);
}

#[test]
fn grad_of_sum_is_ones() {
    let tape = Tape::new();
    let w = tape.leaf(Tensor::from_fn([2, 3, 2], |i| i as f64 - 4.0));
    let g = tape.backward(w.sum()).unwrap();
    assert_eq!(g.get(w).unwrap(), Tensor::ones([2, 3, 2]));
}

#[test]
fn grad_of_half_squared_norm_is_identity() {
    let tape = Tape::new();
    let data = Tensor::from_fn([3, 4], |i| (i as f64 * 0.7).sin());
    let w = tape.leaf(data.clone());
    let loss = w.square().sum().scale(0.5);
    let g = tape.backward(loss).unwrap().get(w).unwrap();
    assert!(g.max_abs_diff(&data) < 1e-15);
}

#[test]
fn backward_errors() {
    let tape = Tape::new();
    let w = tape.leaf(Tensor::ones([2]));
    assert_eq!(
        tape.backward(w).err(),
        Some(TensorError::NonScalarLoss(vec![2]))
    );
    let other = Tape::new();
    let foreign = other.leaf(Tensor::scalar(1.0));
    assert_eq!(tape.backward(foreign).err(), Some(TensorError::Detached));

    let loss = w.sum();
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss).err(), Some(TensorError::BackwardTwice));
}

#[test]
fn shape_errors_are_descriptive() {
    let tape = Tape::new();
    let a = tape.constant(Tensor::zeros([2, 3]));
    let b = tape.constant(Tensor::zeros([2, 3]));
    let err = a.matmul(&b).unwrap_err();
    assert!(err.to_string().contains("[2, 3] x [2, 3]"), "{err}");
    assert!(a.add(&tape.constant(Tensor::zeros([3]))).is_err());
    assert!(a.expand([4, 3]).is_err());
    assert!(a.permute(&[0, 0]).is_err());
}

#[test]
fn constants_do_not_record_backward() {
    let tape = Tape::new();
    let c = tape.constant(Tensor::ones([2]));
    let y = c.exp().sum();
    assert!(!y.requires_grad());
}

#[test]
fn broadcast_matmul_accumulates_shared_operand() {
    // [m,k] x [b,k,n]: gradient of the shared lhs sums over the batch
    let tape = Tape::new();
    let a = tape.leaf(Tensor::ones([1, 2]));
    let b = tape.constant(Tensor::ones([3, 2, 1]));
    let loss = a.matmul(&b).unwrap().sum();
    let g = tape.backward(loss).unwrap().get(a).unwrap();
    assert_eq!(g.data(), &[3.0, 3.0]);
}

#[test]
fn temporal_unfold_shifts_with_padding() {
    let tape = Tape::new();
    let x = tape.constant(t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
    let u = x.temporal_unfold(3, 2).unwrap().value();
    assert_eq!(u.shape(), &[3, 4]);
    assert_eq!(
        u.data(),
        &[0.0, 0.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 0.0, 0.0]
    );
}

#[test]
fn pairwise_l2_basic() {
    let tape = Tape::new();
    let d = tape
        .constant(t(&[2, 2], &[1.0, 2.0, 4.0, 6.0]))
        .pairwise_l2()
        .unwrap()
        .value();
    assert_eq!(d.data(), &[0.0, 5.0, 5.0, 0.0]);
}
