mod common;

use nis::autodiff::{batched_jacobians, jacobian};
use nis::rng::stream;
use nis::{Graph, NisError, Tensor};
use rand::Rng;

#[test]
fn forward_examples() {
    let mut g = Graph::new();
    let eye = g.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
    let v = g.leaf(Tensor::vector(vec![2.0, 3.0]));
    let mv = g.matmul(eye, v).unwrap();
    assert_eq!(g.value(mv).data(), &[2.0, 3.0]);

    let r = g.leaf(Tensor::vector(vec![-1.0, 2.0]));
    let relu = g.relu(r);
    assert_eq!(g.value(relu).data(), &[0.0, 2.0]);

    let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let b = g.leaf(Tensor::vector(vec![3.0]));
    let c = g.concat(&[a, b]).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    assert_eq!(g.backward(sq).unwrap().get(x).item(), 6.0);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(-1.0));
    let r = g.relu(x);
    assert_eq!(g.backward(r).unwrap().get(x).item(), 0.0);
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let unused = g.leaf(Tensor::matrix(2, 2, vec![1.0; 4]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(!grads.is_reached(unused));
    assert_eq!(grads.get(unused).data(), &[0.0; 4]);
    assert_eq!(grads.get(unused).shape(), &[2, 2]);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
    let b = g.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
    let err = g.matmul(a, b).unwrap_err();
    assert!(matches!(err, NisError::ShapeMismatch { op: "matmul", .. }), "{err}");
    let c = g.leaf(Tensor::vector(vec![0.0; 3]));
    assert!(matches!(g.add(a, c), Err(NisError::ShapeMismatch { op: "add", .. })));
    assert!(g.slice(c, 2, 5).is_err());
    assert!(g.backward(a).is_err(), "non-scalar root must be rejected");
    assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn backward_visits_shared_nodes_once() {
    // y = (x + x) * x reuses x three times: dy/dx = 4x.
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(1.5));
    let twice = g.add(x, x).unwrap();
    let y = g.mul(twice, x).unwrap();
    assert!((g.backward(y).unwrap().get(x).item() - 6.0).abs() < 1e-15);
}

#[test]
fn every_op_matches_finite_differences() {
    let mut rng = stream(11, "tests/autodiff");
    for (name, shapes, build) in common::op_cases() {
        for _ in 0..20 {
            let err = common::op_grad_error(&shapes, build, &mut rng);
            assert!(err <= 1e-5, "{name}: relative error {err:e}");
        }
    }
}

#[test]
fn jacobian_of_affine_map() {
    // f(x) = x W with W = [[1, 2], [3, 4], [5, 6]] has Jacobian Wᵀ.
    let w = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let jac = jacobian(
        |g: &mut Graph, x| {
            let wv = g.leaf(w.clone());
            g.matmul(x, wv)
        },
        &[0.3, -0.2, 0.9],
    )
    .unwrap();
    assert_eq!(jac.shape(), &[2, 3]);
    assert_eq!(jac.data(), &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
}

#[test]
fn batched_jacobians_match_single_ones() {
    let mut rng = stream(12, "tests/batched");
    let w1 = Tensor::matrix(2, 4, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let w2 = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-1.0..1.0)).collect());
    let f = |g: &mut Graph, x| {
        let a = g.leaf(w1.clone());
        let b = g.leaf(w2.clone());
        let h = g.matmul(x, a)?;
        let h = g.tanh(h);
        g.matmul(h, b)
    };
    let xs: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = batched_jacobians(f, &Tensor::matrix(5, 2, xs.clone())).unwrap();
    for (r, jac) in batch.iter().enumerate() {
        let single = jacobian(f, &xs[2 * r..2 * r + 2]).unwrap();
        for (a, b) in jac.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
