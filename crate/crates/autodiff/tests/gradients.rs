use gsdyn_autodiff::check::{self, gradcheck, primitive_cases, run_case};
use gsdyn_autodiff::{polar_decompose, Tape, Tensor, TensorError};
use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;

#[test]
fn every_primitive_matches_finite_differences() {
    for (i, case) in primitive_cases().iter().enumerate() {
        let worst = run_case(case, 100, 1000 + i as u64).unwrap();
        assert!(worst < 1e-6, "{}: relative error {worst:e}", case.name);
    }
}

#[test]
fn square_gradient_matches_central_difference() {
    let fd = check::finite_difference(|x| Ok(x[0].item().powi(2)), &[Tensor::scalar(3.0)], 1e-5)
        .unwrap();
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let g = tape.backward(x.square().unwrap()).unwrap();
    assert!((g.wrt(x).item() - fd[0].item()).abs() < 1e-8);
    assert!((g.wrt(x).item() - 6.0).abs() < 1e-12);
}

fn mat(m: &Matrix3<f64>) -> Tensor {
    Tensor::new([3, 3], gsdyn_autodiff::linalg::mat3_to_row_major(m).to_vec()).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    let d = a.max_abs_diff(b);
    assert!(d < tol, "difference {d:e} exceeds {tol:e}: {a:?} vs {b:?}");
}

#[test]
fn polar_of_identity() {
    let (r, s) = polar_decompose(&mat(&Matrix3::identity())).unwrap();
    assert_close(&r, &mat(&Matrix3::identity()), 1e-12);
    assert_close(&s, &mat(&Matrix3::identity()), 1e-12);
}

#[test]
fn polar_of_pure_rotation() {
    let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).into_inner();
    let (r, s) = polar_decompose(&mat(&rot)).unwrap();
    assert_close(&r, &mat(&rot), 1e-12);
    assert_close(&s, &mat(&Matrix3::identity()), 1e-12);
}

#[test]
fn polar_of_symmetric_stretch() {
    let f = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
    let (r, s) = polar_decompose(&mat(&f)).unwrap();
    assert_close(&r, &mat(&Matrix3::identity()), 1e-12);
    assert_close(&s, &mat(&f), 1e-12);
}

#[test]
fn polar_rejects_inverted_element() {
    let f = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
    let err = polar_decompose(&mat(&f)).unwrap_err();
    assert!(matches!(err, TensorError::InvertedElement { .. }));
}

#[test]
fn polar_is_differentiable_on_the_tape() {
    // loss = Σ W ⊙ (R + S)
    let f = Tensor::new(
        [3, 3],
        vec![1.3, 0.2, -0.1, 0.1, 0.9, 0.3, -0.2, 0.05, 1.1],
    )
    .unwrap();
    let w = Tensor::new([3, 3], (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let report = gradcheck(
        |tape, x| {
            let (r, s) = x[0].polar_decompose()?;
            r.add(s)?.mul(tape.constant(w.clone()))?.sum()
        },
        &[f],
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::new([2, 3], vec![0.1, -0.4, 0.9, 0.3, 0.2, -0.7]).unwrap());
        let b = tape.leaf(Tensor::new([3, 2], vec![0.5, -0.2, 0.1, 0.8, -0.3, 0.6]).unwrap());
        let y = a.matmul(b).unwrap().tanh().unwrap().square().unwrap().sum().unwrap();
        let g = tape.backward(y).unwrap();
        (y.item(), g.wrt(a).clone(), g.wrt(b).clone())
    };
    let (y1, ga1, gb1) = run();
    let (y2, ga2, gb2) = run();
    assert_eq!(y1.to_bits(), y2.to_bits());
    assert_eq!(ga1, ga2);
    assert_eq!(gb1, gb2);
}

proptest! {
    #[test]
    fn backward_is_linear(
        xs in proptest::collection::vec(-1.0f64..1.0, 6),
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let x0 = Tensor::new([2, 3], xs).unwrap();
        let grads = |wa: f64, wb: f64| {
            let tape = Tape::new();
            let x = tape.leaf(x0.clone());
            let l1 = x.sin().unwrap().sum().unwrap();
            let l2 = x.square().unwrap().exp().unwrap().mean().unwrap();
            let l = l1.scale(wa).unwrap().add(l2.scale(wb).unwrap()).unwrap();
            tape.backward(l).unwrap().wrt(x).clone()
        };
        let combined = grads(a, b);
        let g1 = grads(1.0, 0.0);
        let g2 = grads(0.0, 1.0);
        for i in 0..6 {
            let expect = a * g1.data()[i] + b * g2.data()[i];
            prop_assert!((combined.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn taped_forward_equals_detached_forward(xs in proptest::collection::vec(-1.0f64..1.0, 6)) {
        use gsdyn_autodiff::{forward_op, Op};
        let x = Tensor::new([2, 3], xs).unwrap();
        let detached = forward_op(&Op::Tanh, &[&x]).unwrap();
        let tape = Tape::new();
        let taped = tape.leaf(x).tanh().unwrap().value();
        prop_assert_eq!(&*taped, &detached);
    }
}
