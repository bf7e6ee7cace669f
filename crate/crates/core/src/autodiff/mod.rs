//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records each forward primitive eagerly, keeping whatever
//! activations its adjoint needs. [`Tape::backward`] sweeps the tape in
//! reverse creation order. Only nodes that depend on a trainable leaf are
//! differentiated; values created from [`Tape::constant`] inputs alone
//! never get a gradient buffer.

mod tape;
mod tensor;

pub use tape::{GradientSet, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

use crate::error::Result;

/// Compares reverse-mode gradients against central differences.
///
/// `build` records a scalar loss from the leaves it is given. Returns the
/// maximum over leaves of `‖g_ad − g_fd‖∞ / (‖g_fd‖∞ + 1e-12)`.
pub fn finite_diff_check<F>(build: F, values: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &leaves)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let leaves: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &leaves)?;
    let grads = tape.backward(loss, &leaves)?;

    let mut worst: f64 = 0.0;
    let mut work = values.to_vec();
    for (li, &leaf) in leaves.iter().enumerate() {
        let ad = grads.get(leaf).expect("leaf requested");
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in 0..values[li].numel() {
            let orig = values[li].data()[k];
            work[li].data_mut()[k] = orig + h;
            let up = eval(&work)?;
            work[li].data_mut()[k] = orig - h;
            let down = eval(&work)?;
            work[li].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            err = err.max((ad.data()[k] - fd).abs());
            scale = scale.max(fd.abs());
        }
        worst = worst.max(err / (scale + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(2));
        let a = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let out = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(out), tape.value(a));
    }

    #[test]
    fn reduce_sum() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1., 2., 3.]));
        let s = tape.sum(x).unwrap();
        assert_eq!(tape.value(s).item(), 6.0);
    }

    #[test]
    fn layer_norm_of_one_two_three() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 3], &[1., 2., 3.]));
        let g = tape.constant(Tensor::ones([3]));
        let b = tape.constant(Tensor::zeros([3]));
        let y = tape.layer_norm(x, g, b).unwrap();
        // (x - 2) / sqrt(2/3 + 1e-5)
        let expect = [-1.224735, 0.0, 1.224735];
        for (v, e) in tape.value(y).data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-5, "{v} vs {e}");
        }
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y, &[x]).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn matmul_adjoint_is_ones_times_b_transpose() {
        let mut tape = Tape::new();
        let a = tape.leaf(t(&[2, 3], &[0.5, -1., 2., 3., 0., 1.]));
        let b = tape.leaf(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let ab = tape.matmul(a, b).unwrap();
        let l = tape.sum(ab).unwrap();
        let g = tape.backward(l, &[a]).unwrap();
        // ones(2x2) · Bᵀ: each row is the row sums of B
        assert_eq!(g.get(a).unwrap().data(), &[3., 7., 11., 3., 7., 11.]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2]));
        assert!(matches!(tape.backward(x, &[x]), Err(crate::Error::NotScalarLoss(_))));
    }

    #[test]
    fn disconnected_leaf_gets_flagged_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::ones([2]));
        let y = tape.leaf(Tensor::ones([3]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l, &[x, y]).unwrap();
        assert!(g.is_connected(x));
        assert!(!g.is_connected(y));
        assert_eq!(g.get(y).unwrap(), &Tensor::zeros([3]));
    }

    #[test]
    fn constant_graph_has_zero_error() {
        let vals = vec![Tensor::ones([2, 2])];
        let err = finite_diff_check(
            |tape, _| {
                let c = tape.constant(Tensor::scalar(4.0));
                tape.scale(c, 2.0)
            },
            &vals,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(f64::MAX));
        assert!(matches!(
            tape.scale(x, 10.0),
            Err(crate::Error::NonFiniteValue { op: "scale" })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::ones([2, 3]));
        let b = tape.constant(Tensor::ones([2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(crate::Error::ShapeMismatch { .. })));
        let c = tape_const(&mut tape, &[3]);
        assert!(tape.mse(a, c).is_err());
    }

    fn tape_const(tape: &mut Tape, shape: &[usize]) -> Var {
        tape.constant(Tensor::zeros(shape.to_vec()))
    }

    #[test]
    fn masked_softmax_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros([1, 3, 3]));
        let y = tape.softmax(x, true).unwrap();
        let v = tape.value(y);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert_eq!(v.data()[i * 3 + j], expect);
            }
        }
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 4], &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let a = tape.slice(x, 1, 0, 1).unwrap();
        let b = tape.slice(x, 1, 1, 3).unwrap();
        let y = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }
}
