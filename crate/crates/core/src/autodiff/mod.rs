//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a define-by-run tape rebuilt for every batch. Ops check
//! shapes eagerly and refuse to record non-finite outputs.

mod conv;
mod graph;
mod tensor;

pub use graph::{BatchStats, CustomOp, Gradients, Graph, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_is_hinge() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-0.2, 0.3])).unwrap();
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.3]);
    }

    #[test]
    fn perfect_reconstruction_has_zero_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.1, 0.5, 0.9])).unwrap();
        let xh = g.constant(Tensor::from_vec(vec![0.1, 0.5, 0.9])).unwrap();
        let d = g.sub(x, xh).unwrap();
        let sq = g.square(d).unwrap();
        let loss = g.sum(sq).unwrap();
        assert_eq!(g.value(loss).data(), &[0.0]);
    }

    #[test]
    fn same_padded_conv_keeps_digit_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 28, 28])).unwrap();
        let w = g.param(Tensor::full(&[4, 1, 5, 5], 0.01)).unwrap();
        let b = g.param(Tensor::zeros(&[4])).unwrap();
        let y = g.conv2d(x, w, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 4, 28, 28]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_vec(vec![1.0, -2.0])).unwrap();
        let sq = g.square(w).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, -4.0]);
    }

    #[test]
    fn stop_gradient_branch_contributes_nothing() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_vec(vec![3.0])).unwrap();
        let frozen = g.stop_gradient(w).unwrap();
        let prod = g.mul(frozen, w).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[3.0]);
    }

    #[test]
    fn stop_gradient_forward_is_identity_and_adjoint_is_zero() {
        let mut g = Graph::new();
        let t = g.param(Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let s = g.stop_gradient(t).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 2.0, 3.0]);
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(t).data(), &[0.0, 0.0, 0.0]);
        assert!(!grads.reached(t));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(w), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn shape_mismatch_is_a_usage_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::from_vec(vec![1.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn overflow_is_a_numeric_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_vec(vec![1000.0])).unwrap();
        assert!(matches!(g.exp(a), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn pooling_and_upsampling_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3, 28, 28])).unwrap();
        let p = g.max_pool2(x).unwrap();
        assert_eq!(g.value(p).shape(), &[2, 3, 14, 14]);
        let u = g.upsample2(p).unwrap();
        assert_eq!(g.value(u).shape(), &[2, 3, 28, 28]);
        let odd = g.constant(Tensor::zeros(&[1, 1, 7, 7])).unwrap();
        assert!(g.max_pool2(odd).is_err());
    }

    #[test]
    fn transposed_conv_output_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 8, 14, 14])).unwrap();
        let w = g.param(Tensor::full(&[8, 4, 5, 5], 0.01)).unwrap();
        let b = g.param(Tensor::zeros(&[4])).unwrap();
        let same = g.conv_transpose2d(x, w, b, 2).unwrap();
        assert_eq!(g.value(same).shape(), &[1, 4, 14, 14]);
        let full = g.conv_transpose2d(x, w, b, 0).unwrap();
        assert_eq!(g.value(full).shape(), &[1, 4, 18, 18]);
    }

    #[test]
    fn identical_graphs_give_bit_identical_values() {
        let build = || {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec((0..8).map(|i| i as f64 * 0.3 - 1.0).collect())).unwrap();
            let y = g.gelu(x).unwrap();
            let z = g.sigmoid(y).unwrap();
            let s = g.sum(z).unwrap();
            g.value(s).data()[0]
        };
        assert_eq!(build().to_bits(), build().to_bits());
    }
}
