//! Layer primitives and sequential networks.
//!
//! [`NetworkSpec`] is a pure architecture description whose shape chain is
//! validated before any parameter is allocated; [`Network`] adds parameter
//! and running-statistics storage and records itself on a tape.

mod network;
mod spec;

pub use network::{Forward, InitScheme, Layer, Mode, Network, Param};
pub use spec::{LayerSpec, NetworkSpec};
pub use crate::tensor::Activation;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{kernels, Tensor};

/// Row-wise softmax of `logits[N,K]`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = match logits.shape() {
        &[r, c] => (r, c),
        s => return Err(crate::Error::ShapeMismatch { expected: vec![0, 0], got: s.to_vec() }),
    };
    Tensor::new(&[rows, cols], kernels::softmax_rows(rows, cols, logits.data()))
}

/// Index of the largest entry of each row; the first index wins ties.
pub fn argmax_rows<T: Scalar>(rows: usize, cols: usize, data: &[T]) -> Vec<usize> {
    (0..rows)
        .map(|r| {
            let row = &data[r * cols..(r + 1) * cols];
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{NormStats, Rng, Tape};

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax(&Tensor::<f32>::new(&[1, 3], vec![0.0; 3]).unwrap()).unwrap();
        assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-7));
        let mut rng = Rng::new(3);
        let x = Tensor::<f32>::randn(&[8, 5], &mut rng).unwrap();
        let p = softmax(&x).unwrap();
        for r in 0..8 {
            let s: f32 = p.data()[r * 5..(r + 1) * 5].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        assert_eq!(argmax_rows(8, 5, p.data()), argmax_rows(8, 5, x.data()));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax_rows(1, 3, &[0.2, 0.5, 0.3]), vec![1]);
        assert_eq!(argmax_rows(1, 2, &[0.5, 0.5]), vec![0]);
    }

    fn stats(data: &[f64], c: usize, hw: usize, n: usize) -> Vec<(f64, f64)> {
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = (0..n).flat_map(|b| data[(b * c + ch) * hw..(b * c + ch + 1) * hw].to_vec()).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
                (m, v)
            })
            .collect()
    }

    #[test]
    fn batchnorm_standardizes_then_applies_affine() {
        let mut rng = Rng::new(12);
        let x = Tensor::<f64>::randn_scaled(&[4, 3, 2, 2], 5.0, 3.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g1 = tape.constant(Tensor::ones(&[3]).unwrap());
        let b0 = tape.constant(Tensor::zeros(&[3]).unwrap());
        let (y, _) = tape.batch_norm(xv, g1, b0, NormStats::Batch { eps: 1e-5 }).unwrap();
        for (m, v) in stats(tape.value(y).data(), 3, 4, 4) {
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-4);
        }
        let g2 = tape.constant(Tensor::full(&[3], 2.0).unwrap());
        let b3 = tape.constant(Tensor::full(&[3], 3.0).unwrap());
        let (z, _) = tape.batch_norm(y, g2, b3, NormStats::Batch { eps: 0.0 }).unwrap();
        for (m, v) in stats(tape.value(z).data(), 3, 4, 4) {
            assert!((m - 3.0).abs() < 1e-9);
            assert!((v.sqrt() - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batchnorm_needs_two_values_in_train_mode() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 1, 1]).unwrap());
        let g = tape.constant(Tensor::ones(&[2]).unwrap());
        let b = tape.constant(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(tape.batch_norm(x, g, b, NormStats::Batch { eps: 1e-5 }), Err(crate::Error::SingleElementBatch)));
        let (m, v) = (vec![0.0; 2], vec![1.0; 2]);
        assert!(tape.batch_norm(x, g, b, NormStats::Running { mean: &m, var: &v, eps: 1e-5 }).is_ok());
    }
}
