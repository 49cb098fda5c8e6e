use ndarray::{Array2, ArrayView2};

use super::{cast, Scalar};

/// Row-wise softmax with the max-subtraction trick.
pub fn softmax_rows<F: Scalar>(logits: &ArrayView2<F>) -> Array2<F> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean softmax cross-entropy over the batch. Returns the loss and the
/// gradient with respect to the logits, already divided by the batch size.
pub fn cross_entropy<F: Scalar>(
    logits: &ArrayView2<F>,
    labels: &[usize],
) -> (F, Array2<F>) {
    let (n, k) = logits.dim();
    assert_eq!(labels.len(), n, "one label per row");
    let mut grad = softmax_rows(logits);
    let inv_n = F::one() / cast::<F>(n as f64);
    let mut loss = F::zero();
    let tiny = cast::<F>(1e-30);
    for (i, &label) in labels.iter().enumerate() {
        assert!(label < k, "label out of range");
        let p = grad[[i, label]];
        loss = loss - (p + tiny).ln();
        grad[[i, label]] = grad[[i, label]] - F::one();
    }
    grad.mapv_inplace(|v| v * inv_n);
    (loss * inv_n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = arr2(&[[1.0f64, 2.0, 3.0], [-10.0, 0.0, 10.0]]);
        let p = softmax_rows(&logits.view());
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        // shift invariance
        let shifted = softmax_rows(&(&logits + 100.0).view());
        assert!((&p - &shifted).iter().all(|&d| d.abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let logits = Array2::<f64>::zeros((4, 5));
        let (loss, grad) = cross_entropy(&logits.view(), &[0, 1, 2, 3]);
        assert!((loss - (5.0f64).ln()).abs() < 1e-12);
        // grad rows: (1/k - 1{label}) / n
        for i in 0..4 {
            for j in 0..5 {
                let expected = (0.2 - if i == j { 1.0 } else { 0.0 }) / 4.0;
                assert!((grad[[i, j]] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut logits = arr2(&[[0.3f64, -1.2, 0.7], [2.0, 0.1, -0.5]]);
        let labels = [2usize, 0];
        let (_, grad) = cross_entropy(&logits.view(), &labels);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..3 {
                let orig = logits[[i, j]];
                logits[[i, j]] = orig + h;
                let (lp, _) = cross_entropy(&logits.view(), &labels);
                logits[[i, j]] = orig - h;
                let (lm, _) = cross_entropy(&logits.view(), &labels);
                logits[[i, j]] = orig;
                let fd = (lp - lm) / (2.0 * h);
                assert!((grad[[i, j]] - fd).abs() < 1e-8);
            }
        }
    }
}
