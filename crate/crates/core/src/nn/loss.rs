use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of an `N x k` matrix, computed in `f64` with the row
/// maximum subtracted.
pub fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| v / z));
    }
    out
}

/// Mean cross-entropy of `softmax(logits)` against `labels`, and its
/// gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let n = logits.n();
    let k = logits.sample_len();
    if labels.len() != n {
        return Err(Error::LengthMismatch(n, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel { label, classes: k });
    }
    let raw: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in raw.chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        loss += log_z - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let t = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64((p - t) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::from_vec(logits.shape(), grad)?))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros([3, 6, 1, 1]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 3, 5]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logits_stay_finite() {
        let mut v = vec![0.0f32; 6];
        v[2] = 1000.0;
        let logits = Tensor::from_vec([1, 6, 1, 1], v).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((0.0..1e-6).contains(&loss));
        assert!(grad.is_finite());
        let p = softmax_rows(&[1000.0, -1000.0, 0.0], 3);
        assert_eq!(p, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let logits = Tensor::<f64>::zeros([1, 6, 1, 1]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[6]),
            Err(Error::InvalidLabel { label: 6, classes: 6 })
        ));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
