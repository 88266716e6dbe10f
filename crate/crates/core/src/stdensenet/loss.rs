use super::tensor::Scalar;
use super::NetError;

/// Max-shifted softmax of one row.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax of each `classes`-wide row of a row-major matrix.
pub fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<Vec<T>> {
    logits.chunks(classes).map(softmax).collect()
}

/// Mean cross-entropy over the batch and its gradient with respect to the logits,
/// `(softmax(z) - onehot(y)) / N`.
pub fn cross_entropy<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> Result<(T, Vec<T>), NetError> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(NetError::Shape(format!(
            "{} logits do not form {} rows of {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let n = T::of(labels.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &label) in logits.chunks(classes).zip(labels) {
        if label >= classes {
            return Err(NetError::InvalidLabel { label, classes });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln();
        loss += log_total - (row[label] - max);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - max - log_total).exp();
            let target = if j == label { T::one() } else { T::zero() };
            grad.push((p - target) / n);
        }
    }
    Ok((loss / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0f64, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[-1000.0f32, 0.0]);
        assert!(p[0] >= 0.0 && (p[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_matches_closed_form() {
        let logits = [0.3f64, -1.2, 2.0, 0.5];
        let (loss, grad) = cross_entropy(&logits, &[0, 1], 2).unwrap();
        let l0 = -(0.3f64.exp() / (0.3f64.exp() + (-1.2f64).exp())).ln();
        let l1 = -(0.5f64.exp() / (2.0f64.exp() + 0.5f64.exp())).ln();
        assert!((loss - (l0 + l1) / 2.0).abs() < 1e-12);
        let eps = 1e-6;
        for i in 0..4 {
            let mut p = logits;
            p[i] += eps;
            let mut m = logits;
            m[i] -= eps;
            let numeric = (cross_entropy(&p, &[0, 1], 2).unwrap().0 - cross_entropy(&m, &[0, 1], 2).unwrap().0) / (2.0 * eps);
            assert!((numeric - grad[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_labels_are_rejected() {
        assert!(matches!(
            cross_entropy(&[0.0f64, 0.0], &[2], 2),
            Err(NetError::InvalidLabel { label: 2, classes: 2 })
        ));
        assert!(cross_entropy(&[0.0f64, 0.0, 1.0], &[0], 2).is_err());
    }
}
