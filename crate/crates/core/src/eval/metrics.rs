use crate::error::{Error, Result};

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if predictions.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Metric("no samples".into()));
    }
    Ok(())
}

/// Fraction of correct predictions.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Per-class accuracy for classes `0..num_classes`.
pub fn per_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    check_lengths(predictions, labels)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::Metric(format!("label {l} outside {num_classes} classes")));
        }
        totals[l] += 1;
        hits[l] += usize::from(p == l);
    }
    if let Some(k) = totals.iter().position(|&t| t == 0) {
        return Err(Error::Metric(format!("class {k} has no samples")));
    }
    Ok(hits.iter().zip(&totals).map(|(&h, &t)| h as f64 / t as f64).collect())
}

/// Mean over classes of per-class accuracy.
pub fn mean_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let per_class = per_class_accuracy(predictions, labels, num_classes)?;
    Ok(per_class.iter().sum::<f64>() / num_classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_mean_differs_from_overall_under_imbalance() {
        let mut labels = vec![0; 10];
        labels.push(1);
        let mut preds = vec![0; 9];
        preds.extend([1, 0]);
        assert!((mean_class_accuracy(&preds, &labels, 2).unwrap() - 0.45).abs() < 1e-12);
        assert!((accuracy(&preds, &labels).unwrap() - 9.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn half_of_the_classes() {
        assert_eq!(mean_class_accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap(), 0.5);
        assert_eq!(mean_class_accuracy(&[0, 1], &[0, 1], 2).unwrap(), 1.0);
    }

    #[test]
    fn empty_class_is_named() {
        let e = mean_class_accuracy(&[0, 0], &[0, 0], 3).unwrap_err();
        assert!(e.to_string().contains("class 1"), "{e}");
    }
}
