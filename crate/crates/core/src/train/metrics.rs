use crate::error::{Error, Result};

/// Sample-weighted mean of per-batch losses: Σ(loss·size) / Σ size.
pub fn compute_average_loss(batch_losses: &[(f64, usize)]) -> Result<f64> {
    if batch_losses.is_empty() {
        return Err(Error::Argument("no batch losses to average".into()));
    }
    let mut weighted = 0.0;
    let mut samples = 0usize;
    for &(loss, size) in batch_losses {
        if size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        weighted += loss * size as f64;
        samples += size;
    }
    Ok(weighted / samples as f64)
}

/// Fraction of positions where prediction and truth agree.
pub fn compute_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let correct = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_loss_examples() {
        assert_eq!(compute_average_loss(&[(0.5, 2), (1.0, 2)]).unwrap(), 0.75);
        assert_eq!(compute_average_loss(&[(0.3141, 7)]).unwrap(), 0.3141);
        assert_eq!(compute_average_loss(&[(0.0, 5), (0.0, 3)]).unwrap(), 0.0);
        assert!(compute_average_loss(&[]).is_err());
        assert!(compute_average_loss(&[(1.0, 0)]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(compute_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        let truths: Vec<usize> = (0..100).map(|i| i % 10).collect();
        let preds: Vec<usize> = truths
            .iter()
            .enumerate()
            .map(|(i, &t)| if i < 89 { t } else { (t + 1) % 10 })
            .collect();
        assert_eq!(compute_accuracy(&preds, &truths).unwrap(), 0.89);
        assert_eq!(compute_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert!(compute_accuracy(&[0], &[0, 1]).is_err());
        assert!(compute_accuracy(&[], &[]).is_err());
    }
}
