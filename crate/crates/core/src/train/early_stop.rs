use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Patience-based early stopping on validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopOutcome {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopState {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopState {
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
            patience,
            min_delta,
        }
    }
}

/// Records one validation loss. A loss improves iff it is below
/// `best - min_delta`; the stop signal is raised once `patience` consecutive
/// epochs fail to improve.
pub fn early_stop_update(state: &mut EarlyStopState, val_loss: f64) -> Result<EarlyStopOutcome> {
    if !val_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "validation loss is {val_loss}; aborting"
        )));
    }
    let improved = val_loss < state.best_val_loss - state.min_delta;
    if improved {
        state.best_val_loss = val_loss;
        state.epochs_since_improvement = 0;
    } else {
        state.epochs_since_improvement += 1;
    }
    Ok(EarlyStopOutcome {
        improved,
        stop: state.epochs_since_improvement >= state.patience,
    })
}

/// Feeds a whole loss sequence; returns the 1-based epoch at which the stop
/// signal fired, if any.
pub fn stop_epoch(losses: &[f64], patience: usize, min_delta: f64) -> Result<Option<usize>> {
    let mut state = EarlyStopState::new(patience, min_delta);
    for (i, &l) in losses.iter().enumerate() {
        if early_stop_update(&mut state, l)?.stop {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_three_trace() {
        let mut s = EarlyStopState::new(3, 0.0);
        let seq = [1.0, 0.9, 0.95, 0.96, 0.97];
        let outcomes: Vec<_> = seq
            .iter()
            .map(|&l| early_stop_update(&mut s, l).unwrap())
            .collect();
        assert!(outcomes[..4].iter().all(|o| !o.stop));
        assert!(outcomes[4].stop);
        assert_eq!(s.best_val_loss, 0.9);
        assert!(outcomes[1].improved && !outcomes[2].improved);
    }

    #[test]
    fn decreasing_never_stops() {
        let seq: Vec<f64> = (0..20).map(|i| 1.0 - i as f64 * 0.01).collect();
        assert_eq!(stop_epoch(&seq, 1, 0.0).unwrap(), None);
    }

    #[test]
    fn constant_sequence_patience_two() {
        assert_eq!(stop_epoch(&[0.5; 6], 2, 0.0).unwrap(), Some(3));
    }

    #[test]
    fn min_delta_requires_margin() {
        assert_eq!(stop_epoch(&[1.0, 0.99, 0.98], 2, 0.05).unwrap(), Some(3));
    }

    #[test]
    fn non_finite_loss_is_numeric_error() {
        let mut s = EarlyStopState::new(3, 0.0);
        assert!(matches!(
            early_stop_update(&mut s, f64::NAN),
            Err(Error::Numeric(_))
        ));
    }
}
