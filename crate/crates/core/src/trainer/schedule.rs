use serde::{Deserialize, Serialize};

/// Learning-rate halving and early stopping driven by a validation
/// objective (higher is better).
///
/// The rate is halved whenever an epoch's objective falls more than
/// `threshold` (relative) below the best objective seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub threshold: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs_since_best: usize,
    pub halvings: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

impl LrSchedule {
    pub fn new(lr: f64, threshold: f64, patience: usize) -> Self {
        Self {
            lr,
            threshold,
            patience,
            best: None,
            best_epoch: None,
            epochs_since_best: 0,
            halvings: 0,
            epoch: 0,
        }
    }

    /// Relative degradation of `objective` versus `best`.
    pub fn degradation(best: f64, objective: f64) -> f64 {
        (best - objective) / best.abs().max(f64::MIN_POSITIVE)
    }

    pub fn observe(&mut self, objective: f64) -> ScheduleEvent {
        let epoch = self.epoch;
        self.epoch += 1;
        let mut ev = ScheduleEvent {
            improved: false,
            halved: false,
            stop: false,
        };
        match self.best {
            Some(best) if objective <= best => {
                self.epochs_since_best += 1;
                if Self::degradation(best, objective) > self.threshold {
                    self.lr *= 0.5;
                    self.halvings += 1;
                    ev.halved = true;
                }
            }
            _ => {
                self.best = Some(objective);
                self.best_epoch = Some(epoch);
                self.epochs_since_best = 0;
                ev.improved = true;
            }
        }
        ev.stop = self.epochs_since_best >= self.patience;
        ev
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_percent_drop_halves_once() {
        let mut s = LrSchedule::new(1e-4, 0.10, 10);
        assert!(s.observe(-5.0).improved);
        let ev = s.observe(-5.6);
        assert!(ev.halved);
        assert_eq!(s.lr, 5e-5);
        assert_eq!(s.halvings, 1);
    }

    #[test]
    fn improving_sequence_keeps_rate() {
        let mut s = LrSchedule::new(1e-4, 0.10, 3);
        for obj in [-9.0, -7.0, -6.5, -2.0, 0.5, 3.0] {
            let ev = s.observe(obj);
            assert!(ev.improved && !ev.halved && !ev.stop);
        }
        assert_eq!(s.lr, 1e-4);
    }

    #[test]
    fn small_drops_never_halve() {
        let mut s = LrSchedule::new(1e-4, 0.10, 100);
        for obj in [-5.0, -5.4, -5.49, -5.2, -5.0, -5.45] {
            assert!(!s.observe(obj).halved);
        }
        assert_eq!(s.halvings, 0);
    }

    #[test]
    fn patience_stops() {
        let mut s = LrSchedule::new(1e-4, 0.10, 3);
        s.observe(1.0);
        assert!(!s.observe(0.99).stop);
        assert!(!s.observe(0.98).stop);
        assert!(s.observe(0.97).stop);
    }
}
