/// Tracks validation loss and decides when to stop.
///
/// An epoch counts as an improvement when its loss beats the best so far by
/// more than `min_delta`. Training stops after `patience` epochs in a row
/// without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best_loss - self.min_delta {
            self.best_loss = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Epoch (1-based) of the best loss; 0 before any observation.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_after_patience() {
        let mut es = EarlyStopping::new(1, 1e-4);
        assert_eq!(es.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(es.observe(2, 1.5), StopDecision::Stop);
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn min_delta_ignores_tiny_gains() {
        let mut es = EarlyStopping::new(3, 0.01);
        es.observe(1, 1.0);
        assert_eq!(es.observe(2, 0.995), StopDecision::Continue);
        assert_eq!(es.observe(3, 0.98), StopDecision::Improved);
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn zero_patience_never_stops() {
        let mut es = EarlyStopping::new(0, 0.0);
        es.observe(1, 1.0);
        for e in 2..100 {
            assert_ne!(es.observe(e, 2.0), StopDecision::Stop);
        }
    }
}
