/// `floor(epochs * fraction)`, tolerant of representation error in the
/// fraction (`30 * (1/3)` is 10).
pub fn patience_epochs(epochs: usize, fraction: f64) -> usize {
    (epochs as f64 * fraction + 1e-9).floor() as usize
}

/// Stops once `patience` consecutive epochs fail to beat the best score by
/// the relative margin `min_improvement`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_improvement: f64,
    best: Option<f64>,
    best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_improvement: f64) -> Self {
        Self { patience, min_improvement, best: None, best_epoch: 0, since_best: 0 }
    }

    /// Records the validation score of `epoch` (1-based); returns `true` if
    /// training should stop after it.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => score > best + self.min_improvement * best.abs(),
        };
        if improved {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best > 0 && self.since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epochs_since_best(&self) -> usize {
        self.since_best
    }
}
