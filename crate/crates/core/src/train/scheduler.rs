/// Multiplies the rate by `factor` after `patience` consecutive epochs
/// without a strictly greater validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    /// Best score seen so far.
    pub best: Option<f64>,
    pub since_improvement: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, patience: usize, factor: f64) -> Self {
        Self {
            lr,
            patience,
            factor,
            best: None,
            since_improvement: 0,
        }
    }

    /// Records one epoch's score and returns `true` if it improved on the best.
    pub fn update(&mut self, score: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(best) => score > best,
        };
        if improved {
            self.best = Some(score);
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
            if self.since_improvement >= self.patience {
                self.lr *= self.factor;
                self.since_improvement = 0;
            }
        }
        improved
    }
}
