use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Relative: `loss < best * (1 - threshold)` counts as improvement.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            threshold: 1e-4,
            min_lr: 0.0,
        }
    }
}

impl PlateauConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::Config(format!(
                "scheduler factor must be in (0, 1), got {}",
                self.factor
            )));
        }
        if !(self.threshold >= 0.0) || !(self.min_lr >= 0.0) {
            return Err(Error::Config(
                "scheduler threshold and min_lr must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Reduce-on-plateau in "min" mode. A reduction happens once `patience`
/// consecutive epochs fail to improve on the best loss; the counter then
/// starts over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub lr: f64,
    /// Infinite until the first loss arrives; stored as `null` then.
    #[serde(with = "infinite_as_null")]
    pub best: f64,
    pub num_bad: usize,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Result<Self> {
        config.check()?;
        if !(lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(Self {
            config,
            lr,
            best: f64::INFINITY,
            num_bad: 0,
        })
    }

    /// Records one validation loss and returns the (possibly reduced) lr.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best * (1.0 - self.config.threshold) {
            self.best = val_loss;
            self.num_bad = 0;
        } else {
            self.num_bad += 1;
        }
        if self.num_bad >= self.config.patience {
            // skip reductions too small to matter, as lr floors out at min_lr
            let reduced = (self.lr * self.config.factor).max(self.config.min_lr);
            if self.lr - reduced > 1e-8 * self.lr {
                self.lr = reduced;
            }
            self.num_bad = 0;
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halvings(losses: impl IntoIterator<Item = f64>) -> usize {
        let mut s = PlateauScheduler::new(1.0, PlateauConfig::default()).unwrap();
        let mut count = 0;
        for l in losses {
            let before = s.lr;
            if s.step(l) < before {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn decreasing_losses_keep_lr() {
        assert_eq!(halvings((0..200).map(|k| 1.0 / (k + 1) as f64)), 0);
    }

    #[test]
    fn constant_losses() {
        // epoch 1 sets the best, epochs 2..=11 are the ten bad ones
        let mut s = PlateauScheduler::new(1.0, PlateauConfig::default()).unwrap();
        for epoch in 1..=11 {
            let lr = s.step(1.0);
            assert_eq!(lr, if epoch == 11 { 0.5 } else { 1.0 }, "epoch {epoch}");
        }
        assert_eq!(halvings(std::iter::repeat_n(1.0, 10)), 0);
        assert_eq!(halvings(std::iter::repeat_n(1.0, 11)), 1);
        assert_eq!(halvings(std::iter::repeat_n(1.0, 21)), 2);
        assert_eq!(halvings(std::iter::repeat_n(1.0, 22)), 2);
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut s = PlateauScheduler::new(0.1, PlateauConfig::default()).unwrap();
        let fresh: PlateauScheduler =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(fresh, s);
        s.step(0.3);
        s.step(0.4);
        let back: PlateauScheduler =
            serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_config() {
        let bad = PlateauConfig {
            factor: 1.0,
            ..Default::default()
        };
        assert!(PlateauScheduler::new(1.0, bad).is_err());
        assert!(PlateauScheduler::new(0.0, PlateauConfig::default()).is_err());
    }
}
