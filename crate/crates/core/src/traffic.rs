//! Two-state Markov-modulated arrival regime shared by all schedulers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

/// Rates are jobs per unit time per scheduler; switch probabilities are per
/// decision epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub rate_high: f64,
    pub rate_low: f64,
    pub p_high_to_low: f64,
    pub p_low_to_high: f64,
}

impl Default for RegimeParams {
    fn default() -> Self {
        Self {
            rate_high: 0.9,
            rate_low: 0.6,
            p_high_to_low: 0.2,
            p_low_to_high: 0.5,
        }
    }
}

impl RegimeParams {
    pub fn constant(rate: f64) -> Self {
        Self {
            rate_high: rate,
            rate_low: rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rate_high,
            self.rate_low,
            self.p_high_to_low,
            self.p_low_to_high,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || self.rate_low < 0.0 || self.rate_low > self.rate_high {
            return Err(Error::InvalidParameter(format!(
                "arrival rates must satisfy 0 <= low <= high, got low={} high={}",
                self.rate_low, self.rate_high
            )));
        }
        for p in [self.p_high_to_low, self.p_low_to_high] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "switch probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Long-run fraction of epochs spent in the high regime.
    pub fn stationary_high(&self) -> f64 {
        let total = self.p_high_to_low + self.p_low_to_high;
        if total == 0.0 {
            0.5
        } else {
            self.p_low_to_high / total
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRegime {
    pub params: RegimeParams,
    pub current: Level,
}

impl ArrivalRegime {
    /// Start in either level with probability ½.
    pub fn init<R: Rng + ?Sized>(params: RegimeParams, rng: &mut R) -> Self {
        let current = if rng.random_bool(0.5) {
            Level::High
        } else {
            Level::Low
        };
        Self { params, current }
    }

    pub fn rate(&self) -> f64 {
        match self.current {
            Level::High => self.params.rate_high,
            Level::Low => self.params.rate_low,
        }
    }

    /// Advance one decision epoch.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let u: f64 = rng.random();
        self.current = match self.current {
            Level::High if u < self.params.p_high_to_low => Level::Low,
            Level::Low if u < self.params.p_low_to_high => Level::High,
            level => level,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn init_is_fair_and_deterministic() {
        let p = RegimeParams::default();
        let mut rng = seed::rng(1);
        let highs = (0..100_000)
            .filter(|_| ArrivalRegime::init(p, &mut rng).current == Level::High)
            .count();
        assert!((highs as f64 / 1e5 - 0.5).abs() < 0.01);
        let a = ArrivalRegime::init(p, &mut seed::rng(9));
        let b = ArrivalRegime::init(p, &mut seed::rng(9));
        assert_eq!(a, b);
        assert!([0.9, 0.6].contains(&a.rate()));
    }

    #[test]
    fn high_to_low_frequency() {
        let p = RegimeParams::default();
        let mut rng = seed::rng(2);
        let trials = 100_000;
        let mut switched = 0;
        for _ in 0..trials {
            let mut r = ArrivalRegime {
                params: p,
                current: Level::High,
            };
            r.step(&mut rng);
            if r.current == Level::Low {
                switched += 1;
            }
        }
        assert!((switched as f64 / trials as f64 - 0.2).abs() < 0.01);
    }

    #[test]
    fn stationary_fraction() {
        let p = RegimeParams::default();
        assert!((p.stationary_high() - 5.0 / 7.0).abs() < 1e-15);
        let mut rng = seed::rng(3);
        let mut r = ArrivalRegime::init(p, &mut rng);
        let steps = 1_000_000;
        let mut high = 0usize;
        for _ in 0..steps {
            r.step(&mut rng);
            high += usize::from(r.current == Level::High);
        }
        assert!((high as f64 / steps as f64 - 5.0 / 7.0).abs() < 0.005);
    }

    #[test]
    fn absorbing_high() {
        let p = RegimeParams {
            p_high_to_low: 0.0,
            ..RegimeParams::default()
        };
        let mut r = ArrivalRegime {
            params: p,
            current: Level::High,
        };
        let mut rng = seed::rng(4);
        for _ in 0..1000 {
            r.step(&mut rng);
            assert_eq!(r.current, Level::High);
        }
    }

    #[test]
    fn constant_rate() {
        let r = ArrivalRegime::init(RegimeParams::constant(0.7), &mut seed::rng(0));
        assert_eq!(r.rate(), 0.7);
    }

    #[test]
    fn validation() {
        assert!(RegimeParams::default().validate().is_ok());
        let bad = RegimeParams {
            rate_low: 1.0,
            ..RegimeParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = RegimeParams {
            p_low_to_high: 1.5,
            ..RegimeParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
