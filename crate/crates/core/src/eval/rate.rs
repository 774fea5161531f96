use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize, Serializer};

/// An exact success fraction `correct / total`, displayed as a percentage
/// rounded half-up to one decimal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
pub struct Rate {
    pub correct: u64,
    pub total: u64,
}

impl Rate {
    pub fn new(correct: u64, total: u64) -> Self {
        assert!(correct <= total, "rate numerator exceeds denominator");
        Self { correct, total }
    }

    /// `None` when the denominator is zero.
    pub fn ratio(&self) -> Option<Ratio<u64>> {
        (self.total > 0).then(|| Ratio::new(self.correct, self.total))
    }

    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    /// Percentage in tenths, rounded half-up: 10/27 -> 370.
    pub fn percent_tenths(&self) -> u64 {
        if self.total == 0 {
            return 0;
        }
        let num = u128::from(self.correct) * 2000 + u128::from(self.total);
        let den = u128::from(self.total) * 2;
        (num / den) as u64
    }

    pub fn percent(&self) -> f64 {
        self.percent_tenths() as f64 / 10.0
    }
}

impl std::ops::AddAssign for Rate {
    fn add_assign(&mut self, other: Rate) {
        self.correct += other.correct;
        self.total += other.total;
    }
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.percent_tenths();
        write!(f, "{}.{}", t / 10, t % 10)
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire {
            correct: u64,
            total: u64,
            percent: f64,
        }
        Wire {
            correct: self.correct,
            total: self.total,
            percent: self.percent(),
        }
        .serialize(serializer)
    }
}
