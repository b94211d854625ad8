//! Simulation time in integer tenths of a microsecond.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ticks per microsecond.
pub const TICKS_PER_US: i64 = 10;

/// A point in (or span of) simulated time, counted in 0.1 µs ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Ticks(pub i64);

impl Ticks {
    pub const ZERO: Ticks = Ticks(0);

    /// Quantizes a microsecond value to the nearest tick (half away from zero).
    pub fn from_us(us: f64) -> Ticks {
        Ticks((us * TICKS_PER_US as f64).round() as i64)
    }

    pub fn as_us(self) -> f64 {
        self.0 as f64 / TICKS_PER_US as f64
    }

    pub fn raw(self) -> i64 {
        self.0
    }
}

impl Add for Ticks {
    type Output = Ticks;
    fn add(self, rhs: Ticks) -> Ticks {
        Ticks(self.0 + rhs.0)
    }
}

impl AddAssign for Ticks {
    fn add_assign(&mut self, rhs: Ticks) {
        self.0 += rhs.0;
    }
}

impl Sub for Ticks {
    type Output = Ticks;
    fn sub(self, rhs: Ticks) -> Ticks {
        Ticks(self.0 - rhs.0)
    }
}

/// Formats as microseconds with exactly one decimal, e.g. `486.3`.
impl fmt::Display for Ticks {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid microsecond value {0:?} (expected at most one decimal)")]
pub struct ParseTicksError(pub String);

/// Parses a decimal microsecond value with at most one fractional digit.
impl FromStr for Ticks {
    type Err = ParseTicksError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTicksError(s.to_string());
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 1 {
            return Err(err());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let whole: i64 = int.parse().map_err(|_| err())?;
        let tenth: i64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| err())? };
        let v = whole.checked_mul(10).and_then(|w| w.checked_add(tenth)).ok_or_else(err)?;
        Ok(Ticks(if neg { -v } else { v }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantizes_to_tenths() {
        assert_eq!(Ticks::from_us(36.5), Ticks(365));
        assert_eq!(Ticks::from_us(486.30), Ticks(4863));
        assert_eq!(Ticks::from_us(185.86), Ticks(1859));
        assert_eq!(Ticks(4863).to_string(), "486.3");
        assert_eq!(Ticks(-5).to_string(), "-0.5");
    }

    #[test]
    fn rejects_extra_precision() {
        assert!("1.25".parse::<Ticks>().is_err());
        assert!("".parse::<Ticks>().is_err());
        assert!("1.".parse::<Ticks>().is_ok());
    }

    proptest! {
        #[test]
        fn display_parse_round_trip(raw in -10_000_000i64..10_000_000) {
            let t = Ticks(raw);
            prop_assert_eq!(t.to_string().parse::<Ticks>().unwrap(), t);
        }
    }
}
