//! Virtual time as integer nanoseconds.
//!
//! All simulator arithmetic happens on integers so that runs reproduce bit
//! for bit; seconds appear only at the configuration and reporting edges.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub};

/// A point in virtual time, or a span, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VTime(u64);

impl VTime {
    pub const ZERO: VTime = VTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        VTime(ns)
    }

    /// Converts seconds to nanoseconds, rounding to the nearest tick.
    pub fn from_secs_f64(secs: f64) -> Self {
        debug_assert!(secs >= 0.0, "virtual durations cannot be negative");
        VTime((secs * 1e9).round() as u64)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e9
    }

    /// Scales a duration by a dimensionless factor, rounding to a tick.
    pub fn scaled(self, factor: f64) -> Self {
        debug_assert!(factor >= 0.0);
        VTime((self.0 as f64 * factor).round() as u64)
    }

    pub fn max(self, other: VTime) -> VTime {
        VTime(self.0.max(other.0))
    }

    pub fn saturating_sub(self, other: VTime) -> VTime {
        VTime(self.0.saturating_sub(other.0))
    }
}

impl Add for VTime {
    type Output = VTime;
    fn add(self, rhs: VTime) -> VTime {
        VTime(self.0 + rhs.0)
    }
}

impl AddAssign for VTime {
    fn add_assign(&mut self, rhs: VTime) {
        self.0 += rhs.0;
    }
}

impl Sub for VTime {
    type Output = VTime;
    fn sub(self, rhs: VTime) -> VTime {
        VTime(self.0 - rhs.0)
    }
}

impl Sum for VTime {
    fn sum<I: Iterator<Item = VTime>>(iter: I) -> VTime {
        VTime(iter.map(|t| t.0).sum())
    }
}

impl fmt::Display for VTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversion_round_trips_on_tick_values() {
        let t = VTime::from_secs_f64(0.1);
        assert_eq!(t.as_nanos(), 100_000_000);
        assert_eq!(t.as_secs_f64(), 0.1);
    }

    #[test]
    fn scaling_rounds_to_nearest_tick() {
        assert_eq!(VTime::from_nanos(10).scaled(2.5), VTime::from_nanos(25));
        assert_eq!(VTime::from_nanos(3).scaled(0.5), VTime::from_nanos(2));
    }
}
