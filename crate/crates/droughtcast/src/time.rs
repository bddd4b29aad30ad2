//! Calendar plumbing for monthly-cadence panels.
//!
//! Dates are `(year, month)` pairs with optional dekads (three 10-day
//! periods per month). There is no finer time resolution anywhere in the
//! crate.

use serde::{Deserialize, Serialize};

/// A calendar month, e.g. `2010-05`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MonthStamp {
    pub year: i32,
    /// 1-based calendar month.
    pub month: u8,
}

impl MonthStamp {
    pub fn new(year: i32, month: u8) -> Self {
        debug_assert!((1..=12).contains(&month), "month out of range: {month}");
        Self { year, month }
    }

    /// Linear month index: consecutive months map to consecutive integers.
    pub fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    pub fn from_index(index: i64) -> Self {
        let year = index.div_euclid(12);
        let month = index.rem_euclid(12) + 1;
        Self {
            year: year as i32,
            month: month as u8,
        }
    }

    /// The stamp `offset` months after `self` (negative = before).
    pub fn plus(self, offset: i64) -> Self {
        Self::from_index(self.index() + offset)
    }
}

impl std::fmt::Display for MonthStamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Inclusive range of calendar years, e.g. a climatology baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearRange {
    pub start: i32,
    pub end: i32,
}

impl YearRange {
    pub fn new(start: i32, end: i32) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1).max(0) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

impl std::fmt::Display for YearRange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for year in [-1, 0, 1999, 2010] {
            for month in 1..=12u8 {
                let stamp = MonthStamp::new(year, month);
                assert_eq!(MonthStamp::from_index(stamp.index()), stamp);
            }
        }
    }

    #[test]
    fn plus_crosses_year_boundaries() {
        let stamp = MonthStamp::new(2010, 11);
        assert_eq!(stamp.plus(3), MonthStamp::new(2011, 2));
        assert_eq!(stamp.plus(-11), MonthStamp::new(2009, 12));
        assert_eq!(stamp.plus(0), stamp);
    }

    #[test]
    fn year_range_membership() {
        let range = YearRange::new(2003, 2013);
        assert!(range.contains(2003));
        assert!(range.contains(2013));
        assert!(!range.contains(2014));
        assert_eq!(range.len(), 11);
    }
}
