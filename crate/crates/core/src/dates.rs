//! Calendar quarters and months.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::GapError;

/// A calendar quarter, e.g. 2020Q1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Quarter {
    pub year: i32,
    /// 1..=4
    pub quarter: u8,
}

impl Quarter {
    pub fn new(year: i32, quarter: u8) -> Self {
        assert!((1..=4).contains(&quarter), "quarter must be in 1..=4");
        Quarter { year, quarter }
    }

    /// Number of quarters since year 0 Q1.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 4 + (self.quarter as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        let year = ord.div_euclid(4) as i32;
        let quarter = (ord.rem_euclid(4) + 1) as u8;
        Quarter { year, quarter }
    }

    pub fn offset(self, k: i64) -> Self {
        Quarter::from_ordinal(self.ordinal() + k)
    }

    /// Quarters from `self` to `other` (positive when `other` is later).
    pub fn distance(self, other: Quarter) -> i64 {
        other.ordinal() - self.ordinal()
    }

    /// Consecutive quarters starting at `start`.
    pub fn range(start: Quarter, len: usize) -> Vec<Quarter> {
        (0..len as i64).map(|k| start.offset(k)).collect()
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.quarter)
    }
}

impl FromStr for Quarter {
    type Err = GapError;

    /// Accepts `2020Q1`, `2020-Q1`, `2020:Q1`, `2020 Q1` and ISO dates
    /// (`2020-02-15`), the latter mapped to their calendar quarter.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || GapError::data(format!("cannot parse quarter from '{s}'"));
        if let Some(pos) = t.find(['Q', 'q']) {
            let year: i32 = t[..pos]
                .trim_end_matches([':', '-', ' '])
                .parse()
                .map_err(|_| bad())?;
            let q: u8 = t[pos + 1..].parse().map_err(|_| bad())?;
            if !(1..=4).contains(&q) {
                return Err(bad());
            }
            return Ok(Quarter::new(year, q));
        }
        let m: Month = t.parse().map_err(|_| bad())?;
        Ok(m.quarter())
    }
}

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    /// 1..=12
    pub month: u8,
}

impl Month {
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Month {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u8,
        }
    }

    pub fn quarter(self) -> Quarter {
        Quarter::new(self.year, (self.month - 1) / 3 + 1)
    }

    /// Position inside the quarter: 0, 1 or 2.
    pub fn position_in_quarter(self) -> usize {
        ((self.month - 1) % 3) as usize
    }
}

impl FromStr for Month {
    type Err = GapError;

    /// Accepts `YYYY-MM` and `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GapError::data(format!("cannot parse month from '{s}'"));
        let mut parts = s.trim().split(['-', '/']);
        let year: i32 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let month: u8 = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(Month { year, month })
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_quarter_formats() {
        let q = Quarter::new(2020, 1);
        for s in ["2020Q1", "2020-Q1", "2020:Q1", "2020 q1", "2020-02-29", "2020-03"] {
            assert_eq!(s.parse::<Quarter>().unwrap(), q, "{s}");
        }
        assert!("2020Q5".parse::<Quarter>().is_err());
        assert!("garbage".parse::<Quarter>().is_err());
    }

    #[test]
    fn ordinal_round_trip() {
        let q = Quarter::new(2019, 4);
        assert_eq!(q.offset(1), Quarter::new(2020, 1));
        assert_eq!(Quarter::from_ordinal(q.ordinal()), q);
        assert_eq!(Quarter::new(2001, 1).distance(Quarter::new(2025, 1)), 96);
        assert_eq!(q.to_string(), "2019Q4");
    }
}
