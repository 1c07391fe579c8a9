//! ISO-8601 week labels used as the time axis of every series.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ISO-8601 (year, week) pair. Ordering is chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

/// Number of ISO weeks (52 or 53) in `year`.
pub fn weeks_in_year(year: i32) -> u32 {
    if NaiveDate::from_isoywd_opt(year, 53, Weekday::Mon).is_some() {
        53
    } else {
        52
    }
}

impl IsoWeek {
    /// Validated constructor.
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if week == 0 || week > weeks_in_year(year) {
            return Err(Error::InvalidWeek { year, week });
        }
        Ok(Self { year, week })
    }

    pub fn from_date(date: NaiveDate) -> Self {
        let iso = date.iso_week();
        Self {
            year: iso.year(),
            week: iso.week(),
        }
    }

    /// Monday of this week.
    pub fn monday(self) -> NaiveDate {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
            .expect("IsoWeek is always a valid ISO week")
    }

    pub fn succ(self) -> Self {
        if self.week >= weeks_in_year(self.year) {
            Self {
                year: self.year + 1,
                week: 1,
            }
        } else {
            Self {
                year: self.year,
                week: self.week + 1,
            }
        }
    }

    /// Every week from `self` to `last`, both inclusive. Empty if `last < self`.
    pub fn range_inclusive(self, last: IsoWeek) -> Vec<IsoWeek> {
        let mut out = Vec::new();
        let mut cur = self;
        while cur <= last {
            out.push(cur);
            cur = cur.succ();
        }
        out
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

/// Parses `YYYY-Www` (e.g. `2016-W36`) or `YYYY-ww`.
impl FromStr for IsoWeek {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse ISO week {s:?}, expected YYYY-Www"));
        let (y, w) = s.trim().split_once('-').ok_or_else(bad)?;
        let w = w.strip_prefix('W').or_else(|| w.strip_prefix('w')).unwrap_or(w);
        let year: i32 = y.parse().map_err(|_| bad())?;
        let week: u32 = w.parse().map_err(|_| bad())?;
        IsoWeek::new(year, week)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_years() {
        assert_eq!(weeks_in_year(2009), 53);
        assert_eq!(weeks_in_year(2015), 53);
        assert_eq!(weeks_in_year(2020), 53);
        assert_eq!(weeks_in_year(2016), 52);
        assert_eq!(weeks_in_year(2018), 52);
    }

    #[test]
    fn succ_wraps_at_year_end() {
        assert_eq!(IsoWeek::new(2016, 52).unwrap().succ(), IsoWeek::new(2017, 1).unwrap());
        assert_eq!(IsoWeek::new(2015, 52).unwrap().succ(), IsoWeek::new(2015, 53).unwrap());
        assert_eq!(IsoWeek::new(2015, 53).unwrap().succ(), IsoWeek::new(2016, 1).unwrap());
    }

    #[test]
    fn rejects_week_53_in_short_year() {
        assert!(IsoWeek::new(2016, 53).is_err());
        assert!(IsoWeek::new(2016, 0).is_err());
    }

    #[test]
    fn parse_and_display() {
        let w: IsoWeek = "2016-W36".parse().unwrap();
        assert_eq!(w, IsoWeek { year: 2016, week: 36 });
        assert_eq!(w.to_string(), "2016-W36");
        assert_eq!("2016-7".parse::<IsoWeek>().unwrap().week, 7);
        assert!("2016".parse::<IsoWeek>().is_err());
    }

    #[test]
    fn from_date_uses_iso_year() {
        // 2010-01-03 is a Sunday that belongs to 2009-W53.
        let d = NaiveDate::from_ymd_opt(2010, 1, 3).unwrap();
        assert_eq!(IsoWeek::from_date(d), IsoWeek { year: 2009, week: 53 });
        let d = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        assert_eq!(IsoWeek::from_date(d), IsoWeek { year: 2010, week: 1 });
    }
}
