//! Weekly time grid anchored to a fixed weekday.
//!
//! Every slot date shares the weekday of the grid start, one slot per week.
//! A slot "owns" the 7-day window ending on its date, i.e. `[date - 6, date]`.

use crate::error::{Error, Result};
use chrono::{Datelike, Duration, NaiveDate, Weekday};

pub const DAYS_PER_WEEK: i64 = 7;

/// Regular weekly grid: `length` slots starting at `start`, stepping 7 days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeGrid {
    start: NaiveDate,
    length: usize,
}

impl TimeGrid {
    pub fn new(start: NaiveDate, length: usize) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidInput("grid length must be >= 1".into()));
        }
        Ok(Self { start, length })
    }

    /// Smallest grid whose slot windows cover `[first, last]`, anchored to `weekday`.
    pub fn covering(first: NaiveDate, last: NaiveDate, weekday: Weekday) -> Result<Self> {
        if last < first {
            return Err(Error::InvalidInput(format!(
                "date span end {last} precedes start {first}"
            )));
        }
        let start = next_weekday_on_or_after(first, weekday);
        let span_days = (last - start).num_days();
        let length = if span_days <= 0 {
            1
        } else {
            (span_days + DAYS_PER_WEEK - 1) / DAYS_PER_WEEK + 1
        } as usize;
        Self::new(start, length)
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn len(&self) -> usize {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        false // length >= 1 by construction
    }

    pub fn anchor_weekday(&self) -> Weekday {
        self.start.weekday()
    }

    pub fn slot_date(&self, slot: usize) -> NaiveDate {
        self.start + Duration::days(slot as i64 * DAYS_PER_WEEK)
    }

    pub fn last_date(&self) -> NaiveDate {
        self.slot_date(self.length - 1)
    }

    /// Slot whose window `[slot_date - 6, slot_date]` contains `date`, if inside the grid span.
    pub fn slot_containing(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        let slot = (offset + DAYS_PER_WEEK - 1).div_euclid(DAYS_PER_WEEK);
        if slot < 0 || slot as usize >= self.length {
            None
        } else {
            Some(slot as usize)
        }
    }

    /// Slot whose date equals `date` exactly, if any.
    pub fn slot_of_date(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        if offset < 0 || offset % DAYS_PER_WEEK != 0 {
            return None;
        }
        let slot = (offset / DAYS_PER_WEEK) as usize;
        (slot < self.length).then_some(slot)
    }

    /// ISO week of the year for a slot, with week 53 folded into 52.
    pub fn week_of_year(&self, slot: usize) -> u32 {
        week_of_year(self.slot_date(slot))
    }

    /// Grid restricted to the first `length` slots.
    pub fn truncated(&self, length: usize) -> Result<Self> {
        if length == 0 || length > self.length {
            return Err(Error::InvalidInput(format!(
                "cannot truncate grid of length {} to {length}",
                self.length
            )));
        }
        Ok(Self {
            start: self.start,
            length,
        })
    }
}

/// ISO week index of a date with week 53 folded into week 52.
pub fn week_of_year(date: NaiveDate) -> u32 {
    let week = date.iso_week().week();
    if week == 53 {
        52
    } else {
        week
    }
}

pub fn next_weekday_on_or_after(date: NaiveDate, weekday: Weekday) -> NaiveDate {
    let ahead = (7 + weekday.num_days_from_monday() as i64
        - date.weekday().num_days_from_monday() as i64)
        % 7;
    date + Duration::days(ahead)
}

pub fn parse_weekday(s: &str) -> Result<Weekday> {
    s.parse::<Weekday>()
        .map_err(|_| Error::Config(format!("unrecognized weekday {s:?}")))
}
