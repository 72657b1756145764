//! Local civil timestamps and the closed-open study window.

use chrono::{Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Wire format for every timestamp column: `2023-01-05T09:00:03`.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Parses the fixed 19-byte layout of [`TIMESTAMP_FORMAT`].
pub fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    let b = text.trim().as_bytes();
    if b.len() != 19 || b[4] != b'-' || b[7] != b'-' || b[10] != b'T' || b[13] != b':' || b[16] != b':' {
        return None;
    }
    let num = |range: std::ops::Range<usize>| -> Option<u32> {
        b[range].iter().try_fold(0u32, |acc, &c| {
            c.is_ascii_digit().then(|| acc * 10 + u32::from(c - b'0'))
        })
    };
    let date = NaiveDate::from_ymd_opt(num(0..4)? as i32, num(5..7)?, num(8..10)?)?;
    date.and_hms_opt(num(11..13)?, num(14..16)?, num(17..19)?)
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

/// Truncates to the start of the containing hour.
pub fn floor_hour(ts: &NaiveDateTime) -> NaiveDateTime {
    ts.date()
        .and_hms_opt(ts.hour(), 0, 0)
        .expect("hour of an existing timestamp is valid")
}

pub fn is_hour_aligned(ts: &NaiveDateTime) -> bool {
    ts.minute() == 0 && ts.second() == 0 && ts.nanosecond() == 0
}

pub fn midnight(ts: &NaiveDateTime) -> NaiveDateTime {
    ts.date().and_hms_opt(0, 0, 0).expect("midnight exists")
}

/// Closed-open interval `[start, end)` of whole hours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    #[serde(with = "ts_serde")]
    pub start: NaiveDateTime,
    #[serde(with = "ts_serde")]
    pub end: NaiveDateTime,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WindowError {
    #[error("window bounds must be hour aligned: {0}")]
    NotHourAligned(String),
    #[error("window end {end} is not after start {start}")]
    Empty { start: String, end: String },
}

impl StudyWindow {
    pub fn new(start: NaiveDateTime, end: NaiveDateTime) -> Result<Self, WindowError> {
        for ts in [&start, &end] {
            if !is_hour_aligned(ts) {
                return Err(WindowError::NotHourAligned(format_timestamp(ts)));
            }
        }
        if end <= start {
            return Err(WindowError::Empty {
                start: format_timestamp(&start),
                end: format_timestamp(&end),
            });
        }
        Ok(Self { start, end })
    }

    /// Window of `days` whole days starting at `start`.
    pub fn days(start: NaiveDateTime, days: u32) -> Result<Self, WindowError> {
        Self::new(start, start + Duration::days(i64::from(days)))
    }

    pub fn contains(&self, ts: &NaiveDateTime) -> bool {
        *ts >= self.start && *ts < self.end
    }

    pub fn hour_count(&self) -> usize {
        (self.end - self.start).num_hours() as usize
    }

    pub fn hours(&self) -> Vec<NaiveDateTime> {
        (0..self.hour_count())
            .map(|h| self.start + Duration::hours(h as i64))
            .collect()
    }

    /// Position of an hour start inside the window.
    pub fn hour_index(&self, hour: &NaiveDateTime) -> Option<usize> {
        if !self.contains(hour) || !is_hour_aligned(hour) {
            return None;
        }
        Some((*hour - self.start).num_hours() as usize)
    }
}

impl fmt::Display for StudyWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {})",
            format_timestamp(&self.start),
            format_timestamp(&self.end)
        )
    }
}

/// Serde adapter writing timestamps in [`TIMESTAMP_FORMAT`].
pub mod ts_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let text = String::deserialize(d)?;
        parse_timestamp(&text).ok_or_else(|| serde::de::Error::custom(format!("bad timestamp {text:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn window_hours_are_closed_open() {
        let w = StudyWindow::new(ts("2023-01-01T00:00:00"), ts("2023-01-01T03:00:00")).unwrap();
        assert_eq!(w.hour_count(), 3);
        assert!(w.contains(&ts("2023-01-01T02:59:59")));
        assert!(!w.contains(&ts("2023-01-01T03:00:00")));
        assert_eq!(w.hour_index(&ts("2023-01-01T02:00:00")), Some(2));
    }

    #[test]
    fn rejects_unaligned_and_empty_windows() {
        assert!(StudyWindow::new(ts("2023-01-01T00:30:00"), ts("2023-01-01T03:00:00")).is_err());
        assert!(StudyWindow::new(ts("2023-01-01T03:00:00"), ts("2023-01-01T03:00:00")).is_err());
    }

    #[test]
    fn parse_rejects_other_layouts() {
        assert!(parse_timestamp("2023-01-05 09:00:03").is_none());
        assert!(parse_timestamp("2023-01-05T09:00").is_none());
        assert!(parse_timestamp("2023-02-30T09:00:00").is_none());
        assert!(parse_timestamp("2023-01-05T24:00:00").is_none());
        let ts = parse_timestamp("2023-01-05T09:00:03").unwrap();
        assert_eq!(format_timestamp(&ts), "2023-01-05T09:00:03");
    }

    #[test]
    fn floor_hour_truncates() {
        assert_eq!(floor_hour(&ts("2023-01-05T09:59:57")), ts("2023-01-05T09:00:00"));
    }
}
