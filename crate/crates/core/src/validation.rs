//! Cross-dataset checks for population series: district aggregation,
//! determination coefficients, hour-on-hour change and diurnal shape.

use crate::numeric::{pearson, CompensatedSum};
use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("tract {0} has no district")]
    UnmappedTract(String),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("series has zero variance or fewer than two points")]
    ZeroVariance,
    #[error("value {value} at index {index} is not positive")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("expected 24 hourly values, got {0}")]
    WrongLength(usize),
    #[error("invalid diurnal windows: {0}")]
    DiurnalConfig(String),
}

/// Values keyed by hour, hours strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlySeries {
    pub key: String,
    pub points: Vec<(NaiveDateTime, f64)>,
}

impl HourlySeries {
    /// Sorts by hour, summing repeated hours.
    pub fn from_points(
        key: impl Into<String>,
        points: impl IntoIterator<Item = (NaiveDateTime, f64)>,
    ) -> Self {
        let mut acc: BTreeMap<NaiveDateTime, CompensatedSum> = BTreeMap::new();
        for (h, v) in points {
            acc.entry(h).or_default().add(v);
        }
        Self {
            key: key.into(),
            points: acc.into_iter().map(|(h, s)| (h, s.total())).collect(),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }

    pub fn get(&self, hour: &NaiveDateTime) -> Option<f64> {
        self.points
            .binary_search_by(|p| p.0.cmp(hour))
            .ok()
            .map(|i| self.points[i].1)
    }
}

/// Sums tract series into one series per district, ordered by district id.
pub fn aggregate_to_district(
    tracts: &[HourlySeries],
    district_of: &BTreeMap<String, String>,
) -> Result<Vec<HourlySeries>, ValidationError> {
    let mut grouped: BTreeMap<&str, Vec<(NaiveDateTime, f64)>> = BTreeMap::new();
    for s in tracts {
        let d = district_of
            .get(&s.key)
            .ok_or_else(|| ValidationError::UnmappedTract(s.key.clone()))?;
        grouped.entry(d).or_default().extend(s.points.iter().copied());
    }
    Ok(grouped
        .into_iter()
        .map(|(d, pts)| HourlySeries::from_points(d, pts))
        .collect())
}

/// Squared Pearson correlation.
pub fn r_squared(a: &[f64], b: &[f64]) -> Result<f64, ValidationError> {
    if a.len() != b.len() {
        return Err(ValidationError::LengthMismatch(a.len(), b.len()));
    }
    let r = pearson(a, b).ok_or(ValidationError::ZeroVariance)?;
    Ok(r * r)
}

/// Percent change from the previous value, one shorter than the input.
pub fn pct_change(values: &[f64]) -> Result<Vec<f64>, ValidationError> {
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(ValidationError::NonPositiveValue { index, value });
    }
    Ok(values.windows(2).map(|w| (w[1] - w[0]) / w[0] * 100.0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiurnalClass {
    DaytimePeak,
    NighttimePeak,
    Flat,
}

impl DiurnalClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiurnalClass::DaytimePeak => "DAYTIME_PEAK",
            DiurnalClass::NighttimePeak => "NIGHTTIME_PEAK",
            DiurnalClass::Flat => "FLAT",
        }
    }
}

impl fmt::Display for DiurnalClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hour-of-day windows `[start, end)`, wrapping past midnight when
/// `end <= start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiurnalConfig {
    pub day: (u32, u32),
    pub night: (u32, u32),
    /// Relative excess one window's mean needs over the other's.
    pub margin: f64,
}

impl Default for DiurnalConfig {
    fn default() -> Self {
        Self {
            day: (8, 18),
            night: (20, 6),
            margin: 0.10,
        }
    }
}

fn window_hours((start, end): (u32, u32)) -> Vec<usize> {
    let mut h = start;
    let mut out = Vec::new();
    loop {
        out.push(h as usize);
        h = (h + 1) % 24;
        if h == end {
            return out;
        }
    }
}

impl DiurnalConfig {
    fn check(&self) -> Result<(), ValidationError> {
        for (name, (s, e)) in [("day", self.day), ("night", self.night)] {
            if s > 23 || e > 23 || s == e {
                return Err(ValidationError::DiurnalConfig(format!("{name} window {s}..{e}")));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(ValidationError::DiurnalConfig(format!("margin {}", self.margin)));
        }
        let day = window_hours(self.day);
        if window_hours(self.night).iter().any(|h| day.contains(h)) {
            return Err(ValidationError::DiurnalConfig(
                "day and night windows overlap".into(),
            ));
        }
        Ok(())
    }
}

/// Classifies 24 hour-of-day values (index = hour).
pub fn classify_diurnal(profile: &[f64], config: &DiurnalConfig) -> Result<DiurnalClass, ValidationError> {
    if profile.len() != 24 {
        return Err(ValidationError::WrongLength(profile.len()));
    }
    config.check()?;
    let mean_of = |hours: Vec<usize>| {
        let n = hours.len() as f64;
        hours
            .into_iter()
            .map(|h| profile[h])
            .collect::<CompensatedSum>()
            .total()
            / n
    };
    let day = mean_of(window_hours(config.day));
    let night = mean_of(window_hours(config.night));
    let k = 1.0 + config.margin;
    Ok(if day > night * k {
        DiurnalClass::DaytimePeak
    } else if night > day * k {
        DiurnalClass::NighttimePeak
    } else {
        DiurnalClass::Flat
    })
}

/// Mean value per hour of day; hours never observed are 0.
pub fn diurnal_profile(series: &HourlySeries) -> [f64; 24] {
    let mut sums: [CompensatedSum; 24] = Default::default();
    let mut counts = [0usize; 24];
    for (h, v) in &series.points {
        let k = h.hour() as usize;
        sums[k].add(*v);
        counts[k] += 1;
    }
    std::array::from_fn(|k| {
        if counts[k] == 0 {
            0.0
        } else {
            sums[k].total() / counts[k] as f64
        }
    })
}

/// Values of `a` and `b` over their common hours.
pub fn align(a: &HourlySeries, b: &HourlySeries) -> (Vec<f64>, Vec<f64>) {
    a.points
        .iter()
        .filter_map(|(h, va)| b.get(h).map(|vb| (*va, vb)))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;

    fn series(key: &str, values: &[f64]) -> HourlySeries {
        let start = parse_timestamp("2024-03-01T00:00:00").unwrap();
        HourlySeries::from_points(
            key,
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (start + chrono::Duration::hours(i as i64), *v)),
        )
    }

    #[test]
    fn district_sums() {
        let map: BTreeMap<String, String> = [("a", "D"), ("b", "D"), ("c", "E")]
            .into_iter()
            .map(|(t, d)| (t.into(), d.into()))
            .collect();
        let out = aggregate_to_district(
            &[
                series("a", &[10.0, 20.0]),
                series("b", &[5.0, 5.0]),
                series("c", &[1.0, 2.0]),
            ],
            &map,
        )
        .unwrap();
        assert_eq!(out[0].key, "D");
        assert_eq!(out[0].values(), [15.0, 25.0]);
        assert_eq!(out[1].values(), [1.0, 2.0]);
        assert_eq!(
            aggregate_to_district(&[series("z", &[1.0])], &map),
            Err(ValidationError::UnmappedTract("z".into()))
        );
    }

    #[test]
    fn r_squared_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(r_squared(&a, &a).unwrap(), 1.0);
        let b: Vec<f64> = a.iter().map(|x| 3.0 * x + 7.0).collect();
        assert!((r_squared(&a, &b).unwrap() - 1.0).abs() <= 1e-12);
        // Sxy = 3, Sxx = 2, Syy = 14/3, so r² = 9 / (28/3) = 27/28.
        let got = r_squared(&a, &[1.0, 2.0, 4.0]).unwrap();
        assert!((got - 27.0 / 28.0).abs() < 1e-12);
        assert!((got - 0.9643).abs() < 1e-4);
        assert_eq!(r_squared(&a, &[1.0]), Err(ValidationError::LengthMismatch(3, 1)));
        assert_eq!(r_squared(&a, &[2.0; 3]), Err(ValidationError::ZeroVariance));
    }

    #[test]
    fn pct_change_examples() {
        assert_eq!(pct_change(&[100.0, 110.0]).unwrap(), [10.0]);
        assert_eq!(pct_change(&[7.0; 4]).unwrap(), [0.0; 3]);
        let got = pct_change(&[100.0, 110.0, 99.0]).unwrap();
        assert!((got[0] - 10.0).abs() < 1e-12 && (got[1] + 10.0).abs() < 1e-12);
        let geo: Vec<f64> = (0..6).map(|i| 50.0 * 1.2f64.powi(i)).collect();
        assert!(pct_change(&geo).unwrap().iter().all(|p| (p - 20.0).abs() < 1e-9));
        assert!(matches!(
            pct_change(&[1.0, 0.0]),
            Err(ValidationError::NonPositiveValue { index: 1, .. })
        ));
    }

    #[test]
    fn diurnal_classes() {
        let cfg = DiurnalConfig::default();
        let day: Vec<f64> = (0..24)
            .map(|h| if (8..18).contains(&h) { 200.0 } else { 100.0 })
            .collect();
        let night: Vec<f64> = day.iter().map(|v| 300.0 - v).collect();
        assert_eq!(classify_diurnal(&day, &cfg).unwrap(), DiurnalClass::DaytimePeak);
        assert_eq!(
            classify_diurnal(&night, &cfg).unwrap(),
            DiurnalClass::NighttimePeak
        );
        assert_eq!(classify_diurnal(&[5.0; 24], &cfg).unwrap(), DiurnalClass::Flat);
        assert_eq!(
            classify_diurnal(&[5.0; 23], &cfg),
            Err(ValidationError::WrongLength(23))
        );
        let bad = DiurnalConfig { day: (5, 18), ..cfg };
        assert!(matches!(
            classify_diurnal(&day, &bad),
            Err(ValidationError::DiurnalConfig(_))
        ));
    }

    #[test]
    fn profile_averages_days() {
        let vals: Vec<f64> = (0..48).map(|i| if i < 24 { 1.0 } else { 3.0 }).collect();
        let p = diurnal_profile(&series("t", &vals));
        assert_eq!(p, [2.0; 24]);
    }
}
