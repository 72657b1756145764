//! 3-second readings to hourly equivalent continuous sound level.
//!
//! Samples are first filtered with a strict `level > threshold` retention
//! rule, then the retained readings of each terminal-hour are energy-averaged:
//!
//! ```text
//! LAeq = 10 · log10( (1/N) · Σ 10^(L_k / 10) )
//! ```
//!
//! The sum runs in linear power units relative to the hour's maximum level,
//! with compensated summation in input order.

use crate::ingest::{validate::completeness_fraction, SplSample};
use crate::numeric::CompensatedSum;
use crate::time::{floor_hour, format_timestamp, ts_serde};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Readings at or below this level carry no measured burden.
pub const DEFAULT_RETENTION_DBA: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcousticsError {
    #[error("cannot average an empty set of levels")]
    EmptyInput,
    #[error("level {0} is not finite")]
    NonFinite(f64),
}

/// Hourly LAeq at one terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyLaeq {
    pub nmt_id: String,
    #[serde(with = "ts_serde")]
    pub hour_start: NaiveDateTime,
    /// `None` when no sample in the hour was retained.
    pub laeq: Option<f64>,
    pub n_retained: usize,
    /// Raw sample count over the nominal 1200, capped at 1.
    pub completeness: f64,
}

/// Samples strictly louder than `threshold`, in input order. A threshold of
/// `f64::NEG_INFINITY` disables filtering.
pub fn retain_above(samples: &[SplSample], threshold: f64) -> Vec<SplSample> {
    samples.iter().filter(|s| s.level > threshold).cloned().collect()
}

/// Energy mean of A-weighted levels.
pub fn laeq(levels: &[f64]) -> Result<f64, AcousticsError> {
    let max = levels.iter().try_fold(f64::NEG_INFINITY, |m, &l| {
        if l.is_finite() {
            Ok(m.max(l))
        } else {
            Err(AcousticsError::NonFinite(l))
        }
    })?;
    if levels.is_empty() {
        return Err(AcousticsError::EmptyInput);
    }
    let mut power = CompensatedSum::new();
    for &l in levels {
        power.add(10f64.powf((l - max) / 10.0));
    }
    let mean_power = power.total() / levels.len() as f64;
    let result = max + 10.0 * mean_power.log10();
    Ok(result.min(max))
}

/// One record per (terminal, hour) that has at least one sample, sorted by
/// terminal then hour. Hours whose samples are all at or below `retention`
/// carry `laeq: None` and `n_retained: 0`.
pub fn hourly_series(samples: &[SplSample], retention: f64) -> Vec<HourlyLaeq> {
    let mut groups: BTreeMap<(&str, NaiveDateTime), (usize, Vec<f64>)> = BTreeMap::new();
    for s in samples {
        let entry = groups
            .entry((s.nmt_id.as_str(), floor_hour(&s.timestamp)))
            .or_default();
        entry.0 += 1;
        if s.level > retention {
            entry.1.push(s.level);
        }
    }
    groups
        .into_iter()
        .map(|((nmt, hour), (total, retained))| HourlyLaeq {
            nmt_id: nmt.to_string(),
            hour_start: hour,
            laeq: laeq(&retained).ok(),
            n_retained: retained.len(),
            completeness: completeness_fraction(total),
        })
        .collect()
}

/// `hourly_laeq.csv` rows.
pub fn to_table(series: &[HourlyLaeq]) -> crate::output::Table {
    use crate::output::Cell;
    let mut table =
        crate::output::Table::new(["nmt_id", "hour_start", "laeq_dba", "n_retained", "completeness"]);
    for h in series {
        table.push(vec![
            Cell::text(&h.nmt_id),
            Cell::text(format_timestamp(&h.hour_start)),
            Cell::opt_num(h.laeq),
            Cell::Int(h.n_retained as i64),
            Cell::Num(h.completeness),
        ]);
    }
    table
}

/// Reads back the `hourly_laeq.csv` layout written by [`to_table`].
pub fn from_csv(source: &[u8]) -> Result<Vec<HourlyLaeq>, crate::output::TableError> {
    let table = crate::output::Table::read_csv(
        source,
        &["nmt_id", "hour_start", "laeq_dba", "n_retained", "completeness"],
    )?;
    table
        .rows()
        .map(|row| {
            Ok(HourlyLaeq {
                nmt_id: row.text(0)?.to_string(),
                hour_start: row.timestamp(1)?,
                laeq: row.opt_num(2)?,
                n_retained: row.int(3)? as usize,
                completeness: row.num(4)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use chrono::Duration;
    use proptest::prelude::*;

    /// Direct, unscaled evaluation of the energy-mean definition.
    fn oracle(levels: &[f64]) -> f64 {
        let s: f64 = levels.iter().map(|l| 10f64.powf(l / 10.0)).sum();
        10.0 * (s / levels.len() as f64).log10()
    }

    fn hour_of(nmt: &str, start: &str, levels: &[f64]) -> Vec<SplSample> {
        let h = parse_timestamp(start).unwrap();
        levels
            .iter()
            .enumerate()
            .map(|(k, &level)| SplSample {
                nmt_id: nmt.into(),
                timestamp: h + Duration::seconds(3 * k as i64),
                level,
            })
            .collect()
    }

    fn levels_of(s: &[SplSample]) -> Vec<f64> {
        s.iter().map(|x| x.level).collect()
    }

    #[test]
    fn retention_is_strict() {
        let s = hour_of("N1", "2023-01-05T09:00:00", &[59.9, 60.0, 60.1]);
        assert_eq!(levels_of(&retain_above(&s, 60.0)), vec![60.1]);
        let quiet = hour_of("N1", "2023-01-05T09:00:00", &[40.0, 55.5, 60.0]);
        assert!(retain_above(&quiet, 60.0).is_empty());
        assert_eq!(retain_above(&s, f64::NEG_INFINITY), s);
    }

    #[test]
    fn laeq_reference_values() {
        assert_eq!(laeq(&[70.0; 1200]).unwrap(), 70.0);
        // 10·log10((10^6 + 10^7)/2) = 67.40362689...
        let v = laeq(&[60.0, 70.0]).unwrap();
        assert!((v - 67.4036).abs() < 1e-3, "{v}");
        assert!((v - oracle(&[60.0, 70.0])).abs() < 1e-12);
        assert_eq!(laeq(&[]), Err(AcousticsError::EmptyInput));
        assert!(matches!(laeq(&[f64::NAN]), Err(AcousticsError::NonFinite(_))));
    }

    #[test]
    fn constant_hour() {
        let s = hour_of("N1", "2023-01-05T09:00:00", &[72.0; 1200]);
        let h = hourly_series(&s, 60.0);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].laeq, Some(72.0));
        assert_eq!(h[0].n_retained, 1200);
        assert_eq!(h[0].completeness, 1.0);
    }

    #[test]
    fn half_retained_hour() {
        let mut levels = vec![65.0; 600];
        levels.extend((0..600).map(|k| 45.0 + (k % 15) as f64));
        let s = hour_of("N1", "2023-01-05T09:00:00", &levels);
        let h = hourly_series(&s, 60.0);
        let expected = oracle(&levels_of(&retain_above(&s, 60.0)));
        assert_eq!(h[0].n_retained, 600);
        assert!((h[0].laeq.unwrap() - 65.0).abs() < 1e-12);
        assert!((h[0].laeq.unwrap() - expected).abs() < 1e-12);
        assert_eq!(h[0].completeness, 1.0);
    }

    #[test]
    fn quiet_hour_is_absent() {
        let s = hour_of("N1", "2023-01-05T03:00:00", &[50.0; 1200]);
        let h = hourly_series(&s, 60.0);
        assert_eq!(h[0].laeq, None);
        assert_eq!(h[0].n_retained, 0);
    }

    #[test]
    fn series_groups_by_terminal_and_hour() {
        let mut s = hour_of("N2", "2023-01-05T10:00:00", &[70.0; 10]);
        s.extend(hour_of("N1", "2023-01-05T10:00:00", &[66.0; 600]));
        s.extend(hour_of("N1", "2023-01-05T09:00:00", &[61.0; 1200]));
        let h = hourly_series(&s, 60.0);
        let keys: Vec<(&str, String)> = h
            .iter()
            .map(|x| (x.nmt_id.as_str(), format_timestamp(&x.hour_start)))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("N1", "2023-01-05T09:00:00".to_string()),
                ("N1", "2023-01-05T10:00:00".to_string()),
                ("N2", "2023-01-05T10:00:00".to_string()),
            ]
        );
        assert_eq!(h[1].completeness, 0.5);
    }

    #[test]
    fn csv_round_trip() {
        let mut s = hour_of("N1", "2023-01-05T09:00:00", &[63.3, 71.7, 59.0]);
        s.extend(hour_of("N1", "2023-01-05T10:00:00", &[50.0]));
        let h = hourly_series(&s, 60.0);
        let bytes = to_table(&h).to_csv();
        assert_eq!(from_csv(&bytes).unwrap(), h);
    }

    fn levels() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(20.0f64..130.0, 1..300)
    }

    proptest! {
        #[test]
        fn duplication_invariance(x in levels()) {
            let mut xx = x.clone();
            xx.extend_from_slice(&x);
            prop_assert!((laeq(&xx).unwrap() - laeq(&x).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn bounded_by_min_and_max(x in levels()) {
            let v = laeq(&x).unwrap();
            let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-9 && v <= hi);
        }

        #[test]
        fn permutation_invariant(x in levels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut y = x.clone();
            y.shuffle(&mut crate::rng::substream(seed, "test"));
            prop_assert!((laeq(&x).unwrap() - laeq(&y).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_each_sample(x in levels(), idx in any::<prop::sample::Index>(), bump in 0.0f64..20.0) {
            let mut y = x.clone();
            let i = idx.index(y.len());
            y[i] += bump;
            prop_assert!(laeq(&y).unwrap() >= laeq(&x).unwrap() - 1e-12);
        }

        #[test]
        fn adding_the_mean_is_neutral(x in levels()) {
            let v = laeq(&x).unwrap();
            let mut y = x.clone();
            y.push(v);
            prop_assert!((laeq(&y).unwrap() - v).abs() < 1e-9);
        }

        #[test]
        fn matches_direct_formula(x in levels()) {
            prop_assert!((laeq(&x).unwrap() - oracle(&x)).abs() < 1e-9);
        }
    }
}
