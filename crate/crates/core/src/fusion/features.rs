use super::{FusionError, RunwaySchedule};
use crate::acoustics::HourlyLaeq;
use crate::gbm::Dataset;
use crate::ingest::{FlightEvent, NmtMeta, Operation, WeatherHour};
use crate::numeric::angular_distance;
use crate::output::{Cell, Table, TableError};
use crate::time::{floor_hour, format_timestamp, StudyWindow};
use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

/// Fixed leading columns; the remaining [`COMBO_SLOTS`] are per-hour counts
/// of the most frequent aircraft-engine combinations.
pub const BASE_FEATURES: [&str; 10] = [
    "hour_of_day",
    "day_of_week",
    "nmt_lat",
    "nmt_lon",
    "temperature_c",
    "wind_speed_kt",
    "wind_deviation_deg",
    "cloud_cover_tenths",
    "departures",
    "arrivals",
];
pub const COMBO_SLOTS: usize = 12;
pub const FEATURE_COUNT: usize = BASE_FEATURES.len() + COMBO_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Takeoff,
    Landing,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Takeoff, Target::Landing];

    pub fn operation(&self) -> Operation {
        match self {
            Target::Takeoff => Operation::Departure,
            Target::Landing => Operation::Arrival,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Target::Takeoff => "takeoff",
            Target::Landing => "landing",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub nmt_id: String,
    pub hour_start: NaiveDateTime,
    pub operation: Operation,
    pub features: Vec<f64>,
    pub takeoff_laeq: Option<f64>,
    pub landing_laeq: Option<f64>,
}

impl FeatureRow {
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}",
            self.nmt_id,
            format_timestamp(&self.hour_start),
            self.operation
        )
    }

    pub fn target(&self, target: Target) -> Option<f64> {
        match target {
            Target::Takeoff => self.takeoff_laeq,
            Target::Landing => self.landing_laeq,
        }
    }
}

/// Rows keyed by (terminal, hour, operation), in that sort order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rows whose `target` is present, as a model dataset.
    pub fn dataset(&self, target: Target) -> Dataset {
        let mut ds = Dataset::new(self.feature_names.clone());
        for row in &self.rows {
            if let Some(y) = row.target(target) {
                ds.push(row.key(), &row.features, y);
            }
        }
        ds
    }

    pub fn to_table(&self) -> Table {
        let mut header = vec!["nmt_id".to_string(), "hour_start".into(), "operation".into()];
        header.extend(self.feature_names.iter().cloned());
        header.push("takeoff_laeq".into());
        header.push("landing_laeq".into());
        let mut t = Table::new(header);
        for r in &self.rows {
            let mut cells = vec![
                Cell::text(&r.nmt_id),
                Cell::time(&r.hour_start),
                Cell::text(r.operation.as_str()),
            ];
            cells.extend(r.features.iter().map(|&v| Cell::Num(v)));
            cells.push(Cell::opt_num(r.takeoff_laeq));
            cells.push(Cell::opt_num(r.landing_laeq));
            t.push(cells);
        }
        t
    }

    /// Reads back `features.csv` as written by [`FeatureTable::to_table`].
    pub fn from_csv(source: &[u8]) -> Result<Self, TableError> {
        let table = Table::read_csv_any(source)?;
        let header = table.header();
        let width = header.len();
        if width != FEATURE_COUNT + 5
            || header[..3] != ["nmt_id", "hour_start", "operation"]
            || header[width - 2..] != ["takeoff_laeq", "landing_laeq"]
        {
            return Err(TableError::Header {
                expected: format!(
                    "nmt_id,hour_start,operation,<{FEATURE_COUNT} features>,takeoff_laeq,landing_laeq"
                ),
                found: header.join(","),
            });
        }
        let feature_names = header[3..width - 2].to_vec();
        let rows = table
            .rows()
            .map(|r| {
                let operation = r
                    .text(2)?
                    .parse()
                    .map_err(|e: String| TableError::Row { line: 0, reason: e })?;
                Ok(FeatureRow {
                    nmt_id: r.text(0)?.to_string(),
                    hour_start: r.timestamp(1)?,
                    operation,
                    features: (3..width - 2).map(|i| r.num(i)).collect::<Result<_, _>>()?,
                    takeoff_laeq: r.opt_num(width - 2)?,
                    landing_laeq: r.opt_num(width - 1)?,
                })
            })
            .collect::<Result<Vec<_>, TableError>>()?;
        Ok(Self { feature_names, rows })
    }
}

/// Combination labels ranked by frequency over the window, ties by label.
fn ranked_combos(flights: &[FlightEvent], window: &StudyWindow) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for f in flights.iter().filter(|f| window.contains(&f.timestamp)) {
        *counts.entry(f.combo()).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().map(|(c, _)| c).collect()
}

/// Column name for a combination count.
pub fn combo_feature_name(combo: &str) -> String {
    format!("n_{}", combo.replace([',', '"'], "_"))
}

/// Builds one row per (terminal, window hour, operation).
///
/// Combination counts cover both operations in the hour; the other fallback
/// combinations are included in the departure and arrival totals only. A row's
/// target is the terminal's hourly LAeq when at least one operation of the
/// row's type happened in that hour, and absent otherwise.
pub fn build_features(
    flights: &[FlightEvent],
    weather: &[WeatherHour],
    nmts: &[NmtMeta],
    hourly_laeq: &[HourlyLaeq],
    schedule: &RunwaySchedule,
    window: &StudyWindow,
) -> Result<FeatureTable, FusionError> {
    let hours = window.hours();
    let weather_by_hour: HashMap<NaiveDateTime, &WeatherHour> =
        weather.iter().map(|w| (w.hour_start, w)).collect();
    if let Some(h) = hours.iter().find(|h| !weather_by_hour.contains_key(h)) {
        return Err(FusionError::MissingWeather(*h));
    }

    let combos = ranked_combos(flights, window);
    let top: Vec<&String> = combos.iter().take(COMBO_SLOTS).collect();
    let slot_of: HashMap<&str, usize> = top.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut feature_names: Vec<String> = BASE_FEATURES.iter().map(|s| s.to_string()).collect();
    for i in 0..COMBO_SLOTS {
        feature_names.push(match top.get(i) {
            Some(c) => combo_feature_name(c),
            None => format!("n_unused_slot_{}", i + 1),
        });
    }

    // Per-hour operation totals and combo counts.
    let mut deps = vec![0usize; hours.len()];
    let mut arrs = vec![0usize; hours.len()];
    let mut combo_counts = vec![[0usize; COMBO_SLOTS]; hours.len()];
    for f in flights {
        let Some(i) = window.hour_index(&floor_hour(&f.timestamp)) else {
            continue;
        };
        match f.operation {
            Operation::Departure => deps[i] += 1,
            Operation::Arrival => arrs[i] += 1,
        }
        if let Some(&slot) = slot_of.get(f.combo().as_str()) {
            combo_counts[i][slot] += 1;
        }
    }

    let noise: HashMap<(&str, NaiveDateTime), Option<f64>> = hourly_laeq
        .iter()
        .map(|h| ((h.nmt_id.as_str(), h.hour_start), h.laeq))
        .collect();

    let mut sorted_nmts: Vec<&NmtMeta> = nmts.iter().collect();
    sorted_nmts.sort_by(|a, b| a.nmt_id.cmp(&b.nmt_id));

    let mut rows = Vec::with_capacity(sorted_nmts.len() * hours.len() * 2);
    for nmt in sorted_nmts {
        for (i, h) in hours.iter().enumerate() {
            let w = weather_by_hour[h];
            let active = schedule.active(h);
            let laeq = noise.get(&(nmt.nmt_id.as_str(), *h)).copied().flatten();
            for op in Operation::ALL {
                let heading = active
                    .as_ref()
                    .map_or(w.wind_direction_deg, |a| a.for_operation(op).heading_deg());
                let mut features = Vec::with_capacity(FEATURE_COUNT);
                features.extend([
                    f64::from(h.hour()),
                    f64::from(h.weekday().num_days_from_monday()),
                    nmt.lat,
                    nmt.lon,
                    w.temperature_c,
                    w.wind_speed_kt,
                    angular_distance(w.wind_direction_deg, heading),
                    f64::from(w.cloud_cover_tenths),
                    deps[i] as f64,
                    arrs[i] as f64,
                ]);
                features.extend(combo_counts[i].iter().map(|&c| c as f64));
                let (takeoff, landing) = match op {
                    Operation::Departure => (laeq.filter(|_| deps[i] > 0), None),
                    Operation::Arrival => (None, laeq.filter(|_| arrs[i] > 0)),
                };
                rows.push(FeatureRow {
                    nmt_id: nmt.nmt_id.clone(),
                    hour_start: *h,
                    operation: op,
                    features,
                    takeoff_laeq: takeoff,
                    landing_laeq: landing,
                });
            }
        }
    }
    Ok(FeatureTable { feature_names, rows })
}

#[cfg(test)]
mod tests {
    use super::super::{ActiveRunways, RotationSchedule};
    use super::*;
    use crate::time::parse_timestamp;
    use chrono::Duration;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn window() -> StudyWindow {
        StudyWindow::new(ts("2023-01-02T08:00:00"), ts("2023-01-02T11:00:00")).unwrap()
    }

    fn schedule() -> RunwaySchedule {
        RunwaySchedule::Rotation(RotationSchedule {
            block_hours: 3,
            origin: ts("2023-01-02T00:00:00"),
            even_blocks: ActiveRunways {
                departure: "32R".parse().unwrap(),
                arrival: "32L".parse().unwrap(),
            },
        })
    }

    fn weather(w: &StudyWindow) -> Vec<WeatherHour> {
        w.hours()
            .into_iter()
            .map(|h| WeatherHour {
                hour_start: h,
                temperature_c: -3.0,
                wind_speed_kt: 7.0,
                wind_direction_deg: 140.0,
                cloud_cover_tenths: 2,
            })
            .collect()
    }

    fn flight(t: NaiveDateTime, op: Operation, ac: &str, eng: &str) -> FlightEvent {
        FlightEvent {
            timestamp: t,
            operation: op,
            runway: "32L".parse().unwrap(),
            aircraft_type: ac.into(),
            engine_type: eng.into(),
            airline: "KE".into(),
        }
    }

    fn nmts() -> Vec<NmtMeta> {
        vec![
            NmtMeta {
                nmt_id: "N2".into(),
                tract_id: "T2".into(),
                lat: 37.56,
                lon: 126.82,
            },
            NmtMeta {
                nmt_id: "N1".into(),
                tract_id: "T1".into(),
                lat: 37.55,
                lon: 126.81,
            },
        ]
    }

    fn laeq(w: &StudyWindow) -> Vec<HourlyLaeq> {
        let mut v = Vec::new();
        for n in ["N1", "N2"] {
            for h in w.hours() {
                v.push(HourlyLaeq {
                    nmt_id: n.into(),
                    hour_start: h,
                    laeq: Some(70.0),
                    n_retained: 1200,
                    completeness: 1.0,
                });
            }
        }
        v
    }

    #[test]
    fn counts_departures_per_combo() {
        let w = window();
        let h9 = ts("2023-01-02T09:00:00");
        let flights = vec![
            flight(h9 + Duration::minutes(1), Operation::Departure, "B737", "CFM56"),
            flight(h9 + Duration::minutes(20), Operation::Departure, "B737", "CFM56"),
            flight(h9 + Duration::minutes(40), Operation::Departure, "B737", "CFM56"),
            flight(h9 + Duration::minutes(45), Operation::Arrival, "A320", "V2500"),
        ];
        let t = build_features(&flights, &weather(&w), &nmts(), &laeq(&w), &schedule(), &w).unwrap();
        assert_eq!(t.feature_names.len(), FEATURE_COUNT);
        assert_eq!(t.rows.len(), 2 * 3 * 2);
        let col = t.feature_index("n_B737+CFM56").unwrap();
        assert_eq!(col, BASE_FEATURES.len());
        let row = t
            .rows
            .iter()
            .find(|r| r.nmt_id == "N1" && r.hour_start == h9 && r.operation == Operation::Departure)
            .unwrap();
        assert_eq!(row.features[col], 3.0);
        assert_eq!(row.features[8], 3.0);
        assert_eq!(row.features[9], 1.0);
        assert_eq!(row.features[0], 9.0);
        // 2023-01-02 is a Monday.
        assert_eq!(row.features[1], 0.0);
        assert_eq!(row.takeoff_laeq, Some(70.0));
        assert_eq!(row.landing_laeq, None);
        assert_eq!(t.rows[0].nmt_id, "N1");
        assert_eq!(t.feature_names[FEATURE_COUNT - 1], "n_unused_slot_12");
    }

    #[test]
    fn wind_deviation_uses_active_runway() {
        let w = window();
        let t = build_features(&[], &weather(&w), &nmts(), &laeq(&w), &schedule(), &w).unwrap();
        // 140° wind against a 320° runway heading.
        assert!(t.rows.iter().all(|r| r.features[6] == 180.0));
    }

    #[test]
    fn zero_flight_hour_has_zero_counts_and_absent_targets() {
        let w = window();
        let t = build_features(&[], &weather(&w), &nmts(), &laeq(&w), &schedule(), &w).unwrap();
        assert_eq!(t.rows.len(), 12);
        for r in &t.rows {
            assert!(r.features[8..].iter().all(|&c| c == 0.0));
            assert_eq!(r.takeoff_laeq, None);
            assert_eq!(r.landing_laeq, None);
        }
        assert_eq!(t.dataset(Target::Takeoff).len(), 0);
    }

    #[test]
    fn missing_weather_is_reported() {
        let w = window();
        let mut wx = weather(&w);
        wx.remove(1);
        let err = build_features(&[], &wx, &nmts(), &laeq(&w), &schedule(), &w).unwrap_err();
        assert_eq!(err, FusionError::MissingWeather(ts("2023-01-02T09:00:00")));
    }

    #[test]
    fn csv_round_trip() {
        let w = window();
        let h9 = ts("2023-01-02T09:00:00");
        let flights = vec![flight(h9, Operation::Departure, "B737", "CFM56")];
        let t = build_features(&flights, &weather(&w), &nmts(), &laeq(&w), &schedule(), &w).unwrap();
        let back = FeatureTable::from_csv(&t.to_table().to_csv()).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn wind_deviation_bounded_and_symmetric(a in 0.0f64..360.0, b in 0.0f64..360.0) {
            let d = angular_distance(a, b);
            prop_assert!((0.0..=180.0).contains(&d));
            prop_assert_eq!(d, angular_distance(b, a));
        }
    }
}
