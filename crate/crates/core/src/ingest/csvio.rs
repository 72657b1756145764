use super::types::*;
use super::IngestError;
use crate::time::{format_timestamp, is_hour_aligned, parse_timestamp};
use chrono::NaiveDateTime;
use csv::StringRecord;
use std::collections::HashSet;

/// A row type of one of the input schemas.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn from_record(record: &StringRecord, line: u64) -> Result<Self, IngestError>;

    fn to_fields(&self) -> Vec<String>;
}

fn read_rows<T: CsvRecord>(source: &[u8]) -> Result<Vec<T>, IngestError> {
    Ok(read_rows_with_lines(source)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

fn read_rows_with_lines<T: CsvRecord>(source: &[u8]) -> Result<Vec<(T, u64)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut rows = Vec::new();
    let mut header_seen = false;
    let mut record = StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(source) => return Err(IngestError::Csv { line, source }),
        }
        let line = record.position().map_or(line, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if !header_seen {
            let found: Vec<&str> = record.iter().collect();
            if found != T::HEADER {
                return Err(IngestError::BadHeader {
                    line,
                    expected: T::HEADER.join(","),
                    found: found.join(","),
                });
            }
            header_seen = true;
            continue;
        }
        if record.len() != T::HEADER.len() {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("expected {} fields, found {}", T::HEADER.len(), record.len()),
            });
        }
        rows.push((T::from_record(&record, line)?, line));
    }
    Ok(rows)
}

fn write_rows<T: CsvRecord>(rows: &[T]) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(T::HEADER).expect("in-memory write");
    for row in rows {
        writer.write_record(row.to_fields()).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}

fn malformed(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn text(record: &StringRecord, idx: usize, name: &str, line: u64) -> Result<String, IngestError> {
    let value = &record[idx];
    if value.is_empty() {
        return Err(malformed(line, format!("{name} is empty")));
    }
    Ok(value.to_string())
}

fn number(record: &StringRecord, idx: usize, name: &str, line: u64) -> Result<f64, IngestError> {
    let value: f64 = record[idx]
        .parse()
        .map_err(|_| malformed(line, format!("{name} not numeric")))?;
    if !value.is_finite() {
        return Err(malformed(line, format!("{name} not finite")));
    }
    Ok(value)
}

fn timestamp(record: &StringRecord, idx: usize, name: &str, line: u64) -> Result<NaiveDateTime, IngestError> {
    parse_timestamp(&record[idx]).ok_or_else(|| malformed(line, format!("{name} is not YYYY-MM-DDTHH:MM:SS")))
}

fn hour(record: &StringRecord, idx: usize, name: &str, line: u64) -> Result<NaiveDateTime, IngestError> {
    let ts = timestamp(record, idx, name, line)?;
    if !is_hour_aligned(&ts) {
        return Err(malformed(line, format!("{name} is not on an hour boundary")));
    }
    Ok(ts)
}

fn check_range(
    ok: bool,
    line: u64,
    field: &'static str,
    value: impl ToString,
    bounds: &'static str,
) -> Result<(), IngestError> {
    if ok {
        Ok(())
    } else {
        Err(IngestError::RangeViolation {
            line,
            field,
            value: value.to_string(),
            bounds,
        })
    }
}

fn parsed<T: std::str::FromStr<Err = String>>(
    record: &StringRecord,
    idx: usize,
    line: u64,
) -> Result<T, IngestError> {
    record[idx].parse().map_err(|e: String| malformed(line, e))
}

impl CsvRecord for SplSample {
    const HEADER: &'static [&'static str] = &["nmt_id", "timestamp", "level_dba"];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        let sample = SplSample {
            nmt_id: text(r, 0, "nmt_id", line)?,
            timestamp: timestamp(r, 1, "timestamp", line)?,
            level: number(r, 2, "level", line)?,
        };
        check_range(
            (LEVEL_MIN_DBA..=LEVEL_MAX_DBA).contains(&sample.level),
            line,
            "level_dba",
            sample.level,
            "[0, 140]",
        )?;
        Ok(sample)
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.nmt_id.clone(),
            format_timestamp(&self.timestamp),
            self.level.to_string(),
        ]
    }
}

impl CsvRecord for FlightEvent {
    const HEADER: &'static [&'static str] = &[
        "timestamp",
        "operation",
        "runway",
        "aircraft_type",
        "engine_type",
        "airline",
    ];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        Ok(FlightEvent {
            timestamp: timestamp(r, 0, "timestamp", line)?,
            operation: parsed(r, 1, line)?,
            runway: parsed(r, 2, line)?,
            aircraft_type: text(r, 3, "aircraft_type", line)?,
            engine_type: text(r, 4, "engine_type", line)?,
            airline: text(r, 5, "airline", line)?,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            format_timestamp(&self.timestamp),
            self.operation.to_string(),
            self.runway.to_string(),
            self.aircraft_type.clone(),
            self.engine_type.clone(),
            self.airline.clone(),
        ]
    }
}

impl CsvRecord for WeatherHour {
    const HEADER: &'static [&'static str] = &[
        "hour_start",
        "temperature_c",
        "wind_speed_kt",
        "wind_direction_deg",
        "cloud_cover_tenths",
    ];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        let hour_start = hour(r, 0, "hour_start", line)?;
        let temperature_c = number(r, 1, "temperature_c", line)?;
        let wind_speed_kt = number(r, 2, "wind_speed_kt", line)?;
        let wind_direction_deg = number(r, 3, "wind_direction_deg", line)?;
        let cloud: i64 = r[4]
            .parse()
            .map_err(|_| malformed(line, "cloud_cover_tenths not an integer"))?;
        check_range(wind_speed_kt >= 0.0, line, "wind_speed_kt", wind_speed_kt, ">= 0")?;
        check_range(
            (0.0..360.0).contains(&wind_direction_deg),
            line,
            "wind_direction_deg",
            wind_direction_deg,
            "[0, 360)",
        )?;
        check_range(
            (0..=10).contains(&cloud),
            line,
            "cloud_cover_tenths",
            cloud,
            "[0, 10]",
        )?;
        Ok(WeatherHour {
            hour_start,
            temperature_c,
            wind_speed_kt,
            wind_direction_deg,
            cloud_cover_tenths: cloud as u8,
        })
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            format_timestamp(&self.hour_start),
            self.temperature_c.to_string(),
            self.wind_speed_kt.to_string(),
            self.wind_direction_deg.to_string(),
            self.cloud_cover_tenths.to_string(),
        ]
    }
}

impl CsvRecord for PopulationRecord {
    const HEADER: &'static [&'static str] = &["tract_id", "hour_start", "defacto_count"];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        let rec = PopulationRecord {
            tract_id: text(r, 0, "tract_id", line)?,
            hour_start: hour(r, 1, "hour_start", line)?,
            defacto_count: number(r, 2, "defacto_count", line)?,
        };
        check_range(
            rec.defacto_count >= 0.0,
            line,
            "defacto_count",
            rec.defacto_count,
            ">= 0",
        )?;
        Ok(rec)
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.tract_id.clone(),
            format_timestamp(&self.hour_start),
            self.defacto_count.to_string(),
        ]
    }
}

impl CsvRecord for TractMeta {
    const HEADER: &'static [&'static str] = &[
        "tract_id",
        "district_id",
        "centroid_lat",
        "centroid_lon",
        "resident_count",
        "land_use",
    ];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        let tract = TractMeta {
            tract_id: text(r, 0, "tract_id", line)?,
            district_id: text(r, 1, "district_id", line)?,
            centroid_lat: number(r, 2, "centroid_lat", line)?,
            centroid_lon: number(r, 3, "centroid_lon", line)?,
            resident_count: number(r, 4, "resident_count", line)?,
            land_use: parsed(r, 5, line)?,
        };
        check_lat_lon(tract.centroid_lat, tract.centroid_lon, line)?;
        check_range(
            tract.resident_count >= 0.0,
            line,
            "resident_count",
            tract.resident_count,
            ">= 0",
        )?;
        Ok(tract)
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.tract_id.clone(),
            self.district_id.clone(),
            self.centroid_lat.to_string(),
            self.centroid_lon.to_string(),
            self.resident_count.to_string(),
            self.land_use.as_str().to_string(),
        ]
    }
}

impl CsvRecord for NmtMeta {
    const HEADER: &'static [&'static str] = &["nmt_id", "tract_id", "lat", "lon"];

    fn from_record(r: &StringRecord, line: u64) -> Result<Self, IngestError> {
        let nmt = NmtMeta {
            nmt_id: text(r, 0, "nmt_id", line)?,
            tract_id: text(r, 1, "tract_id", line)?,
            lat: number(r, 2, "lat", line)?,
            lon: number(r, 3, "lon", line)?,
        };
        check_lat_lon(nmt.lat, nmt.lon, line)?;
        Ok(nmt)
    }

    fn to_fields(&self) -> Vec<String> {
        vec![
            self.nmt_id.clone(),
            self.tract_id.clone(),
            self.lat.to_string(),
            self.lon.to_string(),
        ]
    }
}

fn check_lat_lon(lat: f64, lon: f64, line: u64) -> Result<(), IngestError> {
    check_range((-90.0..=90.0).contains(&lat), line, "lat", lat, "[-90, 90]")?;
    check_range((-180.0..=180.0).contains(&lon), line, "lon", lon, "[-180, 180]")
}

/// Rejects the second occurrence of a key.
fn reject_duplicates<T, K: Eq + std::hash::Hash>(
    rows: Vec<(T, u64)>,
    key: impl Fn(&T) -> K,
    describe: impl Fn(&T) -> String,
) -> Result<Vec<T>, IngestError> {
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (row, line) in rows {
        if !seen.insert(key(&row)) {
            return Err(IngestError::DuplicateKey {
                line,
                key: describe(&row),
            });
        }
        out.push(row);
    }
    Ok(out)
}

pub fn parse_spl(source: &[u8]) -> Result<Vec<SplSample>, IngestError> {
    read_rows(source)
}

pub fn parse_flights(source: &[u8]) -> Result<Vec<FlightEvent>, IngestError> {
    read_rows(source)
}

/// Weather is keyed by hour; a repeated hour is a [`IngestError::DuplicateKey`].
pub fn parse_weather(source: &[u8]) -> Result<Vec<WeatherHour>, IngestError> {
    reject_duplicates(
        read_rows_with_lines(source)?,
        |w| w.hour_start,
        |w| format_timestamp(&w.hour_start),
    )
}

pub fn parse_population(source: &[u8]) -> Result<Vec<PopulationRecord>, IngestError> {
    reject_duplicates(
        read_rows_with_lines(source)?,
        |p| (p.tract_id.clone(), p.hour_start),
        |p| format!("({}, {})", p.tract_id, format_timestamp(&p.hour_start)),
    )
}

pub fn parse_tracts(source: &[u8]) -> Result<Vec<TractMeta>, IngestError> {
    reject_duplicates(
        read_rows_with_lines(source)?,
        |t| t.tract_id.clone(),
        |t| t.tract_id.clone(),
    )
}

pub fn parse_nmts(source: &[u8]) -> Result<Vec<NmtMeta>, IngestError> {
    reject_duplicates(
        read_rows_with_lines(source)?,
        |n| n.nmt_id.clone(),
        |n| n.nmt_id.clone(),
    )
}

pub fn write_spl(rows: &[SplSample]) -> Vec<u8> {
    write_rows(rows)
}

pub fn write_flights(rows: &[FlightEvent]) -> Vec<u8> {
    write_rows(rows)
}

pub fn write_weather(rows: &[WeatherHour]) -> Vec<u8> {
    write_rows(rows)
}

pub fn write_population(rows: &[PopulationRecord]) -> Vec<u8> {
    write_rows(rows)
}

pub fn write_tracts(rows: &[TractMeta]) -> Vec<u8> {
    write_rows(rows)
}

pub fn write_nmts(rows: &[NmtMeta]) -> Vec<u8> {
    write_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spl_file(rows: &str) -> Vec<u8> {
        format!("nmt_id,timestamp,level_dba\n{rows}").into_bytes()
    }

    #[test]
    fn parses_spl_row() {
        let rows = parse_spl(&spl_file("NMT1,2023-01-05T09:00:03,72.4\n")).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].nmt_id, "NMT1");
        assert_eq!(rows[0].timestamp, parse_timestamp("2023-01-05T09:00:03").unwrap());
        assert_eq!(rows[0].level, 72.4);
    }

    #[test]
    fn non_numeric_level_is_malformed_with_line() {
        let err = parse_spl(&spl_file(
            "NMT1,2023-01-05T09:00:00,70\nNMT1,2023-01-05T09:00:03,abc\n",
        ))
        .unwrap_err();
        match err {
            IngestError::MalformedRow { line, reason } => {
                assert_eq!(line, 3);
                assert_eq!(reason, "level not numeric");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_band_level_is_range_violation() {
        let err = parse_spl(&spl_file("NMT1,2023-01-05T09:00:03,141\n")).unwrap_err();
        assert!(matches!(err, IngestError::RangeViolation { line: 2, .. }));
    }

    #[test]
    fn wrong_field_count_is_malformed() {
        let err = parse_spl(&spl_file("NMT1,2023-01-05T09:00:03\n")).unwrap_err();
        assert!(matches!(err, IngestError::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn cloud_cover_eleven_is_range_violation() {
        let src = b"hour_start,temperature_c,wind_speed_kt,wind_direction_deg,cloud_cover_tenths\n\
2023-01-05T09:00:00,-2.5,6,140,11\n";
        let err = parse_weather(src).unwrap_err();
        assert!(
            matches!(
                err,
                IngestError::RangeViolation {
                    line: 2,
                    field: "cloud_cover_tenths",
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn weather_hour_must_be_aligned() {
        let src = b"hour_start,temperature_c,wind_speed_kt,wind_direction_deg,cloud_cover_tenths\n\
2023-01-05T09:30:00,-2.5,6,140,3\n";
        assert!(matches!(
            parse_weather(src).unwrap_err(),
            IngestError::MalformedRow { line: 2, .. }
        ));
    }

    #[test]
    fn duplicate_population_key_rejected() {
        let src = b"tract_id,hour_start,defacto_count\n\
T1,2023-01-05T09:00:00,10\n\
T2,2023-01-05T09:00:00,10\n\
T1,2023-01-05T09:00:00,12\n";
        match parse_population(src).unwrap_err() {
            IngestError::DuplicateKey { line, key } => {
                assert_eq!(line, 4);
                assert!(key.contains("T1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_list() {
        assert!(parse_spl(b"").unwrap().is_empty());
        assert!(parse_flights(b"").unwrap().is_empty());
        assert!(parse_weather(b"").unwrap().is_empty());
        assert!(parse_population(b"").unwrap().is_empty());
        assert!(parse_tracts(b"").unwrap().is_empty());
        assert!(parse_nmts(b"").unwrap().is_empty());
        assert!(parse_spl(b"nmt_id,timestamp,level_dba\n").unwrap().is_empty());
    }

    #[test]
    fn wrong_header_rejected() {
        let err = parse_nmts(b"nmt,tract,lat,lon\nN1,T1,37.5,126.8\n").unwrap_err();
        assert!(matches!(err, IngestError::BadHeader { line: 1, .. }));
    }

    #[test]
    fn flight_enum_and_runway_validated() {
        let hdr = "timestamp,operation,runway,aircraft_type,engine_type,airline\n";
        let ok = format!("{hdr}2023-01-05T09:12:00,DEPARTURE,32L,B737,CFM56,KE\n");
        let rows = parse_flights(ok.as_bytes()).unwrap();
        assert_eq!(rows[0].operation, Operation::Departure);
        assert_eq!(rows[0].combo(), "B737+CFM56");
        let bad_op = format!("{hdr}2023-01-05T09:12:00,TAXI,32L,B737,CFM56,KE\n");
        assert!(matches!(
            parse_flights(bad_op.as_bytes()).unwrap_err(),
            IngestError::MalformedRow { line: 2, .. }
        ));
        let bad_rwy = format!("{hdr}2023-01-05T09:12:00,ARRIVAL,99Q,B737,CFM56,KE\n");
        assert!(parse_flights(bad_rwy.as_bytes()).is_err());
    }

    #[test]
    fn twelve_hundred_rows_round_trip_in_order() {
        let start = parse_timestamp("2023-01-05T09:00:00").unwrap();
        let samples: Vec<SplSample> = (0..1200)
            .map(|k| SplSample {
                nmt_id: "NMT1".into(),
                timestamp: start + chrono::Duration::seconds(3 * k),
                level: 55.0 + (k % 37) as f64 * 0.5,
            })
            .collect();
        let bytes = write_spl(&samples);
        let back = parse_spl(&bytes).unwrap();
        assert_eq!(back, samples);
        assert_eq!(parse_spl(&bytes).unwrap(), back);
    }

    fn arb_ts() -> impl Strategy<Value = NaiveDateTime> {
        (0i64..31 * 24 * 1200)
            .prop_map(|k| parse_timestamp("2023-01-01T00:00:00").unwrap() + chrono::Duration::seconds(3 * k))
    }

    fn arb_hour() -> impl Strategy<Value = NaiveDateTime> {
        (0i64..31 * 24)
            .prop_map(|k| parse_timestamp("2023-01-01T00:00:00").unwrap() + chrono::Duration::hours(k))
    }

    proptest! {
        #[test]
        fn spl_round_trip(rows in prop::collection::vec(
            ("[A-Z]{3}[0-9]", arb_ts(), 0.0f64..=140.0), 0..40)) {
            let samples: Vec<SplSample> = rows.into_iter()
                .map(|(nmt_id, timestamp, level)| SplSample { nmt_id, timestamp, level })
                .collect();
            let bytes = write_spl(&samples);
            prop_assert_eq!(parse_spl(&bytes).unwrap(), samples);
            prop_assert_eq!(write_spl(&parse_spl(&bytes).unwrap()), bytes);
        }

        #[test]
        fn weather_round_trip(hours in prop::collection::btree_set(arb_hour(), 0..30),
                              t in -30.0f64..40.0, ws in 0.0f64..60.0,
                              wd in 0.0f64..360.0, cc in 0u8..=10) {
            let rows: Vec<WeatherHour> = hours.into_iter().map(|h| WeatherHour {
                hour_start: h, temperature_c: t, wind_speed_kt: ws,
                wind_direction_deg: wd, cloud_cover_tenths: cc,
            }).collect();
            let bytes = write_weather(&rows);
            prop_assert_eq!(parse_weather(&bytes).unwrap(), rows);
        }

        #[test]
        fn tract_round_trip(ids in prop::collection::btree_set("[a-z0-9,\" ]{1,8}", 0..10),
                            lat in -90.0f64..=90.0, resident in 0.0f64..1e6) {
            let rows: Vec<TractMeta> = ids.into_iter()
                .filter(|id| id.trim() == id.as_str())
                .map(|id| TractMeta {
                    tract_id: id, district_id: "D 1".into(), centroid_lat: lat,
                    centroid_lon: 126.8, resident_count: resident, land_use: LandUse::Mixed,
                }).collect();
            let bytes = write_tracts(&rows);
            prop_assert_eq!(parse_tracts(&bytes).unwrap(), rows);
        }
    }
}
