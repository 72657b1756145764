use super::types::*;
use crate::time::{floor_hour, format_timestamp, StudyWindow};
use chrono::NaiveDateTime;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

/// 3600 s / 3 s.
pub const NOMINAL_SAMPLES_PER_HOUR: usize = 1200;

/// All six parsed input streams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bundle {
    pub spl: Vec<SplSample>,
    pub flights: Vec<FlightEvent>,
    pub weather: Vec<WeatherHour>,
    pub population: Vec<PopulationRecord>,
    pub tracts: Vec<TractMeta>,
    pub nmts: Vec<NmtMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Spl,
    Flights,
    Weather,
    Population,
    Tracts,
    Nmts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    CoverageGap,
    DuplicateKey,
    DanglingReference,
    IncompleteHour,
    OutOfWindow,
}

impl FindingKind {
    pub fn severity(&self) -> Severity {
        match self {
            FindingKind::CoverageGap | FindingKind::DuplicateKey | FindingKind::DanglingReference => {
                Severity::Error
            }
            FindingKind::IncompleteHour | FindingKind::OutOfWindow => Severity::Warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub severity: Severity,
    pub stream: Stream,
    pub detail: String,
}

impl Finding {
    fn new(kind: FindingKind, stream: Stream, detail: String) -> Self {
        Self {
            kind,
            severity: kind.severity(),
            stream,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NmtHourCompleteness {
    pub nmt_id: String,
    #[serde(with = "crate::time::ts_serde")]
    pub hour_start: NaiveDateTime,
    pub count: usize,
    /// `count / 1200`, capped at 1.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub window: StudyWindow,
    pub findings: Vec<Finding>,
    pub completeness: Vec<NmtHourCompleteness>,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.findings.iter().filter(|f| f.kind == kind).count()
    }
}

/// Cross-stream consistency checks. Never fails; everything found is reported.
///
/// `declared_runways` is the runway set flights may use; an empty slice
/// disables the runway check.
pub fn validate_bundle(
    bundle: &Bundle,
    window: &StudyWindow,
    declared_runways: &[Runway],
) -> ValidationReport {
    let mut findings = Vec::new();
    let hours = window.hours();

    // Identifier tables.
    let mut tract_ids = HashSet::new();
    for t in &bundle.tracts {
        if !tract_ids.insert(t.tract_id.as_str()) {
            findings.push(Finding::new(
                FindingKind::DuplicateKey,
                Stream::Tracts,
                format!("tract {}", t.tract_id),
            ));
        }
    }
    let mut nmt_ids = HashSet::new();
    for n in &bundle.nmts {
        if !nmt_ids.insert(n.nmt_id.as_str()) {
            findings.push(Finding::new(
                FindingKind::DuplicateKey,
                Stream::Nmts,
                format!("nmt {}", n.nmt_id),
            ));
        }
        if !tract_ids.contains(n.tract_id.as_str()) {
            findings.push(Finding::new(
                FindingKind::DanglingReference,
                Stream::Nmts,
                format!("nmt {} references unknown tract {}", n.nmt_id, n.tract_id),
            ));
        }
    }

    // Weather: exactly one record per window hour.
    let mut weather_hours: HashMap<NaiveDateTime, usize> = HashMap::new();
    let mut weather_outside = 0usize;
    for w in &bundle.weather {
        if window.contains(&w.hour_start) {
            *weather_hours.entry(w.hour_start).or_default() += 1;
        } else {
            weather_outside += 1;
        }
    }
    for h in &hours {
        match weather_hours.get(h).copied().unwrap_or(0) {
            0 => findings.push(Finding::new(
                FindingKind::CoverageGap,
                Stream::Weather,
                format!("no weather for {}", format_timestamp(h)),
            )),
            1 => {}
            n => findings.push(Finding::new(
                FindingKind::DuplicateKey,
                Stream::Weather,
                format!("{n} weather records for {}", format_timestamp(h)),
            )),
        }
    }
    push_outside(&mut findings, Stream::Weather, weather_outside);

    // Population: one record per known tract and window hour.
    let mut pop_keys: HashMap<(&str, NaiveDateTime), usize> = HashMap::new();
    let mut pop_outside = 0usize;
    let mut unknown_pop_tracts = BTreeSet::new();
    for p in &bundle.population {
        if !tract_ids.contains(p.tract_id.as_str()) {
            unknown_pop_tracts.insert(p.tract_id.as_str());
        }
        if window.contains(&p.hour_start) {
            *pop_keys.entry((p.tract_id.as_str(), p.hour_start)).or_default() += 1;
        } else {
            pop_outside += 1;
        }
    }
    for tract in unknown_pop_tracts {
        findings.push(Finding::new(
            FindingKind::DanglingReference,
            Stream::Population,
            format!("population references unknown tract {tract}"),
        ));
    }
    for t in &bundle.tracts {
        for h in &hours {
            match pop_keys.get(&(t.tract_id.as_str(), *h)).copied().unwrap_or(0) {
                0 => findings.push(Finding::new(
                    FindingKind::CoverageGap,
                    Stream::Population,
                    format!("no population for ({}, {})", t.tract_id, format_timestamp(h)),
                )),
                1 => {}
                n => findings.push(Finding::new(
                    FindingKind::DuplicateKey,
                    Stream::Population,
                    format!(
                        "{n} population records for ({}, {})",
                        t.tract_id,
                        format_timestamp(h)
                    ),
                )),
            }
        }
    }
    push_outside(&mut findings, Stream::Population, pop_outside);

    // Flights: runway declared, timestamp in window.
    let declared: HashSet<&Runway> = declared_runways.iter().collect();
    let mut undeclared = BTreeSet::new();
    let mut flights_outside = 0usize;
    for f in &bundle.flights {
        if !declared.is_empty() && !declared.contains(&f.runway) {
            undeclared.insert(f.runway.as_str());
        }
        if !window.contains(&f.timestamp) {
            flights_outside += 1;
        }
    }
    for rwy in undeclared {
        findings.push(Finding::new(
            FindingKind::DanglingReference,
            Stream::Flights,
            format!("flights use undeclared runway {rwy}"),
        ));
    }
    push_outside(&mut findings, Stream::Flights, flights_outside);

    // SPL: per-terminal duplicates and per-hour completeness.
    let mut by_nmt: BTreeMap<&str, Vec<NaiveDateTime>> = BTreeMap::new();
    for n in &bundle.nmts {
        by_nmt.entry(n.nmt_id.as_str()).or_default();
    }
    for s in &bundle.spl {
        by_nmt.entry(s.nmt_id.as_str()).or_default().push(s.timestamp);
    }
    let mut spl_outside = 0usize;
    let mut completeness = Vec::with_capacity(by_nmt.len() * hours.len());
    for (nmt, stamps) in &mut by_nmt {
        if !nmt_ids.contains(nmt) {
            findings.push(Finding::new(
                FindingKind::DanglingReference,
                Stream::Spl,
                format!("samples reference unknown nmt {nmt}"),
            ));
        }
        stamps.sort_unstable();
        let dupes = stamps.windows(2).filter(|w| w[0] == w[1]).count();
        if dupes > 0 {
            findings.push(Finding::new(
                FindingKind::DuplicateKey,
                Stream::Spl,
                format!("nmt {nmt} has {dupes} repeated timestamps"),
            ));
        }
        let mut counts = vec![0usize; hours.len()];
        for ts in stamps.iter() {
            match window.hour_index(&floor_hour(ts)) {
                Some(i) => counts[i] += 1,
                None => spl_outside += 1,
            }
        }
        for (h, count) in hours.iter().zip(counts) {
            if count != NOMINAL_SAMPLES_PER_HOUR {
                findings.push(Finding::new(
                    FindingKind::IncompleteHour,
                    Stream::Spl,
                    format!(
                        "nmt {nmt} hour {} has {count}/{NOMINAL_SAMPLES_PER_HOUR} samples",
                        format_timestamp(h)
                    ),
                ));
            }
            completeness.push(NmtHourCompleteness {
                nmt_id: nmt.to_string(),
                hour_start: *h,
                count,
                fraction: completeness_fraction(count),
            });
        }
    }
    push_outside(&mut findings, Stream::Spl, spl_outside);

    ValidationReport {
        window: *window,
        findings,
        completeness,
    }
}

pub(crate) fn completeness_fraction(count: usize) -> f64 {
    (count as f64 / NOMINAL_SAMPLES_PER_HOUR as f64).min(1.0)
}

fn push_outside(findings: &mut Vec<Finding>, stream: Stream, count: usize) {
    if count > 0 {
        findings.push(Finding::new(
            FindingKind::OutOfWindow,
            stream,
            format!("{count} records outside the study window"),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_timestamp;
    use chrono::Duration;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    /// Two hours, one tract, one terminal, everything present.
    fn small_bundle() -> (Bundle, StudyWindow) {
        let start = ts("2023-01-05T12:00:00");
        let window = StudyWindow::new(start, start + Duration::hours(2)).unwrap();
        let mut b = Bundle {
            tracts: vec![TractMeta {
                tract_id: "T1".into(),
                district_id: "D1".into(),
                centroid_lat: 37.55,
                centroid_lon: 126.8,
                resident_count: 100.0,
                land_use: LandUse::Residential,
            }],
            nmts: vec![NmtMeta {
                nmt_id: "N1".into(),
                tract_id: "T1".into(),
                lat: 37.55,
                lon: 126.8,
            }],
            ..Default::default()
        };
        for h in window.hours() {
            b.weather.push(WeatherHour {
                hour_start: h,
                temperature_c: -1.0,
                wind_speed_kt: 5.0,
                wind_direction_deg: 300.0,
                cloud_cover_tenths: 4,
            });
            b.population.push(PopulationRecord {
                tract_id: "T1".into(),
                hour_start: h,
                defacto_count: 90.0,
            });
            for k in 0..1200 {
                b.spl.push(SplSample {
                    nmt_id: "N1".into(),
                    timestamp: h + Duration::seconds(3 * k),
                    level: 65.0,
                });
            }
        }
        b.flights.push(FlightEvent {
            timestamp: start + Duration::minutes(5),
            operation: Operation::Arrival,
            runway: "32R".parse().unwrap(),
            aircraft_type: "A320".into(),
            engine_type: "V2500".into(),
            airline: "OZ".into(),
        });
        (b, window)
    }

    fn runways() -> Vec<Runway> {
        vec!["32L".parse().unwrap(), "32R".parse().unwrap()]
    }

    #[test]
    fn complete_bundle_has_no_findings() {
        let (b, w) = small_bundle();
        let r = validate_bundle(&b, &w, &runways());
        assert!(r.findings.is_empty(), "{:?}", r.findings);
        assert_eq!(r.completeness.len(), 2);
        assert!(r.completeness.iter().all(|c| c.fraction == 1.0));
    }

    #[test]
    fn missing_weather_hour_is_one_gap() {
        let (mut b, w) = small_bundle();
        b.weather.retain(|x| x.hour_start != ts("2023-01-05T13:00:00"));
        let r = validate_bundle(&b, &w, &runways());
        assert_eq!(r.findings.len(), 1, "{:?}", r.findings);
        assert_eq!(r.findings[0].kind, FindingKind::CoverageGap);
        assert_eq!(r.findings[0].stream, Stream::Weather);
        assert!(r.has_errors());
    }

    #[test]
    fn nmt_with_unknown_tract_is_dangling() {
        let (mut b, w) = small_bundle();
        b.nmts[0].tract_id = "T9".into();
        let r = validate_bundle(&b, &w, &runways());
        assert_eq!(r.findings.len(), 1, "{:?}", r.findings);
        assert_eq!(r.findings[0].kind, FindingKind::DanglingReference);
    }

    #[test]
    fn undeclared_runway_is_dangling() {
        let (mut b, w) = small_bundle();
        b.flights[0].runway = "14L".parse().unwrap();
        let r = validate_bundle(&b, &w, &runways());
        assert_eq!(r.count(FindingKind::DanglingReference), 1);
        assert!(validate_bundle(&b, &w, &[]).findings.is_empty());
    }

    #[test]
    fn partial_hour_reports_completeness() {
        let (mut b, w) = small_bundle();
        b.spl.truncate(1200 + 600);
        let r = validate_bundle(&b, &w, &runways());
        assert_eq!(r.count(FindingKind::IncompleteHour), 1);
        assert!(!r.has_errors());
        assert_eq!(r.completeness[1].count, 600);
        assert_eq!(r.completeness[1].fraction, 0.5);
    }

    #[test]
    fn duplicates_and_out_of_window_reported() {
        let (mut b, w) = small_bundle();
        let dup = b.spl[10].clone();
        b.spl.push(dup);
        b.population.push(PopulationRecord {
            tract_id: "T1".into(),
            hour_start: ts("2023-01-05T12:00:00"),
            defacto_count: 1.0,
        });
        b.weather.push(WeatherHour {
            hour_start: ts("2023-01-06T00:00:00"),
            temperature_c: 0.0,
            wind_speed_kt: 0.0,
            wind_direction_deg: 0.0,
            cloud_cover_tenths: 0,
        });
        let r = validate_bundle(&b, &w, &runways());
        assert_eq!(r.count(FindingKind::DuplicateKey), 2);
        assert_eq!(r.count(FindingKind::OutOfWindow), 1);
    }
}
