//! Joins population, hourly LAeq, weather and flight activity at the
//! tract × hour grain, and builds the model feature table.

mod features;
mod schedule;

pub use features::{
    build_features, FeatureRow, FeatureTable, Target, BASE_FEATURES, COMBO_SLOTS, FEATURE_COUNT,
};
pub use schedule::{infer_schedule, ActiveRunways, RotationSchedule, RunwaySchedule};

use crate::acoustics::HourlyLaeq;
use crate::ingest::{NmtMeta, PopulationRecord, TractMeta};
use crate::output::{Cell, Table, TableError};
use crate::time::{format_timestamp, ts_serde, StudyWindow};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("tract {tract} contains more than one terminal: {nmts:?}")]
    AmbiguousMapping { tract: String, nmts: Vec<String> },
    #[error("terminal {nmt} lies in unknown tract {tract}")]
    UnknownTract { nmt: String, tract: String },
    #[error("no terminals to map tracts to")]
    NoTerminals,
    #[error("population missing for {} tract-hours, first {}", .0.len(), describe_first(.0))]
    MissingPopulation(Vec<(String, NaiveDateTime)>),
    #[error("weather missing for hour {}", format_timestamp(.0))]
    MissingWeather(NaiveDateTime),
    #[error("no {0} activity to infer an active runway from")]
    NoRunwayActivity(crate::ingest::Operation),
}

fn describe_first(missing: &[(String, NaiveDateTime)]) -> String {
    missing
        .first()
        .map(|(t, h)| format!("({t}, {})", format_timestamp(h)))
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    /// Only tracts that contain a terminal are mapped.
    #[default]
    Containing,
    /// Every tract maps to the terminal nearest its centroid.
    NearestCentroid,
}

impl std::str::FromStr for MappingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "containing" => Ok(MappingMode::Containing),
            "nearest" | "nearest_centroid" => Ok(MappingMode::NearestCentroid),
            other => Err(format!(
                "unknown mapping {other:?}, expected containing or nearest"
            )),
        }
    }
}

/// tract_id → nmt_id, ordered by tract.
pub type TractMapping = BTreeMap<String, String>;

const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Great-circle distance in kilometres.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let h =
        ((lat2 - lat1) / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

pub fn map_tracts(
    nmts: &[NmtMeta],
    tracts: &[TractMeta],
    mode: MappingMode,
) -> Result<TractMapping, FusionError> {
    let known: HashMap<&str, &TractMeta> = tracts.iter().map(|t| (t.tract_id.as_str(), t)).collect();
    for n in nmts {
        if !known.contains_key(n.tract_id.as_str()) {
            return Err(FusionError::UnknownTract {
                nmt: n.nmt_id.clone(),
                tract: n.tract_id.clone(),
            });
        }
    }
    match mode {
        MappingMode::Containing => {
            let mut by_tract: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
            for n in nmts {
                by_tract
                    .entry(n.tract_id.as_str())
                    .or_default()
                    .push(n.nmt_id.as_str());
            }
            by_tract
                .into_iter()
                .map(|(tract, mut ids)| {
                    if ids.len() > 1 {
                        ids.sort_unstable();
                        Err(FusionError::AmbiguousMapping {
                            tract: tract.to_string(),
                            nmts: ids.into_iter().map(String::from).collect(),
                        })
                    } else {
                        Ok((tract.to_string(), ids[0].to_string()))
                    }
                })
                .collect()
        }
        MappingMode::NearestCentroid => {
            if nmts.is_empty() {
                return Err(FusionError::NoTerminals);
            }
            Ok(tracts
                .iter()
                .map(|t| {
                    let centroid = (t.centroid_lat, t.centroid_lon);
                    let best = nmts
                        .iter()
                        .map(|n| (haversine_km(centroid, (n.lat, n.lon)), n.nmt_id.as_str()))
                        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
                        .expect("non-empty");
                    (t.tract_id.clone(), best.1.to_string())
                })
                .collect())
        }
    }
}

/// The fused unit of analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractHourRecord {
    pub tract_id: String,
    #[serde(with = "ts_serde")]
    pub hour_start: NaiveDateTime,
    pub population_defacto: f64,
    pub population_resident: f64,
    /// Hourly LAeq of the source terminal; `None` when nothing was retained or
    /// the terminal reported no data for the hour.
    pub laeq: Option<f64>,
    pub source_nmt: String,
}

/// One record per mapped tract per window hour, sorted by tract then hour.
pub fn fuse(
    population: &[PopulationRecord],
    hourly_laeq: &[HourlyLaeq],
    mapping: &TractMapping,
    tracts: &[TractMeta],
    window: &StudyWindow,
) -> Result<Vec<TractHourRecord>, FusionError> {
    let pop: HashMap<(&str, NaiveDateTime), f64> = population
        .iter()
        .map(|p| ((p.tract_id.as_str(), p.hour_start), p.defacto_count))
        .collect();
    let noise: HashMap<(&str, NaiveDateTime), Option<f64>> = hourly_laeq
        .iter()
        .map(|h| ((h.nmt_id.as_str(), h.hour_start), h.laeq))
        .collect();
    let residents: HashMap<&str, f64> = tracts
        .iter()
        .map(|t| (t.tract_id.as_str(), t.resident_count))
        .collect();

    let hours = window.hours();
    let mut records = Vec::with_capacity(mapping.len() * hours.len());
    let mut missing = Vec::new();
    for (tract, nmt) in mapping {
        let resident = residents.get(tract.as_str()).copied().unwrap_or(0.0);
        for h in &hours {
            let Some(&defacto) = pop.get(&(tract.as_str(), *h)) else {
                missing.push((tract.clone(), *h));
                continue;
            };
            records.push(TractHourRecord {
                tract_id: tract.clone(),
                hour_start: *h,
                population_defacto: defacto,
                population_resident: resident,
                laeq: noise.get(&(nmt.as_str(), *h)).copied().flatten(),
                source_nmt: nmt.clone(),
            });
        }
    }
    if missing.is_empty() {
        Ok(records)
    } else {
        Err(FusionError::MissingPopulation(missing))
    }
}

const FUSED_HEADER: [&str; 6] = [
    "tract_id",
    "hour_start",
    "population_defacto",
    "population_resident",
    "laeq_dba",
    "source_nmt",
];

/// `fused.csv` rows.
pub fn fused_table(records: &[TractHourRecord]) -> Table {
    let mut t = Table::new(FUSED_HEADER);
    for r in records {
        t.push(vec![
            Cell::text(&r.tract_id),
            Cell::time(&r.hour_start),
            Cell::Num(r.population_defacto),
            Cell::Num(r.population_resident),
            Cell::opt_num(r.laeq),
            Cell::text(&r.source_nmt),
        ]);
    }
    t
}

pub fn fused_from_csv(source: &[u8]) -> Result<Vec<TractHourRecord>, TableError> {
    Table::read_csv(source, &FUSED_HEADER)?
        .rows()
        .map(|r| {
            Ok(TractHourRecord {
                tract_id: r.text(0)?.to_string(),
                hour_start: r.timestamp(1)?,
                population_defacto: r.num(2)?,
                population_resident: r.num(3)?,
                laeq: r.opt_num(4)?,
                source_nmt: r.text(5)?.to_string(),
            })
        })
        .collect()
}
