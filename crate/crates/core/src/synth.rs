//! Seeded synthetic scenario with known ground truth.
//!
//! Five terminals sit around a parallel runway pair (32L/32R) whose roles swap
//! every few hours. Each terminal's hourly level is a known function of the
//! model features plus Gaussian noise, and the 3-second stream is built so
//! that its retained-sample LAeq reproduces that level. Commercial tracts fill
//! up by day and residential tracts by night.

use crate::fusion::{ActiveRunways, RotationSchedule};
use crate::ingest::{
    self, Bundle, FlightEvent, LandUse, NmtMeta, Operation, PopulationRecord, Runway, SplSample, TractMeta,
    WeatherHour,
};
use crate::numeric::{angular_distance, CompensatedSum};
use crate::output::{Cell, Table};
use crate::rng::substream;
use crate::time::{parse_timestamp, ts_serde, StudyWindow};
use crate::validation::DiurnalClass;
use chrono::{Duration, NaiveDateTime, Timelike};
use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const REFERENCE_POPULATION_FILE: &str = "population_reference.csv";

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which side of the runway pair a terminal listens to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Near32L,
    Near32R,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub near_32l: usize,
    pub near_32r: usize,
    pub far: usize,
    /// Terminal tracts, in terminal order, given commercial land use.
    pub commercial: usize,
    /// Extra residential tracts without a terminal.
    pub unmonitored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub near_base_dba: f64,
    pub far_base_dba: f64,
    /// Level swing between a terminal's loud and quiet rotation blocks is
    /// twice this.
    pub rotation_db: f64,
    /// Rotation sensitivity of far terminals relative to near ones.
    pub far_rotation_share: f64,
    pub temperature_db_per_c: f64,
    /// Half the daily temperature range.
    pub diurnal_temperature_c: f64,
    pub cloud_threshold_tenths: f64,
    pub cloud_step_db: f64,
    pub wind_speed_db_per_kt: f64,
    pub wind_deviation_db_per_deg: f64,
    pub noise_std_dba: f64,
    /// Half-width of the uniform per-sample jitter.
    pub sample_jitter_db: f64,
    /// Share of samples in an operating hour drawn below the retention level.
    pub quiet_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    pub commercial_residents: f64,
    pub residential_residents: f64,
    /// Relative de facto swing, peaking at `peak_hour`.
    pub commercial_amplitude: f64,
    pub residential_amplitude: f64,
    pub peak_hour: f64,
    /// Multiplicative noise of the second provider's counts.
    pub reference_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(with = "ts_serde")]
    pub start: NaiveDateTime,
    pub days: u32,
    pub layout: Layout,
    /// Mean departures and arrivals per hour of day; zero hours are curfew.
    pub flights_per_hour: Vec<f64>,
    pub block_hours: u32,
    pub noise: NoiseModel,
    pub population: PopulationModel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            start: parse_timestamp("2024-01-01T00:00:00").expect("literal"),
            days: 31,
            layout: Layout {
                near_32l: 1,
                near_32r: 2,
                far: 2,
                commercial: 1,
                unmonitored: 2,
            },
            // Night curfew 23:00-06:00.
            flights_per_hour: (0..24)
                .map(|h| if (6..23).contains(&h) { 6.0 } else { 0.0 })
                .collect(),
            block_hours: 3,
            noise: NoiseModel {
                near_base_dba: 74.0,
                far_base_dba: 71.0,
                rotation_db: 3.5,
                far_rotation_share: 0.8,
                temperature_db_per_c: 0.3,
                diurnal_temperature_c: 2.0,
                cloud_threshold_tenths: 2.5,
                cloud_step_db: 1.5,
                wind_speed_db_per_kt: 0.0,
                wind_deviation_db_per_deg: 0.0,
                noise_std_dba: 1.5,
                sample_jitter_db: 3.0,
                quiet_fraction: 0.05,
            },
            population: PopulationModel {
                commercial_residents: 1500.0,
                residential_residents: 3000.0,
                commercial_amplitude: 0.6,
                residential_amplitude: -0.25,
                peak_hour: 13.0,
                reference_noise: 0.02,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let l = &self.layout;
        if l.near_32l == 0 || l.near_32r == 0 || l.far == 0 {
            return bad("every terminal group needs at least one terminal".into());
        }
        if l.commercial == 0 || l.commercial > l.near_32l + l.near_32r + l.far {
            return bad(format!("commercial tract count {} out of range", l.commercial));
        }
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        if self.block_hours == 0 || 24 % self.block_hours != 0 {
            return bad(format!("block length {} does not divide 24", self.block_hours));
        }
        if self.flights_per_hour.len() != 24
            || self
                .flights_per_hour
                .iter()
                .any(|r| !(*r >= 0.0 && r.is_finite()))
        {
            return bad("flights_per_hour needs 24 non-negative rates".into());
        }
        if self.flights_per_hour.iter().all(|r| *r == 0.0) {
            return bad("no operating hours".into());
        }
        let n = &self.noise;
        if !(n.noise_std_dba >= 0.0)
            || !(n.sample_jitter_db >= 0.0)
            || !(0.0..0.5).contains(&n.quiet_fraction)
        {
            return bad("noise std, jitter and quiet fraction must be non-negative (quiet < 0.5)".into());
        }
        let p = &self.population;
        if !(p.commercial_residents > 0.0 && p.residential_residents > 0.0) {
            return bad("resident counts must be positive".into());
        }
        if p.commercial_amplitude.abs() >= 1.0 || p.residential_amplitude.abs() >= 1.0 {
            return bad("population amplitudes must lie in (-1, 1)".into());
        }
        if !(p.reference_noise >= 0.0) {
            return bad("reference noise must be non-negative".into());
        }
        if crate::time::midnight(&self.start) != self.start {
            return bad("start must be at midnight".into());
        }
        Ok(())
    }

    pub fn window(&self) -> StudyWindow {
        StudyWindow::days(self.start, self.days).expect("validated start")
    }
}

/// Aircraft-engine combinations: (aircraft, engine, share, dB per movement).
/// The last two are rare enough to fall outside the modelled combinations and
/// carry no level effect.
pub const FLEET: [(&str, &str, f64, f64); 14] = [
    ("A320", "V2500", 20.0, 0.12),
    ("B737", "CFM56", 18.0, 0.12),
    ("A321", "V2500", 12.0, 0.12),
    ("A330", "PW4", 8.0, 0.20),
    ("A320neo", "PW1", 8.0, 0.06),
    ("B737-8MAX", "LEAP", 7.0, 0.06),
    ("B777", "GE90", 6.0, 0.20),
    ("A220", "PW1", 6.0, 0.06),
    ("B767", "CF6-80", 5.0, 0.20),
    ("A321neo", "PW1", 5.0, 0.06),
    ("B787", "GEnx", 4.0, 0.20),
    ("A350", "TrentXWB", 3.0, 0.20),
    ("E190", "CF34", 0.6, 0.0),
    ("ATR72", "PW127", 0.4, 0.0),
];

const AIRLINES: [&str; 6] = ["KE", "OZ", "7C", "LJ", "TW", "BX"];
const AIRPORT: (f64, f64) = (37.5583, 126.7906);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLevel {
    pub nmt_id: String,
    #[serde(with = "ts_serde")]
    pub hour_start: NaiveDateTime,
    /// Feature-driven level before noise; absent in curfew hours.
    pub noise_free: Option<f64>,
    /// Level the 3-second stream reproduces; absent when the hour holds only
    /// sub-retention samples.
    pub intended: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: ScenarioConfig,
    pub schedule: RotationSchedule,
    pub declared_runways: Vec<Runway>,
    pub nmt_sides: BTreeMap<String, Side>,
    pub diurnal_labels: BTreeMap<String, DiurnalClass>,
    pub commercial_tracts: Vec<String>,
    /// Feature with the largest mean |φ| by construction.
    pub dominant_feature: String,
    pub monotone_feature: String,
    pub threshold_feature: String,
    pub threshold: f64,
    pub combo_coefficients: BTreeMap<String, f64>,
    pub levels: Vec<TruthLevel>,
}

impl GroundTruth {
    pub fn level(&self, nmt_id: &str, hour: &NaiveDateTime) -> Option<&TruthLevel> {
        self.levels
            .binary_search_by(|l| (l.nmt_id.as_str(), &l.hour_start).cmp(&(nmt_id, hour)))
            .ok()
            .map(|i| &self.levels[i])
    }

    pub fn nmts_on(&self, side: Side) -> Vec<&str> {
        self.nmt_sides
            .iter()
            .filter(|(_, s)| **s == side)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("ground truth serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub bundle: Bundle,
    pub truth: GroundTruth,
    /// Second provider's tract counts for cross-checks.
    pub reference_population: Vec<PopulationRecord>,
}

fn runway(s: &str) -> Runway {
    s.parse().expect("literal runway")
}

struct Terminal {
    meta: NmtMeta,
    side: Side,
}

fn layout(config: &ScenarioConfig) -> (Vec<Terminal>, Vec<TractMeta>) {
    let l = &config.layout;
    let groups = [
        (Side::Near32R, l.near_32r, (-0.012, 0.016)),
        (Side::Near32L, l.near_32l, (-0.004, 0.006)),
        (Side::Far, l.far, (-0.045, 0.070)),
    ];
    let mut terminals = Vec::new();
    for (side, count, (dlat, dlon)) in groups {
        for k in 0..count {
            let i = terminals.len() + 1;
            // Spread along the approach path, alternating sides for far sites.
            let step = k as f64 * 0.006;
            let (lat, lon) = match side {
                Side::Far if k % 2 == 1 => (AIRPORT.0 + 0.040 + step, AIRPORT.1 - 0.055 - step),
                _ => (AIRPORT.0 + dlat - step, AIRPORT.1 + dlon + step),
            };
            terminals.push(Terminal {
                meta: NmtMeta {
                    nmt_id: format!("NMT{i:02}"),
                    tract_id: format!("TR{i:02}"),
                    lat,
                    lon,
                },
                side,
            });
        }
    }
    let p = &config.population;
    let mut tracts: Vec<TractMeta> = terminals
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let commercial = i < l.commercial;
            TractMeta {
                tract_id: t.meta.tract_id.clone(),
                district_id: if i % 2 == 0 { "D-GANGSEO" } else { "D-YANGCHEON" }.into(),
                centroid_lat: t.meta.lat + 0.001,
                centroid_lon: t.meta.lon - 0.001,
                resident_count: if commercial {
                    p.commercial_residents
                } else {
                    p.residential_residents
                },
                land_use: if commercial {
                    LandUse::Commercial
                } else {
                    LandUse::Residential
                },
            }
        })
        .collect();
    for k in 0..l.unmonitored {
        let i = tracts.len() + 1;
        tracts.push(TractMeta {
            tract_id: format!("TR{i:02}"),
            district_id: if k % 2 == 0 { "D-YANGCHEON" } else { "D-GANGSEO" }.into(),
            centroid_lat: AIRPORT.0 - 0.03 - 0.01 * k as f64,
            centroid_lon: AIRPORT.1 + 0.03 + 0.01 * k as f64,
            resident_count: p.residential_residents,
            land_use: LandUse::Residential,
        });
    }
    (terminals, tracts)
}

fn weather(config: &ScenarioConfig, hours: &[NaiveDateTime]) -> Vec<WeatherHour> {
    let mut rng = substream(config.seed, "synth.weather");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut anomaly = 0.0;
    let mut wind_dir: f64 = 300.0;
    let mut cloud: u8 = rng.random_range(0..=10);
    hours
        .iter()
        .map(|h| {
            // Day-to-day anomaly as a slow AR(1); diurnal peak mid-afternoon.
            anomaly = 0.985 * anomaly + 0.5 * unit.sample(&mut rng);
            let diurnal =
                config.noise.diurnal_temperature_c * (2.0 * PI * (f64::from(h.hour()) - 14.0) / 24.0).cos();
            let temperature = -2.5 + diurnal + anomaly;
            let speed: f64 = (6.0 + 3.0 * unit.sample(&mut rng)).clamp(0.0, 25.0);
            wind_dir = (wind_dir + 25.0 * unit.sample(&mut rng)).rem_euclid(360.0);
            if rng.random_bool(0.25) {
                cloud = rng.random_range(0..=10);
            }
            WeatherHour {
                hour_start: *h,
                temperature_c: (temperature * 10.0).round() / 10.0,
                wind_speed_kt: (speed * 10.0).round() / 10.0,
                wind_direction_deg: wind_dir.round().rem_euclid(360.0),
                cloud_cover_tenths: cloud,
            }
        })
        .collect()
}

/// Flights per hour with their combo indices into [`FLEET`].
fn flights(
    config: &ScenarioConfig,
    hours: &[NaiveDateTime],
    schedule: &RotationSchedule,
) -> (Vec<FlightEvent>, Vec<[usize; 14]>) {
    let mut rng = substream(config.seed, "synth.flights");
    let pick = WeightedIndex::new(FLEET.iter().map(|f| f.2)).expect("positive shares");
    let mut events = Vec::new();
    let mut counts = vec![[0usize; 14]; hours.len()];
    for (i, h) in hours.iter().enumerate() {
        let rate = config.flights_per_hour[h.hour() as usize];
        if rate == 0.0 {
            continue;
        }
        let active = schedule.active(h);
        let poisson = Poisson::new(rate).expect("positive rate");
        let mut hour_events = Vec::new();
        for op in Operation::ALL {
            let n = poisson.sample(&mut rng) as usize;
            for _ in 0..n {
                let c = pick.sample(&mut rng);
                counts[i][c] += 1;
                hour_events.push(FlightEvent {
                    timestamp: *h + Duration::seconds(rng.random_range(0..3600)),
                    operation: op,
                    runway: active.for_operation(op).clone(),
                    aircraft_type: FLEET[c].0.into(),
                    engine_type: FLEET[c].1.into(),
                    airline: AIRLINES[rng.random_range(0..AIRLINES.len())].into(),
                });
            }
        }
        hour_events.sort_by_key(|e| e.timestamp);
        events.extend(hour_events);
    }
    (events, counts)
}

/// Signed share of the rotation swing a terminal receives; terminals with
/// opposite signs sit under opposite runways.
pub fn rotation_factor(side: Side, noise: &NoiseModel) -> f64 {
    match side {
        Side::Near32R => 1.0,
        Side::Near32L => -1.0,
        Side::Far => noise.far_rotation_share,
    }
}

/// Feature-driven hourly level for a terminal.
fn noise_free_level(
    noise: &NoiseModel,
    side: Side,
    landing_on_32r: bool,
    weather: &WeatherHour,
    heading: f64,
    combo_counts: &[usize; 14],
) -> f64 {
    let base = match side {
        Side::Far => noise.far_base_dba,
        _ => noise.near_base_dba,
    };
    let r = if landing_on_32r { 1.0 } else { -1.0 };
    let mut s = CompensatedSum::new();
    s.add(base);
    s.add(noise.rotation_db * rotation_factor(side, noise) * r);
    s.add(noise.temperature_db_per_c * weather.temperature_c);
    if f64::from(weather.cloud_cover_tenths) > noise.cloud_threshold_tenths {
        s.add(noise.cloud_step_db);
    }
    s.add(noise.wind_speed_db_per_kt * weather.wind_speed_kt);
    s.add(noise.wind_deviation_db_per_deg * angular_distance(weather.wind_direction_deg, heading));
    for (n, f) in combo_counts.iter().zip(FLEET) {
        s.add(*n as f64 * f.3);
    }
    s.total()
}

fn quantize(level: f64) -> f64 {
    (level * 10.0).round() / 10.0
}

/// 1200 samples for one hour whose retained LAeq equals `intended` within
/// the 0.05 dB quantization, or only sub-retention samples when `None`.
fn hour_samples(rng: &mut impl Rng, intended: Option<f64>, noise: &NoiseModel, out: &mut Vec<f64>) {
    const N: usize = ingest::NOMINAL_SAMPLES_PER_HOUR;
    out.clear();
    let Some(level) = intended else {
        out.extend((0..N).map(|_| quantize(rng.random_range(38.0..58.0))));
        return;
    };
    let n_quiet = (N as f64 * noise.quiet_fraction).round() as usize;
    // Jitter narrows near the retention level so every loud sample stays
    // above it after the energy-mean correction.
    let half = noise.sample_jitter_db.min(0.4 * (level - 60.5)).max(0.0);
    let jitter: Vec<f64> = (0..N - n_quiet)
        .map(|_| {
            if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            }
        })
        .collect();
    let energy: CompensatedSum = jitter.iter().map(|j| 10f64.powf(j / 10.0)).collect();
    let offset = 10.0 * (energy.total() / jitter.len() as f64).log10();
    let mut loud = jitter.into_iter().map(|j| quantize(level + j - offset));
    let quiet_at: std::collections::BTreeSet<usize> =
        rand::seq::index::sample(rng, N, n_quiet).into_iter().collect();
    for k in 0..N {
        if quiet_at.contains(&k) {
            out.push(quantize(rng.random_range(45.0..59.9)));
        } else {
            out.push(loud.next().expect("loud sample count"));
        }
    }
}

fn defacto(config: &ScenarioConfig, tract: &TractMeta, hour: &NaiveDateTime) -> f64 {
    let p = &config.population;
    let amp = match tract.land_use {
        LandUse::Commercial => p.commercial_amplitude,
        _ => p.residential_amplitude,
    };
    let phase = 2.0 * PI * (f64::from(hour.hour()) - p.peak_hour) / 24.0;
    (tract.resident_count * (1.0 + amp * phase.cos())).round()
}

pub fn generate(config: &ScenarioConfig) -> Result<Scenario, SynthError> {
    config.validate()?;
    let window = config.window();
    let hours = window.hours();
    let schedule = RotationSchedule {
        block_hours: config.block_hours,
        origin: config.start,
        even_blocks: ActiveRunways {
            departure: runway("32R"),
            arrival: runway("32L"),
        },
    };
    let (terminals, tracts) = layout(config);
    let weather = weather(config, &hours);
    let (flights, combo_counts) = flights(config, &hours, &schedule);

    let mut level_rng = substream(config.seed, "synth.levels");
    let mut jitter_rng = substream(config.seed, "jitter");
    let eps = Normal::new(0.0, config.noise.noise_std_dba).expect("finite std");
    let mut levels = Vec::with_capacity(terminals.len() * hours.len());
    let mut spl = Vec::with_capacity(terminals.len() * hours.len() * ingest::NOMINAL_SAMPLES_PER_HOUR);
    let mut buf = Vec::with_capacity(ingest::NOMINAL_SAMPLES_PER_HOUR);
    let mut sorted: Vec<&Terminal> = terminals.iter().collect();
    sorted.sort_by(|a, b| a.meta.nmt_id.cmp(&b.meta.nmt_id));
    for t in sorted {
        for (i, h) in hours.iter().enumerate() {
            let operating = config.flights_per_hour[h.hour() as usize] > 0.0;
            let active = schedule.active(h);
            let noise_free = operating.then(|| {
                noise_free_level(
                    &config.noise,
                    t.side,
                    active.arrival.as_str() == "32R",
                    &weather[i],
                    active.departure.heading_deg(),
                    &combo_counts[i],
                )
            });
            let intended = noise_free
                .map(|l| l + eps.sample(&mut level_rng))
                .filter(|l| *l >= 61.0);
            hour_samples(&mut jitter_rng, intended, &config.noise, &mut buf);
            spl.extend(buf.iter().enumerate().map(|(k, &level)| SplSample {
                nmt_id: t.meta.nmt_id.clone(),
                timestamp: *h + Duration::seconds(3 * k as i64),
                level,
            }));
            levels.push(TruthLevel {
                nmt_id: t.meta.nmt_id.clone(),
                hour_start: *h,
                noise_free,
                intended,
            });
        }
    }

    let mut population = Vec::with_capacity(tracts.len() * hours.len());
    for tract in &tracts {
        for h in &hours {
            population.push(PopulationRecord {
                tract_id: tract.tract_id.clone(),
                hour_start: *h,
                defacto_count: defacto(config, tract, h),
            });
        }
    }
    let mut provider_rng = substream(config.seed, "synth.provider");
    let provider = Normal::new(0.0, config.population.reference_noise).expect("finite std");
    let reference_population = population
        .iter()
        .map(|p| PopulationRecord {
            defacto_count: (p.defacto_count * (1.0 + provider.sample(&mut provider_rng)))
                .max(0.0)
                .round(),
            ..p.clone()
        })
        .collect();

    let diurnal_labels = tracts
        .iter()
        .map(|t| {
            let amp = match t.land_use {
                LandUse::Commercial => config.population.commercial_amplitude,
                _ => config.population.residential_amplitude,
            };
            let class = if amp > 0.0 {
                DiurnalClass::DaytimePeak
            } else if amp < 0.0 {
                DiurnalClass::NighttimePeak
            } else {
                DiurnalClass::Flat
            };
            (t.tract_id.clone(), class)
        })
        .collect();
    let truth = GroundTruth {
        config: config.clone(),
        schedule,
        declared_runways: vec![runway("32L"), runway("32R")],
        nmt_sides: terminals
            .iter()
            .map(|t| (t.meta.nmt_id.clone(), t.side))
            .collect(),
        diurnal_labels,
        commercial_tracts: tracts
            .iter()
            .filter(|t| t.land_use == LandUse::Commercial)
            .map(|t| t.tract_id.clone())
            .collect(),
        dominant_feature: "hour_of_day".into(),
        monotone_feature: "temperature_c".into(),
        threshold_feature: "cloud_cover_tenths".into(),
        threshold: config.noise.cloud_threshold_tenths,
        combo_coefficients: FLEET.iter().map(|f| (format!("{}+{}", f.0, f.1), f.3)).collect(),
        levels,
    };
    Ok(Scenario {
        bundle: Bundle {
            spl,
            flights,
            weather,
            population,
            tracts,
            nmts: terminals.into_iter().map(|t| t.meta).collect(),
        },
        truth,
        reference_population,
    })
}

/// Writes the six input files, the ground truth and the second provider's
/// population counts.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<(), SynthError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| SynthError::Io { path, source }
    };
    ingest::write_bundle(dir, &scenario.bundle).map_err(io(dir))?;
    let gt = dir.join(GROUND_TRUTH_FILE);
    std::fs::write(&gt, scenario.truth.to_json()).map_err(io(&gt))?;
    let reference = dir.join(REFERENCE_POPULATION_FILE);
    std::fs::write(
        &reference,
        ingest::write_population(&scenario.reference_population),
    )
    .map_err(io(&reference))?;
    Ok(())
}

/// Per-terminal side and rotation sensitivity, for reports.
pub fn sides_table(truth: &GroundTruth) -> Table {
    let mut t = Table::new(["nmt_id", "side"]);
    for (n, s) in &truth.nmt_sides {
        let side = serde_json::to_value(s).expect("side serializes");
        t.push(vec![Cell::text(n), Cell::text(side.as_str().unwrap_or_default())]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acoustics;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            days: 2,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&ScenarioConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.bundle.spl, c.bundle.spl);
    }

    #[test]
    fn bundle_passes_validation() {
        let s = generate(&small()).unwrap();
        let report = ingest::validate_bundle(&s.bundle, &small().window(), &s.truth.declared_runways);
        assert!(report.findings.is_empty(), "{:?}", report.findings);
    }

    #[test]
    fn stream_reproduces_intended_level() {
        let s = generate(&small()).unwrap();
        let hourly = acoustics::hourly_series(&s.bundle.spl, acoustics::DEFAULT_RETENTION_DBA);
        assert_eq!(hourly.len(), s.truth.levels.len());
        for (h, t) in hourly.iter().zip(&s.truth.levels) {
            assert_eq!((&h.nmt_id, h.hour_start), (&t.nmt_id, t.hour_start));
            match (h.laeq, t.intended) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 0.2, "{a} vs {b}"),
                (None, None) => {}
                other => panic!("{other:?} at {} {}", h.nmt_id, h.hour_start),
            }
        }
        assert!(hourly.iter().any(|h| h.laeq.is_none()));
    }

    #[test]
    fn eight_role_swaps_per_day() {
        let s = generate(&small()).unwrap();
        let day = s.truth.config.window().hours();
        // Hour boundaries from 00:00 through the next midnight.
        let swaps = day[..25]
            .windows(2)
            .filter(|w| s.truth.schedule.active(&w[0]) != s.truth.schedule.active(&w[1]))
            .count();
        assert_eq!(swaps, 8);
        // Departures follow the schedule.
        for f in &s.bundle.flights {
            let hour = crate::time::floor_hour(&f.timestamp);
            assert_eq!(
                &f.runway,
                s.truth.schedule.active(&hour).for_operation(f.operation)
            );
        }
    }

    #[test]
    fn population_wave_has_zero_mean() {
        let cfg = small();
        let s = generate(&cfg).unwrap();
        for t in &s.bundle.tracts {
            let day: f64 = s.bundle.population[..]
                .iter()
                .filter(|p| p.tract_id == t.tract_id)
                .take(24)
                .map(|p| p.defacto_count)
                .sum();
            // Rounding each hour moves the daily total by at most 12.
            assert!(
                (day - 24.0 * t.resident_count).abs() <= 12.0,
                "{} {day}",
                t.tract_id
            );
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            ScenarioConfig {
                block_hours: 5,
                ..small()
            },
            ScenarioConfig { days: 0, ..small() },
            ScenarioConfig {
                layout: Layout {
                    near_32l: 0,
                    ..small().layout
                },
                ..small()
            },
        ] {
            assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))));
        }
    }

    #[test]
    fn ground_truth_round_trips() {
        let s = generate(&small()).unwrap();
        let back = GroundTruth::from_json(&s.truth.to_json()).unwrap();
        assert_eq!(back, s.truth);
        let h = s.truth.levels[30].hour_start;
        assert_eq!(s.truth.level("NMT01", &h), Some(&s.truth.levels[30]));
    }
}
